import numpy as np
import pytest
from scipy.special import expit

from fewstep.adversarial import (
    LOGIT_CLAMP,
    density_ratio,
    disc_logit,
    disc_prob,
    disc_update,
    gan_losses,
    gan_losses_given,
    make_discriminator,
    run_gan_phase,
)
from fewstep.numerics import DenseNet, adam_init, finite_diff_grad, named_rng
from fewstep.schedule import make_schedule
from fewstep.student import StudentModel, make_student, student_predict
from fewstep.teacher import make_teacher, ring_mixture, sample_mixture


@pytest.fixture()
def disc(sched, ring):
    rng = named_rng(0, "disc")
    teacher = make_teacher(ring, sched, rng, hidden=(16, 16))
    return make_discriminator(teacher.denoiser.net, sched, rng, head_hidden=(8,))


def test_zero_initialized_head_is_noncommittal(disc):
    x = named_rng(1, "x").standard_normal((9, 2))
    t = np.full(9, 300)
    np.testing.assert_array_equal(disc_prob(disc, x, t), 0.5)
    np.testing.assert_array_equal(density_ratio(disc, x, t), 1.0)


def test_logit_clamp_keeps_prob_strictly_inside(disc):
    disc.head.params[-1] = 1e4  # final bias
    x = named_rng(2, "x").standard_normal((4, 2))
    t = np.full(4, 10)
    logit = disc_logit(disc, x, t)
    np.testing.assert_array_equal(logit, LOGIT_CLAMP)
    assert np.all(disc_prob(disc, x, t) < 1.0)
    assert np.all(density_ratio(disc, x, t) == np.exp(LOGIT_CLAMP))


def test_prob_08_gives_ratio_4(disc):
    disc.head.params[-1] = np.log(4.0)
    x = np.zeros((3, 2))
    t = np.full(3, 100)
    np.testing.assert_allclose(disc_prob(disc, x, t), 0.8, rtol=1e-12)
    np.testing.assert_allclose(density_ratio(disc, x, t), 4.0, rtol=1e-12)


def test_ratio_identity_pointwise(disc):
    # r * (1 - f) = f for any head state, including clamped logits
    rng = named_rng(3, "identity")
    disc.head.params[:] = rng.standard_normal(disc.head.params.size) * 3.0
    x = rng.standard_normal((32, 2)) * 2.0
    t = rng.integers(1, 1001, size=32)
    f = disc_prob(disc, x, t)
    r = density_ratio(disc, x, t)
    # 1 - f cancels catastrophically as logits approach the clamp, so the
    # achievable relative accuracy is ~eps / (1 - f) ~ 1e-9 near |logit| = 14
    np.testing.assert_allclose(r * (1.0 - f), f, rtol=1e-8)


def test_identical_batches_cancel_loss_d(disc, sched):
    rng = named_rng(4, "cancel")
    batch = rng.standard_normal((64, 2))
    taus = rng.integers(1, 1001, size=64)
    eps = rng.standard_normal(batch.shape)
    disc.head.params[:] = named_rng(5, "head").standard_normal(disc.head.params.size)
    report, head_grad, _ = gan_losses_given(
        disc, None, batch, batch, taus, eps, taus, eps, need_student_grad=False
    )
    # paired draws make the two expectation terms identical
    assert report.loss_d == pytest.approx(0.0, abs=1e-15)


def test_zero_logit_head_loss_g_is_log_half(disc, ring, sched):
    rng = named_rng(6, "logg")
    model = make_student(2, sched, rng, hidden=(8,))
    real = sample_mixture(ring, 16, rng)
    z = rng.standard_normal((16, 2))
    report, _, _ = gan_losses(disc, model, real, z, rng)
    assert report.loss_g == pytest.approx(np.log(0.5), rel=1e-12)


def test_swapped_labels_negate_printed_loss_d(disc):
    rng = named_rng(7, "swap")
    disc.head.params[:] = rng.standard_normal(disc.head.params.size)
    a = rng.standard_normal((32, 2))
    b = rng.standard_normal((32, 2)) + 1.0
    taus = rng.integers(1, 1001, size=32)
    eps = rng.standard_normal(a.shape)
    fwd, _, _ = gan_losses_given(disc, None, a, b, taus, eps, taus, eps,
                                 loss_form="printed", need_student_grad=False)
    rev, _, _ = gan_losses_given(disc, None, b, a, taus, eps, taus, eps,
                                 loss_form="printed", need_student_grad=False)
    assert fwd.loss_d == pytest.approx(-rev.loss_d, rel=1e-12)


def test_generator_grad_matches_fd(sched, ring):
    rng = named_rng(8, "gen-fd")
    teacher = make_teacher(ring, sched, rng, hidden=(6, 6))
    d = make_discriminator(teacher.denoiser.net, sched, rng, head_hidden=(4,))
    d.head.params[:] = rng.standard_normal(d.head.params.size) * 0.5
    model = make_student(2, sched, rng, hidden=(4,))
    real = sample_mixture(ring, 6, rng)
    z = rng.standard_normal((6, 2))
    taus = rng.integers(1, 1001, size=6)
    eps = rng.standard_normal(real.shape)

    fake = student_predict(model, z, model.grid.times[-1])
    _, _, student_grad = gan_losses_given(d, model, real, fake, taus, eps, taus, eps, z=z)

    net = model.denoiser.net

    def loss_g_of(p):
        probe = StudentModel(
            type(model.denoiser)(DenseNet(net.widths, p, net.activation), "x0", 0),
            model.grid, model.schedule,
        )
        fx = student_predict(probe, z, probe.grid.times[-1])
        rep, _, _ = gan_losses_given(d, None, real, fx, taus, eps, taus, eps,
                                     need_student_grad=False)
        return rep.loss_g

    fd = finite_diff_grad(loss_g_of, net.params.copy(), h=1e-6)
    # bce trains the non-saturating flip: -(1 - f) per fake logit, while the
    # printed L_G derivative is +(1 - f); descending the student grad must
    # therefore move against the printed-form FD direction
    denom = np.maximum(np.abs(fd), 1e-7)
    assert np.max(np.abs(-student_grad - fd) / denom) < 1e-3


def test_zero_iterations_change_nothing(disc, ring, sched):
    rng = named_rng(9, "zero")
    model = make_student(2, sched, rng, hidden=(8,))
    p_model = model.denoiser.net.params.copy()
    p_head = disc.head.params.copy()
    run_gan_phase(disc, model, ring, rng, iters=0, batch=8)
    np.testing.assert_array_equal(model.denoiser.net.params, p_model)
    np.testing.assert_array_equal(disc.head.params, p_head)


def test_backbone_frozen_through_phase(disc, ring, sched):
    rng = named_rng(10, "frozen")
    model = make_student(2, sched, rng, hidden=(8,))
    before = disc.backbone.params.copy()
    head_before = disc.head.params.copy()
    run_gan_phase(disc, model, ring, rng, iters=3, batch=8, lr=1e-3)
    np.testing.assert_array_equal(disc.backbone.params, before)
    assert not np.array_equal(disc.head.params, head_before)


def test_disc_update_touches_only_head(disc, ring):
    rng = named_rng(11, "upd")
    opt = adam_init(disc.head.params.size, 1e-3)
    real = sample_mixture(ring, 16, rng)
    fake = real + 2.0
    backbone_before = disc.backbone.params.copy()
    opt, report = disc_update(disc, opt, real, fake, rng)
    assert opt.step == 1
    assert np.isfinite(report.loss_d)
    np.testing.assert_array_equal(disc.backbone.params, backbone_before)


def test_discriminator_separates_shifted_gaussians():
    # two 1D Gaussians far apart: after a short head-only phase the real side
    # must average above 1/2 and the fake side below
    sched = make_schedule(num_steps=100)
    from fewstep.teacher import mixture_from_json
    real_mix = mixture_from_json({"weights": [1.0], "means": [[0.0]], "cov_diags": [[1.0]]})
    rng = named_rng(12, "sep")
    teacher = make_teacher(real_mix, sched, rng, hidden=(16, 16))
    d = make_discriminator(teacher.denoiser.net, sched, rng, head_hidden=(16,))
    model = make_student(1, sched, rng, grid=(0, 100), hidden=(4,))
    fake_sampler = lambda n, r: r.standard_normal((n, 1)) + 4.0
    run_gan_phase(d, model, real_mix, rng, iters=150, batch=64, lr=1e-3,
                  fake_sampler=fake_sampler)
    xr = named_rng(13, "er").standard_normal((500, 1))
    xf = named_rng(14, "ef").standard_normal((500, 1)) + 4.0
    t = np.full(500, 25)
    assert disc_prob(d, xr, t).mean() > 0.5
    assert disc_prob(d, xf, t).mean() < 0.5


def test_collapse_detector_aborts(disc, ring, sched):
    from fewstep.exceptions import TrainingAbort
    rng = named_rng(15, "collapse")
    model = make_student(2, sched, rng, hidden=(8,))
    # saturate the head so fake probs are pinned near zero and never recover
    disc.head.params[:] = 0.0
    disc.head.params[-1] = -40.0
    with pytest.raises(TrainingAbort, match="collapsed"):
        run_gan_phase(disc, model, ring, rng, iters=30, batch=8, lr=1e-12,
                      collapse_threshold=1e-3, collapse_patience=10)


def test_unknown_loss_form_rejected(disc, ring, sched):
    rng = named_rng(16, "bad-loss")
    model = make_student(2, sched, rng, hidden=(8,))
    real = sample_mixture(ring, 8, rng)
    z = rng.standard_normal((8, 2))
    with pytest.raises(ValueError, match="loss_form"):
        gan_losses(disc, model, real, z, rng, loss_form="wasserstein")
