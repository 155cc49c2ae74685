"""Discriminator, GAN objectives, and the density ratio it implies.

The discriminator reuses the trained teacher net as a frozen feature
extractor (a tap at one of its hidden layers) and trains only a small head
on top. Its sigmoid output estimates P(real), so exp(logit) estimates the
density ratio p_real / p_fake at the noised point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import TrainingAbort
from .numerics import AdamState, DenseNet, adam_init, adam_step, backward, forward, init_dense, time_embedding
from .schedule import Schedule, add_noise
from .student import StudentModel, predict_backward, student_predict
from .teacher import MixtureSpec, TIME_FREQS, denoiser_input, sample_mixture

__all__ = [
    "Discriminator",
    "GanBatchReport",
    "density_ratio",
    "disc_features",
    "disc_logit",
    "disc_prob",
    "disc_update",
    "gan_losses",
    "make_discriminator",
    "run_gan_phase",
]

LOGIT_CLAMP = 15.0


@dataclass
class Discriminator:
    """Frozen backbone net plus a trainable logit head.

    tap counts how many backbone layers to apply (with the nonlinearity kept
    on the last one); the head sees those features next to its own time
    embedding and emits a single unnormalized logit.
    """

    backbone: DenseNet
    head: DenseNet
    schedule: Schedule
    tap: int
    cond_dim: int = 0

    def __post_init__(self):
        if not 1 <= self.tap <= self.backbone.n_layers - 1:
            raise ValueError(
                f"tap must pick a hidden layer in [1, {self.backbone.n_layers - 1}], got {self.tap}"
            )
        feat = self.backbone.widths[self.tap]
        expected = feat + 2 * TIME_FREQS
        if self.head.widths[0] != expected:
            raise ValueError(f"head input width {self.head.widths[0]} != features+embedding {expected}")
        if self.head.widths[-1] != 1:
            raise ValueError(f"head must emit one logit, got width {self.head.widths[-1]}")


def make_discriminator(
    backbone: DenseNet,
    sched: Schedule,
    rng: np.random.Generator,
    head_hidden: tuple[int, ...] = (64,),
    tap: int | None = None,
    cond_dim: int = 0,
    activation: str = "tanh",
) -> Discriminator:
    """Head starts all-zero in its final layer, so the initial logit is 0."""
    tap = backbone.n_layers - 1 if tap is None else tap
    feat = backbone.widths[tap]
    head = init_dense((feat + 2 * TIME_FREQS, *head_hidden, 1), rng, activation, zero_last=True)
    return Discriminator(backbone, head, sched, tap, cond_dim)


def disc_features(d: Discriminator, x_t, t, c=None) -> np.ndarray:
    inp = denoiser_input(x_t, t, d.schedule.num_steps, c)
    return forward(d.backbone, inp, n_layers=d.tap, activate_last=True)


def _head_input(d: Discriminator, feats: np.ndarray, t) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t), (feats.shape[0],))
    return np.concatenate([feats, time_embedding(t, d.schedule.num_steps, TIME_FREQS)], axis=1)


def disc_logit(d: Discriminator, x_t, t, c=None, clamp: bool = True) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    squeeze = x_t.ndim == 1
    xb = x_t[None, :] if squeeze else x_t
    feats = disc_features(d, xb, t, c)
    logit = forward(d.head, _head_input(d, feats, t))[:, 0]
    if clamp:
        logit = np.clip(logit, -LOGIT_CLAMP, LOGIT_CLAMP)
    return logit[0] if squeeze else logit


def disc_prob(d: Discriminator, x_t, t, c=None) -> np.ndarray:
    """Estimated P(real | x_t, t); logits clamped so the output stays in (0, 1)."""
    return expit(disc_logit(d, x_t, t, c))


def density_ratio(d: Discriminator, x_t, t, c=None) -> np.ndarray:
    """r = p_real / p_fake estimated as f / (1 - f) = exp(clamped logit)."""
    return np.exp(disc_logit(d, x_t, t, c))


def _disc_backward(d: Discriminator, x_t: np.ndarray, t, dlogit: np.ndarray, c=None):
    """Gradients of sum(dlogit * logit) wrt head params and the sample dims of x_t.

    The backbone is frozen: its parameter gradient is never formed, only the
    input gradient is chained through.
    """
    inp = denoiser_input(x_t, t, d.schedule.num_steps, c)
    feats = forward(d.backbone, inp, n_layers=d.tap, activate_last=True)
    head_inp = _head_input(d, feats, t)
    head_grad, head_in_grad = backward(d.head, head_inp, dlogit[:, None])
    dfeat = head_in_grad[:, : feats.shape[1]]
    _, dinp = backward(d.backbone, inp, dfeat, n_layers=d.tap, activate_last=True)
    return head_grad, dinp[:, : x_t.shape[1]]


@dataclass
class GanBatchReport:
    loss_d: float
    loss_g: float
    real_logit_mean: float
    fake_logit_mean: float
    real_prob_mean: float
    fake_prob_mean: float
    grad_norm_d: float
    grad_norm_g: float


def _log_sigmoid(logit: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -logit)


def _paper_losses(logit_real: np.ndarray, logit_fake: np.ndarray) -> tuple[float, float]:
    """Report-form losses: L_D = E_real log f - E_fake log f, L_G = E_fake log f."""
    lr = np.clip(logit_real, -LOGIT_CLAMP, LOGIT_CLAMP)
    lf = np.clip(logit_fake, -LOGIT_CLAMP, LOGIT_CLAMP)
    loss_g = float(np.mean(_log_sigmoid(lf)))
    return float(np.mean(_log_sigmoid(lr)) - loss_g), loss_g


def _logit_cotangents(logit_real, logit_fake, loss_form: str):
    """Per-logit derivatives of the trained objectives.

    Returns (d_real, d_fake_for_disc, d_fake_for_gen), each already divided
    by its batch size. 'bce' trains the head as a standard real-vs-fake
    classifier and the generator on the non-saturating flip; 'printed'
    descends the report-form losses directly (A/B experiments only; the
    classifier polarity inverts, so ratio estimates do too).
    """
    f_real = expit(logit_real)
    f_fake = expit(logit_fake)
    n_r, n_f = logit_real.size, logit_fake.size
    if loss_form == "bce":
        d_real = -(1.0 - f_real) / n_r
        d_fake_disc = f_fake / n_f
        d_fake_gen = -(1.0 - f_fake) / n_f
    elif loss_form == "printed":
        d_real = (1.0 - f_real) / n_r
        d_fake_disc = -(1.0 - f_fake) / n_f
        d_fake_gen = (1.0 - f_fake) / n_f
    else:
        raise ValueError(f"unknown loss_form {loss_form!r}, expected 'bce' or 'printed'")
    return d_real, d_fake_disc, d_fake_gen


def gan_losses_given(
    d: Discriminator,
    model: StudentModel | None,
    real_x0: np.ndarray,
    fake_x0: np.ndarray,
    taus_real: np.ndarray,
    eps_real: np.ndarray,
    taus_fake: np.ndarray,
    eps_fake: np.ndarray,
    z: np.ndarray | None = None,
    c=None,
    loss_form: str = "bce",
    need_student_grad: bool = True,
):
    """Deterministic core of gan_losses: all noise draws passed in explicitly.

    fake_x0 must be the student's prediction from z at the top grid time when
    a student gradient is requested.
    """
    sched = d.schedule
    x_real = add_noise(real_x0, eps_real, taus_real, sched).x
    x_fake = add_noise(fake_x0, eps_fake, taus_fake, sched).x
    logit_real = disc_logit(d, x_real, taus_real, c, clamp=False)
    logit_fake = disc_logit(d, x_fake, taus_fake, c, clamp=False)
    loss_d, loss_g = _paper_losses(logit_real, logit_fake)

    d_real, d_fake_disc, d_fake_gen = _logit_cotangents(logit_real, logit_fake, loss_form)
    head_grad_real, _ = _disc_backward(d, x_real, taus_real, d_real, c)
    head_grad_fake, x_fake_grad = _disc_backward(d, x_fake, taus_fake, d_fake_disc, c)
    head_grad = head_grad_real + head_grad_fake

    student_grad = None
    if need_student_grad:
        if model is None or z is None:
            raise ValueError("student gradient requested without a student model and z batch")
        # generator objective reuses the fake logits with its own cotangent
        _, x_fake_grad_gen = _disc_backward(d, x_fake, taus_fake, d_fake_gen, c)
        ab = sched.alphas_bar[taus_fake][:, None]
        cot_x0 = np.sqrt(ab) * x_fake_grad_gen
        student_grad = predict_backward(model, z, model.grid.times[-1], cot_x0, c)

    lr_c = np.clip(logit_real, -LOGIT_CLAMP, LOGIT_CLAMP)
    lf_c = np.clip(logit_fake, -LOGIT_CLAMP, LOGIT_CLAMP)
    report = GanBatchReport(
        loss_d=loss_d,
        loss_g=loss_g,
        real_logit_mean=float(np.mean(logit_real)),
        fake_logit_mean=float(np.mean(logit_fake)),
        real_prob_mean=float(np.mean(expit(lr_c))),
        fake_prob_mean=float(np.mean(expit(lf_c))),
        grad_norm_d=float(np.linalg.norm(head_grad)),
        grad_norm_g=float(np.linalg.norm(student_grad)) if student_grad is not None else 0.0,
    )
    return report, head_grad, student_grad


def gan_losses(
    d: Discriminator,
    model: StudentModel,
    real_x0: np.ndarray,
    noise_batch: np.ndarray,
    rng: np.random.Generator,
    c=None,
    loss_form: str = "bce",
):
    """GAN losses and gradients for one batch pair.

    Fakes are the student's single-step predictions from noise_batch at the
    top grid time. Both sides are re-noised to uniformly drawn timesteps;
    with equal batch sizes the same (t, eps) draws serve both sides, a paired
    design that cancels variance (and makes identical batches cancel exactly).
    Returns (GanBatchReport, head_grad, student_grad).
    """
    real_x0 = np.asarray(real_x0, dtype=np.float64)
    z = np.asarray(noise_batch, dtype=np.float64)
    if real_x0.size == 0 or z.size == 0:
        raise ValueError("real and noise batches must be nonempty")
    fake_x0 = student_predict(model, z, model.grid.times[-1], c)
    sched = d.schedule
    taus_real = rng.integers(1, sched.num_steps + 1, size=real_x0.shape[0])
    eps_real = rng.standard_normal(real_x0.shape)
    if real_x0.shape == fake_x0.shape:
        taus_fake, eps_fake = taus_real, eps_real
    else:
        taus_fake = rng.integers(1, sched.num_steps + 1, size=fake_x0.shape[0])
        eps_fake = rng.standard_normal(fake_x0.shape)
    return gan_losses_given(
        d, model, real_x0, fake_x0, taus_real, eps_real, taus_fake, eps_fake,
        z=z, c=c, loss_form=loss_form,
    )


def disc_update(
    d: Discriminator,
    opt: AdamState,
    real_x0: np.ndarray,
    fake_x0: np.ndarray,
    rng: np.random.Generator,
    c=None,
    loss_form: str = "bce",
) -> tuple[AdamState, GanBatchReport]:
    """One head-only optimizer step against a given fake batch."""
    sched = d.schedule
    taus = rng.integers(1, sched.num_steps + 1, size=real_x0.shape[0])
    eps = rng.standard_normal(real_x0.shape)
    if fake_x0.shape == real_x0.shape:
        taus_f, eps_f = taus, eps
    else:
        taus_f = rng.integers(1, sched.num_steps + 1, size=fake_x0.shape[0])
        eps_f = rng.standard_normal(fake_x0.shape)
    report, head_grad, _ = gan_losses_given(
        d, None, real_x0, fake_x0, taus, eps, taus_f, eps_f,
        c=c, loss_form=loss_form, need_student_grad=False,
    )
    d.head.params, opt = adam_step(opt, d.head.params, head_grad)
    return opt, report


def run_gan_phase(
    d: Discriminator,
    model: StudentModel,
    mix: MixtureSpec,
    rng: np.random.Generator,
    iters: int = 4000,
    batch: int = 128,
    lr: float = 5e-5,
    disc_steps_per_iter: int = 5,
    loss_form: str = "bce",
    collapse_threshold: float = 1e-3,
    collapse_patience: int = 500,
    fake_sampler=None,
    opt_d: AdamState | None = None,
    opt_g: AdamState | None = None,
):
    """Adversarial initialization: two-scale alternating updates.

    Each iteration takes disc_steps_per_iter head steps and one generator
    step (skipped when fake_sampler supplies a fixed fake distribution, the
    calibration mode). Aborts if the fake-side probability mean stays below
    collapse_threshold for collapse_patience consecutive iterations.
    Returns (model, d, rows, opt_d, opt_g) with one report row per iteration.
    """
    if opt_d is None:
        opt_d = adam_init(d.head.params.size, lr)
    if opt_g is None:
        opt_g = adam_init(model.denoiser.net.params.size, lr)
    dim = mix.dim
    t_top = model.grid.times[-1]
    rows: list[GanBatchReport] = []
    collapse_streak = 0
    for it in range(iters):
        for _ in range(disc_steps_per_iter):
            real = sample_mixture(mix, batch, rng)
            if fake_sampler is not None:
                fake = fake_sampler(batch, rng)
            else:
                fake = student_predict(model, rng.standard_normal((batch, dim)), t_top)
            opt_d, report = disc_update(d, opt_d, real, fake, rng, loss_form=loss_form)
        if fake_sampler is None:
            real = sample_mixture(mix, batch, rng)
            z = rng.standard_normal((batch, dim))
            report, _, student_grad = gan_losses(d, model, real, z, rng, loss_form=loss_form)
            model.denoiser.net.params, opt_g = adam_step(opt_g, model.denoiser.net.params, student_grad)
        rows.append(report)
        collapse_streak = collapse_streak + 1 if report.fake_prob_mean < collapse_threshold else 0
        if collapse_streak >= collapse_patience:
            raise TrainingAbort(
                f"adversarial phase collapsed: fake-side probability mean stayed below "
                f"{collapse_threshold:g} for {collapse_streak} iterations (iter {it})",
                {"iter": it, "fake_prob_mean": report.fake_prob_mean},
            )
    return model, d, rows, opt_d, opt_g
