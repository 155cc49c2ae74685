import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewstep.numerics import (
    AdamState,
    DenseNet,
    adam_init,
    adam_step,
    backward,
    finite_diff_grad,
    forward,
    init_dense,
    load_params,
    named_rng,
    param_count,
    save_params,
    time_embedding,
)


def test_named_rng_reproducible_and_stream_separated():
    a1 = named_rng(5, "teacher").standard_normal(4)
    a2 = named_rng(5, "teacher").standard_normal(4)
    b = named_rng(5, "eval").standard_normal(4)
    c = named_rng(6, "teacher").standard_normal(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)
    assert not np.allclose(a1, c)


def test_time_embedding_shape_and_bounds():
    emb = time_embedding(np.arange(0, 1001, 50), 1000)
    assert emb.shape == (21, 32)
    assert np.all(np.abs(emb) <= 1.0)
    # t = 0 sits at phase zero: sin block 0, cos block 1
    z = time_embedding(np.array([0]), 1000)
    np.testing.assert_allclose(z[0, :16], 0.0, atol=1e-15)
    np.testing.assert_allclose(z[0, 16:], 1.0, atol=1e-15)


def test_time_embedding_separates_timesteps():
    emb = time_embedding(np.arange(1, 1001), 1000)
    # no two timesteps share an embedding
    assert len({tuple(np.round(row, 12)) for row in emb}) == 1000


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=1000), min_size=1, max_size=16))
def test_time_embedding_bounded(ts):
    emb = time_embedding(np.array(ts), 1000)
    assert np.all(np.abs(emb) <= 1.0 + 1e-12)


def test_param_count():
    assert param_count((3, 8, 2)) == (3 + 1) * 8 + (8 + 1) * 2


def test_layer_views_share_memory():
    net = init_dense((2, 3, 1), named_rng(0, "t"))
    w, b = net.layer(0)
    w[0, 0] = 42.0
    b[1] = 7.0
    assert net.params[0] == 42.0
    assert net.params[2 * 3 + 1] == 7.0


def test_init_dense_zero_last_starts_noncommittal():
    net = init_dense((4, 8, 1), named_rng(1, "head"), zero_last=True)
    out = forward(net, named_rng(2, "x").standard_normal((5, 4)))
    np.testing.assert_array_equal(out, np.zeros((5, 1)))


@pytest.mark.parametrize("activation", ["tanh", "silu"])
def test_backward_param_grad_matches_fd(activation):
    rng = named_rng(11, activation)
    net = init_dense((3, 5, 4, 2), rng, activation=activation)
    x = rng.standard_normal((6, 3))
    cot = rng.standard_normal((6, 2))

    grad, _ = backward(net, x, cot)

    def scalar(p):
        probe = DenseNet(net.widths, p, activation)
        return float(np.sum(forward(probe, x) * cot))

    fd = finite_diff_grad(scalar, net.params.copy())
    denom = np.maximum(np.abs(fd), 1e-8)
    assert np.max(np.abs(grad - fd) / denom) < 1e-4


def test_backward_input_grad_matches_fd():
    rng = named_rng(12, "input-grad")
    net = init_dense((3, 6, 2), rng)
    x = rng.standard_normal(3)
    cot = rng.standard_normal(2)
    _, in_grad = backward(net, x, cot)
    fd = finite_diff_grad(lambda xv: float(forward(net, xv) @ cot), x.copy())
    np.testing.assert_allclose(in_grad, fd, rtol=1e-6, atol=1e-9)


def test_forward_prefix_is_feature_extractor():
    rng = named_rng(13, "prefix")
    net = init_dense((2, 4, 3), rng)
    x = rng.standard_normal((5, 2))
    w, b = net.layer(0)
    np.testing.assert_allclose(
        forward(net, x, n_layers=1, activate_last=True),
        np.tanh(x @ w.T + b),
        rtol=1e-14,
    )


def test_backward_prefix_leaves_suffix_grads_zero():
    rng = named_rng(14, "prefix-grad")
    net = init_dense((2, 4, 3), rng)
    x = rng.standard_normal((5, 2))
    cot = rng.standard_normal((5, 4))
    grad, _ = backward(net, x, cot, n_layers=1, activate_last=True)
    first = (2 + 1) * 4
    assert np.any(grad[:first] != 0)
    np.testing.assert_array_equal(grad[first:], 0.0)


def test_adam_first_step_hand_computed():
    params = np.array([1.0])
    grad = np.array([2.0])
    state = adam_init(1, lr=0.1)
    new_params, new_state = adam_step(state, params, grad)
    # bias correction makes m_hat = g, v_hat = g^2 on step one
    expected = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8))
    assert new_params[0] == pytest.approx(expected, abs=1e-16)
    assert new_state.step == 1
    assert new_state.m[0] == pytest.approx(0.2)
    assert new_state.v[0] == pytest.approx(0.004)


def test_adam_second_step_hand_computed():
    state = adam_init(1, lr=0.5)
    p, state = adam_step(state, np.array([0.0]), np.array([1.0]))
    p, state = adam_step(state, p, np.array([-1.0]))
    m = 0.9 * 0.1 + 0.1 * (-1.0)
    v = 0.999 * 0.001 + 0.001 * 1.0
    m_hat = m / (1.0 - 0.9**2)
    v_hat = v / (1.0 - 0.999**2)
    start = 0.0 - 0.5 * (1.0 / (1.0 + 1e-8))
    expected = start - 0.5 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert p[0] == pytest.approx(expected, abs=1e-15)


def test_adam_is_pure():
    state = adam_init(3, lr=0.01)
    params = np.zeros(3)
    adam_step(state, params, np.ones(3))
    np.testing.assert_array_equal(state.m, 0.0)
    np.testing.assert_array_equal(params, 0.0)
    assert state.step == 0


def test_adam_rejects_nonfinite_grad():
    state = adam_init(3, lr=0.01)
    grad = np.array([0.0, np.nan, 1.0])
    with pytest.raises(ValueError, match="flat index 1"):
        adam_step(state, np.zeros(3), grad)


def test_adam_weight_decay_decoupled():
    state = adam_init(1, lr=0.1, weight_decay=0.5)
    p, _ = adam_step(state, np.array([2.0]), np.array([0.0001]))
    # decay acts on params directly, not through the moment estimates
    no_decay, _ = adam_step(adam_init(1, lr=0.1), np.array([2.0]), np.array([0.0001]))
    assert p[0] == pytest.approx(no_decay[0] - 0.1 * 0.5 * 2.0)


def test_finite_diff_on_quadratic():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -0.7])
    fd = finite_diff_grad(lambda v: float(v @ a @ v), x)
    np.testing.assert_allclose(fd, (a + a.T) @ x, rtol=1e-7)


def test_save_load_roundtrip(tmp_path):
    net = init_dense((3, 7, 2), named_rng(9, "io"), activation="silu")
    save_params(net, tmp_path / "net.bin")
    clone = load_params(tmp_path / "net.bin")
    assert clone.widths == net.widths
    assert clone.activation == "silu"
    # default storage is float32, so equality only to f4 resolution
    np.testing.assert_allclose(clone.params, net.params, atol=1e-6)


def test_save_load_f8_exact(tmp_path):
    net = init_dense((2, 3, 1), named_rng(10, "io8"))
    save_params(net, tmp_path / "net8.bin", dtype="<f8")
    clone = load_params(tmp_path / "net8.bin")
    np.testing.assert_array_equal(clone.params, net.params)


def test_load_rejects_truncated_blob(tmp_path):
    net = init_dense((2, 3, 1), named_rng(15, "trunc"))
    save_params(net, tmp_path / "n.bin")
    blob = (tmp_path / "n.bin").read_bytes()
    (tmp_path / "n.bin").write_bytes(blob[:-4])
    with pytest.raises(ValueError, match="blob holds"):
        load_params(tmp_path / "n.bin")


def test_dense_net_validates_param_length():
    with pytest.raises(ValueError, match="flat parameter vector"):
        DenseNet((2, 3), np.zeros(5))


def test_unknown_activation_rejected():
    with pytest.raises(ValueError, match="unknown activation"):
        DenseNet((2, 2), np.zeros(6), activation="relu")
