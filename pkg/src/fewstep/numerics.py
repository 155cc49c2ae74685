"""Small dense networks with hand-written reverse-mode gradients.

Everything runs on flat float64 parameter vectors so optimizer state,
checkpointing, and finite-difference checks stay trivial. Activations are
restricted to smooth families; finite differences are the ground truth for
every gradient in the package.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "DenseNet",
    "AdamState",
    "adam_init",
    "adam_step",
    "backward",
    "finite_diff_grad",
    "forward",
    "init_dense",
    "load_params",
    "named_rng",
    "param_count",
    "save_params",
    "time_embedding",
]

_ACTIVATIONS = ("tanh", "silu")


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible RNG stream keyed by (seed, name).

    Streams with different names never share state, so e.g. evaluation
    draws cannot perturb a training trajectory.
    """
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    )


def time_embedding(t, num_steps: int, n_freq: int = 16) -> np.ndarray:
    """Sinusoidal features of t / num_steps at n_freq geometric frequencies.

    Returns shape (..., 2 * n_freq): sin block then cos block.
    """
    u = np.asarray(t, dtype=np.float64) / float(num_steps)
    freqs = np.exp(np.linspace(np.log(1.0), np.log(256.0), n_freq))
    phase = 2.0 * np.pi * u[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def param_count(widths: tuple[int, ...]) -> int:
    return sum((w_in + 1) * w_out for w_in, w_out in zip(widths[:-1], widths[1:]))


@dataclass
class DenseNet:
    """Fully-connected net held as a single flat parameter vector.

    widths includes the input and output layer, e.g. (3, 64, 64, 2).
    Layout per layer: weight matrix (out, in) row-major, then bias (out,).
    Hidden activations use ``activation``; the final layer is linear.
    """

    widths: tuple[int, ...]
    params: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError(f"need at least input and output widths, got {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {_ACTIVATIONS}")
        self.params = np.asarray(self.params, dtype=np.float64)
        expected = param_count(self.widths)
        if self.params.shape != (expected,):
            raise ValueError(
                f"flat parameter vector has shape {self.params.shape}, "
                f"expected ({expected},) for widths {self.widths}"
            )

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Views of (W, b) for layer i into the flat vector."""
        offset = sum((a + 1) * b for a, b in zip(self.widths[:i], self.widths[1 : i + 1]))
        w_in, w_out = self.widths[i], self.widths[i + 1]
        w = self.params[offset : offset + w_in * w_out].reshape(w_out, w_in)
        b = self.params[offset + w_in * w_out : offset + (w_in + 1) * w_out]
        return w, b


def init_dense(
    widths: tuple[int, ...],
    rng: np.random.Generator,
    activation: str = "tanh",
    zero_last: bool = False,
) -> DenseNet:
    """Scaled-uniform fan-in init: W ~ U(+-sqrt(1/fan_in)), biases zero.

    zero_last leaves the final layer all-zero, which is handy for heads
    that should start out non-committal (logit 0 -> probability 1/2).
    """
    chunks = []
    n_layers = len(widths) - 1
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        if zero_last and i == n_layers - 1:
            w = np.zeros((w_out, w_in))
        else:
            bound = np.sqrt(1.0 / w_in)
            w = rng.uniform(-bound, bound, size=(w_out, w_in))
        chunks.append(w.ravel())
        chunks.append(np.zeros(w_out))
    return DenseNet(tuple(widths), np.concatenate(chunks), activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    # silu: z * sigmoid(z)
    return z / (1.0 + np.exp(-z))


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def _run_layers(net: DenseNet, x: np.ndarray, n_layers: int, activate_last: bool):
    """Forward pass keeping pre- and post-activation values per layer."""
    pre, post = [], [x]
    a = x
    for i in range(n_layers):
        w, b = net.layer(i)
        z = a @ w.T + b
        pre.append(z)
        if i < n_layers - 1 or activate_last:
            a = _act(z, net.activation)
        else:
            a = z
        post.append(a)
    return pre, post


def forward(
    net: DenseNet,
    x: np.ndarray,
    n_layers: int | None = None,
    activate_last: bool = False,
) -> np.ndarray:
    """Apply the first n_layers layers (default: all) to a batch.

    x has shape (n, d_in) or (d_in,). With activate_last the nonlinearity
    is also applied after the last evaluated layer, which turns a prefix of
    the net into a feature extractor.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    n_layers = net.n_layers if n_layers is None else n_layers
    if not 1 <= n_layers <= net.n_layers:
        raise ValueError(f"n_layers must be in [1, {net.n_layers}], got {n_layers}")
    if x.shape[1] != net.widths[0]:
        raise ValueError(f"input width {x.shape[1]} != net input width {net.widths[0]}")
    _, post = _run_layers(net, x, n_layers, activate_last)
    out = post[-1]
    return out[0] if squeeze else out


def backward(
    net: DenseNet,
    x: np.ndarray,
    output_cotangent: np.ndarray,
    n_layers: int | None = None,
    activate_last: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode gradient of sum_i <output_i, cotangent_i>.

    Returns (param_grad, input_grad): param_grad is flat and aligned with
    net.params (entries for unused suffix layers are zero), input_grad
    matches the shape of x.
    """
    x = np.asarray(x, dtype=np.float64)
    cot = np.asarray(output_cotangent, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x, cot = x[None, :], cot[None, :]
    n_layers = net.n_layers if n_layers is None else n_layers
    pre, post = _run_layers(net, x, n_layers, activate_last)
    if cot.shape != post[-1].shape:
        raise ValueError(f"cotangent shape {cot.shape} != output shape {post[-1].shape}")

    param_grad = np.zeros_like(net.params)
    delta = cot
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1 or activate_last:
            delta = delta * _act_grad(pre[i], post[i + 1], net.activation)
        w, _ = net.layer(i)
        offset = sum((a + 1) * b for a, b in zip(net.widths[:i], net.widths[1 : i + 1]))
        w_in, w_out = net.widths[i], net.widths[i + 1]
        param_grad[offset : offset + w_in * w_out] = (delta.T @ post[i]).ravel()
        param_grad[offset + w_in * w_out : offset + (w_in + 1) * w_out] = delta.sum(axis=0)
        delta = delta @ w
    return param_grad, (delta[0] if squeeze else delta)


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam with decoupled weight decay (default none)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


def adam_init(n_params: int, lr: float, **kwargs) -> AdamState:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return AdamState(lr=lr, m=np.zeros(n_params), v=np.zeros(n_params), **kwargs)


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One optimizer step; pure, returns (new_params, new_state)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"grad shape {grad.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise ValueError(
            f"non-finite gradient at flat index {bad}: {grad[bad]!r} "
            f"(step {state.step}, |grad| max {np.nanmax(np.abs(grad)):.3e})"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    update = m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay:
        update = update + state.weight_decay * params
    new_params = params - state.lr * update
    return new_params, replace(state, step=t, m=m, v=v)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one axis at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        f_plus = f(x)
        xf[i] = orig - h
        f_minus = f(x)
        xf[i] = orig
        flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def save_params(net: DenseNet, path: str | Path, dtype: str = "<f4") -> None:
    """Write params as a little-endian binary blob plus a JSON shape sidecar."""
    path = Path(path)
    path.write_bytes(np.asarray(net.params, dtype=dtype).tobytes())
    sidecar = {
        "widths": list(net.widths),
        "activation": net.activation,
        "dtype": dtype,
        "count": int(net.params.size),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_params(path: str | Path) -> DenseNet:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype=sidecar["dtype"]).astype(np.float64)
    widths = tuple(sidecar["widths"])
    if raw.size != param_count(widths):
        raise ValueError(
            f"blob holds {raw.size} values, widths {widths} need {param_count(widths)}"
        )
    return DenseNet(widths, raw, sidecar["activation"])
