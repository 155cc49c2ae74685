"""Gaussian-mixture ground truth and the teacher denoiser trained on it.

Mixtures stay closed under variance-preserving noising: component k at
time t has mean sqrt(ab_t) mu_k and covariance ab_t Sigma_k + (1 - ab_t) I.
That closure gives exact noisy densities and scores at every timestep, so
every learned quantity in the package has an analytic reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import numerics
from .exceptions import TrainingAbort
from .numerics import DenseNet, adam_init, adam_step, backward, forward, init_dense
from .schedule import Schedule, add_noise, score_from_denoiser, v_from_x0_eps, v_to_x0

__all__ = [
    "Denoiser",
    "MixtureSpec",
    "TeacherBundle",
    "analytic_score",
    "denoise_loss_grad",
    "denoiser_input",
    "make_denoiser",
    "make_teacher",
    "mixture_from_json",
    "mixture_to_json",
    "noisy_log_density",
    "noisy_moments",
    "posterior_x0",
    "predict_x0",
    "ring_mixture",
    "sample_mixture",
    "sample_multistep",
    "teacher_score",
    "train_teacher_denoiser",
]

TIME_FREQS = 16

WEIGHT_TOL = 1e-12
FULL_COV_MAX_DIM = 4


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture; covariances either diagonal (K, d) or full (K, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    diagonal: bool = True

    def __post_init__(self):
        w, mu, cov = self.weights, self.means, self.covs
        if w.ndim != 1 or mu.ndim != 2 or w.shape[0] != mu.shape[0]:
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must be nonnegative and sum to 1, got sum {w.sum()!r}")
        k, d = mu.shape
        if self.diagonal:
            if cov.shape != (k, d):
                raise ValueError(f"diagonal covs shape {cov.shape} != ({k}, {d})")
            if np.any(cov <= 0):
                raise ValueError("diagonal covariances must be strictly positive")
        else:
            if d > FULL_COV_MAX_DIM:
                raise ValueError(f"full covariances supported only for d <= {FULL_COV_MAX_DIM}, got d = {d}")
            if cov.shape != (k, d, d):
                raise ValueError(f"full covs shape {cov.shape} != ({k}, {d}, {d})")
            if not np.allclose(cov, np.swapaxes(cov, -1, -2), atol=1e-12):
                raise ValueError("covariances must be symmetric")
            if np.any(np.linalg.eigvalsh(cov) <= 0):
                raise ValueError("covariances must be positive definite")

    @property
    def n_modes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _mixture(weights, means, covs, diagonal) -> MixtureSpec:
    return MixtureSpec(
        np.asarray(weights, dtype=np.float64),
        np.asarray(means, dtype=np.float64),
        np.asarray(covs, dtype=np.float64),
        diagonal,
    )


def mixture_to_json(mix: MixtureSpec) -> dict:
    blob = {"weights": mix.weights.tolist(), "means": mix.means.tolist()}
    if mix.diagonal:
        blob["cov_diags"] = mix.covs.tolist()
    else:
        blob["covs"] = mix.covs.tolist()
    return blob


def mixture_from_json(blob: dict) -> MixtureSpec:
    if "cov_diags" in blob:
        return _mixture(blob["weights"], blob["means"], blob["cov_diags"], True)
    return _mixture(blob["weights"], blob["means"], blob["covs"], False)


def ring_mixture(
    n_modes: int = 8,
    radius: float = 2.0,
    sigma: float = 0.1,
    weights=None,
) -> MixtureSpec:
    """Isotropic modes spaced evenly on a circle; the workhorse 2D testcase."""
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if weights is None:
        weights = np.full(n_modes, 1.0 / n_modes)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()
    return _mixture(weights, means, np.full((n_modes, 2), sigma**2), True)


def sample_mixture(
    mix: MixtureSpec, n: int, rng: np.random.Generator, return_components: bool = False
):
    comp = rng.choice(mix.n_modes, size=n, p=mix.weights)
    z = rng.standard_normal((n, mix.dim))
    if mix.diagonal:
        x = mix.means[comp] + z * np.sqrt(mix.covs[comp])
    else:
        chol = np.linalg.cholesky(mix.covs)
        x = mix.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)
    return (x, comp) if return_components else x


def _broadcast_t(t, n: int) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim == 0:
        t = np.broadcast_to(t, (n,))
    if t.shape != (n,):
        raise ValueError(f"t shape {t.shape} incompatible with batch size {n}")
    return t


def noisy_moments(mix: MixtureSpec, t, sched: Schedule):
    """Per-component (means, covs) of the mixture marginal at timestep(s) t."""
    t = np.asarray(t)
    ab = sched.alphas_bar[t]
    if t.ndim == 0:
        means = np.sqrt(ab) * mix.means
        if mix.diagonal:
            covs = ab * mix.covs + (1.0 - ab)
        else:
            covs = ab * mix.covs + (1.0 - ab) * np.eye(mix.dim)
        return means, covs
    means = np.sqrt(ab)[:, None, None] * mix.means
    if mix.diagonal:
        covs = ab[:, None, None] * mix.covs + (1.0 - ab)[:, None, None]
    else:
        eye = np.eye(mix.dim)
        covs = ab[:, None, None, None] * mix.covs + (1.0 - ab)[:, None, None, None] * eye
    return means, covs


def _component_stats(x: np.ndarray, t: np.ndarray, mix: MixtureSpec, sched: Schedule):
    """Per-component log-density and score contribution at each sample.

    Returns (log_pdf (n, K), comp_score (n, K, d)).
    """
    means, covs = noisy_moments(mix, t, sched)  # (n,K,d), (n,K,d[,d])
    diff = x[:, None, :] - means
    if mix.diagonal:
        inv_diff = diff / covs
        maha = np.sum(diff * inv_diff, axis=-1)
        logdet = np.sum(np.log(covs), axis=-1)
    else:
        inv_diff = np.linalg.solve(covs, diff[..., None])[..., 0]
        maha = np.sum(diff * inv_diff, axis=-1)
        _, logdet = np.linalg.slogdet(covs)
    log_pdf = -0.5 * (maha + logdet + mix.dim * np.log(2.0 * np.pi))
    return log_pdf, -inv_diff


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def noisy_log_density(x, t, mix: MixtureSpec, sched: Schedule) -> np.ndarray:
    """Exact log density of the noised mixture marginal, max-shifted log-sum-exp."""
    x, squeeze = _as_batch(x)
    if x.shape[1] != mix.dim:
        raise ValueError(f"x dim {x.shape[1]} != mixture dim {mix.dim}")
    t = _broadcast_t(t, x.shape[0])
    log_pdf, _ = _component_stats(x, t, mix, sched)
    out = logsumexp(log_pdf + np.log(mix.weights), axis=1)
    return out[0] if squeeze else out


def analytic_score(x, t, mix: MixtureSpec, sched: Schedule) -> np.ndarray:
    """Exact score of the noised marginal via posterior-weighted component scores."""
    x, squeeze = _as_batch(x)
    if x.shape[1] != mix.dim:
        raise ValueError(f"x dim {x.shape[1]} != mixture dim {mix.dim}")
    t = _broadcast_t(t, x.shape[0])
    log_pdf, comp_score = _component_stats(x, t, mix, sched)
    logits = log_pdf + np.log(mix.weights)
    logits = logits - logits.max(axis=1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=1, keepdims=True)
    out = np.sum(resp[:, :, None] * comp_score, axis=1)
    return out[0] if squeeze else out


def posterior_x0(x, t, mix: MixtureSpec, sched: Schedule) -> np.ndarray:
    """Exact posterior mean E[x0 | x_t] (Tweedie applied to the analytic score)."""
    x, squeeze = _as_batch(x)
    t = _broadcast_t(t, x.shape[0])
    ab = sched.alphas_bar[t][:, None]
    s = analytic_score(x, t, mix, sched)
    out = (x + (1.0 - ab) * s) / np.sqrt(ab)
    return out[0] if squeeze else out


# --- denoiser ---------------------------------------------------------------


@dataclass
class Denoiser:
    """A DenseNet with a fixed prediction convention (clean sample or velocity)."""

    net: DenseNet
    head: str = "x0"
    cond_dim: int = 0

    def __post_init__(self):
        if self.head not in ("x0", "v"):
            raise ValueError(f"head must be 'x0' or 'v', got {self.head!r}")


def denoiser_input(x_t: np.ndarray, t, num_steps: int, c: np.ndarray | None = None) -> np.ndarray:
    """Network input layout: sample dims, then time embedding, then condition."""
    x_t = np.asarray(x_t, dtype=np.float64)
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = x_t[None, :]
    t = _broadcast_t(t, x_t.shape[0])
    emb = numerics.time_embedding(t, num_steps, TIME_FREQS)
    parts = [x_t, emb]
    if c is not None:
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 1:
            c = c[None, :]
        parts.append(np.broadcast_to(c, (x_t.shape[0], c.shape[1])))
    out = np.concatenate(parts, axis=1)
    return out[0] if squeeze else out


def make_denoiser(
    dim: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64, 64),
    head: str = "x0",
    cond_dim: int = 0,
    activation: str = "tanh",
) -> Denoiser:
    widths = (dim + 2 * TIME_FREQS + cond_dim, *hidden, dim)
    return Denoiser(init_dense(widths, rng, activation), head, cond_dim)


def predict_x0(den: Denoiser, x_t, t, sched: Schedule, c=None) -> np.ndarray:
    """Run the denoiser and convert its head output to a clean-sample estimate."""
    x_t = np.asarray(x_t, dtype=np.float64)
    squeeze = x_t.ndim == 1
    xb = x_t[None, :] if squeeze else x_t
    t = _broadcast_t(t, xb.shape[0])
    out = forward(den.net, denoiser_input(xb, t, sched.num_steps, c))
    if den.head == "v":
        out = v_to_x0(xb, out, t, sched)
    return out[0] if squeeze else out


@dataclass
class TeacherBundle:
    """Ground-truth mixture plus the denoiser trained on it."""

    mixture: MixtureSpec
    denoiser: Denoiser
    schedule: Schedule


def make_teacher(
    mix: MixtureSpec,
    sched: Schedule,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64, 64),
    head: str = "x0",
    cond_dim: int = 0,
    activation: str = "tanh",
) -> TeacherBundle:
    if cond_dim not in (0, mix.n_modes):
        raise ValueError(f"cond_dim must be 0 or n_modes={mix.n_modes}, got {cond_dim}")
    den = make_denoiser(mix.dim, rng, hidden, head, cond_dim, activation)
    return TeacherBundle(mix, den, sched)


def denoise_loss_grad(den: Denoiser, sched: Schedule, x0, t, eps, c=None):
    """Mean-squared denoising loss on the head's target and its parameter grad."""
    ns = add_noise(x0, eps, t, sched)
    target = x0 if den.head == "x0" else v_from_x0_eps(x0, eps, t, sched)
    inp = denoiser_input(ns.x, t, sched.num_steps, c)
    pred = forward(den.net, inp)
    resid = pred - target
    loss = float(np.mean(resid**2))
    cot = 2.0 * resid / resid.size
    grad, _ = backward(den.net, inp, cot)
    return loss, grad


def train_teacher_denoiser(
    bundle: TeacherBundle,
    iters: int,
    rng: np.random.Generator,
    batch: int = 128,
    lr: float = 1e-3,
    opt: "numerics.AdamState | None" = None,
    divergence_factor: float = 10.0,
    divergence_patience: int = 100,
):
    """Denoising-MSE training of the teacher net on mixture samples.

    Timesteps are drawn uniformly from {1..T}. Aborts if the loss stays
    above divergence_factor times its initial value for divergence_patience
    consecutive steps, or turns non-finite. Returns (bundle, losses).
    """
    den = bundle.denoiser
    sched = bundle.schedule
    if opt is None:
        opt = adam_init(den.net.params.size, lr)
    losses = np.zeros(iters)
    initial = None
    bad_streak = 0
    for i in range(iters):
        x0, comp = sample_mixture(bundle.mixture, batch, rng, return_components=True)
        c = None
        if den.cond_dim:
            c = np.eye(bundle.mixture.n_modes)[comp]
        t = rng.integers(1, sched.num_steps + 1, size=batch)
        eps = rng.standard_normal(x0.shape)
        loss, grad = denoise_loss_grad(den, sched, x0, t, eps, c)
        if not np.isfinite(loss):
            raise TrainingAbort(
                f"teacher denoiser loss became non-finite at iter {i}",
                {"iter": i, "loss": loss},
            )
        losses[i] = loss
        if initial is None:
            initial = loss
        bad_streak = bad_streak + 1 if loss > divergence_factor * initial else 0
        if bad_streak >= divergence_patience:
            raise TrainingAbort(
                f"teacher denoiser diverged: loss {loss:.3e} stayed above "
                f"{divergence_factor:g} x initial {initial:.3e} for {bad_streak} steps",
                {"iter": i, "loss": loss, "initial": initial},
            )
        den.net.params, opt = adam_step(opt, den.net.params, grad)
    return bundle, losses


def teacher_score(bundle: TeacherBundle, x, t, c=None) -> np.ndarray:
    """Score implied by the trained denoiser (the neural stand-in for s_real)."""
    return score_from_denoiser(x, predict_x0(bundle.denoiser, x, t, bundle.schedule, c), t, bundle.schedule)


def sample_multistep(
    bundle: TeacherBundle,
    n_steps: int,
    z: np.ndarray,
    c=None,
) -> tuple[np.ndarray, int]:
    """Deterministic coarse-grid sampler for the teacher (the many-step baseline).

    Walks a descending timestep grid of n_steps points from T to 1; each step
    predicts x0 and hops to the next timestep by re-composing with the implied
    noise. Returns (samples, n_evals) where n_evals counts denoiser calls.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    sched = bundle.schedule
    ts = np.unique(np.round(np.linspace(sched.num_steps, 1, n_steps)).astype(int))[::-1]
    x = np.asarray(z, dtype=np.float64)
    n_evals = 0
    x0_hat = None
    for j, t in enumerate(ts):
        x0_hat = predict_x0(bundle.denoiser, x, int(t), sched, c)
        n_evals += 1
        if j + 1 < len(ts):
            ab_t = sched.alphas_bar[int(t)]
            ab_next = sched.alphas_bar[int(ts[j + 1])]
            eps_hat = (x - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
            x = np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_hat
    return x0_hat, n_evals
