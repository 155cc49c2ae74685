"""Distribution-matching gradients and the softened reverse KL.

The student never sees a divergence value during training: its update is
assembled from score differences evaluated at re-noised generated samples
(the reverse-KL pathwise gradient). The quadrature evaluators here exist so
finite differences of an actual divergence can certify those cotangents.

Softened objective: value = integral of q (r + 1) log(1/2 + 1/(2r)) with
r = p/q, which equals twice KL((p + q)/2 || p). Its pathwise gradient is
exactly the plain reverse-KL cotangent scaled per sample by 1/(1 + r),
which is the default weight mode; 1/r is kept as an alternative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .adversarial import Discriminator, density_ratio
from .exceptions import QuadratureCoverageError
from .numerics import AdamState, adam_step
from .schedule import Schedule, add_noise, score_from_denoiser
from .student import StudentModel, student_predict
from .teacher import Denoiser, MixtureSpec, analytic_score, denoise_loss_grad, predict_x0

__all__ = [
    "DmdGradReport",
    "QuadratureGrid",
    "ScoreProvider",
    "dmd_cotangent_rkl",
    "dmd_cotangent_soften",
    "fake_score_update",
    "make_quad_grid",
    "reverse_kl_value",
    "soft_weight",
    "soften_rkl_value",
]

ScoreSource = Union[MixtureSpec, Denoiser]

MIN_MASS = 0.9999


@dataclass
class ScoreProvider:
    """Pairs a real-side and a fake-side score, each analytic or neural."""

    schedule: Schedule
    real: ScoreSource
    fake: ScoreSource

    @property
    def tag(self) -> str:
        return "analytic" if isinstance(self.real, MixtureSpec) else "neural"

    def _score(self, source: ScoreSource, x, t) -> np.ndarray:
        if isinstance(source, MixtureSpec):
            return analytic_score(x, t, source, self.schedule)
        return score_from_denoiser(x, predict_x0(source, x, t, self.schedule), t, self.schedule)

    def score_real(self, x, t) -> np.ndarray:
        return self._score(self.real, x, t)

    def score_fake(self, x, t) -> np.ndarray:
        return self._score(self.fake, x, t)


def dmd_cotangent_rkl(
    sp: ScoreProvider,
    x0_hat: np.ndarray,
    tau,
    eps: np.ndarray,
    retain_forward_chain: bool = False,
) -> np.ndarray:
    """Reverse-KL cotangent -(s_real - s_fake) at the re-noised prediction.

    retain_forward_chain multiplies by sqrt(ab_tau), the derivative of the
    noising map wrt its input; dropping it (the default) follows common
    distribution-matching practice, keeping it makes the assembled parameter
    gradient the exact derivative of the noised reverse KL.
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    tau = np.broadcast_to(np.asarray(tau), (x0_hat.shape[0],))
    noised = add_noise(x0_hat, eps, tau, sp.schedule)
    cot = -(sp.score_real(noised.x, tau) - sp.score_fake(noised.x, tau))
    if retain_forward_chain:
        cot = cot * np.sqrt(sp.schedule.alphas_bar[tau])[:, None]
    return cot


def soft_weight(r: np.ndarray, weight_mode: str = "appendix") -> np.ndarray:
    """Per-sample down-weighting of the reverse-KL cotangent.

    'appendix' is 1/(1+r), the exact pathwise factor for the softened
    divergence; 'main-text' is the cruder 1/r.
    """
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError(f"density ratios must be positive, got min {r.min()!r}")
    if weight_mode == "appendix":
        return 1.0 / (1.0 + r)
    if weight_mode == "main-text":
        return 1.0 / r
    raise ValueError(f"unknown weight_mode {weight_mode!r}, expected 'appendix' or 'main-text'")


@dataclass
class DmdGradReport:
    cotangent: np.ndarray
    ratio: np.ndarray
    weight: np.ndarray
    tau: np.ndarray
    weight_mode: str


def dmd_cotangent_soften(
    sp: ScoreProvider,
    ratio_source: "Discriminator | Callable",
    x0_hat: np.ndarray,
    tau,
    eps: np.ndarray,
    weight_mode: str = "appendix",
    retain_forward_chain: bool = False,
) -> tuple[np.ndarray, DmdGradReport]:
    """Softened cotangent: the plain reverse-KL cotangent scaled by w(r).

    ratio_source is either a trained discriminator or any callable
    (x_tau, tau) -> r, e.g. an exact Bayes ratio in oracle tests.
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    tau = np.broadcast_to(np.asarray(tau), (x0_hat.shape[0],))
    noised = add_noise(x0_hat, eps, tau, sp.schedule)
    if callable(ratio_source):
        r = np.asarray(ratio_source(noised.x, tau), dtype=np.float64)
    else:
        r = density_ratio(ratio_source, noised.x, tau)
    r = np.broadcast_to(r, (x0_hat.shape[0],))
    w = soft_weight(r, weight_mode)
    plain = dmd_cotangent_rkl(sp, x0_hat, tau, eps, retain_forward_chain)
    cot = w[:, None] * plain
    return cot, DmdGradReport(cot, r, w, noised.t, weight_mode)


# --- quadrature oracles ------------------------------------------------------


@dataclass(frozen=True)
class QuadratureGrid:
    """1D composite-Simpson rule: nodes and matching weights."""

    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))


def make_quad_grid(lo: float, hi: float, n: int = 2001) -> QuadratureGrid:
    if n < 3 or n % 2 == 0:
        raise ValueError(f"composite Simpson needs an odd node count >= 3, got {n}")
    if hi <= lo:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    x = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return QuadratureGrid(x, w * h / 3.0)


def _grid_densities(p_fn, q_fn, grid: QuadratureGrid):
    p = np.asarray(p_fn(grid.points), dtype=np.float64)
    q = np.asarray(q_fn(grid.points), dtype=np.float64)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("densities must be nonnegative on the quadrature grid")
    mass_p, mass_q = grid.integrate(p), grid.integrate(q)
    if mass_p < MIN_MASS or mass_q < MIN_MASS:
        raise QuadratureCoverageError(
            f"quadrature grid covers mass {mass_p:.6f} of p and {mass_q:.6f} of q; "
            f"both must be >= {MIN_MASS}; widen the interval "
            f"[{grid.points[0]:g}, {grid.points[-1]:g}] or refine it"
        )
    return p, q


def reverse_kl_value(p_fn, q_fn, grid: QuadratureGrid) -> float:
    """KL(q || p) by quadrature; finite-difference oracle for the plain cotangent."""
    p, q = _grid_densities(p_fn, q_fn, grid)
    pos = q > 0
    vals = np.zeros_like(q)
    vals[pos] = q[pos] * (np.log(q[pos]) - np.log(p[pos]))
    return grid.integrate(vals)


def soften_rkl_value(p_fn, q_fn, grid: QuadratureGrid) -> float:
    """Softened divergence between fake q and real p by quadrature.

    Integrand (p + q) log((p + q) / (2 p)), i.e. twice the KL divergence of
    the even mixture (p + q)/2 from p. Zero iff p = q; its pathwise gradient
    in the fake samples is the 1/(1+r)-weighted reverse-KL cotangent.
    """
    p, q = _grid_densities(p_fn, q_fn, grid)
    m = p + q
    pos = m > 0
    vals = np.zeros_like(m)
    vals[pos] = m[pos] * (np.log(m[pos]) - np.log(2.0 * p[pos]))
    return grid.integrate(vals)


def fake_score_update(
    sp: ScoreProvider,
    model: StudentModel,
    z_batch: np.ndarray,
    rng: np.random.Generator,
    opt: AdamState,
    x0_hat: np.ndarray | None = None,
    c=None,
) -> tuple[AdamState, float]:
    """One denoising-MSE step of the fake-score net on student outputs.

    The student only produces training data here; its parameters are not
    touched. x0_hat overrides the default single-step generation from
    z_batch when the caller already holds the phase's predictions.
    """
    if not isinstance(sp.fake, Denoiser):
        raise ValueError("fake-score updates need a neural fake source")
    if x0_hat is None:
        x0_hat = student_predict(model, np.asarray(z_batch, dtype=np.float64), model.grid.times[-1], c)
    sched = sp.schedule
    t = rng.integers(1, sched.num_steps + 1, size=x0_hat.shape[0])
    eps = rng.standard_normal(x0_hat.shape)
    loss, grad = denoise_loss_grad(sp.fake, sched, x0_hat, t, eps, c)
    sp.fake.net.params, opt = adam_step(opt, sp.fake.net.params, grad)
    return opt, loss
