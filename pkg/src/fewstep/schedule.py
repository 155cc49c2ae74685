"""Variance-preserving discrete-time noising schedule and its algebra.

A schedule is the cumulative signal table alpha_bar[0..T] with
alpha_bar[0] = 1. Noising, velocity conversion, and the denoiser-to-score
map all read coefficients from this table; nothing else in the package
touches beta directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoisySample",
    "Schedule",
    "add_noise",
    "make_schedule",
    "schedule_from_json",
    "schedule_to_json",
    "score_from_denoiser",
    "v_from_x0_eps",
    "v_to_x0",
]

ALPHA_BAR_FINAL_MAX = 1e-3


@dataclass(frozen=True)
class Schedule:
    kind: str
    num_steps: int
    beta_start: float
    beta_end: float
    betas: np.ndarray        # shape (T,), betas[i] is beta_{i+1}
    alphas_bar: np.ndarray   # shape (T+1,), alphas_bar[0] == 1

    def __post_init__(self):
        ab = self.alphas_bar
        if self.num_steps < 2:
            raise ValueError(f"num_steps must be >= 2, got {self.num_steps}")
        if ab.shape != (self.num_steps + 1,):
            raise ValueError(f"alphas_bar shape {ab.shape} != ({self.num_steps + 1},)")
        if ab[0] != 1.0:
            raise ValueError(f"alphas_bar[0] must be 1, got {ab[0]!r}")
        if not np.all(np.diff(ab) < 0):
            raise ValueError("alphas_bar must be strictly decreasing")
        if ab[-1] >= ALPHA_BAR_FINAL_MAX:
            raise ValueError(
                f"terminal alpha_bar {ab[-1]:.3e} >= {ALPHA_BAR_FINAL_MAX:.0e}; "
                "endpoint noise level too low for pure-noise sampling"
            )

    @property
    def sigmas(self) -> np.ndarray:
        """sigma_t = sqrt(1 - alpha_bar_t), defined for every t in [0, T]."""
        return np.sqrt(1.0 - self.alphas_bar)


@dataclass
class NoisySample:
    """One forward-noising result; keeps the eps that was consumed."""

    x: np.ndarray
    t: np.ndarray
    eps: np.ndarray


def make_schedule(
    num_steps: int = 1000,
    kind: str = "linear",
    beta_start: float | None = None,
    beta_end: float | None = None,
) -> Schedule:
    """Build a schedule; default linear-beta endpoints 1e-4 -> 0.02 at T=1000.

    For other T the default endpoints scale by 1000/T so the terminal
    alpha_bar stays tiny (betas are clipped into (0, 0.999]).
    """
    if num_steps < 2:
        raise ValueError(f"num_steps must be >= 2, got {num_steps}")
    if kind == "linear":
        scale = 1000.0 / num_steps
        b0 = 1e-4 * scale if beta_start is None else float(beta_start)
        b1 = 0.02 * scale if beta_end is None else float(beta_end)
        betas = np.clip(np.linspace(b0, b1, num_steps), 1e-8, 0.999)
    elif kind == "cosine":
        s = 0.008
        u = np.arange(num_steps + 1) / num_steps
        f = np.cos((u + s) / (1.0 + s) * np.pi / 2.0) ** 2
        ab = f / f[0]
        betas = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, 0.999)
        b0, b1 = float(betas[0]), float(betas[-1])
    else:
        raise ValueError(f"unknown schedule kind {kind!r}, expected 'linear' or 'cosine'")
    alphas_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return Schedule(kind, num_steps, float(b0), float(b1), betas, alphas_bar)


def schedule_to_json(sched: Schedule) -> dict:
    return {
        "kind": sched.kind,
        "num_steps": sched.num_steps,
        "beta_start": sched.beta_start,
        "beta_end": sched.beta_end,
    }


def schedule_from_json(blob: dict) -> Schedule:
    return make_schedule(
        num_steps=blob["num_steps"],
        kind=blob["kind"],
        beta_start=blob["beta_start"],
        beta_end=blob["beta_end"],
    )


def _check_t(sched: Schedule, t, allow_zero: bool = True) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise ValueError(f"timesteps must be integers, got dtype {t.dtype}")
    lo = 0 if allow_zero else 1
    if np.any(t < lo) or np.any(t > sched.num_steps):
        raise ValueError(
            f"timestep out of range [{lo}, {sched.num_steps}]: "
            f"min {int(t.min())}, max {int(t.max())}"
        )
    return t


def _coeff(values: np.ndarray, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gather per-timestep coefficients shaped to broadcast against x."""
    c = values[t]
    if c.ndim == x.ndim:
        return c
    return c[..., None]


def add_noise(x0: np.ndarray, eps: np.ndarray, t, sched: Schedule) -> NoisySample:
    """Forward noising x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    t = _check_t(sched, t)
    ab = _coeff(sched.alphas_bar, t, x0)
    x = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return NoisySample(x=x, t=t, eps=eps)


def v_from_x0_eps(x0: np.ndarray, eps: np.ndarray, t, sched: Schedule) -> np.ndarray:
    """Velocity target v = sqrt(ab_t) eps - sqrt(1 - ab_t) x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    t = _check_t(sched, t)
    ab = _coeff(sched.alphas_bar, t, x0)
    return np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * x0


def v_to_x0(x_t: np.ndarray, v: np.ndarray, t, sched: Schedule) -> np.ndarray:
    """Recover x0 = sqrt(ab_t) x_t - sqrt(1 - ab_t) v from a velocity prediction."""
    x_t = np.asarray(x_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x_t.shape != v.shape:
        raise ValueError(f"x_t shape {x_t.shape} != v shape {v.shape}")
    t = _check_t(sched, t)
    ab = _coeff(sched.alphas_bar, t, x_t)
    return np.sqrt(ab) * x_t - np.sqrt(1.0 - ab) * v


def score_from_denoiser(x_t: np.ndarray, x0_pred: np.ndarray, t, sched: Schedule) -> np.ndarray:
    """Marginal score implied by a posterior-mean denoiser.

    s(x_t, t) = -(x_t - sqrt(ab_t) x0_pred) / (1 - ab_t). Rejects t = 0,
    where the noise variance vanishes.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    if x_t.shape != x0_pred.shape:
        raise ValueError(f"x_t shape {x_t.shape} != x0_pred shape {x0_pred.shape}")
    t = _check_t(sched, t, allow_zero=False)
    ab = _coeff(sched.alphas_bar, t, x_t)
    return -(x_t - np.sqrt(ab) * x0_pred) / (1.0 - ab)
