"""Sample-quality metrics against the analytic mixture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

from .teacher import MixtureSpec, analytic_score
from .schedule import Schedule

__all__ = [
    "CoverageReport",
    "DistanceReport",
    "default_min_hits",
    "energy_distance",
    "grid_points",
    "mode_coverage",
    "score_error_map",
    "sliced_wasserstein",
    "speedup_report",
]


@dataclass
class CoverageReport:
    coverage: float
    hits: np.ndarray
    assigned: np.ndarray
    covered: np.ndarray
    radius: float
    min_hits: int
    n_samples: int


def default_min_hits(n: int, n_modes: int) -> int:
    return max(5, int(0.1 * n / n_modes))


def mode_coverage(
    samples: np.ndarray,
    mix: MixtureSpec,
    radius: float = 3.0,
    min_hits: int | None = None,
) -> CoverageReport:
    """Fraction of modes holding at least min_hits samples within a
    Mahalanobis ball of the given radius.

    Each sample is assigned to its nearest mode in Mahalanobis distance and
    counts as a hit only if that distance is within the radius, so total
    hits never exceed the sample count.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[1] != mix.dim:
        raise ValueError(f"sample dim {samples.shape[1]} != mixture dim {mix.dim}")
    n = samples.shape[0]
    if min_hits is None:
        min_hits = default_min_hits(n, mix.n_modes)
    diff = samples[:, None, :] - mix.means
    if mix.diagonal:
        d2 = np.sum(diff * diff / mix.covs, axis=-1)
    else:
        d2 = np.sum(diff * np.linalg.solve(mix.covs, diff[:, :, :, None])[..., 0], axis=-1)
    nearest = np.argmin(d2, axis=1)
    within = np.sqrt(d2[np.arange(n), nearest]) <= radius
    hits = np.bincount(nearest[within], minlength=mix.n_modes)
    assigned = np.bincount(nearest, minlength=mix.n_modes)
    covered = hits >= min_hits
    return CoverageReport(
        coverage=float(covered.mean()),
        hits=hits,
        assigned=assigned,
        covered=covered,
        radius=radius,
        min_hits=min_hits,
        n_samples=n,
    )


def _mean_pair_dist(a: np.ndarray, b: np.ndarray, block: int = 1024) -> float:
    """Mean Euclidean distance over all ordered pairs, blockwise to bound memory."""
    total = 0.0
    for i in range(0, a.shape[0], block):
        total += cdist(a[i : i + block], b).sum()
    return total / (a.shape[0] * b.shape[0])


def energy_distance(
    a: np.ndarray,
    b: np.ndarray,
    rng: np.random.Generator | None = None,
    max_n: int | None = None,
) -> float:
    """Energy distance V-statistic 2 E|a-b| - E|a-a'| - E|b-b'|.

    All pairs enter including self-pairs, so identical inputs give exactly
    zero. max_n subsamples each side (using rng) to cap the n^2 cost.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("energy distance needs nonempty sample sets")
    if max_n is not None:
        if rng is None:
            raise ValueError("subsampling requested without an rng")
        if a.shape[0] > max_n:
            a = a[rng.choice(a.shape[0], max_n, replace=False)]
        if b.shape[0] > max_n:
            b = b[rng.choice(b.shape[0], max_n, replace=False)]
    # canonical orientation of the cross term keeps ed(a, b) == ed(b, a) bitwise
    if (a.shape[0], a.tobytes()) > (b.shape[0], b.tobytes()):
        a, b = b, a
    return 2.0 * _mean_pair_dist(a, b) - _mean_pair_dist(a, a) - _mean_pair_dist(b, b)


def sliced_wasserstein(
    a: np.ndarray,
    b: np.ndarray,
    n_dirs: int = 64,
    seed: int = 0,
) -> float:
    """Mean 1D Wasserstein-1 over seeded random projection directions."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_dirs, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.mean([wasserstein_distance(a @ u, b @ u) for u in dirs]))


@dataclass
class DistanceReport:
    energy: float
    sliced_w: float
    n_a: int
    n_b: int


def grid_points(lo, hi, n_per_dim: int, dim: int) -> np.ndarray:
    """Regular evaluation grid, flattened to (n_per_dim**dim, dim)."""
    axes = [np.linspace(lo, hi, n_per_dim) for _ in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def score_error_map(
    score_fn,
    mix: MixtureSpec,
    points: np.ndarray,
    t: int,
    sched: Schedule,
) -> dict:
    """Pointwise norm of (score_fn - analytic score) over an evaluation grid."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    truth = analytic_score(points, t, mix, sched)
    approx = np.asarray(score_fn(points, t), dtype=np.float64)
    err = np.linalg.norm(approx - truth, axis=1)
    return {
        "points": points,
        "errors": err,
        "mean_error": float(err.mean()),
        "max_error": float(err.max()),
        "t": int(t),
    }


def speedup_report(
    student_evals: int,
    baseline_evals: int,
    wall_student: float | None = None,
    wall_baseline: float | None = None,
) -> dict:
    """Evaluation-count bookkeeping for the few-step vs many-step samplers."""
    if student_evals < 1 or baseline_evals < 1:
        raise ValueError("evaluation counts must be positive")
    count_ratio = baseline_evals / student_evals
    report = {
        "student_evals": int(student_evals),
        "baseline_evals": int(baseline_evals),
        "eval_reduction": 1.0 - student_evals / baseline_evals,
        "count_ratio": count_ratio,
        "meets_count_ratio_10x": bool(count_ratio >= 10.0),
    }
    if wall_student is not None and wall_baseline is not None and wall_student > 0:
        report["wall_clock_ratio"] = wall_baseline / wall_student
    return report
