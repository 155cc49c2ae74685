"""Few-step student generator and its coarse sampling loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import schedule as schedule_ops
from .numerics import adam_init, adam_step, backward
from .schedule import Schedule
from .teacher import (
    Denoiser,
    TeacherBundle,
    denoise_loss_grad,
    denoiser_input,
    make_denoiser,
    predict_x0,
    sample_mixture,
)
from .exceptions import TrainingAbort

__all__ = [
    "FewStepGrid",
    "StudentModel",
    "generate_few_step",
    "make_student",
    "predict_backward",
    "pretrain_student",
    "student_predict",
]

DEFAULT_GRID = (0, 249, 499, 749, 999)


@dataclass(frozen=True)
class FewStepGrid:
    """Ordered timesteps {0 = t_0 < t_1 < ... < t_Q}; generation owns Q evals."""

    times: tuple[int, ...]

    def __post_init__(self):
        ts = tuple(int(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        if len(ts) < 2:
            raise ValueError(f"grid needs at least (0, t_1), got {ts}")
        if ts[0] != 0:
            raise ValueError(f"grid must start at 0, got {ts}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"grid times must be strictly increasing, got {ts}")

    @property
    def q(self) -> int:
        """Number of generation-time network evaluations."""
        return len(self.times) - 1

    @property
    def nonzero(self) -> tuple[int, ...]:
        return self.times[1:]


@dataclass
class StudentModel:
    denoiser: Denoiser
    grid: FewStepGrid
    schedule: Schedule

    def __post_init__(self):
        if self.grid.times[-1] > self.schedule.num_steps:
            raise ValueError(
                f"grid top {self.grid.times[-1]} exceeds schedule T = {self.schedule.num_steps}"
            )


def make_student(
    dim: int,
    sched: Schedule,
    rng: np.random.Generator,
    grid: tuple[int, ...] = DEFAULT_GRID,
    hidden: tuple[int, ...] = (64, 64),
    head: str = "x0",
    cond_dim: int = 0,
    activation: str = "tanh",
) -> StudentModel:
    den = make_denoiser(dim, rng, hidden, head, cond_dim, activation)
    return StudentModel(den, FewStepGrid(tuple(grid)), sched)


def student_predict(model: StudentModel, x_t, t, c=None) -> np.ndarray:
    """Clean-sample prediction at timestep t; never valid at t = 0."""
    if np.any(np.asarray(t) == 0):
        raise ValueError("student is never evaluated at t = 0")
    return predict_x0(model.denoiser, x_t, t, model.schedule, c)


def predict_backward(model: StudentModel, x_t, t, cot_x0: np.ndarray, c=None) -> np.ndarray:
    """Parameter gradient of sum_i <x0_prediction_i, cot_x0_i>, x_t held fixed.

    For a velocity head the x0 estimate is sqrt(ab) x_t - sqrt(1-ab) v, so the
    cotangent reaching the net picks up a factor -sqrt(1-ab).
    """
    den = model.denoiser
    sched = model.schedule
    x_t = np.asarray(x_t, dtype=np.float64)
    cot = np.asarray(cot_x0, dtype=np.float64)
    if x_t.ndim == 1:
        x_t, cot = x_t[None, :], cot[None, :]
    t_arr = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
    inp = denoiser_input(x_t, t_arr, sched.num_steps, c)
    if den.head == "v":
        ab = sched.alphas_bar[t_arr][:, None]
        cot = -np.sqrt(1.0 - ab) * cot
    grad, _ = backward(den.net, inp, cot)
    return grad


def generate_few_step(
    model: StudentModel,
    z: np.ndarray,
    rng: np.random.Generator | None = None,
    c=None,
    stochastic: bool = True,
) -> tuple[np.ndarray, list[np.ndarray], int]:
    """Backward sweep over the grid: exactly Q network evaluations.

    Starts from z at t_Q, predicts x0 at each grid time, and moves to the
    next lower grid time either by re-noising the prediction with fresh
    noise (default) or by a deterministic hop through the implied noise.
    Returns (samples, trace of the Q predictions, eval count).
    """
    if stochastic and rng is None:
        raise ValueError("stochastic generation needs an rng for the re-noising draws")
    sched = model.schedule
    desc = model.grid.nonzero[::-1]
    x = np.asarray(z, dtype=np.float64)
    trace: list[np.ndarray] = []
    x0_hat = None
    for j, t in enumerate(desc):
        x0_hat = student_predict(model, x, t, c)
        trace.append(x0_hat)
        if j + 1 < len(desc):
            t_next = desc[j + 1]
            if stochastic:
                eps = rng.standard_normal(x.shape)
                x = schedule_ops.add_noise(x0_hat, eps, t_next, sched).x
            else:
                ab_t = sched.alphas_bar[t]
                ab_next = sched.alphas_bar[t_next]
                eps_hat = (x - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
                x = np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_hat
    return x0_hat, trace, len(desc)


def _same_architecture(a: Denoiser, b: Denoiser) -> bool:
    return (
        a.net.widths == b.net.widths
        and a.net.activation == b.net.activation
        and a.head == b.head
        and a.cond_dim == b.cond_dim
    )


def pretrain_student(
    model: StudentModel,
    bundle: TeacherBundle,
    iters: int,
    rng: np.random.Generator,
    batch: int = 128,
    lr: float = 1e-3,
):
    """Initialize the student from the teacher.

    Matching architectures copy parameters outright (iters may then be 0);
    any warm-up iterations run denoising MSE restricted to the nonzero grid
    timesteps, which is all the student is ever asked to handle.
    Returns (model, losses).
    """
    den = model.denoiser
    if _same_architecture(den, bundle.denoiser):
        den.net.params = bundle.denoiser.net.params.copy()
    elif iters == 0:
        raise ValueError(
            "student and teacher architectures differ; pretraining iterations required"
        )
    losses = np.zeros(iters)
    if iters == 0:
        return model, losses
    opt = adam_init(den.net.params.size, lr)
    grid_times = np.array(model.grid.nonzero)
    for i in range(iters):
        x0, comp = sample_mixture(bundle.mixture, batch, rng, return_components=True)
        cond = np.eye(bundle.mixture.n_modes)[comp] if den.cond_dim else None
        t = rng.choice(grid_times, size=batch)
        eps = rng.standard_normal(x0.shape)
        loss, grad = denoise_loss_grad(den, model.schedule, x0, t, eps, cond)
        if not np.isfinite(loss):
            raise TrainingAbort(f"student warm-up loss became non-finite at iter {i}", {"iter": i})
        losses[i] = loss
        den.net.params, opt = adam_step(opt, den.net.params, grad)
    return model, losses
