"""End-to-end orchestration: teacher prep, GAN phase, DMD phase, eval, checkpoints.

The run loop follows the two-phase recipe: an adversarial initialization of
the few-step student against real data, then distribution matching driven by
score differences with a dynamically trained fake score. All randomness is
drawn from named streams keyed by the config seeds, so reruns are bit-equal
and checkpoint/resume is exact.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, teacher as teacher_ops
from .adversarial import Discriminator, disc_update, make_discriminator, run_gan_phase
from .config import RunConfig, resolved_json
from .dmd import ScoreProvider, dmd_cotangent_rkl, dmd_cotangent_soften, fake_score_update
from .exceptions import CheckpointError, ConfigError, TrainingAbort
from .numerics import AdamState, adam_init, adam_step, named_rng
from .schedule import Schedule, add_noise, make_schedule
from .student import StudentModel, generate_few_step, make_student, predict_backward, pretrain_student, student_predict
from .teacher import (
    Denoiser,
    MixtureSpec,
    TeacherBundle,
    make_teacher,
    sample_mixture,
    sample_multistep,
    train_teacher_denoiser,
)

__all__ = [
    "TrainState",
    "dmd_phase",
    "final_eval",
    "gan_phase",
    "init_state",
    "load_checkpoint",
    "run_ablation_matrix",
    "run_experiment",
    "save_checkpoint",
    "ABLATION_ROWS",
]

FLOAT_FMT = ".17g"

ABLATION_ROWS = {
    "no_gan": {"gan_init": False, "dmd": True, "soften": True},
    "gan_only": {"gan_init": True, "dmd": False, "soften": False},
    "plain": {"gan_init": True, "dmd": True, "soften": True},
    "soften": {"gan_init": True, "dmd": True, "soften": True},
}
ABLATION_ROWS["plain"]["soften"] = False


@dataclass
class TrainState:
    """Everything a run needs to continue from an arbitrary point."""

    cfg: RunConfig
    sched: Schedule
    mix: MixtureSpec
    teacher: TeacherBundle
    student: StudentModel
    fake: Denoiser
    disc: Discriminator
    provider: ScoreProvider
    opts: dict
    rngs: dict
    phase: str = "setup"
    gan_iters_done: int = 0
    dmd_iters_done: int = 0
    dmd_warmup_done: bool = False
    phase_spans: list = field(default_factory=list)
    logs: dict = field(default_factory=dict)
    wall: dict = field(default_factory=dict)


_STREAMS = ("teacher", "pretrain", "gan", "dmd-data", "dmd-noise", "fake", "head")


def _make_rngs(cfg: RunConfig) -> dict:
    rngs = {name: named_rng(cfg.seed, name) for name in _STREAMS}
    rngs["eval"] = named_rng(cfg.eval_seed, "eval")
    rngs["eval-real"] = named_rng(cfg.eval_seed, "eval-real")
    rngs["eval-baseline"] = named_rng(cfg.eval_seed, "eval-baseline")
    return rngs


def build_skeleton(cfg: RunConfig) -> TrainState:
    """Construct all nets and streams without running any training."""
    if cfg.nets.cond_dim != 0:
        raise ConfigError("pipeline runs are unconditional; cond_dim belongs to module-level use")
    sched = make_schedule(cfg.schedule.num_steps, cfg.schedule.kind, cfg.schedule.beta_start, cfg.schedule.beta_end)
    mix = cfg.mixture.build()
    init_rng = named_rng(cfg.seed, "init")
    bundle = make_teacher(
        mix, sched, init_rng,
        hidden=tuple(cfg.nets.teacher_hidden), head=cfg.nets.head,
        activation=cfg.nets.activation,
    )
    student = make_student(
        mix.dim, sched, init_rng,
        grid=tuple(cfg.grid), hidden=tuple(cfg.nets.student_hidden),
        head=cfg.nets.head, activation=cfg.nets.activation,
    )
    fake = teacher_ops.make_denoiser(
        mix.dim, init_rng, tuple(cfg.nets.fake_hidden), cfg.nets.head,
        activation=cfg.nets.activation,
    )
    disc = make_discriminator(
        bundle.denoiser.net, sched, init_rng,
        head_hidden=tuple(cfg.nets.head_hidden), tap=cfg.nets.tap,
        activation=cfg.nets.activation,
    )
    real_source = mix if cfg.provider == "analytic" else bundle.denoiser
    provider = ScoreProvider(sched, real_source, fake)
    opts = {
        "student": adam_init(student.denoiser.net.params.size, cfg.lr),
        "head": adam_init(disc.head.params.size, cfg.lr),
        "fake": adam_init(fake.net.params.size, cfg.lr),
    }
    return TrainState(
        cfg=cfg, sched=sched, mix=mix, teacher=bundle, student=student,
        fake=fake, disc=disc, provider=provider, opts=opts, rngs=_make_rngs(cfg),
    )


def init_state(cfg: RunConfig, teacher_cache: TeacherBundle | None = None) -> TrainState:
    """Build the skeleton and run teacher preparation + student initialization."""
    state = build_skeleton(cfg)
    t0 = time.perf_counter()
    if teacher_cache is not None:
        if teacher_cache.denoiser.net.widths != state.teacher.denoiser.net.widths:
            raise ValueError("cached teacher architecture does not match the config")
        state.teacher.denoiser.net.params = teacher_cache.denoiser.net.params.copy()
        state.logs["teacher"] = []
    else:
        _, losses = train_teacher_denoiser(
            state.teacher, cfg.teacher.iters, state.rngs["teacher"],
            batch=cfg.teacher.batch, lr=cfg.teacher.lr,
        )
        state.logs["teacher"] = [(i, float(v)) for i, v in enumerate(losses)]
        state.phase_spans.append(("teacher", cfg.teacher.iters))
    state.wall["teacher"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _, pre_losses = pretrain_student(
        state.student, state.teacher, cfg.pretrain.iters, state.rngs["pretrain"],
        batch=cfg.batch_size, lr=cfg.pretrain.lr,
    )
    state.logs["pretrain"] = [(i, float(v)) for i, v in enumerate(pre_losses)]
    if cfg.pretrain.iters:
        state.phase_spans.append(("pretrain", cfg.pretrain.iters))
    state.wall["pretrain"] = time.perf_counter() - t0

    if state.fake.net.widths == state.teacher.denoiser.net.widths:
        state.fake.net.params = state.teacher.denoiser.net.params.copy()
    state.phase = "ready"
    return state


def gan_phase(state: TrainState, iters: int | None = None) -> None:
    """Adversarial initialization; resumable across calls."""
    cfg = state.cfg
    if state.phase not in ("ready", "gan"):
        raise RuntimeError(f"gan phase cannot start from phase {state.phase!r}")
    if iters is None:
        iters = cfg.gan.iters - state.gan_iters_done
    if iters <= 0:
        return
    t0 = time.perf_counter()
    _, _, rows, opt_d, opt_g = run_gan_phase(
        state.disc, state.student, state.mix, state.rngs["gan"],
        iters=iters, batch=cfg.batch_size, lr=cfg.lr,
        disc_steps_per_iter=cfg.two_scale_ratio, loss_form=cfg.gan.loss_form,
        collapse_threshold=cfg.gan.collapse_threshold,
        collapse_patience=cfg.gan.collapse_patience,
        opt_d=state.opts["head"], opt_g=state.opts["student"],
    )
    state.opts["head"], state.opts["student"] = opt_d, opt_g
    log = state.logs.setdefault("gan", [])
    base = state.gan_iters_done
    for k, r in enumerate(rows):
        log.append((base + k, r.loss_d, r.loss_g, r.real_prob_mean, r.fake_prob_mean,
                    r.grad_norm_d, r.grad_norm_g))
    state.gan_iters_done += iters
    state.phase = "gan"
    state.phase_spans.append(("gan", iters * (cfg.two_scale_ratio + 1)))
    state.wall["gan"] = state.wall.get("gan", 0.0) + time.perf_counter() - t0


def _dmd_student_batch(state: TrainState, rng_data, rng_noise):
    """Student predictions from re-noised real data at random grid timesteps."""
    cfg = state.cfg
    x0 = sample_mixture(state.mix, cfg.batch_size, rng_data)
    t = rng_data.choice(np.array(state.student.grid.nonzero), size=cfg.batch_size)
    eps = rng_noise.standard_normal(x0.shape)
    x_t = add_noise(x0, eps, t, state.sched).x
    x0_hat = student_predict(state.student, x_t, t)
    return x0, x_t, t, x0_hat


def _dmd_head_fakes(state: TrainState, rng) -> np.ndarray:
    """Fake batch for ratio-head updates while distribution matching runs."""
    if state.cfg.dmd.head_fake_source == "chain":
        z = rng.standard_normal((state.cfg.batch_size, state.mix.dim))
        fake_x0, _, _ = generate_few_step(state.student, z, rng)
        return fake_x0
    _, _, _, fake_x0 = _dmd_student_batch(state, rng, rng)
    return fake_x0


def dmd_phase(state: TrainState, iters: int | None = None) -> None:
    """Distribution-matching phase; one student step per iteration plus
    two-scale fake-score (and optionally head) updates."""
    cfg = state.cfg
    if cfg.ablation.gan_init and state.gan_iters_done < cfg.gan.iters:
        raise RuntimeError(
            f"distribution matching started after {state.gan_iters_done}/{cfg.gan.iters} "
            "adversarial iterations"
        )
    if state.phase not in ("ready", "gan", "dmd"):
        raise RuntimeError(f"dmd phase cannot start from phase {state.phase!r}")
    if iters is None:
        iters = cfg.dmd.iters - state.dmd_iters_done
    if iters <= 0:
        return
    t0 = time.perf_counter()
    rng_data, rng_noise = state.rngs["dmd-data"], state.rngs["dmd-noise"]
    rng_fake, rng_head = state.rngs["fake"], state.rngs["head"]
    if cfg.dmd.tau_window is not None:
        tau_lo, tau_hi = cfg.dmd.tau_window
    elif cfg.dmd.tau_truncate:
        tau_lo, tau_hi = 1, int(0.98 * state.sched.num_steps)
    else:
        tau_lo, tau_hi = 1, state.sched.num_steps
    soften = cfg.ablation.soften
    log = state.logs.setdefault("dmd", [])
    steps_done = 0

    if not state.dmd_warmup_done:
        for _ in range(cfg.dmd.warmup_fake_iters):
            _, _, _, gen_x0 = _dmd_student_batch(state, rng_fake, rng_fake)
            state.opts["fake"], _ = fake_score_update(
                state.provider, state.student, None, rng_fake, state.opts["fake"],
                x0_hat=gen_x0,
            )
            steps_done += 1
        state.dmd_warmup_done = True

    for k in range(iters):
        it = state.dmd_iters_done + k
        if not cfg.dmd.freeze_head:
            for _ in range(cfg.two_scale_ratio):
                real = sample_mixture(state.mix, cfg.batch_size, rng_head)
                fake_x0 = _dmd_head_fakes(state, rng_head)
                state.opts["head"], _ = disc_update(
                    state.disc, state.opts["head"], real, fake_x0, rng_head,
                    loss_form=cfg.gan.loss_form,
                )
                steps_done += 1

        _, x_t, t, x0_hat = _dmd_student_batch(state, rng_data, rng_noise)
        tau = rng_noise.integers(tau_lo, tau_hi + 1, size=cfg.batch_size)
        eps_p = rng_noise.standard_normal(x0_hat.shape)
        if soften:
            cot, rep = dmd_cotangent_soften(
                state.provider, state.disc, x0_hat, tau, eps_p,
                weight_mode=cfg.dmd.weight_mode,
                retain_forward_chain=cfg.dmd.retain_forward_chain,
            )
            mean_r, mean_w = float(rep.ratio.mean()), float(rep.weight.mean())
        else:
            cot = dmd_cotangent_rkl(
                state.provider, x0_hat, tau, eps_p,
                retain_forward_chain=cfg.dmd.retain_forward_chain,
            )
            mean_r, mean_w = 1.0, 1.0
        rms = float(np.sqrt(np.mean(cot**2)))
        if cfg.dmd.normalize_cotangent and rms > 0:
            cot = cot / rms
        grad = predict_backward(state.student, x_t, t, cot / cfg.batch_size)
        new_params, state.opts["student"] = adam_step(
            state.opts["student"], state.student.denoiser.net.params, grad
        )
        state.student.denoiser.net.params = new_params
        steps_done += 1

        fake_loss = float("nan")
        for _ in range(cfg.two_scale_ratio):
            _, _, _, gen_x0 = _dmd_student_batch(state, rng_fake, rng_fake)
            state.opts["fake"], fake_loss = fake_score_update(
                state.provider, state.student, None, rng_fake, state.opts["fake"],
                x0_hat=gen_x0,
            )
            steps_done += 1
        log.append((it, rms, float(np.mean(np.abs(cot))), mean_r, mean_w, fake_loss,
                    cfg.dmd.weight_mode if soften else "plain"))
    state.dmd_iters_done += iters
    state.phase = "dmd"
    state.phase_spans.append(("dmd", steps_done))
    state.wall["dmd"] = state.wall.get("dmd", 0.0) + time.perf_counter() - t0


def final_eval(state: TrainState) -> dict:
    """Few-step samples vs fresh mixture draws, plus the many-step baseline."""
    cfg = state.cfg
    n = cfg.eval.n_samples
    dim = state.mix.dim
    rng_eval = state.rngs["eval"]

    t0 = time.perf_counter()
    z = rng_eval.standard_normal((n, dim))
    samples, _, n_evals = generate_few_step(
        state.student, z, rng_eval, stochastic=cfg.eval.stochastic
    )
    wall_student = time.perf_counter() - t0

    fresh = sample_mixture(state.mix, n, state.rngs["eval-real"])
    cov = evaluation.mode_coverage(samples, state.mix, cfg.eval.radius, cfg.eval.min_hits)
    energy = evaluation.energy_distance(samples, fresh)
    sw = evaluation.sliced_wasserstein(samples, fresh, cfg.eval.sw_dirs, seed=cfg.eval_seed)

    t0 = time.perf_counter()
    z2 = state.rngs["eval-baseline"].standard_normal((n, dim))
    base_samples, base_evals = sample_multistep(state.teacher, cfg.eval.baseline_steps, z2)
    wall_baseline = time.perf_counter() - t0
    base_cov = evaluation.mode_coverage(base_samples, state.mix, cfg.eval.radius, cfg.eval.min_hits)
    base_energy = evaluation.energy_distance(base_samples, fresh)

    speedup = evaluation.speedup_report(n_evals, base_evals, wall_student, wall_baseline)
    return {
        "samples": samples,
        "coverage": cov.coverage,
        "mode_hits": cov.hits.tolist(),
        "min_hits": cov.min_hits,
        "energy_distance": energy,
        "sliced_wasserstein": sw,
        "student_evals": n_evals,
        "baseline": {
            "steps": int(base_evals),
            "coverage": base_cov.coverage,
            "energy_distance": base_energy,
        },
        "speedup": speedup,
        "wall_clock": {"student_sampling": wall_student, "baseline_sampling": wall_baseline},
    }


# --- file output --------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, FLOAT_FMT)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_samples_csv(path: Path, samples: np.ndarray, seed: int, step: int) -> None:
    samples = np.atleast_2d(samples)
    header = ["seed", "step"] + [f"dim_{i}" for i in range(samples.shape[1])]
    rows = [(seed, step, *map(float, s)) for s in samples]
    _write_csv(path, header, rows)


def _write_logs(state: TrainState, out: Path) -> dict:
    paths = {}
    specs = {
        "teacher": ["iter", "loss"],
        "pretrain": ["iter", "loss"],
        "gan": ["iter", "loss_d", "loss_g", "real_prob", "fake_prob", "grad_norm_d", "grad_norm_g"],
        "dmd": ["iter", "cotangent_rms", "cotangent_mean_abs", "ratio_mean", "weight_mean",
                "fake_score_loss", "mode"],
    }
    for name, header in specs.items():
        rows = state.logs.get(name)
        if rows:
            p = out / f"{name}_log.csv"
            _write_csv(p, header, rows)
            paths[name] = p.name
    return paths


def run_experiment(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    teacher_cache: TeacherBundle | None = None,
    progress=None,
) -> dict:
    """Run the configured pipeline end to end and return the report dict.

    With out_dir set, writes the resolved config before training starts, then
    metric CSVs, final samples, a checkpoint, and report.json, all strictly
    inside out_dir.
    """
    cfg.validate()
    out = None
    config_echo = resolved_json(cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(config_echo)

    def note(msg):
        if progress:
            progress(msg)

    note(f"preparing teacher ({cfg.teacher.iters} iters)")
    state = init_state(cfg, teacher_cache)
    return _complete_run(state, out, note)


def _complete_run(state: TrainState, out: Path | None, note=lambda msg: None) -> dict:
    """Run the training phases on a prepared state, evaluate, write outputs."""
    cfg = state.cfg
    if cfg.ablation.gan_init and cfg.gan.iters > 0:
        note(f"adversarial phase ({cfg.gan.iters} iters)")
        gan_phase(state)
    if cfg.ablation.dmd and cfg.dmd.iters > 0:
        note(f"distribution-matching phase ({cfg.dmd.iters} iters)")
        dmd_phase(state)
    note("final evaluation")
    final = final_eval(state)
    samples = final.pop("samples")

    report = {
        "config": json.loads(resolved_json(cfg)),
        "phase_spans": [list(s) for s in state.phase_spans],
        "iterations": {"gan": state.gan_iters_done, "dmd": state.dmd_iters_done},
        "final": final,
        "wall_clock": dict(state.wall),
        "files": {},
    }
    if out is not None:
        paths = _write_logs(state, out)
        write_samples_csv(out / "samples.csv", samples, cfg.eval_seed, state.student.grid.times[1])
        save_checkpoint(state, out / "checkpoint")
        paths["samples"] = "samples.csv"
        paths["checkpoint"] = "checkpoint"
        report["files"] = paths
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    report["samples"] = samples
    return report


def run_ablation_matrix(
    cfg: RunConfig,
    seeds: list[int],
    out_dir: str | Path | None = None,
    rows: dict | None = None,
    jobs: int = 1,
    progress=None,
) -> dict:
    """Switch matrix over ablation rows x seeds.

    Teacher training is shared across rows for a given seed (rows only differ
    downstream of it). Row failures are recorded and the matrix continues.
    """
    if len(seeds) < 3:
        raise ConfigError(f"ablation needs >= 3 seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("ablation seeds must be distinct")
    rows = dict(rows) if rows is not None else dict(ABLATION_ROWS)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

    jobs = max(1, int(jobs))
    tasks = []
    for seed in seeds:
        for row_name, switches in rows.items():
            row_cfg = RunConfig.from_dict(_row_config_dict(cfg, seed, switches))
            tasks.append((row_name, seed, row_cfg))

    results = {name: {} for name in rows}
    if jobs > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_run_row, row_cfg, _row_dir(out, name, seed)): (name, seed)
                for name, seed, row_cfg in tasks
            }
            for fut in concurrent.futures.as_completed(futures):
                name, seed = futures[fut]
                results[name][seed] = fut.result()
    else:
        teacher_by_seed: dict[int, TeacherBundle] = {}
        for name, seed, row_cfg in tasks:
            if progress:
                progress(f"ablation row {name!r} seed {seed}")
            if seed not in teacher_by_seed:
                probe = init_state(row_cfg)
                teacher_by_seed[seed] = probe.teacher
                results[name][seed] = _finish_row(probe, row_cfg, _row_dir(out, name, seed))
            else:
                results[name][seed] = _run_row(
                    row_cfg, _row_dir(out, name, seed), teacher_by_seed[seed]
                )

    summary = {"rows": {}, "seeds": list(seeds)}
    for name in rows:
        per_seed = results[name]
        cov = [r["final"]["coverage"] for r in per_seed.values() if "final" in r]
        energy = [r["final"]["energy_distance"] for r in per_seed.values() if "final" in r]
        summary["rows"][name] = {
            "switches": rows[name],
            "per_seed": {str(s): _strip_samples(r) for s, r in per_seed.items()},
            "median_coverage": float(np.median(cov)) if cov else None,
            "median_energy_distance": float(np.median(energy)) if energy else None,
            "failures": sum(1 for r in per_seed.values() if "error" in r),
        }
    if out is not None:
        (out / "matrix.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _row_config_dict(cfg: RunConfig, seed: int, switches: dict) -> dict:
    blob = cfg.to_dict()
    blob["seed"] = seed
    blob["eval_seed"] = cfg.eval_seed + seed
    blob["ablation"] = dict(switches)
    return blob


def _row_dir(out: Path | None, name: str, seed: int) -> Path | None:
    return None if out is None else out / f"{name}_seed{seed}"


def _run_row(row_cfg: RunConfig, row_dir: Path | None, teacher_cache=None) -> dict:
    try:
        return run_experiment(row_cfg, row_dir, teacher_cache)
    except TrainingAbort as exc:
        return {"error": str(exc), "diagnostics": exc.diagnostics}


def _finish_row(state: TrainState, row_cfg: RunConfig, row_dir: Path | None) -> dict:
    """Complete a row whose init_state already ran (teacher probe path)."""
    try:
        if row_dir is not None:
            row_dir.mkdir(parents=True, exist_ok=True)
            (row_dir / "resolved_config.json").write_text(resolved_json(row_cfg))
        return _complete_run(state, row_dir)
    except TrainingAbort as exc:
        return {"error": str(exc), "diagnostics": exc.diagnostics}


def _strip_samples(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "samples"}


# --- checkpointing -------------------------------------------------------------


def _checkpoint_arrays(state: TrainState) -> list[tuple[str, np.ndarray]]:
    items = [
        ("teacher_params", state.teacher.denoiser.net.params),
        ("student_params", state.student.denoiser.net.params),
        ("fake_params", state.fake.net.params),
        ("head_params", state.disc.head.params),
    ]
    for name in ("student", "head", "fake"):
        opt = state.opts[name]
        items.append((f"opt_{name}_m", opt.m))
        items.append((f"opt_{name}_v", opt.v))
    return items


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Binary float64 blob plus JSON manifest; deterministic bytes."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    sections = []
    chunks = []
    offset = 0
    for name, arr in _checkpoint_arrays(state):
        raw = np.asarray(arr, dtype="<f8").tobytes()
        sections.append({
            "name": name, "offset": offset, "count": int(arr.size),
            "crc32": zlib.crc32(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    (path / "state.bin").write_bytes(b"".join(chunks))
    manifest = {
        "version": 1,
        "config": state.cfg.to_dict(),
        "phase": state.phase,
        "gan_iters_done": state.gan_iters_done,
        "dmd_iters_done": state.dmd_iters_done,
        "dmd_warmup_done": state.dmd_warmup_done,
        "phase_spans": [list(s) for s in state.phase_spans],
        "opt_steps": {name: state.opts[name].step for name in ("student", "head", "fake")},
        "rng": {name: _rng_state_json(rng) for name, rng in state.rngs.items()},
        "sections": sections,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _rng_state_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=str))


def _rng_from_json(blob: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    state = dict(blob)
    inner = dict(state["state"])
    for key in inner:
        if isinstance(inner[key], str):
            inner[key] = int(inner[key])
    state["state"] = inner
    for key in ("has_uint32", "uinteger"):
        if key in state and isinstance(state[key], str):
            state[key] = int(state[key])
    rng.bit_generator.state = state
    return rng


def load_checkpoint(path: str | Path, cfg: RunConfig | None = None) -> TrainState:
    """Rebuild a TrainState bit-exactly from a checkpoint directory.

    cfg overrides the embedded config (shape mismatches then fail loudly with
    the offending section named).
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    blob_path = path / "state.bin"
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"checkpoint at {path} is missing manifest.json or state.bin")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint manifest is corrupt: {exc}") from exc
    if cfg is None:
        cfg = RunConfig.from_dict(manifest["config"])
    state = build_skeleton(cfg)
    raw = blob_path.read_bytes()
    arrays = {}
    for sec in manifest["sections"]:
        start, count = sec["offset"], sec["count"]
        piece = raw[start : start + 8 * count]
        if len(piece) != 8 * count:
            raise CheckpointError(f"section {sec['name']!r} is truncated")
        if zlib.crc32(piece) != sec["crc32"]:
            raise CheckpointError(f"section {sec['name']!r} fails its checksum")
        arrays[sec["name"]] = np.frombuffer(piece, dtype="<f8").copy()

    def fill(name: str, target_size: int) -> np.ndarray:
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing section {name!r}")
        arr = arrays[name]
        if arr.size != target_size:
            raise CheckpointError(
                f"section {name!r} holds {arr.size} values but the configured "
                f"architecture needs {target_size}"
            )
        return arr

    state.teacher.denoiser.net.params = fill("teacher_params", state.teacher.denoiser.net.params.size)
    state.student.denoiser.net.params = fill("student_params", state.student.denoiser.net.params.size)
    state.fake.net.params = fill("fake_params", state.fake.net.params.size)
    state.disc.head.params = fill("head_params", state.disc.head.params.size)
    for name in ("student", "head", "fake"):
        opt = state.opts[name]
        m = fill(f"opt_{name}_m", opt.m.size)
        v = fill(f"opt_{name}_v", opt.v.size)
        state.opts[name] = AdamState(
            lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps,
            weight_decay=opt.weight_decay, step=manifest["opt_steps"][name], m=m, v=v,
        )
    state.rngs = {name: _rng_from_json(blob) for name, blob in manifest["rng"].items()}
    state.phase = manifest["phase"]
    state.gan_iters_done = manifest["gan_iters_done"]
    state.dmd_iters_done = manifest["dmd_iters_done"]
    state.dmd_warmup_done = bool(manifest.get("dmd_warmup_done", False))
    state.phase_spans = [tuple(s) for s in manifest["phase_spans"]]
    return state
