"""Command-line front end.

Subcommands: run (single experiment), ablate (switch matrix), verify (oracle
suites), sample (draw from a checkpoint), report (summarize a run directory).
Exit codes: 0 success, 1 failed checks, 2 configuration problems, 3 aborted
training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation, verify
from .config import RunConfig, apply_overrides, load_config
from .exceptions import CheckpointError, ConfigError, TrainingAbort
from .numerics import named_rng
from .pipeline import load_checkpoint, run_ablation_matrix, run_experiment, write_samples_csv
from .student import generate_few_step
from .teacher import sample_mixture

OUT_ROOT_ENV = "FEWSTEP_OUT"


def _progress(quiet: bool):
    if quiet:
        return lambda msg: None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def _default_out(kind: str) -> Path:
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return root / f"{kind}-{stamp}"


def _load_run_config(args) -> RunConfig:
    blob = load_config(args.config) if args.config else {}
    if args.set:
        blob = apply_overrides(blob, args.set)
    cfg = RunConfig.from_dict(blob)
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out) if args.out else _default_out("run")
    note = _progress(args.quiet)
    note(f"writing outputs to {out}")
    report = run_experiment(cfg, out, progress=note)
    final = report["final"]
    print(f"coverage          {final['coverage']:.4f}")
    print(f"energy_distance   {final['energy_distance']:.6f}")
    print(f"sliced_wasserstein {final['sliced_wasserstein']:.6f}")
    print(f"student_evals     {final['student_evals']}")
    print(f"baseline_steps    {final['baseline']['steps']}")
    print(f"report            {out / 'report.json'}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    out = Path(args.out) if args.out else _default_out("ablate")
    note = _progress(args.quiet)
    note(f"writing outputs to {out}")
    summary = run_ablation_matrix(cfg, seeds, out, jobs=args.jobs, progress=note)
    width = max(len(n) for n in summary["rows"])
    print(f"{'row':<{width}}  {'med_coverage':>12}  {'med_energy':>12}  failures")
    for name, row in summary["rows"].items():
        cov = row["median_coverage"]
        en = row["median_energy_distance"]
        cov_s = "n/a" if cov is None else f"{cov:.4f}"
        en_s = "n/a" if en is None else f"{en:.6f}"
        print(f"{name:<{width}}  {cov_s:>12}  {en_s:>12}  {row['failures']}")
    print(f"matrix            {out / 'matrix.json'}")
    return 0


def cmd_verify(args) -> int:
    try:
        rows, ok = verify.run_suite(args.suite, seed=args.seed)
    except KeyError:
        names = ", ".join(sorted(verify.SUITES) + ["all"])
        print(f"unknown suite {args.suite!r}; available: {names}", file=sys.stderr)
        return 2
    print(verify.format_rows(rows))
    print(f"{sum(r.passed for r in rows)}/{len(rows)} checks passed")
    return 0 if ok else 1


def cmd_sample(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    n = args.n
    if n == 0:
        write_samples_csv(out, np.empty((0, state.mix.dim)), args.seed, 0)
        print(f"no samples requested; wrote header-only {out}", file=sys.stderr)
        return 0
    rng = named_rng(args.seed, "cli-sample")
    z = rng.standard_normal((n, state.mix.dim))
    samples, _, n_evals = generate_few_step(
        state.student, z, rng, stochastic=not args.deterministic
    )
    write_samples_csv(out, samples, args.seed, state.student.grid.times[1])
    fresh = sample_mixture(state.mix, n, named_rng(args.seed, "cli-sample-real"))
    cov = evaluation.mode_coverage(samples, state.mix, state.cfg.eval.radius)
    energy = evaluation.energy_distance(samples, fresh)
    print(f"samples           {out} ({n} rows, {n_evals} net evals)")
    print(f"coverage          {cov.coverage:.4f}  ({int(np.sum(cov.covered))}/{state.mix.n_modes} modes)")
    print(f"energy_distance   {energy:.6f}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        print(f"no report found at {path}", file=sys.stderr)
        return 2
    blob = json.loads(path.read_text())
    final = blob.get("final", {})
    spans = blob.get("phase_spans", [])
    print(f"run report        {path}")
    print(f"phases            {' -> '.join(f'{n}({c})' for n, c in spans)}")
    it = blob.get("iterations", {})
    print(f"iterations        gan={it.get('gan')} dmd={it.get('dmd')}")
    if final:
        print(f"coverage          {final['coverage']:.4f}")
        print(f"energy_distance   {final['energy_distance']:.6f}")
        print(f"sliced_wasserstein {final['sliced_wasserstein']:.6f}")
        base = final.get("baseline", {})
        print(f"baseline          steps={base.get('steps')} coverage={base.get('coverage')}"
              f" energy={base.get('energy_distance')}")
        speed = final.get("speedup", {})
        print(f"eval_reduction    {speed.get('count_ratio')}x"
              f" (student {speed.get('student_evals')} vs baseline {speed.get('baseline_evals')})")
    wall = blob.get("wall_clock", {})
    if wall:
        total = sum(wall.values())
        parts = " ".join(f"{k}={v:.1f}s" for k, v in wall.items())
        print(f"wall_clock        total={total:.1f}s ({parts})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewstep",
        description="few-step diffusion distillation on analytic Gaussian mixtures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the two-phase pipeline from a config")
    run.add_argument("--config", help="TOML or JSON config file (defaults apply if omitted)")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ROOT_ENV} or ./runs)")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted config override, e.g. --set dmd.iters=200")
    run.add_argument("--quiet", action="store_true", help="suppress progress lines on stderr")
    run.set_defaults(fn=cmd_run)

    ablate = sub.add_parser("ablate", help="run the ablation switch matrix")
    ablate.add_argument("--config", help="base config file")
    ablate.add_argument("--seeds", required=True, help="comma-separated seeds, at least 3")
    ablate.add_argument("--out", help="output directory")
    ablate.add_argument("--jobs", type=int, default=1, help="parallel row processes")
    ablate.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ablate.add_argument("--quiet", action="store_true")
    ablate.set_defaults(fn=cmd_ablate)

    ver = sub.add_parser("verify", help="run oracle check suites")
    ver.add_argument("suite", nargs="?", default="all",
                     help="scores | gradients | ratio | quadrature | all")
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(fn=cmd_verify)

    sample = sub.add_parser("sample", help="draw few-step samples from a checkpoint")
    sample.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sample.add_argument("--n", type=int, required=True, help="number of samples (0 writes header only)")
    sample.add_argument("--out", default="samples.csv", help="output CSV path")
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--deterministic", action="store_true",
                        help="deterministic hops instead of stochastic re-noising")
    sample.set_defaults(fn=cmd_sample)

    rep = sub.add_parser("report", help="summarize a run directory or report.json")
    rep.add_argument("path")
    rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    except TrainingAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, default=str, indent=2), file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
