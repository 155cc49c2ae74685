"""Run configuration: nested dataclasses, strict parsing, dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .student import FewStepGrid
from .teacher import MixtureSpec, ring_mixture, mixture_from_json

__all__ = [
    "RunConfig",
    "apply_overrides",
    "load_config",
    "resolved_json",
]

DEFAULT_GRID = [0, 249, 499, 749, 999]


@dataclass
class MixtureConfig:
    kind: str = "ring"
    n_modes: int = 8
    radius: float = 2.0
    sigma: float = 0.1
    weights: list | None = None
    means: list | None = None
    cov_diags: list | None = None
    covs: list | None = None

    def build(self) -> MixtureSpec:
        if self.kind == "ring":
            return ring_mixture(self.n_modes, self.radius, self.sigma, self.weights)
        if self.kind == "explicit":
            blob = {"weights": self.weights, "means": self.means}
            if self.cov_diags is not None:
                blob["cov_diags"] = self.cov_diags
            elif self.covs is not None:
                blob["covs"] = self.covs
            else:
                raise ConfigError("explicit mixture needs cov_diags or covs")
            if self.weights is None or self.means is None:
                raise ConfigError("explicit mixture needs weights and means")
            return mixture_from_json(blob)
        raise ConfigError(f"mixture.kind must be 'ring' or 'explicit', got {self.kind!r}")


@dataclass
class ScheduleConfig:
    kind: str = "linear"
    num_steps: int = 1000
    beta_start: float | None = None
    beta_end: float | None = None


@dataclass
class NetsConfig:
    teacher_hidden: list = field(default_factory=lambda: [64, 64])
    student_hidden: list = field(default_factory=lambda: [64, 64])
    fake_hidden: list = field(default_factory=lambda: [64, 64])
    head_hidden: list = field(default_factory=lambda: [64])
    activation: str = "tanh"
    head: str = "x0"
    cond_dim: int = 0
    tap: int | None = None


@dataclass
class TeacherConfig:
    iters: int = 6000
    lr: float = 1e-3
    batch: int = 128


@dataclass
class PretrainConfig:
    iters: int = 0
    lr: float = 1e-3


@dataclass
class GanConfig:
    iters: int = 4000
    loss_form: str = "bce"
    collapse_threshold: float = 1e-3
    collapse_patience: int = 500


@dataclass
class DmdConfig:
    iters: int = 5000
    weight_mode: str = "appendix"
    retain_forward_chain: bool = False
    normalize_cotangent: bool = False
    tau_truncate: bool = False
    freeze_head: bool = False
    # [lo, hi] bounds for the matching timestep draw; None means U[1, T]
    # (or U[1, 0.98T] under tau_truncate).
    tau_window: list | None = None
    # fake-score-only updates before the first student step, so the fake
    # net tracks the student before gradients start flowing
    warmup_fake_iters: int = 0
    # "paired": head sees student outputs on re-noised real data;
    # "chain": head sees full few-step generations
    head_fake_source: str = "paired"


@dataclass
class AblationConfig:
    gan_init: bool = True
    dmd: bool = True
    soften: bool = True


@dataclass
class EvalConfig:
    n_samples: int = 10000
    baseline_steps: int = 50
    radius: float = 3.0
    min_hits: int | None = None
    sw_dirs: int = 64
    stochastic: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    eval_seed: int = 1000
    # paper trains at batch 4 per device; the demo config scales this to 128
    batch_size: int = 4
    lr: float = 5e-5
    two_scale_ratio: int = 5
    provider: str = "analytic"
    grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    checkpoint_every: int = 0
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    nets: NetsConfig = field(default_factory=NetsConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    dmd: DmdConfig = field(default_factory=DmdConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, blob: dict) -> "RunConfig":
        cfg = _build_dataclass(cls, blob, path="")
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        c = self
        checks = [
            (c.batch_size >= 1, f"batch_size must be >= 1, got {c.batch_size}"),
            (c.lr > 0, f"lr must be positive, got {c.lr}"),
            (c.two_scale_ratio >= 1, f"two_scale_ratio must be >= 1, got {c.two_scale_ratio}"),
            (c.provider in ("analytic", "neural"), f"provider must be 'analytic' or 'neural', got {c.provider!r}"),
            (c.teacher.iters >= 0, "teacher.iters must be >= 0"),
            (c.pretrain.iters >= 0, "pretrain.iters must be >= 0"),
            (c.gan.iters >= 0, "gan.iters must be >= 0"),
            (c.dmd.iters >= 0, "dmd.iters must be >= 0"),
            (c.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
            (c.eval.n_samples >= 1, "eval.n_samples must be >= 1"),
            (c.eval.baseline_steps >= 1, "eval.baseline_steps must be >= 1"),
            (c.dmd.weight_mode in ("appendix", "main-text"),
             f"dmd.weight_mode must be 'appendix' or 'main-text', got {c.dmd.weight_mode!r}"),
            (c.gan.loss_form in ("bce", "printed"),
             f"gan.loss_form must be 'bce' or 'printed', got {c.gan.loss_form!r}"),
            (c.nets.head in ("x0", "v"), f"nets.head must be 'x0' or 'v', got {c.nets.head!r}"),
            (c.dmd.warmup_fake_iters >= 0, "dmd.warmup_fake_iters must be >= 0"),
            (c.dmd.head_fake_source in ("paired", "chain"),
             f"dmd.head_fake_source must be 'paired' or 'chain', got {c.dmd.head_fake_source!r}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            grid = FewStepGrid(tuple(c.grid))
            self.mixture.build()
        except (ValueError, ConfigError) as exc:
            raise ConfigError(str(exc)) from exc
        if grid.times[-1] > c.schedule.num_steps:
            raise ConfigError(
                f"grid top {grid.times[-1]} exceeds schedule num_steps {c.schedule.num_steps}"
            )
        if c.nets.student_hidden != c.nets.teacher_hidden and c.pretrain.iters == 0:
            raise ConfigError(
                "student and teacher architectures differ; set pretrain.iters > 0"
            )
        if c.dmd.tau_window is not None:
            w = c.dmd.tau_window
            if len(w) != 2 or not all(isinstance(v, int) for v in w):
                raise ConfigError(f"dmd.tau_window must be two integers, got {w!r}")
            lo, hi = w
            if not (1 <= lo <= hi <= c.schedule.num_steps):
                raise ConfigError(
                    f"dmd.tau_window {w!r} must satisfy 1 <= lo <= hi <= {c.schedule.num_steps}"
                )
            if c.dmd.tau_truncate:
                raise ConfigError("dmd.tau_truncate and dmd.tau_window are exclusive")


def _build_dataclass(cls, blob: dict, path: str):
    if not isinstance(blob, dict):
        raise ConfigError(f"section {path or '<root>'} must be a table/object, got {type(blob).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(blob) - set(fields)
    if unknown:
        known = ", ".join(sorted(fields))
        raise ConfigError(
            f"unknown config key {sorted(unknown)[0]!r} in section {path or '<root>'} (known: {known})"
        )
    sections = {
        "mixture": MixtureConfig, "schedule": ScheduleConfig, "nets": NetsConfig,
        "teacher": TeacherConfig, "pretrain": PretrainConfig, "gan": GanConfig,
        "dmd": DmdConfig, "ablation": AblationConfig, "eval": EvalConfig,
    } if path == "" else {}
    kwargs = {}
    for name, f in fields.items():
        if name not in blob:
            continue
        value = blob[name]
        nested = sections.get(name)
        if nested is not None:
            kwargs[name] = _build_dataclass(nested, value, name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config section {path or '<root>'}: {exc}") from exc


def load_config(path: str | Path) -> dict:
    """Read a TOML or JSON config file into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib  # py >= 3.11
        except ImportError:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def apply_overrides(blob: dict, overrides: list[str]) -> dict:
    """Apply dotted-key overrides like 'dmd.weight_mode=main-text' to a config dict.

    Values parse as JSON fragments when possible, otherwise as bare strings.
    """
    blob = json.loads(json.dumps(blob))  # deep copy, JSON types only
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like dotted.key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = blob
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends through a non-section value")
        node[parts[-1]] = value
    return blob


def resolved_json(cfg: RunConfig) -> str:
    """Canonical JSON used both for the on-disk echo and the report embed."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
