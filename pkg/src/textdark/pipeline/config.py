"""Run configuration: nested dataclasses, named profiles, YAML files and env overrides.

A config file is YAML with one mapping per section.  ``profile`` picks the
base values (``desk`` or ``paper``); every other key overrides them.
Environment variables ``TOOLKIT__SECTION__KEY=value`` override both, with
values parsed as YAML scalars.  Relative paths in a file resolve against
that file's directory.
"""
from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..dataset import PAPER_BOX_STATS, PatchSpec
from ..enhancer import EnhancerConfig
from ..errors import ConfigError
from ..losses import EdgeLossParams, LossWeights, MsSsimConfig
from ..synthdce import CurveNetConfig, SpaConfig, SynthLossWeights

ENV_PREFIX = "TOOLKIT__"
TASKS = ("train-enhance", "train-synth", "enhance", "synthesize", "augment", "evaluate")
DTYPES = ("float64", "float32")


@dataclass
class Schedule:
    epochs: int = 4000
    batch_size: int = 2
    lr: float = 1e-4
    lr_decay_epoch: int | None = 2000   # None: constant rate
    lr_after_decay: float = 1e-5
    checkpoint_every: int = 100
    resume: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or self.lr_after_decay <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


@dataclass
class DataConfig:
    manifest: str | None = None
    split: str = "train"


@dataclass
class TextScorerConfig:
    window: int = 7
    sigma: float = 1.5
    tau: float = 0.01

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"text_scorer.tau must be > 0, got {self.tau}")


@dataclass
class TextCpConfig:
    enabled: bool = True
    stats: str = "data"          # "data" or a key of PAPER_BOX_STATS
    n_target: int = 10
    gamma: float = 1.0
    max_attempts: int = 100

    def __post_init__(self):
        if self.stats != "data" and self.stats not in PAPER_BOX_STATS:
            raise ConfigError(f"textcp.stats must be 'data' or one of {sorted(PAPER_BOX_STATS)}")


@dataclass
class InferenceConfig:
    checkpoint: str | None = None
    input: str | None = None
    pattern: str = "*"           # glob filter on file names under input
    tile: int | None = None
    overlap: int = 64
    panels: bool = False
    write_edges: bool = False

    def __post_init__(self):
        if self.tile is not None and self.tile <= self.overlap:
            raise ConfigError(f"tile ({self.tile}) must be larger than overlap ({self.overlap})")
        if self.overlap < 0:
            raise ConfigError("overlap must be >= 0")


@dataclass
class AugmentConfig:
    copies: int = 1

    def __post_init__(self):
        if self.copies < 1:
            raise ConfigError("copies must be >= 1")


@dataclass
class EvaluateConfig:
    pred_dir: str | None = None
    gt_dir: str | None = None
    pred_pattern: str = "*"
    gt_pattern: str = "*"
    pred_suffix: str = ""        # stripped from file stems before pairing
    gt_suffix: str = ""
    detections: str | None = None
    annotations: str | None = None
    recognition: str | None = None
    iou_mode: str = "aabb"


@dataclass
class RunConfig:
    task: str = "train-enhance"
    profile: str = "paper"
    seed: int = 0
    out: str = "runs/out"
    dtype: str = "float32"
    data: DataConfig = field(default_factory=DataConfig)
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    curve_net: CurveNetConfig = field(default_factory=CurveNetConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    ms_ssim: MsSsimConfig = field(default_factory=MsSsimConfig)
    edge_loss: EdgeLossParams = field(default_factory=EdgeLossParams)
    text_scorer: TextScorerConfig = field(default_factory=TextScorerConfig)
    synth_loss: SynthLossWeights = field(default_factory=SynthLossWeights)
    spa: SpaConfig = field(default_factory=SpaConfig)
    train_enhance: Schedule = field(default_factory=Schedule)
    train_synth: Schedule = field(default_factory=lambda: Schedule(
        epochs=200, batch_size=8, lr=1e-4, lr_decay_epoch=None))
    patch: PatchSpec = field(default_factory=PatchSpec)
    synth_patch: PatchSpec = field(default_factory=lambda: PatchSpec(size=256, require_legible_text=False))
    textcp: TextCpConfig = field(default_factory=TextCpConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")


# Desk scale: tiny network and patches so a full run takes minutes on a CPU.
PROFILES: dict[str, dict] = {
    "paper": {},
    "desk": {
        "dtype": "float64",
        "enhancer": {"levels": 2, "base_channels": 16},
        "curve_net": {"channels": 16},
        "ms_ssim": {"scales": 3},
        "train_enhance": {"epochs": 300, "batch_size": 1, "lr": 1e-3, "checkpoint_every": 50},
        "train_synth": {"epochs": 300, "batch_size": 1, "lr": 1e-3, "checkpoint_every": 50},
        "patch": {"size": 64},
        "synth_patch": {"size": 64},
        "textcp": {"n_target": 4},
        "inference": {"tile": None, "overlap": 16},
    },
}


# ------------------------------------------------------------- building

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(data).__name__}")
    defaults = cls()
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where or 'config'}")
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}".lstrip("."))
        elif isinstance(current, float) and isinstance(value, (str, int)) and not isinstance(value, bool):
            # YAML 1.1 reads "1e-3" (no dot) as a string
            try:
                kwargs[name] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{where}.{name}".lstrip(".") + f" must be a number, got {value!r}") from exc
        else:
            kwargs[name] = value
    # nested sections left out keep their (possibly non-trivial) factory defaults
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def to_dict(cfg) -> dict:
    """Plain nested dict of the init fields (round-trips through :func:`from_dict`)."""
    out = {}
    for f in dataclasses.fields(cfg):
        if not f.init:
            continue
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def profile_dict(name: str) -> dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    base = to_dict(RunConfig())
    return _merge(base, dict(PROFILES[name], profile=name))


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    base = profile_dict(data.get("profile", "paper"))
    return _build(RunConfig, _merge(base, data), "")


def env_overrides(environ=None) -> dict:
    """Nested override dict from ``TOOLKIT__A__B=value`` variables."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        try:
            value = yaml.safe_load(environ[key])
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {key}={environ[key]!r}: {exc}") from exc
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key} conflicts with another override")
        node[path[-1]] = value
    return out


PATH_KEYS = (("out",), ("data", "manifest"), ("train_enhance", "resume"), ("train_synth", "resume"),
             ("inference", "checkpoint"), ("inference", "input"), ("evaluate", "pred_dir"),
             ("evaluate", "gt_dir"), ("evaluate", "detections"), ("evaluate", "annotations"),
             ("evaluate", "recognition"))


def _resolve_paths(data: dict, base: Path) -> dict:
    data = copy.deepcopy(data)
    for path in PATH_KEYS:
        node = data
        for p in path[:-1]:
            node = node.get(p) if isinstance(node, dict) else None
            if node is None:
                break
        if isinstance(node, dict) and isinstance(node.get(path[-1]), str):
            p = Path(node[path[-1]])
            node[path[-1]] = str(p if p.is_absolute() else base / p)
    return data


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """File values, then environment overrides, then explicit ``overrides`` (CLI flags)."""
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = _resolve_paths(loaded, path.resolve().parent)
    data = _merge(data, env_overrides(environ))
    data = _merge(data, overrides or {})
    return from_dict(data)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))


REQUIRED_PATHS = {
    "train-enhance": [("data", "manifest")],
    "train-synth": [("data", "manifest")],
    "augment": [("data", "manifest")],
    "enhance": [("inference", "checkpoint"), ("inference", "input")],
    "synthesize": [("inference", "checkpoint"), ("inference", "input")],
    "evaluate": [("evaluate", "pred_dir"), ("evaluate", "gt_dir")],
}


def validate(cfg: RunConfig) -> RunConfig:
    """Check that every path the task reads is set and exists."""
    for section, key in REQUIRED_PATHS[cfg.task]:
        value = getattr(getattr(cfg, section), key)
        if value is None:
            raise ConfigError(f"task {cfg.task} needs {section}.{key}")
        if not Path(value).exists():
            raise ConfigError(f"{section}.{key} = {value} does not exist")
    for key in ("detections", "annotations", "recognition"):
        value = getattr(cfg.evaluate, key)
        if cfg.task == "evaluate" and value is not None and not Path(value).exists():
            raise ConfigError(f"evaluate.{key} = {value} does not exist")
    for sched in (cfg.train_enhance, cfg.train_synth):
        if sched.resume is not None and not Path(sched.resume).is_file():
            raise ConfigError(f"resume checkpoint {sched.resume} does not exist")
    return cfg
