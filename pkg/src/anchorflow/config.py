"""Run configuration: flat ``key = value`` text with dotted sections.

The format is the dotted-key subset of TOML, so ``schedule.shift = 3.0`` and a
``[schedule]`` table both work. Unknown keys are rejected.
"""
from __future__ import annotations

import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .anchor import DegradeConfig
from .datasets import TOY_NAMES, ShapeSequence
from .flow import TrainSettings
from .schedule import NoiseSchedule, StepSampler

__all__ = ["ConfigError", "SCHEMA", "RunConfig", "load_config", "OUT_ENV"]

OUT_ENV = "ANCHORFLOW_OUT"


class ConfigError(ValueError):
    pass


# key -> (default, type); list types are written as ("list", element type)
SCHEMA: dict[str, tuple] = {
    "name": ("run", str),
    "seed": (0, int),
    "out_dir": ("", str),
    "schedule.n": (1000, int),
    "schedule.shift": (3.0, float),
    "sampler.beta": (0.7, float),
    "sampler.k": (6, int),
    "sampler.anchors": ([500, 600, 700, 800], ("list", int)),
    "sampler.min_step": (1, int),
    "sampler.focus": (1.0, float),
    "anc.p": (0.5, float),
    "anc.calibrate": (True, bool),
    "net.widths": ([128, 128], ("list", int)),
    "net.emb_dim": (64, int),
    "net.max_freq": (30.0, float),
    "net.hidden": (16, int),
    "net.depth": (3, int),
    "net.gate_width": (32, int),
    "net.inject": ("first", str),
    "train.steps": (2000, int),
    "train.batch": (256, int),
    "train.lr": (1e-3, float),
    "train.lr_schedule": ("constant", str),
    "train.weight_decay": (0.0, float),
    "train.ema_decay": (0.999, float),
    "train.objective": ("shortcut", str),
    "train.mode": ("alternating", str),
    "train.sc_weight": (1.0, float),
    "degrade.blur_sigma": (1.0, float),
    "degrade.resize_factor": (4, int),
    "degrade.noise_sigma": (0.05, float),
    "degrade.seed": (0, int),
    "data.kind": ("two_moons", str),
    "data.n": (20000, int),
    "data.seed": (0, int),
    "data.frames": (3, int),
    "data.lr_res": ([8, 8], ("list", int)),
    "data.factor": (4, int),
    "data.n_shapes": (2, int),
    "infer.steps": (4, int),
    "infer.anchor_steps": (4, int),
    "infer.hr_steps": (4, int),
    "infer.sweep": ([2, 3, 4, 5], ("list", int)),
}


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def _coerce(key: str, value, kind):
    if isinstance(kind, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_coerce(key, v, kind[1]) for v in value]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return repr(value)


class RunConfig:
    """Validated flat mapping plus builders for the domain objects it describes."""

    def __init__(self, values: dict | None = None):
        merged = {k: (list(d) if isinstance(d, list) else d) for k, (d, _) in SCHEMA.items()}
        for key, value in (values or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = _coerce(key, value, SCHEMA[key][1])
        self.values = merged
        self._validate()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        try:
            tree = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        return cls(_flatten(tree))

    def __getitem__(self, key: str):
        return self.values[key]

    def replace(self, **updates) -> "RunConfig":
        """Copy with dotted keys given as ``section__key=value``."""
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in updates.items()})
        return RunConfig(vals)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in SCHEMA)

    def _validate(self):
        v = self.values
        try:
            self.schedule()
            self.sampler()
            self.train_settings()
            self.degrade()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if v["data.kind"] not in (*TOY_NAMES, "shapes"):
            raise ConfigError(f"data.kind: unknown dataset {v['data.kind']!r}")
        if v["net.inject"] not in ("first", "all", "off"):
            raise ConfigError(f"net.inject: unknown mode {v['net.inject']!r}")
        if v["net.emb_dim"] < 2 or v["net.emb_dim"] % 2:
            raise ConfigError("net.emb_dim must be a positive even number")
        if len(v["data.lr_res"]) != 2:
            raise ConfigError("data.lr_res needs two entries")
        if v["data.factor"] not in (2, 4, 8):
            raise ConfigError("data.factor must be 2, 4 or 8")
        for key in ("train.steps", "train.batch", "data.n", "infer.steps", "infer.anchor_steps", "infer.hr_steps"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1")

    # -- builders ------------------------------------------------------------
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(n=self["schedule.n"], shift=self["schedule.shift"])

    def sampler(self) -> StepSampler:
        return StepSampler(
            beta=self["sampler.beta"],
            k=self["sampler.k"],
            anchors=tuple(self["sampler.anchors"]),
            min_step=self["sampler.min_step"],
            focus=self["sampler.focus"],
            n=self["schedule.n"],
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            steps=self["train.steps"],
            batch=self["train.batch"],
            lr=self["train.lr"],
            lr_schedule=self["train.lr_schedule"],
            weight_decay=self["train.weight_decay"],
            ema_decay=self["train.ema_decay"],
            objective=self["train.objective"],
            mode=self["train.mode"],
            sc_weight=self["train.sc_weight"],
            p=self["anc.p"],
            calibrate=self["anc.calibrate"],
            schedule=self.schedule(),
            sampler=self.sampler(),
        )

    def degrade(self) -> DegradeConfig:
        return DegradeConfig(
            blur_sigma=self["degrade.blur_sigma"],
            resize_factor=self["degrade.resize_factor"],
            noise_sigma=self["degrade.noise_sigma"],
            seed=self["degrade.seed"],
        )

    def shape_spec(self, seed: int | None = None) -> ShapeSequence:
        return ShapeSequence(
            frames=self["data.frames"],
            lr_res=tuple(self["data.lr_res"]),
            factor=self["data.factor"],
            seed=self["data.seed"] if seed is None else seed,
            n_shapes=self["data.n_shapes"],
        )

    def out_dir(self) -> Path:
        if self["out_dir"]:
            return Path(self["out_dir"])
        return Path(os.environ.get(OUT_ENV, "runs")) / self["name"]


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_text(text)
