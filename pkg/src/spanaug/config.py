"""Run configuration: a flat ``key = value`` file plus CLI overrides.

Unknown keys, bad values, and inconsistent combinations raise
:class:`ConfigError`, which the CLI maps to exit code 2. The canonical dict
(:meth:`RunConfig.canonical`) covers behavioral fields only -- no filesystem
paths -- so run manifests hash identically across working directories.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .maskops import DEFAULT_PLACEHOLDER, OpConfig
from .mixup import MixupConfig
from .strategies import (
    FLIP_DIRECTIONS,
    FLIP_METRICS,
    FLIP_SCHEMES,
    STRATEGIES,
    FlipScheme,
    StrategyConfig,
)


@dataclass
class RunConfig:
    # inputs / outputs
    train: str = ""
    unlabeled: str | None = None
    schema: str = ""
    out: str = ""
    # sampling
    shots: int = 5
    # augmentation
    strategies: tuple[str, ...] = STRATEGIES
    multiplier: int = 1
    flip_count: int = 1
    entity_rounds_choices: tuple[int, ...] = (1, 2, 3)
    context_rounds_choices: tuple[int, ...] = (1, 2, 3)
    flip_scheme: str = "random"
    flip_metric: str = "cosine"
    flip_direction: str = "similar_high"
    flip_temperature: float = 1.0
    context_mask_min: int = 0
    context_mask_max: int = 2
    mask_token: str = DEFAULT_PLACEHOLDER
    # mixup
    alpha: float = 130.0
    beta: float = 5.0
    layer_choices: tuple[int, ...] = (8, 9, 10)
    # self-training
    tau: float = 0.9
    iterations: int = 3
    confidence_policy: str = "min"
    refilter_pseudo_labels: bool = True
    # backend
    backend: str = "mock"
    backend_url: str | None = None
    max_in_flight: int = 4
    retry_attempts: int = 3
    retry_backoff: float = 0.5
    decode_max_new_tokens: int = 32
    decode_temperature: float = 1.0
    # seeding
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.multiplier < 1:
            raise ConfigError(f"multiplier must be >= 1, got {self.multiplier}")
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"backend must be mock or http, got {self.backend!r}")
        if self.backend == "http" and not self.backend_url:
            raise ConfigError("backend_url is required with backend = http")
        if self.confidence_policy not in ("min", "mean"):
            raise ConfigError(f"confidence_policy must be min or mean, got {self.confidence_policy!r}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if not self.strategies:
            raise ConfigError("no strategies selected")
        if self.flip_scheme not in FLIP_SCHEMES:
            raise ConfigError(f"unknown flip scheme {self.flip_scheme!r}")
        if self.flip_metric not in FLIP_METRICS:
            raise ConfigError(f"unknown flip metric {self.flip_metric!r}")
        if self.flip_direction not in FLIP_DIRECTIONS:
            raise ConfigError(f"unknown flip direction {self.flip_direction!r}")
        if not (0 <= self.context_mask_min <= self.context_mask_max):
            raise ConfigError("need 0 <= context_mask_min <= context_mask_max")
        if self.flip_count < 0:
            raise ConfigError("K must be >= 0")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if not self.mask_token or any(c.isspace() for c in self.mask_token):
            raise ConfigError("mask_token must be a single whitespace-free token")

    def require_paths(self, need_unlabeled: bool = False) -> None:
        for label, value in (("train", self.train), ("schema", self.schema)):
            if not value:
                raise ConfigError(f"config key {label!r} is required")
            if not Path(value).is_file():
                raise ConfigError(f"{label} file not found: {value}")
        if need_unlabeled:
            if not self.unlabeled:
                raise ConfigError("config key 'unlabeled' is required for this command")
            if not Path(self.unlabeled).is_file():
                raise ConfigError(f"unlabeled file not found: {self.unlabeled}")
        if not self.out:
            raise ConfigError("config key 'out' is required")

    # -- derived component configs --

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(
            flip_count=self.flip_count,
            entity_rounds_choices=self.entity_rounds_choices,
            context_rounds_choices=self.context_rounds_choices,
        )

    def op_config(self) -> OpConfig:
        return OpConfig(self.context_mask_min, self.context_mask_max)

    def scheme(self) -> FlipScheme:
        return FlipScheme(
            kind=self.flip_scheme,
            metric=self.flip_metric,
            direction=self.flip_direction,
            temperature=self.flip_temperature,
        )

    def mixup_config(self) -> MixupConfig:
        return MixupConfig(self.alpha, self.beta, self.layer_choices)

    def canonical(self) -> dict:
        """Behavioral fields only; path-free so manifests are relocatable."""
        skip = {"train", "unlabeled", "schema", "out", "backend_url"}
        out = {}
        for f in fields(self):
            if f.name in skip:
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


# Config file key -> (field, parser). Most keys mirror field names; the
# single-letter/K-style spellings follow the CLI surface.
def _csv(conv):
    def parse(raw: str):
        vals = [v.strip() for v in raw.split(",") if v.strip()]
        return tuple(conv(v) for v in vals)
    return parse


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_KEYS: dict[str, tuple[str, object]] = {
    "train": ("train", str),
    "unlabeled": ("unlabeled", str),
    "schema": ("schema", str),
    "out": ("out", str),
    "shots": ("shots", int),
    "strategy": ("strategies", None),  # special-cased: 'all' or csv
    "multiplier": ("multiplier", int),
    "K": ("flip_count", int),
    "M_choices": ("entity_rounds_choices", _csv(int)),
    "N_choices": ("context_rounds_choices", _csv(int)),
    "flip_scheme": ("flip_scheme", str),
    "flip_metric": ("flip_metric", str),
    "flip_direction": ("flip_direction", str),
    "flip_temperature": ("flip_temperature", float),
    "context_mask_min": ("context_mask_min", int),
    "context_mask_max": ("context_mask_max", int),
    "mask_token": ("mask_token", str),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "layer_choices": ("layer_choices", _csv(int)),
    "tau": ("tau", float),
    "iterations": ("iterations", int),
    "confidence_policy": ("confidence_policy", str),
    "refilter_pseudo_labels": ("refilter_pseudo_labels", _bool),
    "backend": ("backend", str),
    "backend_url": ("backend_url", str),
    "max_in_flight": ("max_in_flight", int),
    "retry_attempts": ("retry_attempts", int),
    "retry_backoff": ("retry_backoff", float),
    "decode_max_new_tokens": ("decode_max_new_tokens", int),
    "decode_temperature": ("decode_temperature", float),
    "seed": ("seed", int),
}


def parse_strategies(raw: str) -> tuple[str, ...]:
    raw = raw.strip().lower()
    if raw == "all":
        return STRATEGIES
    picked = tuple(v.strip() for v in raw.split(",") if v.strip())
    for s in picked:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r} (use {', '.join(STRATEGIES)} or all)")
    if not picked:
        raise ConfigError("empty strategy list")
    return picked


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        field_name, conv = _KEYS[key]
        try:
            if key == "strategy":
                setattr(cfg, field_name, parse_strategies(value))
            else:
                setattr(cfg, field_name, conv(value))
        except ConfigError:
            raise
        except (ValueError, TypeError) as e:
            raise ConfigError(f"config line {lineno}: bad value for {key!r}: {e}") from None
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(p.read_text(encoding="utf-8"), base)
