"""Feature-space interpolation between flipped samples and their parents.

Each label-flipped sample is paired with the original sentence it came from;
a trainer mixes their layer-m hidden states and label distributions with a
weight drawn from Beta(alpha, beta) (alpha >> beta, so the flipped sample
dominates). This module owns the math and the pair records; trainers decide
when to apply them.

Shapes: state sequences are (L, d) float arrays, label sequences (L, T)
row-stochastic arrays. Sequences of unequal length are aligned first, by
zero-padding states and padding labels with a one-hot "outside" row.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .augment import FLIPPING_STRATEGIES, AugmentedSample
from .errors import DimensionMismatchError, MissingParentError

DEFAULT_ALPHA = 130.0
DEFAULT_BETA = 5.0
DEFAULT_LAYER_CHOICES = (8, 9, 10)


@dataclass
class MixupConfig:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    layer_choices: tuple[int, ...] = DEFAULT_LAYER_CHOICES

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta parameters must be positive")
        if not self.layer_choices:
            raise ValueError("need at least one layer choice")


@dataclass(frozen=True)
class MixupPair:
    """One flipped/original pairing with its draw."""

    flipped_id: str
    original_id: str
    lam: float
    layer: int

    def to_record(self) -> dict:
        return {
            "flipped_id": self.flipped_id,
            "original_id": self.original_id,
            "lambda": self.lam,
            "layer": self.layer,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MixupPair":
        return cls(rec["flipped_id"], rec["original_id"], rec["lambda"], rec["layer"])


def sample_lambda(cfg: MixupConfig, rng: random.Random) -> float:
    """Draw the mixing weight, rejecting the degenerate endpoints."""
    while True:
        lam = rng.betavariate(cfg.alpha, cfg.beta)
        if 0.0 < lam < 1.0:
            return lam


def _check_pair(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionMismatchError(f"{what}: expected 2-d arrays, got {a.ndim}-d/{b.ndim}-d")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: shapes {a.shape} != {b.shape}")


def interpolate_states(h_flipped: np.ndarray, h_original: np.ndarray, lam: float) -> np.ndarray:
    """lam * h_flipped + (1 - lam) * h_original, elementwise."""
    h_flipped = np.asarray(h_flipped, dtype=np.float64)
    h_original = np.asarray(h_original, dtype=np.float64)
    _check_pair(h_flipped, h_original, "states")
    return lam * h_flipped + (1.0 - lam) * h_original


def mix_labels(y_flipped: np.ndarray, y_original: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination of row-stochastic label sequences (stays stochastic)."""
    y_flipped = np.asarray(y_flipped, dtype=np.float64)
    y_original = np.asarray(y_original, dtype=np.float64)
    _check_pair(y_flipped, y_original, "labels")
    return lam * y_flipped + (1.0 - lam) * y_original


def align_states(
    a: np.ndarray, b: np.ndarray, mode: str = "pad"
) -> tuple[np.ndarray, np.ndarray]:
    """Equalize sequence lengths: zero-pad the shorter (or truncate the longer)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"states: incompatible shapes {a.shape}/{b.shape}")
    if mode == "truncate":
        n = min(a.shape[0], b.shape[0])
        return a[:n], b[:n]
    if mode != "pad":
        raise ValueError(f"unknown align mode {mode!r}")
    n = max(a.shape[0], b.shape[0])

    def pad(x: np.ndarray) -> np.ndarray:
        if x.shape[0] == n:
            return x
        return np.vstack([x, np.zeros((n - x.shape[0], x.shape[1]))])

    return pad(a), pad(b)


def align_labels(
    a: np.ndarray, b: np.ndarray, outside_index: int, mode: str = "pad"
) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`align_states` but pads with a one-hot outside row."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"labels: incompatible shapes {a.shape}/{b.shape}")
    if not (0 <= outside_index < a.shape[1]):
        raise ValueError(f"outside index {outside_index} out of range")
    if mode == "truncate":
        n = min(a.shape[0], b.shape[0])
        return a[:n], b[:n]
    if mode != "pad":
        raise ValueError(f"unknown align mode {mode!r}")
    n = max(a.shape[0], b.shape[0])

    def pad(x: np.ndarray) -> np.ndarray:
        if x.shape[0] == n:
            return x
        rows = np.zeros((n - x.shape[0], x.shape[1]))
        rows[:, outside_index] = 1.0
        return np.vstack([x, rows])

    return pad(a), pad(b)


def one_hot_labels(type_indices: list[int], num_classes: int) -> np.ndarray:
    """(L, T) one-hot matrix from per-token class indices."""
    out = np.zeros((len(type_indices), num_classes))
    for i, t in enumerate(type_indices):
        if not (0 <= t < num_classes):
            raise ValueError(f"class index {t} out of range")
        out[i, t] = 1.0
    return out


def build_pairs(
    samples: list[AugmentedSample],
    cfg: MixupConfig,
    rng: random.Random,
    known_original_ids: set[str] | None = None,
) -> list[MixupPair]:
    """Pair every label-flipped sample with its parent sentence.

    Draw order is sample order (lambda then layer per pair), so the result is
    deterministic for a given input order and RNG state. Samples from
    non-flipping strategies and unflipped leftovers are skipped.
    ``known_original_ids``, when given, validates parent availability.
    """
    pairs: list[MixupPair] = []
    for sample in samples:
        if sample.strategy not in FLIPPING_STRATEGIES or not sample.is_flipped:
            continue
        if known_original_ids is not None and sample.parent_id not in known_original_ids:
            raise MissingParentError(
                f"sample {sample.sample_id!r} has no parent {sample.parent_id!r}"
            )
        lam = sample_lambda(cfg, rng)
        layer = rng.choice(cfg.layer_choices)
        pairs.append(MixupPair(sample.sample_id, sample.parent_id, lam, layer))
    return pairs
