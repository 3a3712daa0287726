"""Strategy algebra and type-flip schemes.

A strategy expands to an op sequence over one sentence:

- ``sa``  (span augment):        op1 x M               + op5 x N
- ``elc`` (entity label change): op2 x K + op1 x (M-K) + op5 x N
- ``ea``  (entity add):          op3 x K + op1 x (M-K) + op5 x N
- ``er``  (entity replace):      (op3+op4 pair) x K + op1 x (M-K) + op5 x N

K is the flip count (forced to 0 for ``sa``); M and N are drawn per sentence
from configured choice sets, with the M set filtered to values >= K first.

Flip schemes pick the replacement type for flip ops: ``random`` draws
uniformly from the other types; ``fixed`` takes the similarity argmax (or
argmin); ``probability`` softmax-samples over similarities. The similarity
metric runs on the schema's type embeddings.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable

from .corpus import LabelSchema
from .errors import InvalidKMError, MissingEmbeddingsError, SingletonSchemaError
from .maskops import Op, OpCall

STRATEGIES = ("sa", "elc", "ea", "er")

FLIP_SCHEMES = ("random", "fixed", "probability")
FLIP_METRICS = ("cosine", "negative_euclidean")
FLIP_DIRECTIONS = ("similar_high", "similar_low")


@dataclass
class StrategyConfig:
    """Knobs of the algebra: K and the M/N choice sets."""

    flip_count: int = 1
    entity_rounds_choices: tuple[int, ...] = (1, 2, 3)
    context_rounds_choices: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self) -> None:
        if self.flip_count < 0:
            raise InvalidKMError("flip count must be >= 0")
        if not self.entity_rounds_choices or min(self.entity_rounds_choices) < 0:
            raise InvalidKMError("entity rounds choices must be non-empty and >= 0")
        if not self.context_rounds_choices or min(self.context_rounds_choices) < 0:
            raise InvalidKMError("context rounds choices must be non-empty and >= 0")


@dataclass
class FlipScheme:
    kind: str = "random"
    metric: str = "cosine"
    direction: str = "similar_high"
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in FLIP_SCHEMES:
            raise ValueError(f"unknown flip scheme {self.kind!r}")
        if self.metric not in FLIP_METRICS:
            raise ValueError(f"unknown flip metric {self.metric!r}")
        if self.direction not in FLIP_DIRECTIONS:
            raise ValueError(f"unknown flip direction {self.direction!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def compose_strategy(
    kind: str,
    cfg: StrategyConfig,
    rng: random.Random,
    entity_rounds: int | None = None,
    context_rounds: int | None = None,
) -> list[OpCall]:
    """Expand a strategy into op calls, drawing M then N unless pinned."""
    if kind not in STRATEGIES:
        raise ValueError(f"unknown strategy {kind!r}")
    k = 0 if kind == "sa" else cfg.flip_count

    if entity_rounds is not None:
        m = entity_rounds
        if m < k:
            raise InvalidKMError(f"entity rounds {m} < flip count {k}")
    else:
        eligible = [m for m in cfg.entity_rounds_choices if m >= k]
        if not eligible:
            raise InvalidKMError(
                f"no entity-rounds choice in {cfg.entity_rounds_choices} fits flip count {k}"
            )
        m = rng.choice(eligible)
    n = context_rounds if context_rounds is not None else rng.choice(cfg.context_rounds_choices)

    calls: list[OpCall] = []
    if kind == "elc":
        calls.extend(OpCall(Op.CHANGE_TYPE) for _ in range(k))
    elif kind == "ea":
        calls.extend(OpCall(Op.ADD_ENTITY) for _ in range(k))
    elif kind == "er":
        for _ in range(k):
            calls.append(OpCall(Op.ADD_ENTITY))
            calls.append(OpCall(Op.ERASE_ENTITY, pair_with_previous=True))
    calls.extend(OpCall(Op.AUGMENT_ENTITY) for _ in range(m - k))
    calls.extend(OpCall(Op.AUGMENT_CONTEXT) for _ in range(n))
    return calls


# --- type similarity ------------------------------------------------------------

def type_similarity(a: str, b: str, schema: LabelSchema, metric: str = "cosine") -> float:
    """Symmetric similarity between two types' embeddings.

    ``cosine`` lands in [-1, 1]; ``negative_euclidean`` in (-inf, 0], both
    maximal exactly on identical vectors. Zero-norm cosine operands score 0
    against anything but an identical vector (total and deterministic).
    """
    if metric not in FLIP_METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    va, vb = schema.embedding(a), schema.embedding(b)
    if va is None or vb is None:
        raise MissingEmbeddingsError(f"schema has no embeddings for {a!r}/{b!r}")
    if metric == "negative_euclidean":
        return -math.sqrt(sum((x - y) ** 2 for x, y in zip(va, vb)))
    if va == vb:
        return 1.0
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(y * y for y in vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(va, vb)) / (na * nb)


def choose_flip_type(
    current: str,
    schema: LabelSchema,
    scheme: FlipScheme,
    rng: random.Random,
) -> str:
    """Pick a replacement type, never the current one."""
    others = [t for t in schema.type_ids if t != current]
    if not others:
        raise SingletonSchemaError("cannot flip types in a single-type schema")
    if scheme.kind == "random":
        return rng.choice(others)

    sims = [type_similarity(current, t, schema, scheme.metric) for t in others]
    if scheme.direction == "similar_low":
        sims = [-s for s in sims]
    if scheme.kind == "fixed":
        best = max(range(len(others)), key=lambda i: (sims[i], -i))  # ties: schema order
        return others[best]

    # probability: softmax over (possibly negated) similarities
    peak = max(sims)
    weights = [math.exp((s - peak) / scheme.temperature) for s in sims]
    total = sum(weights)
    draw = rng.random() * total
    acc = 0.0
    for t, w in zip(others, weights):
        acc += w
        if draw < acc:
            return t
    return others[-1]  # guard against float round-off


def make_flip_chooser(
    schema: LabelSchema, scheme: FlipScheme, rng: random.Random
) -> Callable[[str], str]:
    """Bind a scheme to a chooser callback for template composition."""
    def choose(current: str) -> str:
        return choose_flip_type(current, schema, scheme, rng)
    return choose
