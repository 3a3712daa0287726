"""Batch augmentation driver: sentences x strategies x rounds -> samples.

For every (sentence, strategy, round) triple the driver derives an
independent RNG stream, expands the strategy into an op sequence, composes a
masked template, and queues a fill request. Precondition failures (no
entities, no context, exhausted targets, impossible K/M) skip the triple and
are counted by error class; gateway failures after retries drop it, also
counted. The report reconciles the counting identity

    attempted == len(sentences) * multiplier            (per strategy)
    produced  == attempted - skips - drops
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Dataset, LabelSchema, TaggedSentence, sentence_from_record, sentence_to_record
from .errors import (
    GatewayError,
    InvalidKMError,
    NoContextError,
    NoEntityError,
    OverlapExhaustedError,
    SameTypeError,
    SingletonSchemaError,
)
from .gateway import DecodeConfig, FillRequest, Gateway
from .linearize import delinearize, segment
from .maskops import OpConfig, compose_template
from .seeding import derive_rng, derive_seed
from .strategies import FlipScheme, StrategyConfig, compose_strategy, make_flip_chooser

log = logging.getLogger(__name__)

#: Strategies whose samples carry label flips (mixup pairs them with parents).
FLIPPING_STRATEGIES = frozenset({"elc", "ea", "er"})

_PRECONDITION_ERRORS = (
    NoEntityError,
    NoContextError,
    OverlapExhaustedError,
    SameTypeError,
    InvalidKMError,
    SingletonSchemaError,
)


@dataclass
class AugmentedSample:
    """One generated sentence plus the provenance needed downstream."""

    sample_id: str
    parent_id: str
    strategy: str
    sentence: TaggedSentence
    expected_types: list[str]
    flipped_positions: list[int]
    operations: list[dict]

    @property
    def is_flipped(self) -> bool:
        return bool(self.flipped_positions)

    def to_record(self) -> dict:
        rec = sentence_to_record(self.sentence)
        return {
            "id": self.sample_id,
            "parent_id": self.parent_id,
            "strategy": self.strategy,
            "tokens": rec["tokens"],
            "spans": rec["spans"],
            "expected_types": list(self.expected_types),
            "flipped_positions": list(self.flipped_positions),
            "operations": [dict(op) for op in self.operations],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AugmentedSample":
        sentence = sentence_from_record({
            "id": rec["id"], "tokens": rec["tokens"], "spans": rec["spans"],
        })
        return cls(
            sample_id=rec["id"],
            parent_id=rec["parent_id"],
            strategy=rec["strategy"],
            sentence=sentence,
            expected_types=list(rec["expected_types"]),
            flipped_positions=list(rec["flipped_positions"]),
            operations=[dict(op) for op in rec.get("operations", [])],
        )


@dataclass
class StrategyTally:
    attempted: int = 0
    produced: int = 0
    precondition_skips: Counter = field(default_factory=Counter)
    generation_drops: Counter = field(default_factory=Counter)

    @property
    def skipped(self) -> int:
        return sum(self.precondition_skips.values())

    @property
    def dropped(self) -> int:
        return sum(self.generation_drops.values())

    def to_json(self) -> dict:
        return {
            "attempted": self.attempted,
            "produced": self.produced,
            "precondition_skips": dict(sorted(self.precondition_skips.items())),
            "generation_drops": dict(sorted(self.generation_drops.items())),
        }


@dataclass
class AugmentReport:
    strategies: dict[str, StrategyTally] = field(default_factory=dict)

    def tally(self, strategy: str) -> StrategyTally:
        return self.strategies.setdefault(strategy, StrategyTally())

    def counting_identity_holds(self, n_sentences: int, multiplier: int) -> bool:
        for t in self.strategies.values():
            if t.attempted != n_sentences * multiplier:
                return False
            if t.produced != t.attempted - t.skipped - t.dropped:
                return False
        return True

    def to_json(self) -> dict:
        return {
            "strategies": {k: v.to_json() for k, v in sorted(self.strategies.items())},
            "totals": {
                "attempted": sum(t.attempted for t in self.strategies.values()),
                "produced": sum(t.produced for t in self.strategies.values()),
                "skipped": sum(t.skipped for t in self.strategies.values()),
                "dropped": sum(t.dropped for t in self.strategies.values()),
            },
        }


def sample_id_for(parent_id: str, strategy: str, round_index: int) -> str:
    return f"{parent_id}/{strategy}/{round_index}"


def augment_dataset(
    dataset: Dataset,
    strategies: list[str],
    multiplier: int,
    strategy_cfg: StrategyConfig,
    op_cfg: OpConfig,
    scheme: FlipScheme,
    gateway: Gateway,
    seed: int,
    decode: DecodeConfig | None = None,
) -> tuple[list[AugmentedSample], AugmentReport]:
    """Generate ``multiplier`` samples per sentence per strategy."""
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    schema = dataset.schema
    decode = decode or DecodeConfig()
    report = AugmentReport()
    pending: list[tuple[str, FillRequest]] = []  # (strategy, request)

    for strategy in strategies:
        tally = report.tally(strategy)
        for sentence in dataset.sentences:
            for r in range(multiplier):
                tally.attempted += 1
                rng = derive_rng(seed, "augment", sentence.sentence_id, strategy, r)
                chooser = make_flip_chooser(schema, scheme, rng)
                try:
                    ops = compose_strategy(strategy, strategy_cfg, rng)
                    template = compose_template(
                        segment(sentence), ops, schema, op_cfg, rng, flip_chooser=chooser
                    )
                except _PRECONDITION_ERRORS as e:
                    tally.precondition_skips[type(e).__name__] += 1
                    log.debug("skip %s/%s round %d: %s",
                              sentence.sentence_id, strategy, r, e)
                    continue
                req = FillRequest(
                    request_id=sample_id_for(sentence.sentence_id, strategy, r),
                    template=template,
                    decode=DecodeConfig(
                        max_new_tokens=decode.max_new_tokens,
                        temperature=decode.temperature,
                        seed=derive_seed(seed, "decode", sentence.sentence_id, strategy, r),
                    ),
                )
                pending.append((strategy, req))

    results = gateway.fill_batch([req for _, req in pending])
    samples: list[AugmentedSample] = []
    for (strategy, req), result in zip(pending, results):
        tally = report.tally(strategy)
        if isinstance(result, GatewayError):
            tally.generation_drops[type(result).__name__] += 1
            log.debug("drop %s: %s", req.request_id, result)
            continue
        template = req.template
        sentence = delinearize(result.filled_text, schema, sentence_id=req.request_id)
        samples.append(AugmentedSample(
            sample_id=req.request_id,
            parent_id=template.parent_id,
            strategy=strategy,
            sentence=sentence,
            expected_types=list(template.expected_types),
            flipped_positions=list(template.flipped_positions),
            operations=list(template.provenance),
        ))
        tally.produced += 1
    return samples, report
