"""Self-consistency filtering of augmented samples.

Every augmented sentence is turned into a reverse query: the sentence with
its bracketed groups' type names replaced by type slots. The backend
re-predicts each group's type from the entity words; a sample survives only
if the predicted display-name sequence matches its own labels exactly
(case-insensitive). Samples without entities are kept without a backend call.
Filtering is idempotent: the verdict depends only on sample content, so a
second pass over the kept set keeps everything.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .augment import AugmentedSample
from .corpus import LabelSchema
from .errors import GatewayError
from .gateway import Gateway, TypeScoreRequest, TypeSlot
from .linearize import CLOSE, OPEN, SEP, escape_token, segment
from .maskops import LiteralPiece

log = logging.getLogger(__name__)

KEPT, DROPPED_MISMATCH, DROPPED_UNPARSEABLE = "kept", "mismatch", "unparseable"


def make_word2type_query(sample: AugmentedSample, schema: LabelSchema,
                         request_id: str | None = None) -> TypeScoreRequest:
    """Rebuild the sample's linearized form with type names slotted out."""
    seg = segment(sample.sentence)
    pieces: list[LiteralPiece | TypeSlot] = []
    phrases: list[tuple[str, ...]] = []
    refs: list[str] = []
    run: list[str] = [escape_token(t) for t in seg.contexts[0]]
    for i, (ent, ctx) in enumerate(zip(seg.entities, seg.contexts[1:])):
        run.append(OPEN)
        run.extend(escape_token(t) for t in ent.tokens)
        run.append(SEP)
        pieces.append(LiteralPiece(tuple(run)))
        run = []
        pieces.append(TypeSlot(i))
        run.append(CLOSE)
        run.extend(escape_token(t) for t in ctx)
        phrases.append(ent.tokens)
        refs.append(schema.display_of(ent.type_id).lower())
    if run:
        pieces.append(LiteralPiece(tuple(run)))
    return TypeScoreRequest(
        request_id=request_id or sample.sample_id,
        pieces=tuple(pieces),
        entity_phrases=tuple(phrases),
        reference_types=tuple(refs),
    )


@dataclass
class FilterTally:
    total: int = 0
    kept: int = 0
    dropped_mismatch: int = 0
    dropped_unparseable: int = 0

    @property
    def retention(self) -> float:
        return self.kept / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "kept": self.kept,
            "dropped_mismatch": self.dropped_mismatch,
            "dropped_unparseable": self.dropped_unparseable,
            "retention": round(self.retention, 6),
        }


@dataclass
class FilterReport:
    strategies: dict[str, FilterTally] = field(default_factory=dict)

    def tally(self, strategy: str) -> FilterTally:
        return self.strategies.setdefault(strategy, FilterTally())

    @property
    def overall(self) -> FilterTally:
        out = FilterTally()
        for t in self.strategies.values():
            out.total += t.total
            out.kept += t.kept
            out.dropped_mismatch += t.dropped_mismatch
            out.dropped_unparseable += t.dropped_unparseable
        return out

    def to_json(self) -> dict:
        return {
            "strategies": {k: v.to_json() for k, v in sorted(self.strategies.items())},
            "overall": self.overall.to_json(),
        }

    def format_table(self) -> str:
        """Small human-readable per-strategy retention table."""
        rows = [f"{'strategy':<10} {'total':>6} {'kept':>6} {'retention':>10}"]
        for name, t in sorted(self.strategies.items()):
            rows.append(f"{name:<10} {t.total:>6} {t.kept:>6} {t.retention:>10.1%}")
        o = self.overall
        rows.append(f"{'overall':<10} {o.total:>6} {o.kept:>6} {o.retention:>10.1%}")
        return "\n".join(rows)


def filter_samples(
    samples: list[AugmentedSample],
    gateway: Gateway,
    schema: LabelSchema | None = None,
) -> tuple[list[AugmentedSample], list[tuple[AugmentedSample, str]], FilterReport]:
    """Returns (kept, [(dropped sample, verdict)], report); order preserved."""
    schema = schema or gateway.schema
    report = FilterReport()
    kept: list[AugmentedSample] = []
    dropped: list[tuple[AugmentedSample, str]] = []

    # Samples without entities are trivially consistent; only the rest are
    # queued. Batch ids need to be unique only within this call.
    verdicts: list[str] = [KEPT] * len(samples)
    queued: list[tuple[int, TypeScoreRequest]] = []
    for i, sample in enumerate(samples):
        report.tally(sample.strategy).total += 1
        if sample.sentence.spans:
            queued.append((i, make_word2type_query(sample, schema, request_id=f"q{i}")))

    results = gateway.score_batch([q for _, q in queued])
    for (i, query), result in zip(queued, results):
        if isinstance(result, GatewayError):
            verdicts[i] = DROPPED_UNPARSEABLE
            log.debug("unparseable %s: %s", samples[i].sample_id, result)
        elif list(result.display_names) == list(query.reference_types):
            verdicts[i] = KEPT
        else:
            verdicts[i] = DROPPED_MISMATCH
            log.debug("mismatch %s: %s != %s", samples[i].sample_id,
                      result.display_names, query.reference_types)

    for sample, verdict in zip(samples, verdicts):
        tally = report.tally(sample.strategy)
        if verdict == KEPT:
            tally.kept += 1
            kept.append(sample)
        else:
            if verdict == DROPPED_MISMATCH:
                tally.dropped_mismatch += 1
            else:
                tally.dropped_unparseable += 1
            dropped.append((sample, verdict))
    return kept, dropped, report
