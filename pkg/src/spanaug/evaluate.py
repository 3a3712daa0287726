"""Span-level micro-averaged precision/recall/F1."""
from __future__ import annotations

from dataclasses import dataclass

from .corpus import Dataset
from .errors import IdMismatchError


@dataclass(frozen=True)
class F1Score:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


def micro_f1(gold: Dataset, predicted: Dataset) -> F1Score:
    """Exact-match span scoring over (start, end, type) triples.

    Sentences are aligned by id; differing id sets raise
    :class:`IdMismatchError`. Zero denominators score 0.0, never NaN.
    """
    gold_by_id = {s.sentence_id: s for s in gold.sentences}
    pred_by_id = {s.sentence_id: s for s in predicted.sentences}
    if gold_by_id.keys() != pred_by_id.keys():
        missing = sorted(gold_by_id.keys() ^ pred_by_id.keys())[:5]
        raise IdMismatchError(f"gold/predicted sentence ids differ, e.g. {missing}")

    tp = fp = fn = 0
    for sid, g in gold_by_id.items():
        gold_spans = {(sp.start, sp.end, sp.type_id) for sp in g.spans}
        pred_spans = {(sp.start, sp.end, sp.type_id) for sp in pred_by_id[sid].spans}
        tp += len(gold_spans & pred_spans)
        fp += len(pred_spans - gold_spans)
        fn += len(gold_spans - pred_spans)

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Score(precision, recall, f1, tp, fp, fn)
