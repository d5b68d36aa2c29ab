"""Pair-level and clause-level precision / recall / F1, and aggregation over splits."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(correct: int, proposed: int, annotated: int) -> float:
    # harmonic mean of P and R, as one correctly rounded division
    return _ratio(2 * correct, proposed + annotated)


@dataclass(frozen=True)
class PairMetrics:
    precision: float
    recall: float
    f1: float
    proposed: int
    correct: int
    annotated: int

    @classmethod
    def from_counts(cls, proposed: int, correct: int, annotated: int) -> "PairMetrics":
        return cls(_ratio(correct, proposed), _ratio(correct, annotated),
                   _f1(correct, proposed, annotated), proposed, correct, annotated)


@dataclass(frozen=True)
class ClauseMetrics:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


def pair_prf(predicted: Iterable[tuple], gold: Iterable[tuple]) -> PairMetrics:
    """Exact-match pair scores; elements are (doc_id, emotion_index, cause_index)."""
    predicted, gold = set(predicted), set(gold)
    return PairMetrics.from_counts(len(predicted), len(predicted & gold), len(gold))


def clause_prf(predicted: Sequence[int], gold: Sequence[int]) -> ClauseMetrics:
    if len(predicted) != len(gold):
        raise ValueError(f"length mismatch: {len(predicted)} predictions, {len(gold)} labels")
    tp = sum(1 for p, g in zip(predicted, gold) if p and g)
    fp = sum(1 for p, g in zip(predicted, gold) if p and not g)
    fn = sum(1 for p, g in zip(predicted, gold) if not p and g)
    return ClauseMetrics(_ratio(tp, tp + fp), _ratio(tp, tp + fn), _f1(tp, tp + fp, tp + fn), tp, fp, fn)


@dataclass(frozen=True)
class EvaluationReport:
    pair: PairMetrics
    emotion: ClauseMetrics
    cause: ClauseMetrics
    split: Optional[int] = None
    variant: Optional[str] = None
    subset: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "split": self.split,
            "subset": self.subset,
            "emotion": asdict(self.emotion),
            "cause": asdict(self.cause),
            "pair": asdict(self.pair),
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvaluationReport":
        return cls(PairMetrics(**d["pair"]), ClauseMetrics(**d["emotion"]), ClauseMetrics(**d["cause"]),
                   d.get("split"), d.get("variant"), d.get("subset"))


_TRIPLE = {
    "type": "object",
    "required": ["precision", "recall", "f1"],
    "properties": {k: {"type": "number", "minimum": 0, "maximum": 1} for k in ("precision", "recall", "f1")},
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["variant", "split", "emotion", "cause", "pair"],
    "properties": {
        "variant": {"type": ["string", "null"]},
        "split": {"type": ["integer", "null"]},
        "subset": {"type": ["string", "null"]},
        "emotion": _TRIPLE,
        "cause": _TRIPLE,
        "pair": {
            **_TRIPLE,
            "required": ["precision", "recall", "f1", "proposed", "correct", "annotated"],
        },
    },
}

_BLOCK_STATS = {
    "type": "object",
    "required": ["precision", "recall", "f1"],
    "properties": {
        k: {"type": "object", "required": ["mean", "std"]} for k in ("precision", "recall", "f1")
    },
}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["variant", "splits", "emotion", "cause", "pair", "per_split"],
    "properties": {
        "splits": {"type": "array", "items": {"type": "integer"}},
        "emotion": _BLOCK_STATS,
        "cause": _BLOCK_STATS,
        "pair": _BLOCK_STATS,
        "per_split": {"type": "array", "items": REPORT_SCHEMA},
    },
}


def _mean_std(values: list[float]) -> dict:
    return {
        "mean": statistics.fmean(values),
        "std": statistics.stdev(values) if len(values) > 1 else 0.0,
    }


def aggregate_splits(reports: Sequence[EvaluationReport], expected_splits: Optional[Iterable[int]] = None) -> dict:
    """Mean and sample standard deviation of each per-split metric.

    When ``expected_splits`` is given every id must be present exactly once.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    if expected_splits is not None:
        expected = list(expected_splits)
        have = [r.split for r in reports]
        missing = [k for k in expected if k not in have]
        if missing:
            raise ValueError(f"missing split reports: {missing}")
        if len(have) != len(set(have)) or set(have) - set(expected):
            raise ValueError(f"unexpected or duplicate split ids: {have}")
    variants = {r.variant for r in reports}
    summary = {
        "variant": variants.pop() if len(variants) == 1 else sorted(map(str, variants)),
        "splits": [r.split for r in reports],
    }
    for block in ("emotion", "cause", "pair"):
        summary[block] = {
            k: _mean_std([getattr(getattr(r, block), k) for r in reports])
            for k in ("precision", "recall", "f1")
        }
    summary["per_split"] = [r.to_json() for r in reports]
    return summary


def format_table(summary: dict) -> str:
    """Percent table with one row per variant and the three P/R/F1 blocks."""
    head = f"{'':10s}" + "".join(f"{b:^21s}" for b in ("Emotion", "Cause", "Pair"))
    sub = f"{'':10s}" + "".join(f"{c:>7s}" for c in ("P", "R", "F1") * 3)
    cells = []
    for block in ("emotion", "cause", "pair"):
        for k in ("precision", "recall", "f1"):
            cells.append(f"{100 * summary[block][k]['mean']:7.2f}")
    return "\n".join([head, sub, f"{str(summary['variant']):10s}" + "".join(cells)])
