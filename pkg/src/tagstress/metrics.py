"""Figures of merit: per-tag precision/recall/F, macro and micro averages,
and the MIREX-style cross-fold aggregates."""

from __future__ import annotations

from dataclasses import dataclass, field

from .labels import LABELS, Label


class ShapeError(ValueError):
    """Predictions and truths have different lengths."""


@dataclass(frozen=True)
class TagCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ConfusionCounts:
    """One-vs-rest counts per tag over an aligned prediction/truth pair."""

    per_tag: dict[Label, TagCounts]

    def pooled(self) -> TagCounts:
        return TagCounts(tp=sum(c.tp for c in self.per_tag.values()),
                         fp=sum(c.fp for c in self.per_tag.values()),
                         tn=sum(c.tn for c in self.per_tag.values()),
                         fn=sum(c.fn for c in self.per_tag.values()))


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    # Zero denominators define the value as 0 so deflated systems that stop
    # predicting a tag keep a well-defined FoM.
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass(frozen=True)
class FomReport:
    """Per-tag and averaged figures of merit.

    macro values are arithmetic means over tags; micro values come from
    pooled counts; mean_per_tag_f (the scalar FoM the validity runs drive)
    equals macro_f.
    """

    per_tag: dict[Label, tuple[float, float, float]]
    macro_p: float
    macro_r: float
    macro_f: float
    micro_p: float
    micro_r: float
    micro_f: float

    @property
    def mean_per_tag_f(self) -> float:
        return self.macro_f

    def as_items(self):
        for tag, (p, r, f) in self.per_tag.items():
            yield ("precision_%s" % tag, p)
            yield ("recall_%s" % tag, r)
            yield ("f_%s" % tag, f)
        yield ("macro_precision", self.macro_p)
        yield ("macro_recall", self.macro_r)
        yield ("macro_f", self.macro_f)
        yield ("micro_precision", self.micro_p)
        yield ("micro_recall", self.micro_r)
        yield ("micro_f", self.micro_f)
        yield ("mean_per_tag_f", self.mean_per_tag_f)


def confusion(predictions, truths) -> ConfusionCounts:
    """Count tp/fp/tn/fn per tag, treating each tag one-vs-rest."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise ShapeError("got %d predictions for %d truths"
                         % (len(predictions), len(truths)))
    per_tag = {}
    for tag in LABELS:
        tp = fp = tn = fn = 0
        for pred, truth in zip(predictions, truths):
            if truth == tag:
                if pred == tag:
                    tp += 1
                else:
                    fn += 1
            else:
                if pred == tag:
                    fp += 1
                else:
                    tn += 1
        per_tag[tag] = TagCounts(tp=tp, fp=fp, tn=tn, fn=fn)
    return ConfusionCounts(per_tag=per_tag)


def fom(counts: ConfusionCounts) -> FomReport:
    per_tag = {}
    for tag, c in counts.per_tag.items():
        per_tag[tag] = _prf(c.tp, c.fp, c.fn)
    n_tags = len(per_tag)
    macro_p = sum(v[0] for v in per_tag.values()) / n_tags
    macro_r = sum(v[1] for v in per_tag.values()) / n_tags
    macro_f = sum(v[2] for v in per_tag.values()) / n_tags
    pooled = counts.pooled()
    micro_p, micro_r, micro_f = _prf(pooled.tp, pooled.fp, pooled.fn)
    return FomReport(per_tag=per_tag, macro_p=macro_p, macro_r=macro_r,
                     macro_f=macro_f, micro_p=micro_p, micro_r=micro_r,
                     micro_f=micro_f)


@dataclass(frozen=True)
class CrossFoldAggregate:
    """MIREX-style aggregates over folds: Average Tag Recall is the mean of
    the per-fold micro recalls, precision likewise, and Average Tag
    F-Measure is the mean of the per-fold harmonic means of those."""

    average_tag_precision: float
    average_tag_recall: float
    average_tag_f: float
    n_folds: int


def mirex_cross_fold(fold_reports) -> CrossFoldAggregate:
    reports = list(fold_reports)
    if not reports:
        raise ValueError("need at least one fold report")
    precisions = [r.micro_p for r in reports]
    recalls = [r.micro_r for r in reports]
    harmonics = [2.0 * p * r / (p + r) if p + r else 0.0
                 for p, r in zip(precisions, recalls)]
    k = len(reports)
    return CrossFoldAggregate(average_tag_precision=sum(precisions) / k,
                              average_tag_recall=sum(recalls) / k,
                              average_tag_f=sum(harmonics) / k,
                              n_folds=k)
