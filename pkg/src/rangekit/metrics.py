"""Semantic (IoU) and panoptic (PQ / SQ / RQ) evaluation.

Panoptic sums are accumulated as exact fractions so that per-class
``PQ == SQ * RQ`` holds to the last bit and hand-checked values come out exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .types import ClassTaxonomy

MATCH_IOU = Fraction(1, 2)


class ConfusionMatrix:
    """Mergeable ``d_cls x d_cls`` counts indexed ``[pred, gt]``; ignore-gt points skipped."""

    def __init__(self, num_classes: int, ignore: int = 0):
        self.num_classes = num_classes
        self.ignore = ignore
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, gt) -> "ConfusionMatrix":
        pred = np.asarray(pred, dtype=np.int64).reshape(-1)
        gt = np.asarray(gt, dtype=np.int64).reshape(-1)
        if len(pred) != len(gt):
            raise ValueError(f"prediction length {len(pred)} != ground truth length {len(gt)}")
        for name, ids in (("prediction", pred), ("ground truth", gt)):
            if len(ids) and (ids.min() < 0 or ids.max() >= self.num_classes):
                raise ValueError(f"{name} id outside [0, {self.num_classes})")
        keep = gt != self.ignore
        flat = pred[keep] * self.num_classes + gt[keep]
        self.counts += np.bincount(flat, minlength=self.num_classes ** 2).reshape(
            self.num_classes, self.num_classes
        )
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes, self.ignore)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def stats(self):
        tp = np.diag(self.counts)
        fp = self.counts.sum(axis=1) - tp
        fn = self.counts.sum(axis=0) - tp
        return tp, fp, fn


def confusion_update(cm: ConfusionMatrix, pred, gt) -> ConfusionMatrix:
    return cm.update(pred, gt)


def miou(cm: ConfusionMatrix):
    """Per-class IoU (NaN where TP + FP + FN = 0, and for the ignore class) and their mean."""
    tp, fp, fn = cm.stats()
    denom = tp + fp + fn
    iou = np.full(cm.num_classes, np.nan)
    ok = denom > 0
    iou[ok] = tp[ok] / denom[ok]
    iou[cm.ignore] = np.nan
    defined = iou[~np.isnan(iou)]
    mean = float(defined.mean()) if len(defined) else float("nan")
    return iou, mean


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: Fraction = field(default_factory=Fraction)

    def add(self, other: "ClassCounts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.iou_sum += other.iou_sum

    @property
    def present(self) -> bool:
        return self.tp + self.fp + self.fn > 0

    def quality(self):
        """Exact (PQ, SQ, RQ) as fractions."""
        if not self.present:
            return Fraction(0), Fraction(0), Fraction(0)
        denom = Fraction(self.tp) + Fraction(self.fp + self.fn, 2)
        sq = self.iou_sum / self.tp if self.tp else Fraction(0)
        rq = Fraction(self.tp) / denom
        return self.iou_sum / denom, sq, rq


def _segments(sem: np.ndarray, inst: np.ndarray, cls: int, is_thing: bool, keep: np.ndarray):
    """Segment id per point of class ``cls`` (-1 elsewhere) and the ordered segment keys."""
    mask = (sem == cls) & keep
    if not is_thing:
        seg = np.where(mask, 0, -1)
        return seg, ([0] if mask.any() else [])
    keys, inverse = np.unique(inst[mask], return_inverse=True)
    seg = np.full(len(sem), -1, dtype=np.int64)
    seg[mask] = inverse
    return seg, list(keys)


def match_segments(gt_seg: np.ndarray, pred_seg: np.ndarray, n_gt: int, n_pred: int,
                   void: np.ndarray):
    """Match one class's segments by IoU > 1/2.

    Returns ``(matches, pred_void_fraction)`` where ``matches`` maps
    ``(gt, pred) -> IoU``. Void points count toward a predicted segment's size
    only to decide whether an unmatched prediction is excused.
    """
    valid = ~void
    gt_sizes = np.bincount(gt_seg[gt_seg >= 0], minlength=n_gt)
    pred_all = np.bincount(pred_seg[pred_seg >= 0], minlength=n_pred)
    pv = pred_seg[valid]
    pred_sizes = np.bincount(pv[pv >= 0], minlength=n_pred)
    both = (gt_seg >= 0) & (pred_seg >= 0)
    pairs, inter = np.unique(gt_seg[both] * max(n_pred, 1) + pred_seg[both], return_counts=True)
    matches = {}
    for key, i in zip(pairs, inter):
        g, p = divmod(int(key), max(n_pred, 1))
        union = int(gt_sizes[g]) + int(pred_sizes[p]) - int(i)
        iou = Fraction(int(i), union)
        if iou > MATCH_IOU:
            matches[(g, p)] = iou
    void_in_pred = pred_all - pred_sizes
    with np.errstate(invalid="ignore", divide="ignore"):
        void_frac = np.where(pred_all > 0, void_in_pred / np.maximum(pred_all, 1), 0.0)
    return matches, void_frac


class PanopticEvaluator:
    """Accumulates per-class TP / FP / FN / IoU sums and a semantic confusion matrix."""

    def __init__(self, taxonomy: ClassTaxonomy):
        self.taxonomy = taxonomy
        self.classes = {c: ClassCounts() for c in taxonomy.evaluated}
        self.confusion = ConfusionMatrix(taxonomy.num_classes, taxonomy.ignore)

    def add_scan(self, pred_sem, pred_inst, gt_sem, gt_inst) -> "PanopticEvaluator":
        pred_sem, pred_inst, gt_sem, gt_inst = (
            np.asarray(a, dtype=np.int64).reshape(-1) for a in (pred_sem, pred_inst, gt_sem, gt_inst)
        )
        n = len(gt_sem)
        if not (len(pred_sem) == len(pred_inst) == len(gt_inst) == n):
            raise ValueError("panoptic arrays differ in length")
        self.confusion.update(pred_sem, gt_sem)
        void = gt_sem == self.taxonomy.ignore
        everywhere = np.ones(n, dtype=bool)
        for cls, acc in self.classes.items():
            thing = cls in self.taxonomy.things
            gt_seg, gt_keys = _segments(gt_sem, gt_inst, cls, thing, ~void)
            pred_seg, pred_keys = _segments(pred_sem, pred_inst, cls, thing, everywhere)
            if not gt_keys and not pred_keys:
                continue
            matches, void_frac = match_segments(gt_seg, pred_seg, len(gt_keys), len(pred_keys), void)
            matched_pred = {p for _, p in matches}
            unmatched_pred = [p for p in range(len(pred_keys)) if p not in matched_pred]
            acc.add(ClassCounts(
                tp=len(matches),
                fp=sum(1 for p in unmatched_pred if void_frac[p] <= 0.5),
                fn=len(gt_keys) - len(matches),
                iou_sum=sum(matches.values(), Fraction(0)),
            ))
        return self

    def merge(self, other: "PanopticEvaluator") -> "PanopticEvaluator":
        out = PanopticEvaluator(self.taxonomy)
        for c in out.classes:
            out.classes[c].add(self.classes[c])
            out.classes[c].add(other.classes[c])
        out.confusion = self.confusion.merge(other.confusion)
        return out

    def report(self) -> "PqReport":
        iou, _ = miou(self.confusion)
        per_class = {}
        for c, acc in self.classes.items():
            if not acc.present:
                continue
            pq, sq, rq = acc.quality()
            per_class[c] = ClassQuality(pq, sq, rq, float(iou[c]) if not np.isnan(iou[c]) else float("nan"))
        return PqReport.build(per_class, iou, self.taxonomy)


@dataclass(frozen=True)
class ClassQuality:
    pq_exact: Fraction
    sq_exact: Fraction
    rq_exact: Fraction
    iou: float

    @property
    def pq(self) -> float:
        return float(self.pq_exact)

    @property
    def sq(self) -> float:
        return float(self.sq_exact)

    @property
    def rq(self) -> float:
        return float(self.rq_exact)


def _mean(values) -> float:
    values = list(values)
    if not values:
        return float("nan")
    return float(sum(values, Fraction(0)) / len(values))


@dataclass(frozen=True)
class PqReport:
    per_class: dict
    class_iou: np.ndarray
    pq: float
    sq: float
    rq: float
    pq_things: float
    sq_things: float
    rq_things: float
    pq_stuff: float
    sq_stuff: float
    rq_stuff: float
    pq_dagger: float
    miou: float

    @classmethod
    def build(cls, per_class: dict, class_iou: np.ndarray, taxonomy: ClassTaxonomy) -> "PqReport":
        def split(classes, attr):
            return _mean(getattr(per_class[c], attr) for c in classes)

        everything = sorted(per_class)
        things = [c for c in everything if c in taxonomy.things]
        stuff = [c for c in everything if c in taxonomy.stuff]
        defined = class_iou[~np.isnan(class_iou)]
        return cls(
            per_class=per_class,
            class_iou=class_iou,
            pq=split(everything, "pq_exact"),
            sq=split(everything, "sq_exact"),
            rq=split(everything, "rq_exact"),
            pq_things=split(things, "pq_exact"),
            sq_things=split(things, "sq_exact"),
            rq_things=split(things, "rq_exact"),
            pq_stuff=split(stuff, "pq_exact"),
            sq_stuff=split(stuff, "sq_exact"),
            rq_stuff=split(stuff, "rq_exact"),
            pq_dagger=_pq_dagger(per_class, class_iou, taxonomy),
            miou=float(defined.mean()) if len(defined) else float("nan"),
        )

    def summary(self) -> dict:
        keys = ("pq", "pq_dagger", "sq", "rq", "pq_things", "sq_things", "rq_things",
                "pq_stuff", "sq_stuff", "rq_stuff", "miou")
        return {k: getattr(self, k) for k in keys}


def _pq_dagger(per_class: dict, class_iou: np.ndarray, taxonomy: ClassTaxonomy) -> float:
    values = []
    for c in sorted(per_class):
        if c in taxonomy.stuff:
            values.append(float(class_iou[c]) if not np.isnan(class_iou[c]) else 0.0)
        else:
            values.append(per_class[c].pq)
    return float(np.mean(values)) if values else float("nan")


def pq_dagger(report: PqReport, cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> float:
    """Mean over evaluated classes of PQ for things and semantic IoU for stuff."""
    iou, _ = miou(cm)
    return _pq_dagger(report.per_class, iou, taxonomy)


def panoptic_quality(pred_sem, pred_inst, gt_sem, gt_inst, taxonomy: ClassTaxonomy) -> PqReport:
    return PanopticEvaluator(taxonomy).add_scan(pred_sem, pred_inst, gt_sem, gt_inst).report()


def format_report(values: dict, prefix: str = "") -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = "nan" if np.isnan(value) else f"{value:.6f}"
        lines.append(f"{prefix}{key}={value}")
    return "\n".join(lines)
