"""Identifier-based matching and FP-aware error metrics.

Predictions are paired with ground truth through the ``gt_id`` they
inherit from their source detections. Per object only the closest
prediction counts as a true positive; the others are false positives
and still contribute their error, so ATE/AOE/ADE average over TP + FP.
The ``sota_*`` variants average over true positives only.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .geometry import BEVBox, angular_distance, center_distance
from .noise import GTObject

log = logging.getLogger(__name__)


class Prediction(Protocol):
    box: BEVBox
    gt_id: int
    class_label: str


@dataclass
class MatchOutcome:
    tp: list[tuple[Prediction, GTObject]] = field(default_factory=list)
    fp: list[tuple[Prediction, GTObject | None]] = field(default_factory=list)
    fn: list[GTObject] = field(default_factory=list)
    unknown_ids: int = 0


@dataclass(frozen=True)
class FrameMetrics:
    ate: float
    aoe: float  # rad
    ade: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    sota_ate: float | None = None
    sota_aoe: float | None = None
    sota_ade: float | None = None
    t: int = 0


def _box_key(b: BEVBox) -> tuple:
    return (b.x, b.y, b.w, b.d, b.theta)


def _nearest(pred: Prediction, gts: Sequence[GTObject]) -> GTObject | None:
    if not gts:
        return None
    return min(gts, key=lambda g: (center_distance(pred.box, g.box), g.gt_id))


def match_by_id(preds: Iterable[Prediction], gts: Iterable[GTObject],
                fp_reference: str = "lineage") -> MatchOutcome:
    """Pair predictions with ground truth by lineage id.

    ``fp_reference`` picks what a false positive's error is measured
    against: its own lineage object (``"lineage"``) or the nearest
    ground truth (``"nearest"``).
    """
    if fp_reference not in ("lineage", "nearest"):
        raise ValueError(f"fp_reference must be 'lineage' or 'nearest', got {fp_reference!r}")
    gts = sorted(gts, key=lambda g: g.gt_id)
    gt_map = {g.gt_id: g for g in gts}
    by_id: dict[int, list[Prediction]] = {}
    out = MatchOutcome()
    for p in preds:
        if p.gt_id in gt_map:
            by_id.setdefault(p.gt_id, []).append(p)
        else:
            out.unknown_ids += 1
            out.fp.append((p, _nearest(p, gts)))
    if out.unknown_ids:
        log.debug("%d predictions carry unknown gt ids", out.unknown_ids)
    for gid in sorted(by_id):
        gt = gt_map[gid]
        ranked = sorted(by_id[gid], key=lambda p: (center_distance(p.box, gt.box), _box_key(p.box)))
        out.tp.append((ranked[0], gt))
        for p in ranked[1:]:
            ref = gt if fp_reference == "lineage" else _nearest(p, gts)
            out.fp.append((p, ref))
    out.fp.sort(key=lambda pg: (pg[0].gt_id, _box_key(pg[0].box)))
    out.fn = [g for g in gts if g.gt_id not in by_id]
    return out


def _errors(pairs: Sequence[tuple[Prediction, GTObject | None]]) -> np.ndarray:
    rows = [(center_distance(p.box, g.box),
             angular_distance(p.box.theta, g.box.theta),
             math.hypot(p.box.w - g.box.w, p.box.d - g.box.d))
            for p, g in pairs if g is not None]
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _mean_errors(pairs) -> tuple[float, float, float] | None:
    e = _errors(pairs)
    if len(e) == 0:
        return None
    m = e.mean(axis=0)
    return float(m[0]), float(m[1]), float(m[2])


def fp_aware_errors(outcome: MatchOutcome) -> tuple[float, float, float]:
    """(ATE, AOE, ADE) over TP + FP; zeros when there are no predictions."""
    return _mean_errors(outcome.tp + outcome.fp) or (0.0, 0.0, 0.0)


def ate_frame(outcome: MatchOutcome) -> float:
    return fp_aware_errors(outcome)[0]


def aoe_frame(outcome: MatchOutcome) -> float:
    return fp_aware_errors(outcome)[1]


def ade_frame(outcome: MatchOutcome) -> float:
    return fp_aware_errors(outcome)[2]


def sota_metrics(outcome: MatchOutcome) -> tuple[float, float, float] | None:
    """TP-only (ATE, AOE, ADE), or ``None`` without true positives."""
    return _mean_errors(outcome.tp)


def precision_recall(outcome: MatchOutcome) -> tuple[float, float]:
    tp, fp, fn = len(outcome.tp), len(outcome.fp), len(outcome.fn)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def evaluate_frame(preds: Iterable[Prediction], gts: Iterable[GTObject], t: int = 0,
                   fp_reference: str = "lineage") -> FrameMetrics:
    outcome = match_by_id(preds, gts, fp_reference)
    ate, aoe, ade = fp_aware_errors(outcome)
    precision, recall = precision_recall(outcome)
    sota = sota_metrics(outcome) or (None, None, None)
    return FrameMetrics(ate, aoe, ade, len(outcome.tp), len(outcome.fp), len(outcome.fn),
                        precision, recall, *sota, t=t)


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float

    def __format__(self, spec: str) -> str:
        spec = spec or ".2f"
        return f"{self.mean:{spec}} ± {self.std:{spec}}"


@dataclass(frozen=True)
class RunSummary:
    m_ate: Stat
    m_aoe: Stat  # rad
    m_ade: Stat
    precision: Stat
    recall: Stat
    sota_ate: Stat | None
    sota_aoe: Stat | None
    sota_ade: Stat | None
    n_trials: int
    trial_m_ate: tuple[float, ...] = ()
    trial_m_aoe: tuple[float, ...] = ()
    trial_m_ade: tuple[float, ...] = ()


def _stat(values: Sequence[float]) -> Stat:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return Stat(float(arr.mean()), std)


def _frame_mean(frames: Sequence[FrameMetrics], attr: str) -> float | None:
    vals = [getattr(f, attr) for f in frames if getattr(f, attr) is not None]
    return float(np.mean(vals)) if vals else None


def trial_means(frames: Sequence[FrameMetrics]) -> dict[str, float | None]:
    """Frame-averaged metrics of one trial; precision/recall pool the counts."""
    if not frames:
        raise ValueError("a trial needs at least one frame")
    tp = sum(f.tp for f in frames)
    fp = sum(f.fp for f in frames)
    fn = sum(f.fn for f in frames)
    out = {k: _frame_mean(frames, k) for k in
           ("ate", "aoe", "ade", "sota_ate", "sota_aoe", "sota_ade")}
    out["precision"] = tp / (tp + fp) if tp + fp else 1.0
    out["recall"] = tp / (tp + fn) if tp + fn else 1.0
    return out


def aggregate(run_frames: Sequence[Sequence[FrameMetrics]]) -> RunSummary:
    """Across-trial mean and sample std of per-trial frame means."""
    if not run_frames:
        raise ValueError("aggregate needs at least one trial")
    trials = [trial_means(frames) for frames in run_frames]

    def col(k):
        return [t[k] for t in trials]

    def opt(k):
        vals = [v for v in col(k) if v is not None]
        return _stat(vals) if vals else None

    return RunSummary(
        m_ate=_stat(col("ate")), m_aoe=_stat(col("aoe")), m_ade=_stat(col("ade")),
        precision=_stat(col("precision")), recall=_stat(col("recall")),
        sota_ate=opt("sota_ate"), sota_aoe=opt("sota_aoe"), sota_ade=opt("sota_ade"),
        n_trials=len(trials),
        trial_m_ate=tuple(col("ate")), trial_m_aoe=tuple(col("aoe")), trial_m_ade=tuple(col("ade")),
    )
