"""Reference late-fusion methods.

Suppression methods (NMS-STD, NMS-GIoU, PSA) keep one member of each
overlap cluster; WBF and the distance-based methods average; WLS is the
inverse-variance combination used after CSBA grouping.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .association import CSBAParams, dist_associate, group_by_object
from .geometry import BEVBox, giou_bev, iou_bev, wrap_angle
from .noise import Detection, lineage


@dataclass(frozen=True)
class ScoredDetection:
    det: Detection
    score: float

    def __post_init__(self):
        if not (0.0 < self.score <= 1.0):
            raise ValueError(f"score must lie in (0, 1], got {self.score}")


def certainty_score(det: Detection) -> float:
    """Ranking score for noisy ground truth: tighter position noise ranks higher."""
    return 1.0 / (1.0 + det.sigma[0] + det.sigma[1])


def scored(dets: Sequence[Detection],
           score_fn: Callable[[Detection], float] = certainty_score) -> list[ScoredDetection]:
    return [ScoredDetection(d, score_fn(d)) for d in dets]


def _rank(dets: Sequence[ScoredDetection]) -> list[ScoredDetection]:
    return sorted(dets, key=lambda s: (-s.score, s.det.source, s.det.t_meas))


def _per_class(fn):
    def wrapped(dets, *args, **kwargs):
        by_cls = defaultdict(list)
        for sd in dets:
            by_cls[sd.det.class_label].append(sd)
        out = []
        for cls in sorted(by_cls):
            out.extend(fn(by_cls[cls], *args, **kwargs))
        return out
    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


def _greedy_suppress(dets, overlap, threshold):
    keep = []
    for cand in _rank(dets):
        if all(overlap(k.det.box, cand.det.box) < threshold for k in keep):
            keep.append(cand)
    return keep


@_per_class
def nms_std(dets: Sequence[ScoredDetection], iou_th: float,
            rotated: bool = True) -> list[ScoredDetection]:
    """Greedy IoU suppression; survivors are returned unmodified."""
    return _greedy_suppress(dets, lambda a, b: iou_bev(a, b, rotated=rotated), iou_th)


@_per_class
def nms_giou(dets: Sequence[ScoredDetection], giou_th: float) -> list[ScoredDetection]:
    return _greedy_suppress(dets, giou_bev, giou_th)


def circular_mean(thetas: Sequence[float], weights: Sequence[float]) -> float:
    s = sum(w * math.sin(t) for t, w in zip(thetas, weights))
    c = sum(w * math.cos(t) for t, w in zip(thetas, weights))
    if s == 0.0 and c == 0.0:
        return wrap_angle(thetas[0])
    return math.atan2(s, c)


def weighted_box(members: Sequence[Detection], weights: Sequence[float]) -> BEVBox:
    wsum = float(sum(weights))
    arr = np.array([[d.box.x, d.box.y, d.box.w, d.box.d] for d in members])
    x, y, w, d = (np.asarray(weights) @ arr) / wsum
    return BEVBox(float(x), float(y), float(w), float(d),
                  circular_mean([m.box.theta for m in members], weights))


def _merged(members: Sequence[Detection], box: BEVBox) -> Detection:
    gt_id, flagged = lineage([m.gt_id for m in members])
    first = members[0]
    return replace(first, box=box, gt_id=gt_id, flagged=flagged,
                   t_recv=max(m.t_recv for m in members))


@_per_class
def wbf(dets: Sequence[ScoredDetection], iou_th: float,
        rotated: bool = True) -> list[ScoredDetection]:
    """Weighted box fusion: clusters grow against their running fused box."""
    clusters: list[list[ScoredDetection]] = []
    fused: list[BEVBox] = []
    for cand in _rank(dets):
        best, best_iou = None, -1.0
        for k, fb in enumerate(fused):
            v = iou_bev(fb, cand.det.box, rotated=rotated)
            if v >= iou_th and v > best_iou:
                best, best_iou = k, v
        if best is None:
            clusters.append([cand])
            fused.append(cand.det.box)
        else:
            clusters[best].append(cand)
            fused[best] = weighted_box([m.det for m in clusters[best]],
                                       [m.score for m in clusters[best]])
    out = []
    for members, box in zip(clusters, fused):
        score = float(np.mean([m.score for m in members]))
        out.append(ScoredDetection(_merged([m.det for m in members], box), score))
    return out


@_per_class
def psa(dets: Sequence[ScoredDetection], iou_th: float, boost: float = 0.1,
        rotated: bool = True) -> list[ScoredDetection]:
    """Promote the best member of each overlap cluster, suppress the rest.

    The promoted score grows by ``boost`` per supporter, capped at 1.
    """
    remaining = _rank(dets)
    out = []
    while remaining:
        head, rest = remaining[0], remaining[1:]
        support = [r for r in rest if iou_bev(head.det.box, r.det.box, rotated=rotated) >= iou_th]
        taken = {id(r) for r in support}
        remaining = [r for r in rest if id(r) not in taken]
        gt_id, flagged = lineage([head.det.gt_id] + [s.det.gt_id for s in support])
        promoted = replace(head.det, gt_id=gt_id, flagged=flagged)
        out.append(ScoredDetection(promoted, min(1.0, head.score + boost * len(support))))
    return out


def mean_pair(a: Detection, b: Detection) -> Detection:
    box = BEVBox(0.5 * (a.box.x + b.box.x), 0.5 * (a.box.y + b.box.y),
                 0.5 * (a.box.w + b.box.w), 0.5 * (a.box.d + b.box.d),
                 circular_mean([a.box.theta, b.box.theta], [1.0, 1.0]))
    return _merged([a, b], box)


def distance_late(a: Sequence[Detection], b: Sequence[Detection],
                  dist_th: float = 3.0) -> list[Detection]:
    """Distance-gated pairing and plain averaging; leftovers pass through."""
    res = dist_associate(a, b, dist_th)
    out = [mean_pair(a[i], b[j]) for i, j, _ in res.pairs]
    out.extend(a[i] for i in res.unmatched_a)
    out.extend(b[j] for j in res.unmatched_b)
    return out


def inverse_variance_mean(values: Sequence[float],
                          variances: Sequence[float]) -> tuple[float, float]:
    """Inverse-variance weighted mean and its variance.

    Zero-variance members are exact: they alone set the result.
    """
    values = np.asarray(values, dtype=float)
    variances = np.asarray(variances, dtype=float)
    exact = variances == 0.0
    if exact.any():
        return float(values[exact].mean()), 0.0
    info = 1.0 / variances
    total = info.sum()
    return float(info @ values / total), float(1.0 / total)


def wls_fuse(group: Sequence[Detection]) -> tuple[np.ndarray, np.ndarray]:
    """Per-component WLS fusion of ``[x, y, w, d, theta]`` and fused variances."""
    if not group:
        raise ValueError("wls_fuse needs at least one detection")
    z = np.array([d.box.as_array() for d in group])
    var = np.array([[s[0] ** 2, s[1] ** 2, s[3] ** 2, s[4] ** 2, s[2] ** 2]
                    for s in (d.sigma for d in group)])
    fused, fused_var = np.empty(5), np.empty(5)
    for c in range(4):
        fused[c], fused_var[c] = inverse_variance_mean(z[:, c], var[:, c])
    ref = z[0, 4]
    resid = [wrap_angle(t - ref) for t in z[:, 4]]
    r, fused_var[4] = inverse_variance_mean(resid, var[:, 4])
    fused[4] = wrap_angle(ref + r)
    return fused, fused_var


def wls_detection(group: Sequence[Detection]) -> Detection:
    z, var = wls_fuse(group)
    box = BEVBox(*(float(v) for v in z))
    merged = _merged(group, box)
    sig = np.sqrt(var)
    return replace(merged, sigma=(float(sig[0]), float(sig[1]), float(sig[4]),
                                  float(sig[2]), float(sig[3])))


def sliding_window_sync(streams: Sequence[Sequence[Detection]],
                        window: int = 100_000) -> list[list[Detection]]:
    """Bucket detections from all streams into consecutive windows on t_meas.

    Windows are anchored at the earliest measurement time; empty windows
    are omitted.
    """
    dets = [d for s in streams for d in s]
    if not dets:
        return []
    if window <= 0:
        raise ValueError("window must be positive")
    t0 = min(d.t_meas for d in dets)
    ticks: dict[int, list[Detection]] = defaultdict(list)
    for d in sorted(dets, key=lambda d: (d.t_recv, d.source, d.t_meas)):
        ticks[(d.t_meas - t0) // window].append(d)
    return [ticks[k] for k in sorted(ticks)]


def run_wls(per_source: Sequence[Sequence[Detection]],
            csba: CSBAParams = CSBAParams()) -> list[Detection]:
    """CSBA grouping across sources followed by WLS fusion of each group."""
    return [wls_detection(g) for g in group_by_object(per_source, csba)]
