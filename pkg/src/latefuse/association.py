"""Cross-source data association.

``csba_associate`` scores candidate pairs on center, size and yaw
agreement, with the center term normalised by both detections' position
uncertainty, and solves the optimal one-to-one assignment.
``iou_associate`` and ``dist_associate`` are the fixed-threshold matchers
used by the baselines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import angular_distance, center_distance, iou_bev
from .noise import Detection


@dataclass(frozen=True)
class CSBAParams:
    w_center: float = 0.5
    w_dim: float = 0.3
    w_orient: float = 0.2
    scale_dim: float = 1.0  # m
    scale_theta: float = 0.5  # rad
    gate: float = 0.1
    # chi-square(2) 99.9% quantile; without it size and yaw agreement alone
    # can carry a pair between objects tens of meters apart
    center_gate: float = 13.815510557964274

    def __post_init__(self):
        if min(self.w_center, self.w_dim, self.w_orient) < 0:
            raise ValueError("CSBA weights must be non-negative")
        if self.scale_dim <= 0 or self.scale_theta <= 0:
            raise ValueError("CSBA scales must be positive")
        if not 0.0 <= self.gate <= 1.0 or self.center_gate <= 0:
            raise ValueError("need gate in [0, 1] and a positive center_gate")


@dataclass
class AssociationResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_a: list[int] = field(default_factory=list)
    unmatched_b: list[int] = field(default_factory=list)

    def check_partition(self, n_a: int, n_b: int) -> bool:
        a = [i for i, _, _ in self.pairs] + self.unmatched_a
        b = [j for _, j, _ in self.pairs] + self.unmatched_b
        return sorted(a) == list(range(n_a)) and sorted(b) == list(range(n_b))


def center_mahalanobis_sq(a: Detection, b: Detection) -> float:
    """Squared center distance under the summed diagonal position covariances."""
    var_x = a.sigma[0] ** 2 + b.sigma[0] ** 2
    var_y = a.sigma[1] ** 2 + b.sigma[1] ** 2
    return _scaled_sq(a.box.x - b.box.x, var_x) + _scaled_sq(a.box.y - b.box.y, var_y)


def csba_score(a: Detection, b: Detection, params: CSBAParams = CSBAParams()) -> float:
    m2 = center_mahalanobis_sq(a, b)
    if not math.isfinite(m2):
        # both sources claim certainty yet disagree: incompatible
        return 0.0
    s_center = math.exp(-0.5 * m2)
    s_dim = math.exp(-math.hypot(a.box.w - b.box.w, a.box.d - b.box.d) / params.scale_dim)
    s_orient = math.exp(-angular_distance(a.box.theta, b.box.theta) / params.scale_theta)
    return params.w_center * s_center + params.w_dim * s_dim + params.w_orient * s_orient


def _scaled_sq(delta: float, var: float) -> float:
    if var > 0.0:
        return delta * delta / var
    return 0.0 if delta == 0.0 else math.inf


def _solve(score: np.ndarray, keep: Callable[[float], bool], maximize: bool) -> AssociationResult:
    n_a, n_b = score.shape
    result = AssociationResult()
    if n_a and n_b:
        rows, cols = linear_sum_assignment(score, maximize=maximize)
        for i, j in zip(rows, cols):
            if keep(score[i, j]):
                result.pairs.append((int(i), int(j), float(score[i, j])))
    matched_a = {i for i, _, _ in result.pairs}
    matched_b = {j for _, j, _ in result.pairs}
    result.unmatched_a = [i for i in range(n_a) if i not in matched_a]
    result.unmatched_b = [j for j in range(n_b) if j not in matched_b]
    return result


def score_matrix(a: Sequence[Detection], b: Sequence[Detection],
                 params: CSBAParams = CSBAParams()) -> np.ndarray:
    """Pairwise CSBA scores; cross-class and center-gated pairs score 0."""
    s = np.zeros((len(a), len(b)))
    for i, da in enumerate(a):
        for j, db in enumerate(b):
            if (da.class_label == db.class_label
                    and center_mahalanobis_sq(da, db) <= params.center_gate):
                s[i, j] = csba_score(da, db, params)
    return s


def csba_associate(a: Sequence[Detection], b: Sequence[Detection],
                   params: CSBAParams = CSBAParams()) -> AssociationResult:
    """Maximum-total-score assignment; pairs below ``params.gate`` are dropped."""
    s = score_matrix(a, b, params)
    # minimising 1 - s is the same assignment as maximising s
    return _solve(s, lambda v: v >= params.gate and v > 0.0, maximize=True)


def iou_associate(a: Sequence[Detection], b: Sequence[Detection], threshold: float,
                  rotated: bool = True) -> AssociationResult:
    """Greedy matching in descending IoU order."""
    cands = []
    for i, da in enumerate(a):
        for j, db in enumerate(b):
            if da.class_label != db.class_label:
                continue
            v = iou_bev(da.box, db.box, rotated=rotated)
            if v >= threshold and v > 0.0:
                cands.append((-v, i, j))
    cands.sort()
    result = AssociationResult()
    used_a, used_b = set(), set()
    for neg, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        result.pairs.append((i, j, -neg))
    result.unmatched_a = [i for i in range(len(a)) if i not in used_a]
    result.unmatched_b = [j for j in range(len(b)) if j not in used_b]
    return result


def dist_associate(a: Sequence[Detection], b: Sequence[Detection],
                   threshold: float) -> AssociationResult:
    """Minimum total center distance assignment, pairs beyond ``threshold`` dropped."""
    big = 1e9
    cost = np.full((len(a), len(b)), big)
    for i, da in enumerate(a):
        for j, db in enumerate(b):
            if da.class_label == db.class_label:
                dist = center_distance(da.box, db.box)
                # out-of-gate pairs must not steer the assignment
                if dist <= threshold:
                    cost[i, j] = dist
    return _solve(cost, lambda v: v <= threshold, maximize=False)


def group_by_object(frames: Sequence[Sequence[Detection]],
                    csba: CSBAParams = CSBAParams()) -> list[list[Detection]]:
    """Chain CSBA over several sources' synchronous detection lists.

    The first list seeds the groups; each later list is associated
    against the groups' first members, per class.
    """
    groups: list[list[Detection]] = []
    for dets in frames:
        if not groups:
            groups = [[d] for d in dets]
            continue
        for cls in sorted({d.class_label for d in dets}):
            open_groups = [g for g in groups if g[0].class_label == cls]
            cand = [d for d in dets if d.class_label == cls]
            res = csba_associate([g[0] for g in open_groups], cand, csba)
            for i, j, _ in res.pairs:
                open_groups[i].append(cand[j])
            groups.extend([cand[j]] for j in res.unmatched_b)
    return groups
