"""Multi-source fusion with one Kalman track per physical object.

Detections are grouped across sources with CSBA, groups are matched to
existing tracks, and every member measurement is ingested in arrival
order so that late and early measurements take their proper path
through the filter.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .association import CSBAParams, center_mahalanobis_sq, csba_score, group_by_object
from .geometry import BEVBox
from .kalman import (D, TH, W, X, Y, Disposition, FilterParams, Measurement, TrackState,
                     fused_box, ingest, init_track)
from .noise import Detection, lineage


@dataclass(frozen=True)
class FusedObject:
    box: BEVBox
    gt_id: int
    class_label: str
    t: int
    velocity: tuple[float, float] = (0.0, 0.0)
    track_id: int = -1
    flagged: bool = False
    n_sources: int = 1


def _track_as_detection(track: TrackState, t: int, params: FilterParams) -> Detection:
    est = fused_box(track, at=t, params=params)
    P = est.P
    sig = tuple(math.sqrt(max(P[i, i], 0.0)) for i in (X, Y, TH, W, D))
    return Detection(est.box, "track", t, t, track.last_gt_id, track.class_label, sig)


@dataclass
class TrackTable:
    tracks: dict[int, TrackState]
    next_id: int = 0

    @classmethod
    def empty(cls) -> "TrackTable":
        return cls({}, 0)


def _match_groups(table: TrackTable, groups: list[list[Detection]],
                  params: FilterParams, csba: CSBAParams) -> dict[int, int]:
    """Group index -> track id, by CSBA against each track's prediction.

    Pairs failing the center gate are inadmissible, as in grouping.
    """
    out: dict[int, int] = {}
    by_class: dict[str, list[int]] = defaultdict(list)
    for gi, g in enumerate(groups):
        by_class[g[0].class_label].append(gi)
    for cls, gidx in sorted(by_class.items()):
        tids = [tid for tid, tr in sorted(table.tracks.items()) if tr.class_label == cls]
        if not tids:
            continue
        score = np.zeros((len(gidx), len(tids)))
        for a, gi in enumerate(gidx):
            rep = min(groups[gi], key=lambda d: d.sigma[0] ** 2 + d.sigma[1] ** 2)
            for b, tid in enumerate(tids):
                tr = table.tracks[tid]
                if abs(rep.t_meas - tr.t_filter) > params.delta_max:
                    continue
                pred = _track_as_detection(tr, rep.t_meas, params)
                if center_mahalanobis_sq(rep, pred) > csba.center_gate:
                    continue
                score[a, b] = csba_score(rep, pred, csba)
        rows, cols = linear_sum_assignment(score, maximize=True)
        for a, b in zip(rows, cols):
            if score[a, b] >= csba.gate and score[a, b] > 0.0:
                out[gidx[a]] = tids[b]
        # Second pass: a group left over because grouping split a true
        # cross-source pair may join a claimed track whose group shares
        # no source with it, since one sensor reports an object only once.
        left = [a for a in range(len(gidx)) if gidx[a] not in out]
        claimed = [b for b in range(len(tids)) if tids[b] in out.values()]
        if left and claimed:
            sources = {tid: set() for tid in tids}
            for gi in gidx:
                if gi in out:
                    sources[out[gi]] |= {d.source for d in groups[gi]}
            sub = np.zeros((len(left), len(claimed)))
            for r, a in enumerate(left):
                mine = {d.source for d in groups[gidx[a]]}
                for c, b in enumerate(claimed):
                    if not mine & sources[tids[b]]:
                        sub[r, c] = score[a, b]
            rows, cols = linear_sum_assignment(sub, maximize=True)
            for r, c in zip(rows, cols):
                if sub[r, c] >= csba.gate and sub[r, c] > 0.0:
                    out[gidx[left[r]]] = tids[claimed[c]]
    return out


def run_unikf_frame(table: TrackTable, groups: list[list[Detection]], now: int,
                    params: FilterParams = FilterParams(),
                    csba: CSBAParams = CSBAParams(),
                    dispositions: Counter | None = None) -> tuple[TrackTable, list[int]]:
    """Ingest grouped detections into the track table.

    Returns the table and the ids of tracks that accepted a measurement.
    Tracks silent for more than ``2 * delta_max`` before ``now`` retire.
    """
    if dispositions is None:
        dispositions = Counter()
    assignment = _match_groups(table, groups, params, csba)
    touched: list[int] = []
    for gi, group in enumerate(groups):
        members = sorted(group, key=lambda d: (d.t_recv, d.source, d.t_meas))
        tid = assignment.get(gi)
        if tid is None:
            tid = table.next_id
            table.next_id += 1
            table.tracks[tid] = init_track(members[0], params, track_id=tid)
            dispositions["initialized"] += 1
            members = members[1:]
            accepted = True
        else:
            accepted = False
        track = table.tracks[tid]
        for det in members:
            track, disp, _ = ingest(track, Measurement.from_detection(det, params), params)
            dispositions[disp.value] += 1
            accepted |= disp is not Disposition.DISCARDED
        gt_id, _ = lineage([d.gt_id for d in group])
        track.last_gt_id = gt_id
        table.tracks[tid] = track
        if accepted and tid not in touched:
            touched.append(tid)
    horizon = 2 * params.delta_max
    for tid in [t for t, tr in table.tracks.items() if now - tr.last_update > horizon]:
        del table.tracks[tid]
    return table, touched


class UniKF:
    """Arrival-ordered driver: feed detections, read fused objects per tick."""

    def __init__(self, params: FilterParams = FilterParams(), csba: CSBAParams = CSBAParams()):
        self.params = params
        self.csba = csba
        self.table = TrackTable.empty()
        self.dispositions: Counter = Counter()
        self._pending: dict[int, list[int]] = {}  # track id -> member gt_ids since last emit

    def push(self, batch: Sequence[Detection], now: int) -> None:
        """Ingest a batch of detections that arrived together."""
        frames: dict[int, dict[str, list[Detection]]] = defaultdict(lambda: defaultdict(list))
        for det in batch:
            frames[det.t_meas][det.source].append(det)
        # sensor frames within epsilon_s of each other are associated together
        times = sorted(frames)
        clusters: list[list[int]] = []
        for t in times:
            if clusters and t - clusters[-1][0] <= self.params.epsilon_s:
                clusters[-1].append(t)
            else:
                clusters.append([t])
        for cluster in clusters:
            per_source: dict[str, list[Detection]] = defaultdict(list)
            for t in cluster:
                for src, dets in frames[t].items():
                    per_source[src].extend(dets)
            groups = group_by_object([per_source[s] for s in sorted(per_source)], self.csba)
            self.table, touched = run_unikf_frame(self.table, groups, now, self.params,
                                                  self.csba, self.dispositions)
            for tid in touched:
                self._pending.setdefault(tid, [])
                self._pending[tid].append(self.table.tracks[tid].last_gt_id)

    def emit(self, t: int) -> list[FusedObject]:
        """Fused boxes at time ``t`` for every track updated since the last emit."""
        out = []
        for tid in sorted(self._pending):
            track = self.table.tracks.get(tid)
            if track is None:
                continue
            gt_id, flagged = lineage(self._pending[tid])
            est = fused_box(track, at=t, params=self.params)
            out.append(FusedObject(est.box, gt_id, track.class_label, t, est.velocity, tid,
                                   flagged, len(self._pending[tid])))
        self._pending = {}
        return out


def run_unikf(detections: Iterable[Detection], eval_times: Sequence[int], primary: str,
              params: FilterParams = FilterParams(),
              csba: CSBAParams = CSBAParams()) -> tuple[dict[int, list[FusedObject]], Counter]:
    """Process detections in arrival order and emit at each evaluation time.

    The output for evaluation time ``T`` is produced once the primary
    source's detections measured at ``T`` have arrived.
    """
    dets = sorted(detections, key=lambda d: (d.t_recv, d.source, d.t_meas, d.gt_id))
    primary_arrival = {}
    for d in dets:
        if d.source == primary:
            primary_arrival.setdefault(d.t_meas, d.t_recv)
    fuser = UniKF(params, csba)
    results: dict[int, list[FusedObject]] = {}
    pending_evals = sorted(eval_times)
    i = 0
    while i < len(dets) or pending_evals:
        next_recv = dets[i].t_recv if i < len(dets) else None
        if pending_evals:
            t_eval = pending_evals[0]
            due = primary_arrival.get(t_eval, t_eval)
            if next_recv is None or next_recv > due:
                results[t_eval] = fuser.emit(t_eval)
                pending_evals.pop(0)
                continue
        j = i
        while j < len(dets) and dets[j].t_recv == next_recv:
            j += 1
        fuser.push(dets[i:j], next_recv)
        i = j
    return results, fuser.dispositions
