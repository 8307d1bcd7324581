import math
from collections import Counter

import numpy as np
import pytest

from latefuse.kalman import X, FilterParams, Measurement, fused_box, ingest, init_track
from latefuse.unikf import TrackTable, UniKF, run_unikf, run_unikf_frame

from conftest import make_det

SIG = (0.5, 0.5, 0.05, 0.2, 0.2)


def test_single_source_matches_plain_filter():
    rng = np.random.default_rng(3)
    times = range(0, 2_000_001, 100_000)
    dets = [make_det(1.5 * t / 1e6 + rng.normal(0, 0.5), rng.normal(0, 0.5), t=t, sigma=SIG)
            for t in times]
    out, _ = run_unikf(dets, list(times), "s0")
    s = init_track(dets[0])
    for d in dets[1:]:
        s, _, _ = ingest(s, Measurement.from_detection(d))
        est = fused_box(s, at=d.t_meas)
        (obj,) = out[d.t_meas]
        assert obj.box == est.box


def test_two_equal_sources_shrink_error_by_sqrt2():
    rng = np.random.default_rng(21)
    n, sigma = 10_000, 0.5
    single, fused = [], []
    table = TrackTable.empty()
    for i in range(n):
        gx = 200.0 * i  # far apart: every group starts its own track
        a = make_det(gx + rng.normal(0, sigma), 0.0, sigma=(sigma, sigma, 0.05, 0.2, 0.2), gt_id=i)
        b = make_det(gx + rng.normal(0, sigma), 0.0, sigma=(sigma, sigma, 0.05, 0.2, 0.2),
                     gt_id=i, source="s1")
        table, (tid,) = run_unikf_frame(table, [[a, b]], 0)
        single.append(a.box.x - gx)
        fused.append(table.tracks.pop(tid).x[X] - gx)
    ratio = np.std(fused) / np.std(single)
    # sampling error of a std ratio at n = 1e4 is about 1%
    assert ratio == pytest.approx(1 / math.sqrt(2), rel=0.03)


def test_mixed_periods_classify_every_measurement():
    dets = []
    for src, period in (("s0", 100_000), ("s1", 70_000)):
        for t in range(0, 1_400_001, period):
            dets.append(make_det(0.01 * t / 1e4, 0.0, t=t, t_recv=t + 20_000, source=src,
                                 sigma=SIG))
    _, disp = run_unikf(dets, list(range(0, 1_400_001, 100_000)), "s0")
    assert sum(disp.values()) == len(dets)
    ok = {"initialized", "synchronous", "out_of_sequence", "asynchronous"}
    assert set(disp) <= ok
    assert disp["initialized"] == 1


def test_late_measurement_takes_rollback_path():
    early = make_det(0.0, t=0, sigma=SIG)
    late = make_det(0.1, t=100_000, t_recv=300_000, source="s1", sigma=SIG)
    new = make_det(0.2, t=200_000, t_recv=200_000, sigma=SIG)
    _, disp = run_unikf([early, late, new], [0, 200_000], "s0")
    assert disp["out_of_sequence"] == 1 and disp["asynchronous"] == 1


def test_stale_tracks_retire():
    params = FilterParams()
    table, _ = run_unikf_frame(TrackTable.empty(), [[make_det(t=0)]], 0, params)
    assert len(table.tracks) == 1
    table, _ = run_unikf_frame(table, [], 2 * params.delta_max + 1, params)
    assert table.tracks == {}


def test_group_rejoins_its_track():
    table, (tid,) = run_unikf_frame(TrackTable.empty(), [[make_det(5.0, t=0)]], 0)
    table, touched = run_unikf_frame(table, [[make_det(5.2, t=100_000)]], 100_000)
    assert touched == [tid] and len(table.tracks) == 1


def test_distant_group_opens_new_track():
    table, _ = run_unikf_frame(TrackTable.empty(), [[make_det(0.0, t=0)]], 0)
    table, touched = run_unikf_frame(table, [[make_det(40.0, t=100_000)]], 100_000)
    assert len(table.tracks) == 2 and touched == [1]


def test_emit_reports_lineage_once_per_track():
    fuser = UniKF()
    fuser.push([make_det(0.0, gt_id=4), make_det(0.1, gt_id=4, source="s1")], 0)
    (obj,) = fuser.emit(0)
    assert obj.gt_id == 4 and not obj.flagged
    assert fuser.emit(0) == []


def test_deterministic():
    rng = np.random.default_rng(8)
    dets = [make_det(*rng.normal(0, 20, 2), t=t, gt_id=i, source=s, sigma=SIG)
            for t in (0, 100_000) for i in range(6) for s in ("s0", "s1")]
    a, da = run_unikf(dets, [0, 100_000], "s0")
    b, db = run_unikf(dets, [0, 100_000], "s0")
    assert a == b and da == db == Counter(da)
