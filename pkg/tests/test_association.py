import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latefuse.association import (CSBAParams, csba_associate, csba_score, dist_associate,
                                  group_by_object, iou_associate, score_matrix)

from conftest import make_det
from oracles import brute_force_total


class TestScore:
    def test_identical(self):
        d = make_det(1.0, 2.0)
        assert csba_score(d, d) == pytest.approx(1.0)

    def test_far_apart(self):
        a = make_det(0.0, sigma=(0.1, 0.1, 0.01, 0.1, 0.1))
        b = make_det(100 * math.sqrt(0.02), sigma=(0.1, 0.1, 0.01, 0.1, 0.1), source="s1")
        # the center term vanishes; size and yaw agreement still add 0.5 to the raw score
        assert csba_score(a, b, CSBAParams(w_center=1.0, w_dim=0.0, w_orient=0.0)) < 1e-3
        assert csba_score(a, b) == pytest.approx(0.5)
        # the pairing score is gated on the center and drops to 0
        assert score_matrix([a], [b])[0, 0] < 1e-3

    def test_orientation_example(self):
        a = make_det(theta=0.0)
        b = make_det(theta=0.5)
        assert csba_score(a, b) == pytest.approx(0.5 + 0.3 + 0.2 * math.exp(-1.0))
        assert csba_score(a, b) == pytest.approx(0.8736, abs=1e-4)

    def test_zero_covariance_offset_scores_zero(self):
        z = (0.0, 0.0, 0.0, 0.0, 0.0)
        assert csba_score(make_det(0.0, sigma=z), make_det(0.1, sigma=z)) == 0.0
        assert csba_score(make_det(0.0, sigma=z), make_det(0.0, sigma=z)) == pytest.approx(1.0)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 4), st.floats(-3, 3))
    def test_symmetric_and_bounded(self, x, y, w, th):
        a = make_det(0.0, 0.0)
        b = make_det(x, y, w=w, theta=th, source="s1", sigma=(0.3, 0.7, 0.1, 0.2, 0.2))
        s = csba_score(a, b)
        assert s == pytest.approx(csba_score(b, a), abs=1e-12)
        assert 0.0 <= s <= 1.0

    def test_monotone_in_each_discrepancy(self):
        base = make_det()
        for field, steps in (("x", [0.0, 0.5, 1.0, 2.0]), ("w", [2.0, 2.5, 3.0]),
                             ("theta", [0.0, 0.2, 0.4])):
            scores = [csba_score(base, make_det(**{field: v})) for v in steps]
            assert all(s1 > s2 for s1, s2 in zip(scores, scores[1:]))

    def test_params_validated(self):
        with pytest.raises(ValueError):
            CSBAParams(gate=1.5)
        with pytest.raises(ValueError):
            CSBAParams(scale_dim=0.0)


class TestCSBAAssociate:
    def test_zero_noise_duplicates(self):
        a = [make_det(10.0 * i, 0.0, gt_id=i) for i in range(5)]
        b = [make_det(10.0 * i, 0.0, gt_id=i, source="s1") for i in reversed(range(5))]
        res = csba_associate(a, b)
        assert not res.unmatched_a and not res.unmatched_b
        assert all(a[i].gt_id == b[j].gt_id for i, j, _ in res.pairs)

    def test_empty_side(self):
        a = [make_det(gt_id=i) for i in range(3)]
        res = csba_associate(a, [])
        assert res.pairs == [] and res.unmatched_a == [0, 1, 2]
        assert csba_associate([], a).unmatched_b == [0, 1, 2]

    def test_cross_class_never_pairs(self):
        res = csba_associate([make_det(cls="car")], [make_det(cls="truck")])
        assert res.pairs == []

    def test_brute_force_six(self):
        from latefuse.io import resolve_noise_preset
        from latefuse.noise import Frame, Scene, SensorSpec, realize_detections
        from conftest import make_gt
        from latefuse.geometry import Point2
        rng = np.random.default_rng(6)
        objs = tuple(make_gt(i, *rng.uniform(-8, 8, 2), theta=rng.uniform(-3, 3)) for i in range(6))
        scene = Scene("t", (Frame(0, objs),))
        cfg = resolve_noise_preset("noise3")
        a = realize_detections(scene, SensorSpec("s0", Point2(0, 0), noise=cfg), rng)
        b = realize_detections(scene, SensorSpec("s1", Point2(20, 0), noise=cfg), rng)
        s = score_matrix(a, b)
        res = csba_associate(a, b, CSBAParams(gate=0.0))
        assert sum(v for _, _, v in res.pairs) == pytest.approx(brute_force_total(s), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 7), st.integers(0, 7), st.integers(0, 10**6), st.floats(0.0, 0.9))
    def test_partition_and_gate_monotonicity(self, n_a, n_b, seed, gate):
        rng = np.random.default_rng(seed)
        a = [make_det(*rng.uniform(-5, 5, 2), gt_id=i) for i in range(n_a)]
        b = [make_det(*rng.uniform(-5, 5, 2), gt_id=i, source="s1") for i in range(n_b)]
        low = csba_associate(a, b, CSBAParams(gate=gate))
        high = csba_associate(a, b, CSBAParams(gate=min(1.0, gate + 0.1)))
        assert low.check_partition(n_a, n_b) and high.check_partition(n_a, n_b)
        assert {(i, j) for i, j, _ in high.pairs} <= {(i, j) for i, j, _ in low.pairs}


class TestIoUAssociate:
    def test_identical_lists(self):
        a = [make_det(10.0 * i, gt_id=i) for i in range(4)]
        res = iou_associate(a, list(a), 0.5)
        assert sorted((i, j) for i, j, _ in res.pairs) == [(i, i) for i in range(4)]

    def test_disjoint(self):
        assert iou_associate([make_det(0.0)], [make_det(50.0)], 0.5).pairs == []

    def test_threshold_boundary(self):
        a = [make_det(0.0, w=1.0, d=1.0)]
        b = [make_det(0.5, w=1.0, d=1.0)]
        assert iou_associate(a, b, 0.5).pairs == []
        assert len(iou_associate(a, b, 0.3).pairs) == 1

    def test_greedy_order(self):
        # b0 overlaps a0 best; greedy takes it even though a1 then goes unmatched
        a = [make_det(0.0, w=1, d=1), make_det(0.6, w=1, d=1)]
        b = [make_det(0.2, w=1, d=1)]
        res = iou_associate(a, b, 0.1)
        assert [(i, j) for i, j, _ in res.pairs] == [(0, 0)]


class TestDistAssociate:
    def test_threshold_boundary(self):
        assert len(dist_associate([make_det(0.0)], [make_det(2.9)], 3.0).pairs) == 1
        assert dist_associate([make_det(0.0)], [make_det(3.1)], 3.0).pairs == []

    def test_identical_center(self):
        res = dist_associate([make_det(1.0, 1.0)], [make_det(1.0, 1.0)], 3.0)
        assert res.pairs == [(0, 0, 0.0)]

    def test_out_of_gate_pairs_do_not_steer(self):
        # a0-b0 is 1 m; a1-b0 would be 0.5 m but a1 also has a far partner
        a = [make_det(0.0), make_det(1.5)]
        b = [make_det(1.0), make_det(50.0)]
        res = dist_associate(a, b, 3.0)
        assert len(res.pairs) == 1 and res.check_partition(2, 2)


def test_group_by_object_chains_sources():
    frames = [[make_det(10.0 * i, gt_id=i, source=s) for i in range(3)] for s in ("s0", "s1", "s2")]
    groups = group_by_object(frames)
    assert len(groups) == 3
    assert all(len({d.gt_id for d in g}) == 1 and len(g) == 3 for g in groups)
