import math

import numpy as np
import pytest

from latefuse.geometry import BEVBox
from latefuse.io import LoadedPrediction
from latefuse.metrics import (FrameMetrics, aggregate, ade_frame, aoe_frame, ate_frame,
                              evaluate_frame, match_by_id, precision_recall, sota_metrics)

from conftest import make_gt
from oracles import brute_force_frame, random_frame


def pred(gt_id=0, x=0.0, y=0.0, w=2.0, d=4.0, theta=0.0):
    return LoadedPrediction(BEVBox(x, y, w, d, theta), gt_id, "car", 0)


def fm(ate, **kw):
    base = dict(aoe=0.0, ade=0.0, tp=1, fp=0, fn=0, precision=1.0, recall=1.0)
    base.update(kw)
    return FrameMetrics(ate, **base)


class TestMatch:
    def test_aligned(self):
        gts = [make_gt(i, 10.0 * i) for i in range(3)]
        out = match_by_id([pred(i, 10.0 * i) for i in range(3)], gts)
        assert len(out.tp) == 3 and not out.fp and not out.fn

    def test_closest_is_tp(self):
        out = match_by_id([pred(0, 1.0), pred(0, 0.2)], [make_gt(0)])
        assert out.tp[0][0].box.x == 0.2
        assert [p.box.x for p, _ in out.fp] == [1.0]

    def test_missing_gt_is_fn(self):
        out = match_by_id([], [make_gt(0)])
        assert len(out.fn) == 1 and precision_recall(out) == (1.0, 0.0)

    def test_unknown_id(self):
        out = match_by_id([pred(9, 1.0)], [make_gt(0), make_gt(1, 50.0)])
        assert out.unknown_ids == 1 and out.fp[0][1].gt_id == 0

    def test_order_invariant(self):
        rng = np.random.default_rng(2)
        preds, gts = random_frame(rng, 5, 10)
        a = evaluate_frame(preds, gts)
        b = evaluate_frame(list(reversed(preds)), list(reversed(gts)))
        assert a == b

    def test_nearest_reference_mode(self):
        preds = [pred(0, 0.0), pred(0, 9.0)]
        gts = [make_gt(0), make_gt(1, 10.0)]
        assert ate_frame(match_by_id(preds, gts)) == pytest.approx(4.5)
        assert ate_frame(match_by_id(preds, gts, "nearest")) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            match_by_id(preds, gts, "closest")


class TestErrors:
    def test_exact(self):
        out = match_by_id([pred(0, 1.0, theta=0.4)], [make_gt(0, 1.0, theta=0.4)])
        assert (ate_frame(out), aoe_frame(out), ade_frame(out)) == (0.0, 0.0, 0.0)

    def test_ate_offset(self):
        assert ate_frame(match_by_id([pred(0, 3.0, 4.0)], [make_gt(0)])) == pytest.approx(5.0)

    def test_ate_with_fp(self):
        out = match_by_id([pred(0, 1.0), pred(0, 3.0)], [make_gt(0)])
        assert ate_frame(out) == pytest.approx(2.0)
        assert sota_metrics(out)[0] == pytest.approx(1.0)

    def test_aoe_wraps(self):
        out = match_by_id([pred(0, theta=math.radians(350) - 2 * math.pi)], [make_gt(0)])
        assert aoe_frame(out) == pytest.approx(math.radians(10))

    def test_ade(self):
        assert ade_frame(match_by_id([pred(0, w=5.0, d=8.0)], [make_gt(0)])) == pytest.approx(5.0)

    def test_empty_frame_conventions(self):
        m = evaluate_frame([], [])
        assert (m.ate, m.precision, m.recall) == (0.0, 1.0, 1.0)
        assert m.sota_ate is None

    def test_no_fp_sota_equals_fp_aware(self):
        out = match_by_id([pred(0, 0.3), pred(1, 10.5)], [make_gt(0), make_gt(1, 10.0)])
        assert sota_metrics(out) == (ate_frame(out), aoe_frame(out), ade_frame(out))


class TestPrecisionRecall:
    def test_clean(self):
        assert precision_recall(match_by_id([pred(0)], [make_gt(0)])) == (1.0, 1.0)

    def test_half_precision(self):
        out = match_by_id([pred(i, 10.0 * i + dx) for i in range(4) for dx in (0.0, 0.5)],
                          [make_gt(i, 10.0 * i) for i in range(4)])
        assert precision_recall(out)[0] == 0.5

    def test_recall(self):
        out = match_by_id([pred(i, 10.0 * i) for i in range(9)],
                          [make_gt(i, 10.0 * i) for i in range(10)])
        assert precision_recall(out)[1] == pytest.approx(0.9)


class TestAggregate:
    def test_single_trial(self):
        s = aggregate([[fm(1.0), fm(3.0)]])
        assert s.m_ate.mean == 2.0 and s.m_ate.std == 0.0 and s.n_trials == 1

    def test_sample_std(self):
        s = aggregate([[fm(1.0)], [fm(2.0)], [fm(3.0)]])
        assert (s.m_ate.mean, s.m_ate.std) == pytest.approx((2.0, 1.0))

    def test_identical_trials(self):
        s = aggregate([[fm(1.5), fm(0.5)]] * 4)
        assert s.m_ate.std == 0.0

    def test_precision_pools_counts(self):
        frames = [fm(0.0, tp=1, fp=0, precision=1.0), fm(0.0, tp=3, fp=3, precision=0.5)]
        assert aggregate([frames]).precision.mean == pytest.approx(4 / 7)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])


def test_matches_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(300):
        preds, gts = random_frame(rng)
        m = evaluate_frame(preds, gts)
        ate, aoe, ade, p, r = brute_force_frame(preds, gts)
        assert abs(m.ate - ate) <= 1e-12 and abs(m.aoe - aoe) <= 1e-12
        assert abs(m.ade - ade) <= 1e-12
        assert (m.precision, m.recall) == pytest.approx((p, r), abs=1e-12)
