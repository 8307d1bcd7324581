"""End-to-end runs: realize noisy detections, fuse with each method, score.

One trial draws one realization per sensor from its own random stream and
feeds the same detections to every method, so methods are compared on
identical inputs.
"""
from __future__ import annotations

import logging
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import baselines as bl
from .association import CSBAParams
from .geometry import Point2
from .io import ConfigError, preset_thresholds, resolve_noise_preset
from .kalman import FilterParams
from .metrics import FrameMetrics, RunSummary, aggregate, evaluate_frame
from .noise import Detection, Scene, SensorSpec, realize_detections
from .unikf import run_unikf

log = logging.getLogger(__name__)

METHODS = ("unikf", "wls", "nms-std", "nms-giou", "wbf", "psa", "dist-late", "none")


def check_methods(methods: Sequence[str]) -> list[str]:
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {', '.join(bad)}; valid: {', '.join(METHODS)}")
    return list(methods)


@dataclass(frozen=True)
class MethodParams:
    iou_th: float = 0.5
    giou_th: float = 0.5
    dist_th: float = 3.0
    window: int = 100_000  # us, sliding window for frame-based methods
    rotated_iou: bool = True
    filter: FilterParams = FilterParams()
    csba: CSBAParams = CSBAParams()


@dataclass(frozen=True)
class Experiment:
    """One sensor setup; ``label`` names it in results (e.g. ``noise1+noise3``)."""
    label: str
    sensors: tuple[SensorSpec, ...]
    methods: tuple[str, ...]
    params: MethodParams = MethodParams()


def sensors_for_noise(names: Sequence[str], period: int = 500_000,
                      latencies: Sequence[int] | None = None,
                      periods: Sequence[int] | None = None) -> tuple[SensorSpec, ...]:
    """Ego sensor at the origin first, every further sensor re-placed per frame."""
    out = []
    for i, name in enumerate(names):
        out.append(SensorSpec(
            sensor_id=f"s{i}",
            origin=Point2(0.0, 0.0) if i == 0 else None,
            period=periods[i] if periods else period,
            latency=latencies[i] if latencies else 0,
            noise=resolve_noise_preset(name),
        ))
    return tuple(out)


def experiment_for_noise(names: Sequence[str], methods: Sequence[str], period: int = 500_000,
                         filter_params: FilterParams = FilterParams(),
                         csba: CSBAParams = CSBAParams(), **sensor_kw) -> Experiment:
    iou_th, dist_th = preset_thresholds(names)
    params = MethodParams(iou_th=iou_th, giou_th=iou_th, dist_th=dist_th,
                          filter=filter_params, csba=csba)
    return Experiment("+".join(names), sensors_for_noise(names, period, **sensor_kw),
                      tuple(check_methods(methods)), params)


# ---------------------------------------------------------------------------
# frame-based methods

def _eval_time(tick: Sequence[Detection], primary: str) -> int:
    prim = [d.t_meas for d in tick if d.source == primary]
    return min(prim) if prim else min(d.t_meas for d in tick)


def fuse_tick(method: str, tick: Sequence[Detection], params: MethodParams,
              sources: Sequence[str]) -> list[Detection]:
    """Apply a frame-based method to the detections of one window tick."""
    if method == "none":
        return list(tick)
    if method in ("nms-std", "nms-giou", "wbf", "psa"):
        sd = bl.scored(tick)
        if method == "nms-std":
            kept = bl.nms_std(sd, params.iou_th, rotated=params.rotated_iou)
        elif method == "nms-giou":
            kept = bl.nms_giou(sd, params.giou_th)
        elif method == "wbf":
            kept = bl.wbf(sd, params.iou_th, rotated=params.rotated_iou)
        else:
            kept = bl.psa(sd, params.iou_th, rotated=params.rotated_iou)
        return [s.det for s in kept]
    per_source = [[d for d in tick if d.source == s] for s in sources]
    if method == "dist-late":
        fused = per_source[0]
        for other in per_source[1:]:
            fused = bl.distance_late(fused, other, params.dist_th)
        return fused
    if method == "wls":
        return bl.run_wls(per_source, params.csba)
    raise ConfigError(f"method {method!r} is not frame-based")


@dataclass
class MethodRun:
    frames: list[FrameMetrics]
    class_frames: dict[str, list[FrameMetrics]]
    predictions: dict[int, list]  # eval time -> fused outputs
    dispositions: Counter = field(default_factory=Counter)


def _score(scene: Scene, outputs: dict[int, list]) -> tuple[list[FrameMetrics], dict]:
    frames, per_class = [], defaultdict(list)
    for t in sorted(outputs):
        gt = scene.frame_at(t)
        if gt is None:
            log.warning("no ground truth frame at t=%d us; skipped", t)
            continue
        preds = outputs[t]
        frames.append(evaluate_frame(preds, gt.objects, t))
        classes = sorted({o.class_label for o in gt.objects} | {p.class_label for p in preds})
        for cls in classes:
            per_class[cls].append(evaluate_frame(
                [p for p in preds if p.class_label == cls],
                [o for o in gt.objects if o.class_label == cls], t))
    return frames, dict(per_class)


def run_method(method: str, scene: Scene, streams: Sequence[Sequence[Detection]],
               sensors: Sequence[SensorSpec], params: MethodParams) -> MethodRun:
    primary = sensors[0].sensor_id
    eval_times = sorted({d.t_meas for d in streams[0]})
    if method == "unikf":
        all_dets = [d for s in streams for d in s]
        outputs, disp = run_unikf(all_dets, eval_times, primary, params.filter, params.csba)
    else:
        disp = Counter()
        outputs = {}
        sources = [s.sensor_id for s in sensors]
        for tick in bl.sliding_window_sync(streams, params.window):
            t = _eval_time(tick, primary)
            outputs[t] = fuse_tick(method, tick, params, sources)
    frames, per_class = _score(scene, outputs)
    return MethodRun(frames, per_class, outputs, disp)


def realize_trial(scene: Scene, sensors: Sequence[SensorSpec], seed: int,
                  trial: int) -> list[list[Detection]]:
    """Detections per sensor for one trial; streams depend only on (seed, trial, sensor)."""
    trial_seq = np.random.SeedSequence(seed).spawn(trial + 1)[trial]
    rngs = [np.random.default_rng(s) for s in trial_seq.spawn(len(sensors))]
    return [realize_detections(scene, sensor, rng) for sensor, rng in zip(sensors, rngs)]


def run_trial(scene: Scene, exp: Experiment, seed: int, trial: int) -> dict[str, MethodRun]:
    streams = realize_trial(scene, exp.sensors, seed, trial)
    return {m: run_method(m, scene, streams, exp.sensors, exp.params) for m in exp.methods}


@dataclass
class RunResults:
    """Per (experiment label, method): one ``MethodRun`` per trial."""
    runs: dict[tuple[str, str], list[MethodRun]]

    def summaries(self) -> list[tuple[tuple[str, str], RunSummary]]:
        return [(key, aggregate([r.frames for r in trials]))
                for key, trials in self.runs.items()]

    def frames(self):
        return [(key, [r.frames for r in trials]) for key, trials in self.runs.items()]

    def class_summaries(self):
        out = []
        for (label, method), trials in self.runs.items():
            classes = sorted({c for r in trials for c in r.class_frames})
            for cls in classes:
                per_trial = [r.class_frames.get(cls, []) for r in trials]
                if all(per_trial):
                    out.append(((label, method, cls), aggregate(per_trial)))
        return out

    def summary(self, label: str, method: str) -> RunSummary:
        return aggregate([r.frames for r in self.runs[(label, method)]])


def _job(args):
    scene, exp, seed, trial = args
    return run_trial(scene, exp, seed, trial)


def run_experiments(scene: Scene, experiments: Sequence[Experiment], trials: int, seed: int,
                    jobs: int = 1) -> RunResults:
    """Run every experiment for ``trials`` trials; results do not depend on ``jobs``."""
    if trials < 1:
        raise ConfigError("need at least one trial")
    tasks = [(scene, exp, seed, t) for exp in experiments for t in range(trials)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_job, tasks))
    else:
        outcomes = [_job(t) for t in tasks]
    runs: dict[tuple[str, str], list[MethodRun]] = {}
    for (_, exp, _, _), result in zip(tasks, outcomes):
        for method in exp.methods:
            runs.setdefault((exp.label, method), []).append(result[method])
    return RunResults(runs)
