"""Synthetic scenes and the per-sensor noise model.

Each sensor sees every ground-truth object with Gaussian position and
yaw errors whose standard deviation grows linearly with the
object-to-sensor distance, and with multiplicative size errors drawn
from a truncated Gaussian around 1.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import BEVBox, Point2, wrap_angle

US_PER_S = 1_000_000


@dataclass(frozen=True)
class NoiseConfig:
    sigma_x0: float = 0.0
    sigma_y0: float = 0.0
    sigma_theta0: float = 0.0  # rad
    k_x: float = 0.0
    k_y: float = 0.0
    k_theta: float = 0.0  # rad per meter
    sigma_alpha: float = 0.0
    sigma_beta: float = 0.0
    clip_lo: float = 0.3
    clip_hi: float = 3.0

    def __post_init__(self):
        values = (self.sigma_x0, self.sigma_y0, self.sigma_theta0, self.k_x, self.k_y,
                  self.k_theta, self.sigma_alpha, self.sigma_beta)
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ValueError("noise sigmas and rates must be finite and non-negative")
        if not (0.0 < self.clip_lo < 1.0 < self.clip_hi):
            raise ValueError(f"need 0 < clip_lo < 1 < clip_hi, got [{self.clip_lo}, {self.clip_hi}]")


@dataclass(frozen=True)
class SensorSpec:
    """One detection source.

    ``origin=None`` re-places the sensor at random every frame, as for the
    roaming second agent.
    """
    sensor_id: str
    origin: Point2 | None = Point2(0.0, 0.0)
    period: int = 500_000  # us
    phase: int = 0  # us
    latency: int = 0  # us
    noise: NoiseConfig = NoiseConfig()

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("sensor period must be positive")
        if self.latency < 0:
            raise ValueError("sensor latency must be non-negative")


@dataclass(frozen=True)
class Detection:
    box: BEVBox
    source: str
    t_meas: int
    t_recv: int
    gt_id: int
    class_label: str
    sigma: tuple[float, float, float, float, float]  # x, y, theta, w, d
    flagged: bool = False  # lineage disagreement after a merge

    def __post_init__(self):
        if self.t_recv < self.t_meas:
            raise ValueError("a detection cannot arrive before it is measured")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma components must be non-negative")


def lineage(gt_ids: Sequence[int]) -> tuple[int, bool]:
    """Majority gt_id of merged detections (first seen wins ties) and
    whether the members disagreed."""
    counts = Counter(gt_ids)
    best = max(counts.values())
    return next(g for g in gt_ids if counts[g] == best), len(counts) > 1


@dataclass(frozen=True)
class GTObject:
    gt_id: int
    class_label: str
    box: BEVBox
    velocity: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Frame:
    t: int
    objects: tuple[GTObject, ...]

    def by_id(self) -> dict[int, GTObject]:
        return {o.gt_id: o for o in self.objects}


@dataclass(frozen=True)
class Scene:
    scene_id: str
    frames: tuple[Frame, ...]

    def __post_init__(self):
        times = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("frame timestamps must be strictly increasing")
        for f in self.frames:
            ids = [o.gt_id for o in f.objects]
            if len(ids) != len(set(ids)):
                raise ValueError(f"duplicate gt_id in frame t={f.t}")

    def frame_at(self, t: int) -> Frame | None:
        for f in self.frames:
            if f.t == t:
                return f
        return None

    @property
    def n_objects(self) -> int:
        return sum(len(f.objects) for f in self.frames)


def sigma_at_distance(base: float, rate: float, dist: float) -> float:
    """Linear growth of a noise standard deviation with distance."""
    if dist < 0:
        raise ValueError(f"distance must be non-negative, got {dist}")
    return base + rate * dist


def perturb_pose(box: BEVBox, sensor_origin: Point2, cfg: NoiseConfig,
                 rng: np.random.Generator) -> tuple[float, float, float, tuple[float, float, float]]:
    """Noisy ``(x', y', theta')`` plus the ``(sx, sy, stheta)`` used to draw it."""
    dist = math.hypot(box.x - sensor_origin.x, box.y - sensor_origin.y)
    sx = sigma_at_distance(cfg.sigma_x0, cfg.k_x, dist)
    sy = sigma_at_distance(cfg.sigma_y0, cfg.k_y, dist)
    st = sigma_at_distance(cfg.sigma_theta0, cfg.k_theta, dist)
    # always draw three normals so stream positions do not depend on cfg
    dx, dy, dt = rng.standard_normal(3)
    return box.x + sx * dx, box.y + sy * dy, wrap_angle(box.theta + st * dt), (sx, sy, st)


def truncated_normal(mean: float, sigma: float, lo: float, hi: float,
                     rng: np.random.Generator) -> float:
    """Rejection-sample N(mean, sigma^2) restricted to [lo, hi]."""
    if sigma == 0.0:
        return min(max(mean, lo), hi)
    while True:
        v = mean + sigma * rng.standard_normal()
        if lo <= v <= hi:
            return v


def perturb_size(w: float, d: float, cfg: NoiseConfig,
                 rng: np.random.Generator) -> tuple[float, float]:
    alpha = truncated_normal(1.0, cfg.sigma_alpha, cfg.clip_lo, cfg.clip_hi, rng)
    beta = truncated_normal(1.0, cfg.sigma_beta, cfg.clip_lo, cfg.clip_hi, rng)
    return alpha * w, beta * d


def observes(sensor: SensorSpec, t: int) -> bool:
    return (t - sensor.phase) % sensor.period == 0 and t >= sensor.phase


def place_secondary_sensor(frame: Frame, rng: np.random.Generator,
                           r_min: float = 10.0, r_max: float = 50.0) -> Point2:
    """Uniform-area draw on the annulus ``[r_min, r_max]`` about the frame centroid."""
    if frame.objects:
        cx = float(np.mean([o.box.x for o in frame.objects]))
        cy = float(np.mean([o.box.y for o in frame.objects]))
    else:
        cx = cy = 0.0
    u, phi = rng.random(), rng.uniform(-math.pi, math.pi)
    r = math.sqrt(r_min ** 2 + u * (r_max ** 2 - r_min ** 2))
    return Point2(cx + r * math.cos(phi), cy + r * math.sin(phi))


def realize_detections(scene: Scene, sensor: SensorSpec, rng: np.random.Generator,
                       r_min: float = 10.0, r_max: float = 50.0) -> list[Detection]:
    """One noisy detection per object per frame on the sensor's time grid."""
    out: list[Detection] = []
    cfg = sensor.noise
    for frame in scene.frames:
        if not observes(sensor, frame.t):
            continue
        origin = sensor.origin
        if origin is None:
            origin = place_secondary_sensor(frame, rng, r_min, r_max)
        for obj in frame.objects:
            b = obj.box
            x, y, th, (sx, sy, st) = perturb_pose(b, origin, cfg, rng)
            w, d = perturb_size(b.w, b.d, cfg, rng)
            out.append(Detection(
                box=BEVBox(x, y, w, d, th),
                source=sensor.sensor_id,
                t_meas=frame.t,
                t_recv=frame.t + sensor.latency,
                gt_id=obj.gt_id,
                class_label=obj.class_label,
                sigma=(sx, sy, st, cfg.sigma_alpha * b.w, cfg.sigma_beta * b.d),
            ))
    return out


# ---------------------------------------------------------------------------
# scene synthesis

# (w, d) nominal dimensions, speed range in m/s; d is the long side
CLASS_PROFILES: dict[str, tuple[tuple[float, float], tuple[float, float]]] = {
    "car": ((1.9, 4.6), (2.0, 12.0)),
    "truck": ((2.5, 7.0), (2.0, 10.0)),
    "bus": ((2.9, 11.0), (2.0, 8.0)),
    "pedestrian": ((0.7, 0.7), (0.5, 1.8)),
    "bicycle": ((0.6, 1.7), (2.0, 6.0)),
    "motorcycle": ((0.8, 2.1), (3.0, 12.0)),
    "barrier": ((2.5, 0.5), (0.0, 0.0)),
    "traffic_cone": ((0.4, 0.4), (0.0, 0.0)),
}


@dataclass
class SceneSpec:
    objects: dict[str, int] = field(default_factory=lambda: {"car": 10, "pedestrian": 5})
    duration: int = 10 * US_PER_S
    frame_period: int = 500_000
    radius: float = 50.0
    max_yaw_rate: float = 0.2  # rad/s, constant-turn magnitude bound
    turn_fraction: float = 0.3  # share of movers on constant-turn paths
    min_separation: float = 2.0  # m between initial centers
    accel_std: float = 1.5  # m/s^2, movers redraw a longitudinal acceleration each frame
    scene_id: str = "synthetic"

    def __post_init__(self):
        unknown = set(self.objects) - set(CLASS_PROFILES)
        if unknown:
            raise ValueError(f"unknown classes {sorted(unknown)}; known: {sorted(CLASS_PROFILES)}")
        if any(n < 0 for n in self.objects.values()):
            raise ValueError("object counts must be non-negative")
        if self.duration < 0 or self.frame_period <= 0:
            raise ValueError("duration must be >= 0 and frame_period > 0")
        if self.accel_std < 0:
            raise ValueError("accel_std must be non-negative")


def propagate(box: BEVBox, velocity: tuple[float, float], yaw_rate: float,
              dt: float) -> tuple[BEVBox, tuple[float, float]]:
    """Closed-form constant-velocity / constant-turn motion over ``dt`` seconds."""
    vx, vy = velocity
    if yaw_rate == 0.0:
        return replace(box, x=box.x + vx * dt, y=box.y + vy * dt), velocity
    s, c = math.sin(yaw_rate * dt), math.cos(yaw_rate * dt)
    dx = (vx * s - vy * (1.0 - c)) / yaw_rate
    dy = (vy * s + vx * (1.0 - c)) / yaw_rate
    moved = replace(box, x=box.x + dx, y=box.y + dy, theta=box.theta + yaw_rate * dt)
    return moved, (vx * c - vy * s, vx * s + vy * c)


def synth_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    """Objects on CV or CT trajectories inside a disc around the origin.

    With ``accel_std > 0`` movers also change speed from frame to frame.
    """
    starts = []
    gt_id = 0
    centers: list[tuple[float, float]] = []
    for cls in sorted(spec.objects):
        (w0, d0), (vmin, vmax) = CLASS_PROFILES[cls]
        for _ in range(spec.objects[cls]):
            for _attempt in range(100):
                r = spec.radius * math.sqrt(rng.random())
                phi = rng.uniform(-math.pi, math.pi)
                x, y = r * math.cos(phi), r * math.sin(phi)
                if all(math.hypot(x - a, y - b) >= spec.min_separation for a, b in centers):
                    break
            centers.append((x, y))
            w = w0 * rng.uniform(0.9, 1.1)
            d = d0 * rng.uniform(0.9, 1.1)
            theta = rng.uniform(-math.pi, math.pi)
            speed = rng.uniform(vmin, vmax)
            # long side (d, local y) points along the direction of travel
            heading = theta + 0.5 * math.pi
            vel = (speed * math.cos(heading), speed * math.sin(heading))
            yaw_rate = 0.0
            if speed > 0 and rng.random() < spec.turn_fraction:
                yaw_rate = rng.uniform(-spec.max_yaw_rate, spec.max_yaw_rate)
            starts.append((gt_id, cls, BEVBox(x, y, w, d, theta), vel, yaw_rate))
            gt_id += 1

    dt = spec.frame_period / US_PER_S
    state = [(box, vel) for _, _, box, vel, _ in starts]
    frames = []
    for t in range(0, spec.duration + 1, spec.frame_period):
        frames.append(Frame(t, tuple(GTObject(gid, cls, b, v) for (gid, cls, _, _, _), (b, v)
                                     in zip(starts, state))))
        nxt = []
        for (_, _, _, _, yaw_rate), (b, v) in zip(starts, state):
            b, v = propagate(b, v, yaw_rate, dt)
            speed = math.hypot(*v)
            if speed > 0.0 and spec.accel_std > 0.0:
                # keep movers moving forward; a stopped object would lose its heading
                new_speed = max(speed + rng.normal(0.0, spec.accel_std) * dt, 0.1)
                v = (v[0] * new_speed / speed, v[1] * new_speed / speed)
            nxt.append((b, v))
        state = nxt
    return Scene(spec.scene_id, tuple(frames))


def sensor_streams(seed_seq: np.random.SeedSequence,
                   sensors: Sequence[SensorSpec]) -> list[np.random.Generator]:
    """Independent generators, one per sensor, spawned from a trial's seed."""
    return [np.random.default_rng(s) for s in seed_seq.spawn(len(sensors))]
