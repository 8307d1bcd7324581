"""Per-object Kalman filter with time-aware measurement ingestion.

State ``[x, y, vx, vy, w, d, theta]`` under a constant-velocity model;
measurements observe ``[x, y, w, d, theta]``. Every accepted measurement
leaves a snapshot in a bounded history so that late measurements can be
folded in by rolling back and replaying.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BEVBox, wrap_angle
from .noise import US_PER_S, Detection

# state indices
X, Y, VX, VY, W, D, TH = range(7)
OBSERVED = (X, Y, W, D, TH)

H = np.zeros((5, 7))
for _row, _col in enumerate(OBSERVED):
    H[_row, _col] = 1.0


class FilterDegenerate(RuntimeError):
    """Innovation covariance lost positive definiteness."""


class Disposition(enum.Enum):
    SYNCHRONOUS = "synchronous"
    OUT_OF_SEQUENCE = "out_of_sequence"
    ASYNCHRONOUS = "asynchronous"
    DISCARDED = "discarded"


class DiscardReason(enum.Enum):
    TOO_OLD = "too_old"
    TOO_NEW = "too_new"
    HISTORY_UNDERFLOW = "history_underflow"


@dataclass(frozen=True)
class FilterParams:
    epsilon_s: int = 10_000  # us
    delta_max: int = 500_000  # us
    accel_density: float = 1.0  # m^2/s^3
    size_walk: float = 0.05  # m/sqrt(s)
    theta_walk: float = 0.05  # rad/sqrt(s)
    p0_scale: float = 1.0  # multiplier on measurement variances at init
    velocity_var: float = 25.0  # (m/s)^2 initial velocity prior
    sigma_floor: float = 1e-3  # keeps R positive for noiseless sources

    def __post_init__(self):
        if self.epsilon_s < 0 or self.delta_max <= self.epsilon_s:
            raise ValueError("need 0 <= epsilon_s < delta_max")
        if min(self.accel_density, self.size_walk, self.theta_walk) < 0:
            raise ValueError("process noise densities must be non-negative")
        if self.p0_scale <= 0 or self.velocity_var <= 0 or self.sigma_floor <= 0:
            raise ValueError("p0_scale, velocity_var and sigma_floor must be positive")


@dataclass(frozen=True)
class Measurement:
    z: np.ndarray  # x, y, w, d, theta
    R: np.ndarray
    t_meas: int
    source: str = ""
    gt_id: int = -1

    @classmethod
    def from_detection(cls, det: Detection, params: FilterParams = FilterParams()) -> "Measurement":
        sx, sy, st, sw, sd = (max(s, params.sigma_floor) for s in det.sigma)
        return cls(
            z=det.box.as_array(),
            R=np.diag([sx * sx, sy * sy, sw * sw, sd * sd, st * st]),
            t_meas=det.t_meas,
            source=det.source,
            gt_id=det.gt_id,
        )


@dataclass(frozen=True)
class Snapshot:
    t: int
    x: np.ndarray
    P: np.ndarray
    measurements: tuple[Measurement, ...]


@dataclass
class TrackState:
    x: np.ndarray
    P: np.ndarray
    t_filter: int
    history: list[Snapshot] = field(default_factory=list)
    track_id: int = 0
    class_label: str = ""
    last_gt_id: int = -1
    last_update: int = 0  # t_meas of the latest accepted measurement

    def copy(self) -> "TrackState":
        return TrackState(self.x.copy(), self.P.copy(), self.t_filter, list(self.history),
                          self.track_id, self.class_label, self.last_gt_id, self.last_update)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def transition(dt_s: float) -> np.ndarray:
    F = np.eye(7)
    F[X, VX] = dt_s
    F[Y, VY] = dt_s
    return F


def process_noise(dt_s: float, params: FilterParams) -> np.ndarray:
    """White-noise acceleration on (pos, vel); random walks on size and yaw."""
    dt = abs(dt_s)
    q = params.accel_density
    Q = np.zeros((7, 7))
    for p, v in ((X, VX), (Y, VY)):
        Q[p, p] = q * dt ** 3 / 3.0
        Q[p, v] = Q[v, p] = q * dt ** 2 / 2.0
        Q[v, v] = q * dt
    Q[W, W] = Q[D, D] = params.size_walk ** 2 * dt
    Q[TH, TH] = params.theta_walk ** 2 * dt
    return Q


def init_track(det: Detection | Measurement, params: FilterParams = FilterParams(),
               track_id: int = 0) -> TrackState:
    m = det if isinstance(det, Measurement) else Measurement.from_detection(det, params)
    x = np.zeros(7)
    x[list(OBSERVED)] = m.z
    x[TH] = wrap_angle(x[TH])
    P = np.zeros((7, 7))
    P[np.ix_(OBSERVED, OBSERVED)] = params.p0_scale * m.R
    P[VX, VX] = P[VY, VY] = params.velocity_var
    class_label = det.class_label if isinstance(det, Detection) else ""
    state = TrackState(x, P, m.t_meas, track_id=track_id, class_label=class_label,
                       last_gt_id=m.gt_id, last_update=m.t_meas)
    state.history = [Snapshot(m.t_meas, x.copy(), P.copy(), (m,))]
    return state


def _predict_arrays(x: np.ndarray, P: np.ndarray, dt_us: int,
                    params: FilterParams) -> tuple[np.ndarray, np.ndarray]:
    if dt_us == 0:
        return x.copy(), P.copy()
    dt = dt_us / US_PER_S
    F = transition(dt)
    return F @ x, _symmetrize(F @ P @ F.T + process_noise(dt, params))


def predict(state: TrackState, dt: int, params: FilterParams = FilterParams()) -> TrackState:
    """Propagate by ``dt`` microseconds (either sign); the history is shared."""
    if abs(dt) > params.delta_max:
        raise ValueError(f"|dt| = {abs(dt)} us exceeds delta_max = {params.delta_max} us")
    out = state.copy()
    out.x, out.P = _predict_arrays(state.x, state.P, dt, params)
    out.t_filter = state.t_filter + dt
    return out


def _update_arrays(x: np.ndarray, P: np.ndarray, m: Measurement) -> tuple[np.ndarray, np.ndarray]:
    nu = m.z - H @ x
    nu[4] = wrap_angle(nu[4])
    S = H @ P @ H.T + m.R
    try:
        L = np.linalg.cholesky(_symmetrize(S))
    except np.linalg.LinAlgError as exc:
        raise FilterDegenerate("innovation covariance is not positive definite") from exc
    # K = P H^T S^-1 via two triangular solves
    PHt = P @ H.T
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    x_new = x + K @ nu
    x_new[TH] = wrap_angle(x_new[TH])
    I_KH = np.eye(7) - K @ H
    P_new = I_KH @ P @ I_KH.T + K @ m.R @ K.T
    return x_new, _symmetrize(P_new)


def update(state: TrackState, m: Measurement) -> TrackState:
    """Kalman update at the filter's current time (Joseph form)."""
    out = state.copy()
    out.x, out.P = _update_arrays(state.x, state.P, m)
    out.last_gt_id = m.gt_id
    out.last_update = max(state.last_update, m.t_meas)
    return out


def _prune(history: list[Snapshot], t_filter: int, delta_max: int) -> list[Snapshot]:
    return [s for s in history if s.t >= t_filter - delta_max]


def _ingest_forward(state: TrackState, m: Measurement, params: FilterParams) -> Disposition:
    """Synchronous or forward ingest; mutates ``state``. Caller checks range."""
    dt = m.t_meas - state.t_filter
    if abs(dt) <= params.epsilon_s:
        state.x, state.P = _update_arrays(state.x, state.P, m)
        last = state.history[-1]
        if last.t == state.t_filter:
            state.history[-1] = Snapshot(last.t, state.x.copy(), state.P.copy(),
                                         last.measurements + (m,))
        else:
            state.history.append(Snapshot(state.t_filter, state.x.copy(), state.P.copy(), (m,)))
        disposition = Disposition.SYNCHRONOUS
    else:
        x, P = _predict_arrays(state.x, state.P, dt, params)
        state.x, state.P = _update_arrays(x, P, m)
        state.t_filter = m.t_meas
        state.history.append(Snapshot(state.t_filter, state.x.copy(), state.P.copy(), (m,)))
        disposition = Disposition.ASYNCHRONOUS
    state.last_gt_id = m.gt_id
    state.last_update = max(state.last_update, m.t_meas)
    return disposition


def ingest(state: TrackState, m: Measurement,
           params: FilterParams = FilterParams()) -> tuple[TrackState, Disposition, DiscardReason | None]:
    """Fold one measurement into a track according to its timestamp.

    Returns the new state, how the measurement was handled and, for
    discarded measurements, why. A discarded measurement returns the
    input state object untouched.
    """
    lag = state.t_filter - m.t_meas
    if lag > params.delta_max:
        return state, Disposition.DISCARDED, DiscardReason.TOO_OLD
    if -lag > params.delta_max:
        return state, Disposition.DISCARDED, DiscardReason.TOO_NEW

    if lag <= params.epsilon_s:
        out = state.copy()
        disposition = _ingest_forward(out, m, params)
        out.history = _prune(out.history, out.t_filter, params.delta_max)
        return out, disposition, None

    # out of sequence: restart from the latest snapshot at or before t_meas
    base_idx = None
    for i, snap in enumerate(state.history):
        if snap.t <= m.t_meas:
            base_idx = i
        else:
            break
    if base_idx is None:
        return state, Disposition.DISCARDED, DiscardReason.HISTORY_UNDERFLOW

    base = state.history[base_idx]
    replay = [m]
    for snap in state.history[base_idx + 1:]:
        replay.extend(snap.measurements)
    # stable sort keeps the original order of equal timestamps
    replay.sort(key=lambda meas: meas.t_meas)

    out = state.copy()
    out.x, out.P, out.t_filter = base.x.copy(), base.P.copy(), base.t
    out.history = state.history[:base_idx + 1]
    for meas in replay:
        _ingest_forward(out, meas, params)
    out.last_gt_id = state.last_gt_id
    out.last_update = max(state.last_update, m.t_meas)
    out.history = _prune(out.history, out.t_filter, params.delta_max)
    return out, Disposition.OUT_OF_SEQUENCE, None


@dataclass(frozen=True)
class FusedEstimate:
    box: BEVBox
    velocity: tuple[float, float]
    position_std: tuple[float, float]
    P: np.ndarray


def fused_box(state: TrackState, at: int | None = None,
              params: FilterParams = FilterParams()) -> FusedEstimate:
    """Read out the track as a box, optionally at another time.

    Queries before ``t_filter`` start from the newest snapshot at or
    before ``at``; the mean is then carried forward to ``at``. No state
    is modified.
    """
    x, P, t0 = state.x, state.P, state.t_filter
    if at is not None and at < state.t_filter:
        older = [s for s in state.history if s.t <= at]
        if older:
            x, P, t0 = older[-1].x, older[-1].P, older[-1].t
    if at is not None and at != t0:
        x, P = _predict_arrays(x, P, at - t0, params)
    box = BEVBox(float(x[X]), float(x[Y]), max(float(x[W]), 1e-6),
                 max(float(x[D]), 1e-6), float(x[TH]))
    return FusedEstimate(box, (float(x[VX]), float(x[VY])),
                         (math.sqrt(max(P[X, X], 0.0)), math.sqrt(max(P[Y, Y], 0.0))), P.copy())
