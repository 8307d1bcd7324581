"""File formats, noise presets and result writers.

Scenes and detections are JSON Lines, one object per line with named
fields; angles are radians in data files and degrees in configs and
reports.
"""
from __future__ import annotations

import configparser
import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geometry import BEVBox, wrap_angle
from .noise import Detection, Frame, GTObject, NoiseConfig, Scene

OUT_DIR_ENV = "LATEFUSE_OUT"
SCENE_FIELDS = ("scene_id", "t_us", "gt_id", "class", "x", "y", "w", "d", "yaw_rad", "vx", "vy")
DETECTION_FIELDS = ("t_meas_us", "t_recv_us", "source", "gt_id", "class", "x", "y", "w", "d",
                    "yaw_rad", "sigma_x", "sigma_y", "sigma_yaw", "sigma_w", "sigma_d", "flagged")


class SchemaError(ValueError):
    """A data file does not follow its record schema."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class NoisePreset:
    sigma_pos0: float  # m
    sigma_theta0_deg: float
    sigma_size: float
    iou_th: float
    dist_th: float  # m


# base levels and baseline thresholds per named level
NOISE_PRESETS: dict[str, NoisePreset] = {
    "noise1": NoisePreset(0.2, 0.2, 0.2, 0.5, 3.0),
    "noise2": NoisePreset(0.5, 5.0, 0.5, 0.5, 3.0),
    "noise3": NoisePreset(1.0, 10.0, 1.0, 0.3, 3.0),
}
K_POS = 0.01  # m of sigma per m of range
K_THETA_DEG = 0.1  # degrees of sigma per m of range


def resolve_noise_preset(name: str, clip_lo: float = 0.3, clip_hi: float = 3.0) -> NoiseConfig:
    key = name.strip().lower().replace("-", "").replace("_", "").replace(" ", "")
    if key not in NOISE_PRESETS:
        raise ConfigError(f"unknown noise preset {name!r}; valid: {', '.join(NOISE_PRESETS)}")
    p = NOISE_PRESETS[key]
    return NoiseConfig(
        sigma_x0=p.sigma_pos0, sigma_y0=p.sigma_pos0,
        sigma_theta0=math.radians(p.sigma_theta0_deg),
        k_x=K_POS, k_y=K_POS, k_theta=math.radians(K_THETA_DEG),
        sigma_alpha=p.sigma_size, sigma_beta=p.sigma_size,
        clip_lo=clip_lo, clip_hi=clip_hi,
    )


def preset_thresholds(names: Sequence[str]) -> tuple[float, float]:
    """(IoU, distance) thresholds for a sensor mix: the most permissive of its levels."""
    presets = []
    for n in names:
        key = n.strip().lower().replace("-", "").replace("_", "")
        if key not in NOISE_PRESETS:
            raise ConfigError(f"unknown noise preset {n!r}; valid: {', '.join(NOISE_PRESETS)}")
        presets.append(NOISE_PRESETS[key])
    return min(p.iou_th for p in presets), max(p.dist_th for p in presets)


# ---------------------------------------------------------------------------
# scenes

def _require(rec: Mapping, fields: Iterable[str], path, lineno: int) -> None:
    for f in fields:
        if f not in rec:
            raise SchemaError(f"{path}:{lineno}: missing field {f!r}")


def save_scene(scene: Scene, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in scene.frames:
            for o in frame.objects:
                b = o.box
                rec = dict(zip(SCENE_FIELDS, (scene.scene_id, frame.t, o.gt_id, o.class_label,
                                              b.x, b.y, b.w, b.d, b.theta, *o.velocity)))
                fh.write(json.dumps(rec) + "\n")


def load_scene(path: str | os.PathLike) -> Scene:
    frames: dict[int, list[GTObject]] = {}
    order: list[int] = []
    scene_id = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: not a JSON record ({exc.msg})") from exc
            _require(rec, SCENE_FIELDS, path, lineno)
            scene_id = scene_id or str(rec["scene_id"])
            t = int(rec["t_us"])
            if t not in frames:
                if order and t < order[-1]:
                    raise SchemaError(f"{path}:{lineno}: timestamps must not decrease")
                frames[t] = []
                order.append(t)
            try:
                box = BEVBox(float(rec["x"]), float(rec["y"]), float(rec["w"]), float(rec["d"]),
                             wrap_angle(float(rec["yaw_rad"])))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            frames[t].append(GTObject(int(rec["gt_id"]), str(rec["class"]), box,
                                      (float(rec["vx"]), float(rec["vy"]))))
    try:
        return Scene(scene_id or "empty", tuple(Frame(t, tuple(frames[t])) for t in order))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# detections

def detection_record(det: Detection, **extra) -> dict:
    b, s = det.box, det.sigma
    rec = dict(extra)
    rec.update(zip(DETECTION_FIELDS, (det.t_meas, det.t_recv, det.source, det.gt_id,
                                      det.class_label, b.x, b.y, b.w, b.d, b.theta,
                                      s[0], s[1], s[2], s[3], s[4], det.flagged)))
    return rec


def prediction_record(pred, t: int, **extra) -> dict:
    """Flat record for any fused output (baseline detection or UniKF object)."""
    if isinstance(pred, Detection):
        rec = detection_record(pred, **extra)
        rec["t_eval_us"] = t
        return rec
    b = pred.box
    rec = dict(extra)
    rec.update({"t_eval_us": t, "source": "fused", "gt_id": pred.gt_id, "class": pred.class_label,
                "x": b.x, "y": b.y, "w": b.w, "d": b.d, "yaw_rad": b.theta,
                "flagged": pred.flagged})
    return rec


@dataclass(frozen=True)
class LoadedPrediction:
    box: BEVBox
    gt_id: int
    class_label: str
    t: int
    flagged: bool = False


def write_jsonl(records: Iterable[Mapping], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_predictions(path: str | os.PathLike) -> list[tuple[dict, LoadedPrediction]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            _require(rec, ("t_eval_us", "gt_id", "class", "x", "y", "w", "d", "yaw_rad"),
                     path, lineno)
            box = BEVBox(rec["x"], rec["y"], rec["w"], rec["d"], rec["yaw_rad"])
            out.append((rec, LoadedPrediction(box, int(rec["gt_id"]), rec["class"],
                                              int(rec["t_eval_us"]), bool(rec.get("flagged")))))
    return out


# ---------------------------------------------------------------------------
# config files: flat ``key = value`` lines, comma-separated lists

def load_config(path: str | os.PathLike) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(parser["run"])


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "latefuse_out"))


# ---------------------------------------------------------------------------
# results

SUMMARY_FIELDS = ("noise", "method", "trials", "mATE_m", "mATE_std", "mADE_m", "mADE_std",
                  "mAOE_deg", "mAOE_std", "precision", "precision_std", "recall", "recall_std",
                  "sota_mATE_m", "sota_mADE_m", "sota_mAOE_deg")
FRAME_FIELDS = ("noise", "method", "trial", "t_us", "ate_m", "ade_m", "aoe_deg", "tp", "fp", "fn",
                "precision", "recall", "sota_ate_m", "sota_ade_m", "sota_aoe_deg")
PLOT_FIELDS = ("series", "noise", "method", "class", "metric", "mean", "std")


def _fmt(v: float | None, digits: int = 6) -> str:
    return "" if v is None else f"{v:.{digits}f}"


def summary_row(noise: str, method: str, s) -> dict[str, str]:
    deg = math.degrees
    return dict(zip(SUMMARY_FIELDS, (
        noise, method, str(s.n_trials),
        _fmt(s.m_ate.mean), _fmt(s.m_ate.std), _fmt(s.m_ade.mean), _fmt(s.m_ade.std),
        _fmt(deg(s.m_aoe.mean)), _fmt(deg(s.m_aoe.std)),
        _fmt(s.precision.mean), _fmt(s.precision.std), _fmt(s.recall.mean), _fmt(s.recall.std),
        _fmt(s.sota_ate.mean if s.sota_ate else None),
        _fmt(s.sota_ade.mean if s.sota_ade else None),
        _fmt(deg(s.sota_aoe.mean) if s.sota_aoe else None),
    )))


def frame_row(noise: str, method: str, trial: int, f) -> dict[str, str]:
    deg = math.degrees
    return dict(zip(FRAME_FIELDS, (
        noise, method, str(trial), str(f.t), _fmt(f.ate), _fmt(f.ade), _fmt(deg(f.aoe)),
        str(f.tp), str(f.fp), str(f.fn), _fmt(f.precision), _fmt(f.recall),
        _fmt(f.sota_ate), _fmt(f.sota_ade),
        _fmt(deg(f.sota_aoe) if f.sota_aoe is not None else None),
    )))


def _write_csv(path: Path, fields: Sequence[str], rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_results(results, out_dir: str | os.PathLike) -> list[Path]:
    """Write summary.csv, frames.csv and plot_data.csv for a finished run.

    ``results`` is a :class:`latefuse.pipeline.RunResults`.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    summaries = results.summaries()
    paths = [out / "summary.csv", out / "frames.csv", out / "plot_data.csv"]
    _write_csv(paths[0], SUMMARY_FIELDS,
               (summary_row(noise, method, s) for (noise, method), s in summaries))
    _write_csv(paths[1], FRAME_FIELDS,
               (frame_row(noise, method, trial, f)
                for (noise, method), trials in results.frames()
                for trial, frames in enumerate(trials) for f in frames))
    _write_csv(paths[2], PLOT_FIELDS, plot_rows(results))
    return paths


def plot_rows(results) -> Iterable[dict[str, str]]:
    """Metric-vs-noise series per method plus per-class breakdowns."""
    for (noise, method), s in results.summaries():
        for metric, stat, scale in (("mATE", s.m_ate, 1.0), ("mADE", s.m_ade, 1.0),
                                    ("mAOE_deg", s.m_aoe, math.degrees(1.0)),
                                    ("precision", s.precision, 1.0), ("recall", s.recall, 1.0)):
            yield dict(zip(PLOT_FIELDS, ("by_noise", noise, method, "all", metric,
                                         _fmt(stat.mean * scale), _fmt(stat.std * scale))))
    for (noise, method, cls), s in results.class_summaries():
        for metric, stat, scale in (("mATE", s.m_ate, 1.0), ("mAOE_deg", s.m_aoe, math.degrees(1.0))):
            yield dict(zip(PLOT_FIELDS, ("by_class", noise, method, cls, metric,
                                         _fmt(stat.mean * scale), _fmt(stat.std * scale))))
