"""Command-line entry point: ``latefuse {synth,fuse,eval,bench,report}``.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import (SUMMARY_FIELDS, ConfigError, SchemaError, default_out_dir, load_config,
                 load_predictions, load_scene, prediction_record, save_scene, write_jsonl,
                 write_results)
from .noise import CLASS_PROFILES, SceneSpec, synth_scene
from .pipeline import (METHODS, MethodRun, RunResults, _score, check_methods,
                       experiment_for_noise, realize_trial, run_method)

log = logging.getLogger("latefuse")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

# class mix used when --objects is a bare count
DEFAULT_MIX = ("car", "pedestrian", "car", "truck", "bicycle", "car", "barrier", "bus",
               "pedestrian", "motorcycle", "car", "traffic_cone")

_UNITS = {"us": 1, "ms": 1_000, "s": 1_000_000}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_duration(text: str) -> int:
    """``"10s"``, ``"500ms"``, ``"250us"`` or a bare number of seconds, to microseconds."""
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*(us|ms|s)?\s*", text)
    if not m:
        raise UsageError(f"bad duration {text!r}; use e.g. 10s, 500ms, 250us")
    value = float(m.group(1)) * _UNITS[m.group(2) or "s"]
    if value != round(value):
        raise UsageError(f"duration {text!r} is not a whole number of microseconds")
    return int(round(value))


def parse_objects(text: str) -> dict[str, int]:
    """A bare total spread over a fixed class mix, or ``car=12,pedestrian=4``."""
    text = text.strip()
    if text.isdigit():
        counts: dict[str, int] = defaultdict(int)
        for i in range(int(text)):
            counts[DEFAULT_MIX[i % len(DEFAULT_MIX)]] += 1
        return dict(counts)
    out = {}
    for part in _split(text):
        name, _, n = part.partition("=")
        if not n.strip().isdigit():
            raise UsageError(f"bad object count {part!r}; use class=count")
        if name.strip() not in CLASS_PROFILES:
            raise UsageError(f"unknown class {name.strip()!r}; known: {', '.join(sorted(CLASS_PROFILES))}")
        out[name.strip()] = int(n)
    return out


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _durations(text: str | None) -> list[int] | None:
    return [parse_duration(p) for p in _split(text)] if text else None


# ---------------------------------------------------------------------------
# option handling: flags override --config values, which override defaults

DEFAULTS = {
    "seed": "0", "jobs": str(os.cpu_count() or 1), "trials": "5", "methods": ",".join(METHODS),
    "noise": "noise1,noise1", "objects": "40", "duration": "10s", "period": "500ms",
    "radius": "50", "accel_std": "1.5", "sensor_period": "500ms",
}


def _resolve(args: argparse.Namespace, keys: Sequence[str]) -> None:
    config = load_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(config) - set(DEFAULTS) - {"out", "scene", "matrix"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in (*keys, *(k for k in ("out", "scene", "matrix") if hasattr(args, k))):
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, DEFAULTS.get(key)))


def _int(value: str, name: str, lo: int = 0) -> int:
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{name} expects an integer, got {value!r}") from None
    if v < lo:
        raise UsageError(f"--{name} must be >= {lo}")
    return v


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else default_out_dir()


def _guard(paths: Sequence[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing)}; pass --force")


# ---------------------------------------------------------------------------
# subcommands

def _scene_spec(args) -> SceneSpec:
    try:
        return SceneSpec(objects=parse_objects(args.objects),
                         duration=parse_duration(args.duration),
                         frame_period=parse_duration(args.period),
                         radius=float(args.radius), accel_std=float(args.accel_std))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args) -> int:
    _resolve(args, ("seed", "objects", "duration", "period", "radius", "accel_std"))
    spec = _scene_spec(args)
    out = _out_dir(args) / "scene.jsonl"
    _guard([out], args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    scene = synth_scene(spec, np.random.default_rng(_int(args.seed, "seed")))
    save_scene(scene, out)
    print(f"{out}: {len(scene.frames)} frames, {scene.n_objects} object rows")
    return EXIT_OK


def _experiment_args(args):
    _resolve(args, ("seed", "jobs", "trials", "methods", "noise", "sensor_period"))
    methods = check_methods(_split(args.methods))
    noise = _split(args.noise)
    if not noise:
        raise UsageError("--noise needs at least one preset")
    kw = {}
    if args.periods:
        kw["periods"] = _durations(args.periods)
    if args.latencies:
        kw["latencies"] = _durations(args.latencies)
    for key, vals in kw.items():
        if len(vals) != len(noise):
            raise UsageError(f"--{key} needs one value per sensor ({len(noise)})")
    exp = experiment_for_noise(noise, methods, period=parse_duration(args.sensor_period), **kw)
    return exp, _int(args.trials, "trials", 1), _int(args.seed, "seed"), _int(args.jobs, "jobs", 1)


def _load_scene_arg(args):
    if not args.scene:
        raise UsageError("--scene is required")
    return load_scene(args.scene)


def _fuse_job(payload):
    scene, exp, seed, trial = payload
    streams = realize_trial(scene, exp.sensors, seed, trial)
    return {m: run_method(m, scene, streams, exp.sensors, exp.params) for m in exp.methods}


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_fuse(args) -> int:
    exp, trials, seed, jobs = _experiment_args(args)
    scene = _load_scene_arg(args)
    out = _out_dir(args) / "fused"
    targets = [out / f"{exp.label}__{m}.jsonl" for m in exp.methods]
    _guard(targets, args.force)
    out.mkdir(parents=True, exist_ok=True)
    results = _map(_fuse_job, [(scene, exp, seed, t) for t in range(trials)], jobs)
    for method, path in zip(exp.methods, targets):
        records = (prediction_record(p, t, noise=exp.label, method=method, trial=trial)
                   for trial, runs in enumerate(results)
                   for t, preds in sorted(runs[method].predictions.items()) for p in preds)
        write_jsonl(records, path)
        print(f"{path}: {trials} trial(s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    _resolve(args, ())
    scene = _load_scene_arg(args)
    if not args.predictions:
        raise UsageError("--predictions needs at least one file or directory")
    files: list[Path] = []
    for p in map(Path, args.predictions):
        files.extend(sorted(p.glob("*.jsonl")) if p.is_dir() else [p])
    if not files:
        raise UsageError("no prediction files found")
    times = {f.t for f in scene.frames}
    grouped: dict[tuple[str, str], dict[int, dict[int, list]]] = defaultdict(lambda: defaultdict(dict))
    for path in files:
        for rec, pred in load_predictions(path):
            if pred.t not in times:
                raise SchemaError(f"{path}: prediction time {pred.t} us has no frame in {args.scene}")
            key = (str(rec.get("noise", "-")), str(rec.get("method", path.stem)))
            grouped[key][int(rec.get("trial", 0))].setdefault(pred.t, []).append(pred)
    runs = {}
    for key in sorted(grouped):
        trials = grouped[key]
        runs[key] = []
        for trial in sorted(trials):
            frames, per_class = _score(scene, trials[trial])
            runs[key].append(MethodRun(frames, per_class, trials[trial]))
    out = _out_dir(args)
    _guard([out / "summary.csv"], args.force)
    for path in write_results(RunResults(runs), out):
        print(path)
    return EXIT_OK


def _parse_matrix(text: str) -> list[list[str]]:
    return [_split(block) for block in text.split(";") if block.strip()]


def cmd_bench(args) -> int:
    _resolve(args, ("seed", "jobs", "trials", "methods", "objects", "duration", "period",
                    "radius", "accel_std", "sensor_period"))
    if args.scene:
        scene = load_scene(args.scene)
    else:
        scene = synth_scene(_scene_spec(args), np.random.default_rng(_int(args.seed, "seed")))
    methods = check_methods(_split(args.methods))
    matrix = _parse_matrix(args.matrix or "noise1,noise1;noise2,noise2;noise3,noise3;noise1,noise3")
    trials, seed, jobs = _int(args.trials, "trials", 1), _int(args.seed, "seed"), _int(args.jobs, "jobs", 1)
    period = parse_duration(args.sensor_period)
    exps = []
    for noise in matrix:
        ms = methods if len(noise) > 1 else [m for m in methods if m == "none"] or ["none"]
        exps.append(experiment_for_noise(noise, ms, period=period))
    if args.single:
        for level in sorted({n for noise in matrix for n in noise}):
            exps.append(experiment_for_noise([level], ["none"], period=period))
    out = _out_dir(args)
    _guard([out / "summary.csv"], args.force)
    tasks = [(scene, exp, seed, t) for exp in exps for t in range(trials)]
    outcomes = _map(_fuse_job, tasks, jobs)
    runs: dict[tuple[str, str], list[MethodRun]] = {}
    for (_, exp, _, _), result in zip(tasks, outcomes):
        for method in exp.methods:
            runs.setdefault((exp.label, method), []).append(result[method])
    results = RunResults(runs)
    for path in write_results(results, out):
        print(path)
    print(render_summary(results_rows(results)))
    return EXIT_OK


def results_rows(results: RunResults) -> list[dict[str, str]]:
    from .io import summary_row
    return [summary_row(noise, method, s) for (noise, method), s in results.summaries()]


def render_summary(rows: Sequence[dict[str, str]]) -> str:
    """Plain-text table of mean ± std per (noise, method); mAOE in degrees."""
    head = ("noise", "method", "mATE [m]", "mAOE [deg]", "mADE [m]", "precision", "recall",
            "sota mATE [m]")

    def pm(row, mean, std, scale=1.0, digits=2):
        if row.get(mean, "") == "":
            return "-"
        return f"{float(row[mean]) * scale:.{digits}f} ± {float(row[std]) * scale:.{digits}f}"

    body = []
    for r in rows:
        sota = r.get("sota_mATE_m", "")
        body.append((r["noise"], r["method"], pm(r, "mATE_m", "mATE_std"),
                     pm(r, "mAOE_deg", "mAOE_std"), pm(r, "mADE_m", "mADE_std"),
                     pm(r, "precision", "precision_std", 100.0, 1),
                     pm(r, "recall", "recall_std", 100.0, 1),
                     f"{float(sota):.2f}" if sota else "-"))
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip()
             for row in [head, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_report(args) -> int:
    path = Path(args.summary) if args.summary else _out_dir(args) / "summary.csv"
    if not path.exists():
        raise UsageError(f"{path} not found; run bench or eval first")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_FIELDS:
            raise SchemaError(f"{path}: not a summary file")
        rows = list(reader)
    print(render_summary(rows))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latefuse", description="Late fusion of noisy BEV detections.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, jobs=False):
        sp.add_argument("--seed")
        sp.add_argument("--out", help="output directory (default $LATEFUSE_OUT or ./latefuse_out)")
        sp.add_argument("--config", help="flat key = value file; flags take precedence")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if jobs:
            sp.add_argument("--jobs", help="parallel trials (default: CPU count)")

    def scene_flags(sp):
        sp.add_argument("--objects", help="total count or class=count list")
        sp.add_argument("--duration", help="scene length, e.g. 10s")
        sp.add_argument("--period", help="scene frame period, e.g. 500ms")
        sp.add_argument("--radius", help="placement radius in m")
        sp.add_argument("--accel-std", dest="accel_std", help="mover acceleration std in m/s^2")

    def sensor_flags(sp):
        sp.add_argument("--methods", help=f"comma list from {', '.join(METHODS)}")
        sp.add_argument("--trials")
        sp.add_argument("--sensor-period", dest="sensor_period", help="sensor frame period")

    s = sub.add_parser("synth", help="generate a synthetic scene")
    common(s)
    scene_flags(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fuse", help="perturb, associate and fuse a scene")
    common(s, jobs=True)
    sensor_flags(s)
    s.add_argument("--scene")
    s.add_argument("--noise", help="one preset per sensor, e.g. noise1,noise3")
    s.add_argument("--periods", help="per-sensor periods, e.g. 100ms,70ms")
    s.add_argument("--latencies", help="per-sensor latencies, e.g. 0ms,50ms")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", help="score fused predictions against a scene")
    common(s)
    s.add_argument("--scene")
    s.add_argument("--predictions", nargs="+")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="full method x noise matrix")
    common(s, jobs=True)
    scene_flags(s)
    sensor_flags(s)
    s.add_argument("--scene", help="use a saved scene instead of synthesizing one")
    s.add_argument("--matrix", help="semicolon-separated sensor setups, e.g. noise1,noise1;noise3,noise3")
    s.add_argument("--single", action="store_true", help="add single-detector rows per level")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", help="print a summary table")
    s.add_argument("--summary", help="summary.csv path")
    s.add_argument("--out", help="directory holding summary.csv")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - top-level exit-code mapping
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
