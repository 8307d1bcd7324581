import csv
import json

import pytest

from latefuse.cli import main, parse_duration, parse_objects
from latefuse.io import load_scene

SMALL = ["--objects", "6", "--duration", "2s", "--seed", "7"]


def read_summary(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def scene_dir(tmp_path):
    out = tmp_path / "scene"
    assert main(["synth", *SMALL, "--out", str(out)]) == 0
    return out


class TestParsing:
    def test_durations(self):
        assert parse_duration("10s") == 10_000_000
        assert parse_duration("500ms") == 500_000
        assert parse_duration("250us") == 250
        assert parse_duration("2") == 2_000_000

    def test_bad_duration(self):
        from latefuse.cli import UsageError
        with pytest.raises(UsageError):
            parse_duration("ten")

    def test_objects(self):
        assert parse_objects("car=3,bus=1") == {"car": 3, "bus": 1}
        assert sum(parse_objects("20").values()) == 20


class TestSynth:
    def test_writes_scene(self, scene_dir):
        scene = load_scene(scene_dir / "scene.jsonl")
        assert len(scene.frames) == 5 and scene.n_objects == 30

    def test_refuses_overwrite(self, scene_dir):
        assert main(["synth", *SMALL, "--out", str(scene_dir)]) == 1
        assert main(["synth", *SMALL, "--out", str(scene_dir), "--force"]) == 0

    def test_same_seed_same_file(self, scene_dir, tmp_path):
        assert main(["synth", *SMALL, "--out", str(tmp_path / "b")]) == 0
        assert (scene_dir / "scene.jsonl").read_bytes() == (tmp_path / "b/scene.jsonl").read_bytes()

    def test_invalid_spec(self, tmp_path):
        assert main(["synth", "--objects", "car=-1", "--out", str(tmp_path)]) == 1
        assert main(["synth", "--bogus"]) == 1


class TestFuseEval:
    def test_unknown_method(self, scene_dir, tmp_path, capsys):
        code = main(["fuse", "--scene", str(scene_dir / "scene.jsonl"), "--methods", "kalman",
                     "--out", str(tmp_path)])
        assert code == 2
        assert "unikf, wls, nms-std, nms-giou, wbf, psa, dist-late, none" in capsys.readouterr().err

    def test_fuse_then_eval(self, scene_dir, tmp_path):
        scene = str(scene_dir / "scene.jsonl")
        assert main(["fuse", "--scene", scene, "--methods", "unikf,none", "--noise",
                     "noise1,noise3", "--trials", "2", "--jobs", "1", "--out", str(tmp_path)]) == 0
        files = sorted(p.name for p in (tmp_path / "fused").iterdir())
        assert files == ["noise1+noise3__none.jsonl", "noise1+noise3__unikf.jsonl"]
        trials = {json.loads(line)["trial"]
                  for line in (tmp_path / "fused/noise1+noise3__unikf.jsonl").open()}
        assert trials == {0, 1}
        out = tmp_path / "ev"
        assert main(["eval", "--scene", scene, "--predictions", str(tmp_path / "fused"),
                     "--out", str(out)]) == 0
        rows = read_summary(out / "summary.csv")
        assert {r["method"] for r in rows} == {"unikf", "none"}
        assert all(r["trials"] == "2" for r in rows)

    def test_exact_copy_scores_perfectly(self, scene_dir, tmp_path):
        path = scene_dir / "scene.jsonl"
        scene = load_scene(path)
        with open(tmp_path / "copy.jsonl", "w") as fh:
            for f in scene.frames:
                for o in f.objects:
                    b = o.box
                    fh.write(json.dumps({"t_eval_us": f.t, "gt_id": o.gt_id, "class": o.class_label,
                                         "x": b.x, "y": b.y, "w": b.w, "d": b.d,
                                         "yaw_rad": b.theta}) + "\n")
        assert main(["eval", "--scene", str(path), "--predictions", str(tmp_path / "copy.jsonl"),
                     "--out", str(tmp_path / "ev")]) == 0
        (row,) = read_summary(tmp_path / "ev/summary.csv")
        assert float(row["mATE_m"]) == float(row["mAOE_deg"]) == float(row["mADE_m"]) == 0.0
        assert float(row["precision"]) == float(row["recall"]) == 1.0

    def test_mismatched_files(self, scene_dir, tmp_path):
        (tmp_path / "p.jsonl").write_text(json.dumps(
            {"t_eval_us": 123, "gt_id": 0, "class": "car", "x": 0, "y": 0, "w": 1, "d": 1,
             "yaw_rad": 0}) + "\n")
        assert main(["eval", "--scene", str(scene_dir / "scene.jsonl"), "--predictions",
                     str(tmp_path / "p.jsonl"), "--out", str(tmp_path / "ev")]) == 2


class TestBenchReport:
    ARGS = [*SMALL, "--trials", "2", "--methods", "unikf,nms-std", "--matrix",
            "noise1,noise1;noise3,noise3"]

    def test_blocks_and_jobs_independence(self, tmp_path, capsys):
        assert main(["bench", *self.ARGS, "--jobs", "1", "--out", str(tmp_path / "a")]) == 0
        assert main(["bench", *self.ARGS, "--jobs", "3", "--out", str(tmp_path / "b")]) == 0
        rows = read_summary(tmp_path / "a/summary.csv")
        assert len(rows) == 4
        for name in ("summary.csv", "frames.csv", "plot_data.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        capsys.readouterr()
        assert main(["report", "--out", str(tmp_path / "a")]) == 0
        assert "mAOE [deg]" in capsys.readouterr().out

    def test_report_missing(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == 1

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("objects = 4\nduration = 1s\ntrials = 1\nmethods = none\n"
                       "matrix = noise2,noise2\n")
        assert main(["bench", "--config", str(cfg), "--jobs", "1",
                     "--out", str(tmp_path / "o")]) == 0
        (row,) = read_summary(tmp_path / "o/summary.csv")
        assert (row["noise"], row["method"], row["trials"]) == ("noise2+noise2", "none", "1")
        cfg.write_text("colour = red\n")
        assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 2
