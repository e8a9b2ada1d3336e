import re

import pytest

from longitrack.cli import main, render_svg
from longitrack.trajectory import Trajectory, TrajectoryPoint


def traj(labels, pid="P1"):
    return Trajectory(pid, tuple(TrajectoryPoint(3 * i, 0.1 + 0.1 * i, l, 0, 0)
                                 for i, l in enumerate(labels)))


def test_svg_structure():
    svg = render_svg(traj([1, 1, 0, 0, 1]))
    assert svg.count("<polyline") == 1
    points = re.search(r'<polyline points="([^"]+)"', svg).group(1).split()
    assert len(points) == 5
    assert svg.count('class="band positive"') == 2
    assert svg.count('class="band negative"') == 1
    assert 'class="threshold"' in svg
    assert "#f5a623" in svg and "#4fc3d9" in svg


def test_svg_single_band_and_deterministic():
    svg = render_svg(traj([0, 0, 0]))
    assert svg.count('class="band') == 1
    assert render_svg(traj([0, 0, 0])) == svg
    assert "&lt;x&gt;" in render_svg(traj([0, 1], pid="<x>"))


def test_exit_codes(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "none.csv"), "--out", "x"]) == 2
    assert main(["bogus"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["preprocess", "--manifest", str(bad), "--out", str(tmp_path / "f.npz")]) == 3


def test_pipeline_smoke(tmp_path, capsys):
    spec = tmp_path / "spec.txt"
    spec.write_text("n_recovering = 2\nn_persistent_positive = 2\nn_healthy = 6\n"
                    "n_late_onset = 2\nmin_samples = 6\nmax_samples = 6\nseed = 2\n")
    cfg = tmp_path / "train.txt"
    cfg.write_text("epochs = 1\nhidden = 8\nembed_dim = 16\n")
    coh = tmp_path / "cohort"
    man = str(coh / "manifest.csv")
    feats = str(tmp_path / "feats.npz")
    ck = str(tmp_path / "model.bin")
    assert main(["synth", "--spec", str(spec), "--out", str(coh)]) == 0
    assert main(["preprocess", "--manifest", man, "--out", feats]) == 0
    assert main(["train", "--manifest", man, "--config", str(cfg), "--features", feats,
                 "--out", ck]) == 0
    assert (tmp_path / "model.log.csv").is_file()
    ev = tmp_path / "eval"
    assert main(["eval", "--manifest", man, "--checkpoint", ck, "--features", feats,
                 "--n-boot", "20", "--out", str(ev)]) == 0
    for name in ("metrics.csv", "summary.txt", "trajectories.csv", "dtw_paths.csv", "pca.csv"):
        assert (ev / name).is_file()
    tcsv = str(tmp_path / "t.csv")
    assert main(["trajectory", "--manifest", man, "--checkpoint", ck, "--participant", "P0000",
                 "--features", feats, "--out", tcsv]) == 0
    assert main(["trajectory", "--manifest", man, "--checkpoint", ck, "--participant", "NOPE",
                 "--features", feats, "--out", tcsv]) == 3
    svg = tmp_path / "p.svg"
    assert main(["plot", "--trajectory-csv", tcsv, "--out", str(svg)]) == 0
    assert svg.read_text().count("<polyline") == 1
    # multi-participant CSV needs --participant
    assert main(["plot", "--trajectory-csv", str(ev / "trajectories.csv"),
                 "--out", str(svg)]) == 2
    assert main(["report", "--eval-dir", str(ev), "--out", str(tmp_path / "r.txt")]) == 0
    assert "[detection]" in (tmp_path / "r.txt").read_text()
    (tmp_path / "broken.bin").write_bytes(b"LTRK")
    assert main(["trajectory", "--manifest", man, "--checkpoint", str(tmp_path / "broken.bin"),
                 "--participant", "P0000", "--out", tcsv]) == 3
