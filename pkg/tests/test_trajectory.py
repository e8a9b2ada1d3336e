import numpy as np
import pytest

from conftest import make_participant
from longitrack.errors import DataError, NoHistory, TooFewSamples
from longitrack.model import ModelConfig, init_params
from longitrack.trajectory import (
    Predictor,
    Trajectory,
    TrajectoryPoint,
    read_trajectories,
    truncated_runs,
    write_trajectories,
)

CFG = ModelConfig(patch_frames=8, n_mels=8, conv1=2, conv2=3, embed_dim=8, hidden=4)


class StubBank:
    """Deterministic fake patches keyed by clip name; records every request."""

    def __init__(self):
        self.overrides = {}
        self.requests = []

    def patches(self, path):
        name = str(path).rsplit("/", 1)[-1]
        self.requests.append(name)
        if name in self.overrides:
            return self.overrides[name]
        seed = sum(name.encode()) * 31 + len(name)
        return np.random.default_rng(seed).normal(size=(2, 8, 8))


def predictor(bank=None, seed=0):
    return Predictor(init_params(CFG, seed), bank or StubBank())


def test_lookback_edge_cases():
    pred = predictor()
    assert 0 <= pred.predict_day(make_participant([0, 56]), 56) <= 1
    with pytest.raises(NoHistory):
        pred.predict_day(make_participant([0, 60]), 60)
    with pytest.raises(NoHistory):
        pred.predict_day(make_participant([0, 5]), 0)
    with pytest.raises(NoHistory):
        pred.predict_day(make_participant([0, 5]), 3)


def test_prediction_is_causal_and_windowed():
    p = make_participant([0, 10, 70, 80, 90, 120])
    bank = StubBank()
    base = predictor(bank).predict_day(p, 90)
    rng = np.random.default_rng(1)
    # day 0 and 10 are outside the 56-day lookback of day 90; 120 is in the future
    for d in (0, 10, 120):
        for kind in "bcv":
            bank.overrides[f"{kind}{d}.wav"] = rng.normal(size=(3, 8, 8)) * 50
    assert predictor(bank).predict_day(p, 90) == base
    bank.overrides["v80.wav"] = rng.normal(size=(2, 8, 8))
    assert predictor(bank).predict_day(p, 90) != base


def test_trajectory_skips_and_too_few():
    pred = predictor()
    traj = pred.predict_trajectory(make_participant([0, 3, 100, 104], labels=[0, 1, 1, 0]))
    assert [pt.day for pt in traj.points] == [3, 104]
    assert traj.skipped_days == (100,)
    assert traj.points[0].history == 1 and traj.points[0].history_days == 3
    with pytest.raises(TooFewSamples):
        pred.predict_trajectory(make_participant([4]))


def test_latents_shape():
    days, lat = predictor().extract_latents(make_participant([0, 2, 4, 7]))
    assert days.tolist() == [2, 4, 7] and lat.shape == (3, 4)
    assert np.all(np.abs(lat) <= 1)


def test_truncated_runs():
    p = make_participant([0, 2, 4, 6, 8, 30])
    runs = truncated_runs(predictor(), [p], "samples", caps=[1, 2, 6])
    full = predictor().predict_trajectory(p)
    assert [pt.probability for pt in runs[6][0].points] == [pt.probability for pt in full.points]
    assert all(pt.history == 0 for pt in runs[1][0].points)
    assert [pt.day for pt in runs[2][0].points] == [pt.day for pt in full.points]
    by_days = truncated_runs(predictor(), [p], "days", caps=[0, 4])
    assert [pt.history_days for pt in by_days[4][0].points] == [2, 4, 4, 4, 0]
    with pytest.raises(ValueError):
        truncated_runs(predictor(), [p], "weeks")


def test_trajectory_csv_round_trip(tmp_path):
    t = Trajectory("A", (TrajectoryPoint(2, 0.25, 1, 1, 2), TrajectoryPoint(5, 0.75, 0, 2, 5)))
    path = tmp_path / "t.csv"
    write_trajectories(path, [t])
    lines = path.read_text().splitlines()
    assert lines[1] == "A,2,0.250000,0,1"
    back = read_trajectories(path)[0]
    assert back.participant_id == "A"
    assert back.probs.tolist() == [0.25, 0.75] and back.labels.tolist() == [1, 0]
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(DataError):
        read_trajectories(tmp_path / "bad.csv")
