"""Per-day inference over each participant's recording history.

A prediction for day ``d`` runs the GRU over every sample in
``[d - 56, d]``.  Only past and current samples are visible, and the first
sample of a participant is never scored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import Participant, RecordingSample
from .errors import DataError, NoHistory, TooFewSamples
from .model import Params, embed_patches, forward_window

LOOKBACK_DAYS = 56
THRESHOLD = 0.5


@dataclass(frozen=True)
class TrajectoryPoint:
    day: int
    probability: float
    label: int
    history: int  # number of earlier samples inside the lookback
    history_days: int  # current day minus first day in the lookback
    symptom_count: int = 0

    @property
    def predicted_class(self) -> int:
        return int(self.probability >= THRESHOLD)


@dataclass(frozen=True)
class Trajectory:
    participant_id: str
    points: tuple[TrajectoryPoint, ...]
    skipped_days: tuple[int, ...] = ()

    @property
    def days(self) -> np.ndarray:
        return np.array([p.day for p in self.points])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p.probability for p in self.points])

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.points], dtype=int)

    @property
    def predicted(self) -> np.ndarray:
        return (self.probs >= THRESHOLD).astype(int)

    def __len__(self):
        return len(self.points)


class Predictor:
    """Read-only inference wrapper around trained parameters.

    Recording embeddings are memoized per clip path; parameters must not change
    while a predictor is alive.
    """

    def __init__(self, params: Params, bank, root: Path | str = "."):
        self.params = params
        self.bank = bank
        self.root = Path(root)
        self._emb: dict[str, np.ndarray] = {}

    def _embedding(self, rel: str) -> np.ndarray:
        if rel not in self._emb:
            emb, _ = embed_patches(self.bank.patches(self.root / rel), self.params)
            self._emb[rel] = emb.mean(axis=0)
        return self._emb[rel]

    def day_vector(self, sample: RecordingSample) -> np.ndarray:
        return np.concatenate([self._embedding(rel) for rel in sample.clips])

    def history(self, participant: Participant, day: int) -> list[RecordingSample]:
        """Samples within the lookback up to and including ``day``."""
        if day not in participant.days:
            raise NoHistory(f"{participant.id} has no sample on day {day}")
        hist = [s for s in participant.samples if day - LOOKBACK_DAYS <= s.day <= day]
        if len(hist) < 2:
            raise NoHistory(f"{participant.id} day {day}: no earlier sample within "
                            f"{LOOKBACK_DAYS} days")
        return hist

    def run(self, samples: list[RecordingSample]):
        x = np.stack([self.day_vector(s) for s in samples])
        return forward_window(x, self.params)

    def predict_day(self, participant: Participant, day: int) -> float:
        out = self.run(self.history(participant, day))
        return float(out.probs[0, -1])

    def latent_day(self, participant: Participant, day: int) -> np.ndarray:
        out = self.run(self.history(participant, day))
        return out.trace.h[-1][0].copy()

    def predict_trajectory(self, participant: Participant, max_samples: int | None = None,
                           max_days: int | None = None) -> Trajectory:
        """Predictions for every evaluable day after the first sample.

        ``max_samples`` / ``max_days`` truncate the input history without
        changing which days are evaluated.
        """
        if len(participant.samples) < 2:
            raise TooFewSamples(f"{participant.id} has {len(participant.samples)} sample(s)")
        points, skipped = [], []
        for s in participant.samples[1:]:
            try:
                hist = self.history(participant, s.day)
            except NoHistory:
                skipped.append(s.day)
                continue
            if max_days is not None:
                hist = [h for h in hist if h.day >= s.day - max_days]
            if max_samples is not None:
                hist = hist[-max_samples:]
            p = float(self.run(hist).probs[0, -1])
            points.append(TrajectoryPoint(s.day, p, s.label, len(hist) - 1,
                                          s.day - hist[0].day, s.symptom_count))
        return Trajectory(participant.id, tuple(points), tuple(skipped))

    def extract_latents(self, participant: Participant) -> tuple[np.ndarray, np.ndarray]:
        """Final-step hidden state for every evaluable day: ``(days, latents)``."""
        if len(participant.samples) < 2:
            raise TooFewSamples(f"{participant.id} has {len(participant.samples)} sample(s)")
        days, latents = [], []
        for s in participant.samples[1:]:
            try:
                latents.append(self.latent_day(participant, s.day))
            except NoHistory:
                continue
            days.append(s.day)
        H = self.params["U_z"].shape[0]
        return np.array(days, dtype=int), np.array(latents).reshape(len(days), H)


def truncated_runs(predictor: Predictor, participants, kind: str = "samples",
                   caps=None) -> dict[int, list[Trajectory]]:
    """Trajectories recomputed with the history capped at each value of ``caps``.

    ``kind`` is ``"samples"`` (most recent n samples, default caps 1..12) or
    ``"days"`` (samples no older than n days, default caps 0, 4, ..., 56).
    """
    if kind not in ("samples", "days"):
        raise ValueError(f"kind must be 'samples' or 'days', got {kind!r}")
    if caps is None:
        caps = range(1, 13) if kind == "samples" else range(0, LOOKBACK_DAYS + 1, 4)
    key = "max_samples" if kind == "samples" else "max_days"
    people = [p for p in participants if len(p.samples) >= 2]
    return {int(c): [predictor.predict_trajectory(p, **{key: int(c)}) for p in people]
            for c in caps}


def predict_day(participant: Participant, day: int, checkpoint, bank, root=".") -> float:
    return Predictor(checkpoint.params, bank, root).predict_day(participant, day)


def predict_trajectory(participant: Participant, checkpoint, bank, root=".") -> Trajectory:
    return Predictor(checkpoint.params, bank, root).predict_trajectory(participant)


def extract_latents(participant: Participant, checkpoint, bank, root="."):
    return Predictor(checkpoint.params, bank, root).extract_latents(participant)


TRAJECTORY_HEADER = ["participant_id", "day", "probability", "predicted_class", "label"]


def write_trajectories(path, trajectories) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for traj in trajectories:
            for p in traj.points:
                w.writerow([traj.participant_id, p.day, f"{p.probability:.6f}",
                            p.predicted_class, p.label])


def read_trajectories(path) -> list[Trajectory]:
    by_pid: dict[str, list[TrajectoryPoint]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_HEADER:
            raise DataError(f"{path}: header must be {','.join(TRAJECTORY_HEADER)}")
        for row in reader:
            by_pid.setdefault(row["participant_id"], []).append(TrajectoryPoint(
                int(row["day"]), float(row["probability"]), int(row["label"]), 0, 0))
    return [Trajectory(pid, tuple(sorted(pts, key=lambda p: p.day)))
            for pid, pts in by_pid.items()]
