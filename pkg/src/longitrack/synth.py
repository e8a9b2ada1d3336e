"""Synthetic longitudinal cohorts with known severity ground truth.

Each participant follows a latent severity curve s(t) in [0, 1]; the test
label on a day is ``s(t) >= 0.5``.  Severity degrades the voice's harmonic
structure (pitch jitter, breathy noise), lengthens and darkens coughs, and
makes breathing cycles irregular.  Per-day recording conditions add nuisance
variation that is independent of severity, so a single day is a noisy
witness while a run of days is more reliable.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioClip, write_wav
from .config import dataclass_from_kv, parse_kv_file
from .errors import ConfigError, IoFailure

log = logging.getLogger(__name__)

ARCHETYPES = ("recovering", "persistent_positive", "healthy", "late_onset")
LANGUAGES = ("en", "it", "es", "pt", "fr", "de", "el", "ru")
GENDERS = ("female", "male", "other")
AGE_BANDS = ("16-29", "30-39", "40-49", "50-59", "60+")

MANIFEST_HEADER = ["participant_id", "day", "breath_path", "cough_path", "voice_path",
                   "label", "symptom_count", "language", "gender", "age_band"]

RATE = 16000


@dataclass
class CohortSpec:
    n_recovering: int = 30
    n_persistent_positive: int = 30
    n_healthy: int = 30
    n_late_onset: int = 30
    min_samples: int = 8
    max_samples: int = 12
    mean_gap: float = 3.0
    max_gap: int = 14
    gap_violation_rate: float = 0.0
    seed: int = 0
    day_nuisance: float = 0.5  # sd of per-day severity-like noise shared by all modalities
    modality_nuisance: float = 0.1  # extra independent noise per clip
    language_probs: tuple = (0.44, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08)
    gender_probs: tuple = (0.48, 0.48, 0.04)
    age_probs: tuple = (0.2, 0.25, 0.25, 0.2, 0.1)

    def counts(self) -> dict[str, int]:
        return {a: getattr(self, f"n_{a}") for a in ARCHETYPES}

    @property
    def n_participants(self) -> int:
        return sum(self.counts().values())

    @classmethod
    def from_file(cls, path) -> "CohortSpec":
        return dataclass_from_kv(cls, parse_kv_file(path), str(path))


@dataclass(frozen=True)
class SeverityTrajectory:
    archetype: str
    onset: float
    rise_days: float
    peak: float
    plateau_days: float
    decay_rate: float
    noise: np.ndarray = field(default=None, repr=False, compare=False)  # healthy only

    def __call__(self, days) -> np.ndarray:
        days = np.asarray(days, dtype=float)
        if self.archetype == "healthy":
            return np.asarray(self.noise, dtype=float)[: days.shape[0]]
        rise = np.clip((days - self.onset) / self.rise_days, 0.0, 1.0)
        s = self.peak * rise
        decay_start = self.onset + self.rise_days + self.plateau_days
        if self.decay_rate > 0:
            late = days > decay_start
            s[late] = self.peak * np.exp(-self.decay_rate * (days[late] - decay_start))
        return np.clip(s, 0.0, 1.0)


def draw_trajectory(archetype: str, span: float, n_days: int, rng) -> SeverityTrajectory:
    if archetype == "healthy":
        return SeverityTrajectory(archetype, 0.0, 1.0, 0.0, 0.0, 0.0,
                                  noise=rng.uniform(0.0, 0.08, size=n_days))
    peak = rng.uniform(0.8, 1.0)
    if archetype == "recovering":
        # positive from the start, crosses 0.5 somewhere in the middle third
        plateau = rng.uniform(0.25, 0.5) * span
        half_life_days = rng.uniform(0.1, 0.25) * span
        decay = np.log(2 * peak) / half_life_days
        return SeverityTrajectory(archetype, -3.0, 2.0, peak, plateau + 1.0, decay)
    if archetype == "persistent_positive":
        return SeverityTrajectory(archetype, -3.0, 2.0, peak, 1e9, 0.0)
    if archetype == "late_onset":
        onset = rng.uniform(0.3, 0.55) * span
        return SeverityTrajectory(archetype, onset, rng.uniform(2.0, 5.0), peak, 1e9, 0.0)
    raise ValueError(f"unknown archetype {archetype!r}")


# -- sound synthesis -----------------------------------------------------------

def _rng(seed):
    return np.random.default_rng(seed)


def synth_voice(s: float, seed, f0: float | None = None, language: int = 0,
                nuisance: float = 0.0, duration: float = 2.0, rate: int = RATE) -> AudioClip:
    """Sustained vowel: 8 harmonics of ``f0`` plus breath noise.

    Pitch jitter and broadband noise grow with ``s``; at ``s == 0`` (and no
    nuisance) the harmonics are clean.  ``nuisance`` adds severity-like
    degradation that carries no label information.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError("severity must lie in [0, 1]")
    rng = _rng(seed)
    if f0 is None:
        f0 = rng.uniform(120.0, 220.0)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    degr = float(np.clip(s + nuisance, 0.0, 1.5))
    # slow random pitch wander: smoothed noise, depth proportional to degradation
    wander = signal.lfilter([0.002], [1, -0.998], rng.standard_normal(n))
    wander /= max(np.max(np.abs(wander)), 1e-12)
    inst_f0 = f0 * (1.0 + 0.06 * degr * wander)
    phase = 2 * np.pi * np.cumsum(inst_f0) / rate
    colour = 1.0 + 0.35 * np.cos(np.arange(1, 9) * (1.0 + 0.7 * language))
    x = np.zeros(n)
    for k in range(1, 9):
        x += colour[k - 1] / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    x *= (1.0 - 0.5 * min(degr, 1.0))
    noise = rng.standard_normal(n)
    x += 0.6 * degr**1.2 * noise
    env = np.minimum(1.0, np.minimum(t / 0.05, (duration - t) / 0.05))
    x *= env
    return AudioClip(0.5 * x / np.max(np.abs(x)), rate)


def synth_cough(s: float, seed, nuisance: float = 0.0, rate: int = RATE) -> AudioClip:
    """Three burst-noise transients; severity lengthens and darkens them."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("severity must lie in [0, 1]")
    rng = _rng(seed)
    degr = float(np.clip(s + nuisance, 0.0, 1.5))
    duration = 1.2
    n = int(round(duration * rate))
    x = np.zeros(n)
    # first-order lowpass: larger pole -> steeper spectral tilt
    pole = min(0.3 + 0.55 * degr, 0.97)
    burst_len = 0.06 + 0.08 * degr
    for centre in (0.2, 0.55, 0.9):
        start = int((centre - 0.04 + rng.uniform(-0.02, 0.02)) * rate)
        m = int(burst_len * rate)
        tt = np.arange(m) / rate
        env = (1 - np.exp(-tt / 0.004)) * np.exp(-tt / (burst_len / 3))
        burst = signal.lfilter([1 - pole], [1, -pole], rng.standard_normal(m))
        burst /= np.max(np.abs(burst))
        x[start:start + m] += env * burst * rng.uniform(0.8, 1.0)
    x += 1e-3 * rng.standard_normal(n) * (np.abs(x) > 0)
    return AudioClip(0.7 * x / np.max(np.abs(x)), rate)


def synth_breath(s: float, seed, nuisance: float = 0.0, rate: int = RATE) -> AudioClip:
    """Four amplitude-modulated noise cycles; severity makes them irregular."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("severity must lie in [0, 1]")
    rng = _rng(seed)
    degr = float(np.clip(s + nuisance, 0.0, 1.5))
    cycle = 0.45
    lengths = cycle * (1.0 + 0.35 * degr * rng.uniform(-1, 1, size=4))
    env = np.concatenate([np.sin(np.pi * np.arange(int(L * rate)) / int(L * rate)) ** 2
                          for L in lengths])
    n = env.shape[0]
    b, a = signal.butter(2, [300 / (rate / 2), (3000 - 1800 * min(degr, 1.0)) / (rate / 2)],
                         btype="band")
    noise = signal.lfilter(b, a, rng.standard_normal(n))
    x = env * noise / np.max(np.abs(noise))
    return AudioClip(0.6 * x / np.max(np.abs(x)), rate)


# -- cohort generation -----------------------------------------------------------

def _draw_days(n: int, spec: CohortSpec, rng) -> np.ndarray:
    gaps = 1 + rng.poisson(spec.mean_gap - 1, size=n - 1)
    gaps = np.minimum(gaps, spec.max_gap)
    violate = rng.random(n - 1) < spec.gap_violation_rate
    gaps[violate] = rng.integers(spec.max_gap + 1, spec.max_gap + 8, size=violate.sum())
    return np.concatenate([[0], np.cumsum(gaps)]).astype(int)


@dataclass
class GeneratedParticipant:
    participant_id: str
    archetype: str
    language: str
    gender: str
    age_band: str
    days: np.ndarray
    severity: np.ndarray


def generate_cohort(spec: CohortSpec, out_dir) -> list[GeneratedParticipant]:
    """Write WAVs, ``manifest.csv`` and ``truth.csv`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "audio").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    if spec.min_samples < 1 or spec.max_samples < spec.min_samples:
        raise ConfigError("need 1 <= min_samples <= max_samples")

    people = []
    index = 0
    for archetype in ARCHETYPES:
        for _ in range(spec.counts()[archetype]):
            rng = _rng([spec.seed, index])
            pid = f"P{index:04d}"
            n = int(rng.integers(spec.min_samples, spec.max_samples + 1))
            days = _draw_days(n, spec, rng)
            traj = draw_trajectory(archetype, float(days[-1]), n, rng)
            people.append(GeneratedParticipant(
                pid, archetype,
                LANGUAGES[rng.choice(len(LANGUAGES), p=_norm(spec.language_probs))],
                GENDERS[rng.choice(len(GENDERS), p=_norm(spec.gender_probs))],
                AGE_BANDS[rng.choice(len(AGE_BANDS), p=_norm(spec.age_probs))],
                days, traj(days)))
            index += 1

    rows, truth = [], []
    for i, person in enumerate(people):
        rng = _rng([spec.seed, i, 1])
        f0 = rng.uniform(120.0, 220.0)
        lang = LANGUAGES.index(person.language)
        for day, s in zip(person.days, person.severity):
            stem = f"audio/{person.participant_id}_d{day:03d}"
            paths = {}
            shared = rng.normal(0.0, spec.day_nuisance)
            for modality in ("breath", "cough", "voice"):
                nuisance = float(np.clip(shared + rng.normal(0.0, spec.modality_nuisance),
                                         -1.0, 1.0))
                clip_seed = [spec.seed, i, int(day), ("breath", "cough", "voice").index(modality)]
                if modality == "voice":
                    clip = synth_voice(float(s), clip_seed, f0=f0 * rng.uniform(0.97, 1.03),
                                       language=lang, nuisance=nuisance)
                elif modality == "cough":
                    clip = synth_cough(float(s), clip_seed, nuisance=nuisance)
                else:
                    clip = synth_breath(float(s), clip_seed, nuisance=nuisance)
                rel = f"{stem}_{modality}.wav"
                try:
                    write_wav(out / rel, clip)
                except OSError as exc:
                    raise IoFailure(f"cannot write {out / rel}: {exc}") from exc
                paths[modality] = rel
            label = "positive" if s >= 0.5 else "negative"
            symptoms = max(0, int(round(6 * s)) + int(rng.choice([-1, 0, 1], p=[0.2, 0.6, 0.2])))
            rows.append([person.participant_id, int(day), paths["breath"], paths["cough"],
                         paths["voice"], label, symptoms, person.language, person.gender,
                         person.age_band])
            truth.append([person.participant_id, person.archetype, int(day), f"{s:.6f}"])

    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        w.writerows(rows)
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "archetype", "day", "severity"])
        w.writerows(truth)
    log.info("generated %d participants, %d rows under %s", len(people), len(rows), out)
    return people


def _norm(p):
    p = np.asarray(p, dtype=float)
    return p / p.sum()


def load_truth(path) -> dict[str, str]:
    """Participant id -> archetype, from a generator ``truth.csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["participant_id"]: row["archetype"] for row in csv.DictReader(fh)}
