"""Cohort data model, manifests, sequence windows, augmentation and splits."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InsufficientParticipants, ManifestParse, MissingAudio
from .synth import AGE_BANDS, GENDERS, LANGUAGES, MANIFEST_HEADER

log = logging.getLogger(__name__)

WINDOW_LEN = 5
MAX_GAP = 14

LABELS = {"positive": 1, "negative": 0}


@dataclass(frozen=True)
class RecordingSample:
    participant_id: str
    day: int
    breath: str
    cough: str
    voice: str
    label: int  # 1 positive, 0 negative
    symptom_count: int = 0

    @property
    def symptoms_reported(self) -> bool:
        return self.symptom_count > 0

    @property
    def clips(self) -> tuple[str, str, str]:
        return (self.breath, self.cough, self.voice)


@dataclass(frozen=True)
class Participant:
    id: str
    language: str
    gender: str
    age_band: str
    samples: tuple[RecordingSample, ...]

    @property
    def days(self) -> list[int]:
        return [s.day for s in self.samples]

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.samples]

    @property
    def ever_positive(self) -> bool:
        return any(s.label for s in self.samples)

    @property
    def language_index(self) -> int:
        return LANGUAGES.index(self.language)

    @property
    def eligible(self) -> bool:
        return len(self.samples) >= WINDOW_LEN


@dataclass(frozen=True)
class Perturbation:
    """Seeded gain-and-noise perturbation applied to every clip of a window."""

    gain_db_range: tuple[float, float] = (-6.0, 6.0)
    snr_db: float = 30.0
    seed: int = 0


@dataclass(frozen=True)
class SequenceWindow:
    samples: tuple[RecordingSample, ...]
    augmentation_tag: str = "none"
    perturbation: Perturbation | None = None
    language: int = 0

    @property
    def participant_id(self) -> str:
        return self.samples[0].participant_id

    @property
    def days(self) -> list[int]:
        return [s.day for s in self.samples]

    @property
    def gaps(self) -> list[int]:
        d = self.days
        return [b - a for a, b in zip(d, d[1:])]

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.samples]

    @property
    def span(self) -> int:
        """Exclusive day span, last minus first."""
        return self.samples[-1].day - self.samples[0].day

    @property
    def majority_label(self) -> int:
        return int(2 * sum(self.labels) > len(self.samples))


@dataclass
class Cohort:
    participants: dict[str, Participant]
    root: Path = field(default_factory=Path)
    dropped: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.participants)

    def __iter__(self):
        return iter(self.participants.values())

    def subset(self, ids: Iterable[str]) -> "Cohort":
        return Cohort({i: self.participants[i] for i in sorted(ids)}, self.root)

    def resolve(self, rel: str) -> Path:
        return self.root / rel


# -- manifest ------------------------------------------------------------------

def _parse_row(row: dict, lineno: int) -> tuple[str, RecordingSample, tuple[str, str, str]]:
    try:
        pid = row["participant_id"].strip()
        day = int(row["day"])
        symptoms = int(row["symptom_count"])
    except (KeyError, ValueError, AttributeError) as exc:
        raise ManifestParse(f"line {lineno}: {exc}") from exc
    if not pid:
        raise ManifestParse(f"line {lineno}: empty participant_id")
    if day < 0 or symptoms < 0:
        raise ManifestParse(f"line {lineno}: day and symptom_count must be nonnegative")
    label = row["label"].strip().lower()
    if label not in LABELS:
        raise ManifestParse(f"line {lineno}: label {row['label']!r} not in {sorted(LABELS)}")
    meta = (row["language"].strip(), row["gender"].strip(), row["age_band"].strip())
    for value, allowed, name in zip(meta, (LANGUAGES, GENDERS, AGE_BANDS),
                                    ("language", "gender", "age_band")):
        if value not in allowed:
            raise ManifestParse(f"line {lineno}: {name} {value!r} not in {allowed}")
    paths = [row[k].strip() for k in ("breath_path", "cough_path", "voice_path")]
    if not all(paths):
        raise ManifestParse(f"line {lineno}: missing modality path")
    sample = RecordingSample(pid, day, *paths, label=LABELS[label], symptom_count=symptoms)
    return pid, sample, meta


def load_manifest(path, quality=None, report_path=None) -> Cohort:
    """Parse a manifest CSV into a :class:`Cohort`.

    ``quality`` is an optional callable ``(path) -> verdict string``; rows where
    any modality is not ``"ok"`` are dropped and listed in ``report_path``.
    """
    path = Path(path)
    root = path.parent
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestParse(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_HEADER:
            raise ManifestParse(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        rows = [(i, r) for i, r in enumerate(reader, start=2)]

    by_pid: dict[str, list[RecordingSample]] = {}
    meta: dict[str, tuple] = {}
    dropped = []
    for lineno, row in rows:
        if None in row or any(v is None for v in row.values()):
            raise ManifestParse(f"line {lineno}: wrong number of fields")
        pid, sample, m = _parse_row(row, lineno)
        if meta.setdefault(pid, m) != m:
            raise ManifestParse(f"line {lineno}: demographics differ from earlier rows of {pid}")
        for rel in sample.clips:
            if not (root / rel).is_file():
                raise MissingAudio(f"line {lineno}: {root / rel} does not exist")
        if quality is not None:
            verdicts = [str(quality(root / rel)) for rel in sample.clips]
            bad = [(rel, v) for rel, v in zip(sample.clips, verdicts) if v != "ok"]
            if bad:
                reason = "; ".join(f"{rel}: {v}" for rel, v in bad)
                dropped.append(f"line {lineno} ({pid} day {sample.day}): {reason}")
                log.warning("dropping %s day %d: %s", pid, sample.day, reason)
                continue
        by_pid.setdefault(pid, []).append(sample)

    participants = {}
    for pid in sorted(by_pid):
        samples = sorted(by_pid[pid], key=lambda s: s.day)
        days = [s.day for s in samples]
        if len(set(days)) != len(days):
            raise ManifestParse(f"{pid}: duplicate day in manifest")
        participants[pid] = Participant(pid, *meta[pid], samples=tuple(samples))
    if report_path is not None:
        Path(report_path).write_text("".join(line + "\n" for line in dropped), encoding="utf-8")
    return Cohort(participants, root, dropped)


# -- windows and augmentation -------------------------------------------------------

def generate_windows(participant: Participant, length: int = WINDOW_LEN,
                     max_gap: int = MAX_GAP, stride: int = 1) -> list[SequenceWindow]:
    """Sliding windows of ``length`` samples whose day gaps all lie in [1, max_gap]."""
    s = participant.samples
    out = []
    for start in range(0, len(s) - length + 1, stride):
        chunk = s[start:start + length]
        gaps = [b.day - a.day for a, b in zip(chunk, chunk[1:])]
        if all(1 <= g <= max_gap for g in gaps):
            out.append(SequenceWindow(tuple(chunk), language=participant.language_index))
    return out


def time_inverse_augment(window: SequenceWindow) -> SequenceWindow:
    """Reverse samples and labels in time; days are remapped so gaps reverse."""
    first, last = window.samples[0].day, window.samples[-1].day
    rev = tuple(replace(s, day=first + last - s.day) for s in reversed(window.samples))
    return replace(window, samples=rev, augmentation_tag="time_inverse")


def perturb_augment(window: SequenceWindow, gain_db_range=(-6.0, 6.0),
                    noise_snr_db: float = 30.0, seed: int = 0) -> SequenceWindow:
    """Attach a gain/noise perturbation; it is rendered when features are built."""
    return replace(window, augmentation_tag="perturb",
                   perturbation=Perturbation(tuple(gain_db_range), float(noise_snr_db), int(seed)))


def oversample_balance(windows: list[SequenceWindow], seed: int = 0,
                       gain_db_range=(-6.0, 6.0), noise_snr_db: float = 30.0,
                       tolerance: float = 0.05) -> list[SequenceWindow]:
    """Replicate minority-majority-label windows with fresh perturbations.

    Appends the fewest copies that bring the positive/negative window counts
    within ``tolerance`` of the total.
    """
    pos = [w for w in windows if w.majority_label == 1]
    neg = [w for w in windows if w.majority_label == 0]
    total = len(windows)
    if not pos or not neg or abs(len(pos) - len(neg)) <= tolerance * total:
        return list(windows)
    minority, n_min, n_max = (pos, len(pos), len(neg)) if len(pos) < len(neg) else (neg, len(neg), len(pos))
    k = 0
    while abs(n_min + k - n_max) > tolerance * (total + k):
        k += 1
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(minority))
    extra = []
    for i in range(k):
        src = minority[order[i % len(minority)]]
        w = perturb_augment(src, gain_db_range, noise_snr_db, seed=int(rng.integers(2**31)))
        extra.append(replace(w, augmentation_tag="oversample"))
    return list(windows) + extra


# -- splitting ------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset
    validation: frozenset
    test: frozenset

    def partitions(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


def _allocation(n: int, ratios) -> list[int]:
    """Largest-remainder integer allocation of ``n`` items."""
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_participants(cohort: Cohort, ratios=(0.70, 0.10, 0.20), seed: int = 0) -> DatasetSplit:
    """Participant-level split stratified by ever-positive status.

    Inside each status stratum participants are ordered by (language, gender)
    with seeded tie-breaking and dealt to partitions in proportion, which keeps
    language and gender spread across the three partitions.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    strata = {True: [], False: []}
    for p in cohort:
        strata[p.ever_positive].append(p)
    for key in (True, False):
        members = strata[key]
        if not members:
            continue
        counts = _allocation(len(members), ratios)
        if min(counts) == 0:
            raise InsufficientParticipants(
                f"{len(members)} {'ever-positive' if key else 'never-positive'} participants "
                f"cannot fill all three partitions")
        tiebreak = rng.permutation(len(members))
        members = [m for _, m in sorted(zip(tiebreak, members), key=lambda t: (t[1].language, t[1].gender, t[0]))]
        # deal in order, always to the partition furthest below its quota
        assigned = [0, 0, 0]
        for idx, member in enumerate(members):
            deficit = [counts[j] * (idx + 1) / len(members) - assigned[j] for j in range(3)]
            j = max((j for j in range(3) if assigned[j] < counts[j]), key=lambda j: (deficit[j], -j))
            assigned[j] += 1
            parts[j].append(member.id)
    if not all(parts):
        raise InsufficientParticipants("cohort too small for a three-way split")
    return DatasetSplit(*(frozenset(p) for p in parts))
