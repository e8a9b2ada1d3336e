import csv

import numpy as np
import pytest

from conftest import TINY, make_participant
from longitrack.audio import AudioClip, log_mel, normalize_peak
from longitrack.cohort import (
    Cohort,
    generate_windows,
    load_manifest,
    oversample_balance,
    perturb_augment,
    split_participants,
    time_inverse_augment,
)
from longitrack.errors import InsufficientParticipants, ManifestParse, MissingAudio
from longitrack.features import perturb_clip
from longitrack.synth import MANIFEST_HEADER


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        w.writerows(rows)


def row(pid, day, label="negative", symptoms=0):
    return [pid, day, "a.wav", "a.wav", "a.wav", label, symptoms, "en", "male", "16-29"]


def test_manifest_sorts_days(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    write_manifest(tmp_path / "m.csv", [row("P1", 3), row("P1", 1, "positive")])
    cohort = load_manifest(tmp_path / "m.csv")
    assert cohort.participants["P1"].days == [1, 3]
    assert cohort.participants["P1"].labels == [1, 0]


def test_manifest_bad_label(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    write_manifest(tmp_path / "m.csv", [row("P1", 3, "maybe")])
    with pytest.raises(ManifestParse):
        load_manifest(tmp_path / "m.csv")


def test_manifest_missing_audio(tmp_path):
    write_manifest(tmp_path / "m.csv", [row("P1", 3)])
    with pytest.raises(MissingAudio):
        load_manifest(tmp_path / "m.csv")


def test_manifest_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ManifestParse):
        load_manifest(tmp_path / "m.csv")


def test_manifest_duplicate_day(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    write_manifest(tmp_path / "m.csv", [row("P1", 3), row("P1", 3)])
    with pytest.raises(ManifestParse):
        load_manifest(tmp_path / "m.csv")


def test_manifest_quality_drop(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    write_manifest(tmp_path / "m.csv", [row("P1", 1), row("P1", 2)])
    calls = []

    def verdict(path):
        calls.append(path)
        return "too_quiet" if len(calls) <= 3 else "ok"

    report = tmp_path / "dropped.txt"
    cohort = load_manifest(tmp_path / "m.csv", quality=verdict, report_path=report)
    assert cohort.participants["P1"].days == [2]
    assert "too_quiet" in report.read_text()


def test_generated_manifest_round_trip(tiny_loaded):
    cohort, _ = tiny_loaded
    assert len(cohort) == sum(v for k, v in TINY.items() if k.startswith("n_"))
    for p in cohort:
        assert all(a < b for a, b in zip(p.days, p.days[1:]))


# -- windows -----------------------------------------------------------------------------


def test_windows_single():
    w = generate_windows(make_participant([0, 3, 6, 9, 12]))
    assert len(w) == 1 and w[0].gaps == [3, 3, 3, 3]


def test_windows_gap_violation():
    assert generate_windows(make_participant([0, 3, 6, 21, 24])) == []


def test_windows_stride_one():
    ws = generate_windows(make_participant(list(range(9))))
    assert len(ws) == 5
    assert [w.days[0] for w in ws] == [0, 1, 2, 3, 4]


def test_window_invariants_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        days = np.cumsum(rng.integers(1, 20, size=rng.integers(5, 15))).tolist()
        for w in generate_windows(make_participant(days)):
            assert len(w.samples) == 5
            assert all(1 <= g <= 14 for g in w.gaps)
            assert len({s.participant_id for s in w.samples}) == 1
            assert 4 <= w.span <= 56


def test_time_inverse():
    p = make_participant([0, 1, 3, 6, 10], labels=[1, 1, 0, 0, 0])
    w = generate_windows(p)[0]
    inv = time_inverse_augment(w)
    assert inv.labels == [0, 0, 0, 1, 1]
    assert inv.gaps == [4, 3, 2, 1]
    assert inv.augmentation_tag == "time_inverse"
    back = time_inverse_augment(inv)
    assert back.samples == w.samples


def test_perturb_augment_keeps_labels():
    w = generate_windows(make_participant([0, 1, 2, 3, 4], labels=[1, 0, 1, 0, 1]))[0]
    pw = perturb_augment(w, (-3, 3), 25.0, seed=4)
    assert pw.labels == w.labels and pw.days == w.days
    assert pw.perturbation.seed == 4 and pw.augmentation_tag == "perturb"


def test_perturb_identity_parameters():
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.uniform(-0.5, 0.5, 3000), 16000)
    out = perturb_clip(clip, 0.0, float("inf"), rng)
    np.testing.assert_array_equal(out.samples, clip.samples)


def test_gain_removed_by_peak_normalization():
    rng = np.random.default_rng(1)
    clip = AudioClip(rng.uniform(-0.5, 0.5, 8000), 16000)
    loud = perturb_clip(clip, 6.0, float("inf"), rng)
    a = log_mel(normalize_peak(clip)).values
    b = log_mel(normalize_peak(loud)).values
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_noise_keeps_tone_band_energy():
    t = np.arange(16000) / 16000
    clip = AudioClip(0.5 * np.sin(2 * np.pi * 1000 * t), 16000)
    noisy = perturb_clip(clip, 0.0, 20.0, np.random.default_rng(3))

    def band_db(x):
        spec = np.abs(np.fft.rfft(x)) ** 2
        return 10 * np.log10(spec[990:1011].sum())

    assert abs(band_db(noisy.samples) - band_db(clip.samples)) < 0.5


def _windows(n_pos, n_neg):
    out = []
    for i in range(n_pos + n_neg):
        lab = [1] * 5 if i < n_pos else [0] * 5
        out += generate_windows(make_participant([0, 1, 2, 3, 4], lab, pid=f"P{i}"))
    return out


def test_oversample_balanced_unchanged():
    ws = _windows(5, 5)
    assert oversample_balance(ws, seed=0) == ws


def test_oversample_minority():
    ws = _windows(2, 10)
    out = oversample_balance(ws, seed=0)
    extra = out[len(ws):]
    assert len(extra) >= 8
    assert all(w.majority_label == 1 and w.augmentation_tag == "oversample" for w in extra)
    pos = sum(w.majority_label for w in out)
    assert abs(pos - (len(out) - pos)) <= 0.05 * len(out)
    again = oversample_balance(ws, seed=0)
    assert [w.perturbation for w in again] == [w.perturbation for w in out]


# -- splits ---------------------------------------------------------------------------


def _cohort(n_pos, n_neg):
    people = {}
    langs = ["en", "it", "es"]
    for i in range(n_pos + n_neg):
        lab = [1, 0] if i < n_pos else [0, 0]
        p = make_participant([0, 5], lab, pid=f"P{i:03d}", language=langs[i % 3])
        people[p.id] = p
    return Cohort(people)


def test_split_counts_per_class():
    s = split_participants(_cohort(100, 100), seed=0)
    pos = lambda ids: sum(int(i[1:]) < 100 for i in ids)
    assert [pos(s.train), pos(s.validation), pos(s.test)] == [70, 10, 20]
    assert [len(s.train), len(s.validation), len(s.test)] == [140, 20, 40]


def test_split_disjoint_and_deterministic():
    c = _cohort(37, 23)
    a = split_participants(c, seed=5)
    b = split_participants(c, seed=5)
    assert a == b
    parts = list(a.partitions().values())
    assert set().union(*parts) == set(c.participants)
    assert sum(len(p) for p in parts) == len(c)


def test_split_too_small():
    with pytest.raises(InsufficientParticipants):
        split_participants(_cohort(1, 1))
