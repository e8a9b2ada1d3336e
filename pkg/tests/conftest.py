import numpy as np
import pytest

from longitrack.cohort import Participant, RecordingSample, load_manifest
from longitrack.features import FeatureBank
from longitrack.synth import CohortSpec, generate_cohort

TINY = dict(n_recovering=2, n_persistent_positive=2, n_healthy=6, n_late_onset=2,
            min_samples=6, max_samples=7, seed=1)


def make_participant(days, labels=None, pid="P1", language="en", symptoms=None):
    labels = labels if labels is not None else [0] * len(days)
    symptoms = symptoms if symptoms is not None else [0] * len(days)
    samples = tuple(RecordingSample(pid, d, f"b{d}.wav", f"c{d}.wav", f"v{d}.wav", l, s)
                    for d, l, s in zip(days, labels, symptoms))
    return Participant(pid, language, "female", "30-39", samples)


@pytest.fixture(scope="session")
def tiny_cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    generate_cohort(CohortSpec(**TINY), out)
    return out


@pytest.fixture(scope="session")
def tiny_loaded(tiny_cohort_dir):
    bank = FeatureBank()
    cohort = load_manifest(tiny_cohort_dir / "manifest.csv", quality=bank.quality)
    return cohort, bank
