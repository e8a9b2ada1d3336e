"""Cached log-mel patches for every recording a cohort references."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .audio import (
    AudioClip,
    MelParams,
    QualityVerdict,
    clip_patches,
    load_wav,
    normalize_peak,
    preprocess,
    quality_check,
)
from .cohort import Perturbation
from .errors import DataError, MalformedWav

log = logging.getLogger(__name__)


def perturb_clip(clip: AudioClip, gain_db: float, snr_db: float, rng) -> AudioClip:
    """Scale by ``gain_db`` and add white noise ``snr_db`` below the clip's power."""
    x = clip.samples * 10.0 ** (gain_db / 20.0)
    if np.isfinite(snr_db):
        power = float(np.mean(x**2))
        x = x + rng.standard_normal(x.shape) * np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return AudioClip(x, clip.rate)


class FeatureBank:
    """Loads, preprocesses and patches recordings once, keyed by absolute path.

    Perturbed variants are rendered on demand from the preprocessed clip and
    never cached.
    """

    def __init__(self, mel: MelParams = MelParams(), dtype=np.float32):
        self.mel = mel
        self.dtype = np.dtype(dtype)
        self._patches: dict[str, np.ndarray] = {}
        self._verdicts: dict[str, str] = {}

    def __len__(self):
        return len(self._patches)

    @staticmethod
    def key(path) -> str:
        return str(Path(path).resolve())

    def _load(self, path) -> AudioClip:
        clip = load_wav(path)
        try:
            return preprocess(clip)
        except DataError as exc:
            raise MalformedWav(f"{path}: {exc}") from exc

    def quality(self, path) -> str:
        """Quality verdict for ``path``; caches the patches of passing clips."""
        k = self.key(path)
        if k in self._verdicts:
            return self._verdicts[k]
        try:
            clip = self._load(path)
        except DataError as exc:
            log.warning("%s unusable: %s", path, exc)
            verdict = QualityVerdict.TOO_QUIET.value
        else:
            verdict = quality_check(clip).value
            if verdict == "ok":
                self._patches[k] = clip_patches(clip, self.mel).astype(self.dtype)
        self._verdicts[k] = verdict
        return verdict

    def patches(self, path) -> np.ndarray:
        k = self.key(path)
        if k not in self._patches:
            self._patches[k] = clip_patches(self._load(path), self.mel).astype(self.dtype)
        return self._patches[k]

    def perturbed_patches(self, path, perturbation: Perturbation, slot: int) -> np.ndarray:
        """Patches of ``path`` after the seeded gain/noise perturbation.

        ``slot`` distinguishes the clips inside one window so each gets its own
        draw from the same perturbation seed.
        """
        rng = np.random.default_rng([perturbation.seed, slot])
        lo, hi = perturbation.gain_db_range
        gain = rng.uniform(lo, hi) if hi > lo else lo
        clip = perturb_clip(self._load(path), gain, perturbation.snr_db, rng)
        return clip_patches(normalize_peak(clip), self.mel).astype(self.dtype)

    def save(self, path) -> None:
        keys = sorted(self._patches)
        counts = [self._patches[k].shape[0] for k in keys]
        data = np.concatenate([self._patches[k] for k in keys]) if keys else np.zeros((0, 0, 0))
        meta = {"keys": keys, "counts": counts, "verdicts": self._verdicts,
                "mel": vars(self.mel)}
        np.savez(path, data=data, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path, dtype=np.float32) -> "FeatureBank":
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            data = z["data"]
        bank = cls(MelParams(**meta["mel"]), dtype)
        offset = 0
        for k, n in zip(meta["keys"], meta["counts"]):
            bank._patches[k] = data[offset:offset + n].astype(bank.dtype)
            offset += n
        bank._verdicts = dict(meta["verdicts"])
        return bank
