"""Mini-batch training, validation-based model selection and checkpoints."""

from __future__ import annotations

import csv
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cohort import (
    Cohort,
    DatasetSplit,
    Perturbation,
    SequenceWindow,
    generate_windows,
    oversample_balance,
    time_inverse_augment,
)
from .config import dataclass_from_kv, parse_kv_file
from .errors import CorruptCheckpoint, EmptyPartition, SingleClass
from .evaluation import auroc
from .model import (
    MODALITIES,
    AdamState,
    BatchInputs,
    ModelConfig,
    Params,
    adam_update,
    backward_model,
    forward_model,
    init_params,
    loss,
)
from .trajectory import Predictor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    w_lang: float = 0.1
    reverse_coeff: float = 1.0
    patience: int = 8
    hidden: int = 64
    embed_dim: int = 128
    dtype: str = "float32"
    batching: str = "participant"
    augment_time_inverse: bool = True
    augment_oversample: bool = True
    augment_perturb: bool = False
    perturb_gain_db: float = 6.0
    perturb_snr_db: float = 30.0
    language_head: bool = True

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience", "hidden", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.w_lang < 0 or self.reverse_coeff < 0:
            raise ValueError("lr must be positive; w_lang and reverse_coeff nonnegative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.batching not in ("participant", "window"):
            raise ValueError("batching must be 'participant' or 'window'")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return dataclass_from_kv(cls, parse_kv_file(path), str(path))

    def model_config(self, mel_bands: int = 64, patch_frames: int = 96) -> ModelConfig:
        return ModelConfig(patch_frames=patch_frames, n_mels=mel_bands,
                           embed_dim=self.embed_dim, hidden=self.hidden,
                           language_head=self.language_head)


# -- checkpoints -------------------------------------------------------------------------

MAGIC = b"LTRK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI9I")
_ADAM = struct.Struct("<Q4d")
_DTYPES = {0: np.float64, 1: np.float32}


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Params
    adam: AdamState


def _dims(cfg: ModelConfig) -> tuple[int, ...]:
    return (cfg.patch_frames, cfg.n_mels, cfg.conv1, cfg.conv2, cfg.embed_dim,
            cfg.hidden, cfg.n_languages, int(cfg.language_head))


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    dtype_code = 1 if next(iter(ckpt.params.values())).dtype == np.float32 else 0
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, *_dims(ckpt.config), dtype_code),
             _ADAM.pack(ckpt.adam.step, ckpt.adam.lr, ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps)]
    names = list(ckpt.config.param_shapes())
    for group in (ckpt.params, ckpt.adam.m, ckpt.adam.v):
        for name in names:
            parts.append(np.ascontiguousarray(group[name], dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint, rejecting bad magic, version, size or dimensions."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size + _ADAM.size:
        raise CorruptCheckpoint(f"{path}: truncated header")
    magic, version, *dims, dtype_code = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {version}")
    if dtype_code not in _DTYPES:
        raise CorruptCheckpoint(f"{path}: unknown dtype code {dtype_code}")
    cfg = ModelConfig(*dims[:7], language_head=bool(dims[7]))
    if expected is not None and _dims(expected) != _dims(cfg):
        raise CorruptCheckpoint(f"{path}: dimensions {_dims(cfg)} do not match expected {_dims(expected)}")
    step, lr, b1, b2, eps = _ADAM.unpack_from(data, _HEADER.size)
    shapes = cfg.param_shapes()
    total = sum(int(np.prod(s)) for s in shapes.values())
    offset = _HEADER.size + _ADAM.size
    if len(data) != offset + 3 * total * 8:
        raise CorruptCheckpoint(f"{path}: size {len(data)} does not match its dimensions")
    dtype = _DTYPES[dtype_code]
    groups = []
    for _ in range(3):
        group = {}
        for name, shape in shapes.items():
            n = int(np.prod(shape))
            group[name] = np.frombuffer(data, "<f8", n, offset).reshape(shape).astype(dtype)
            offset += 8 * n
        groups.append(group)
    params, m, v = groups
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise CorruptCheckpoint(f"{path}: non-finite parameters")
    return Checkpoint(cfg, params, AdamState(m, v, step, lr, b1, b2, eps))


# -- windows and batches ---------------------------------------------------------------------

def training_windows(cohort: Cohort, ids, config: TrainConfig) -> list[SequenceWindow]:
    """Windows of the given participants, with the offline augmentations applied."""
    windows = []
    for pid in sorted(ids):
        p = cohort.participants[pid]
        if p.eligible:
            windows.extend(generate_windows(p))
    if config.augment_time_inverse:
        windows = windows + [time_inverse_augment(w) for w in windows]
    if config.augment_oversample:
        windows = oversample_balance(windows, seed=config.seed,
                                     gain_db_range=(-config.perturb_gain_db, config.perturb_gain_db),
                                     noise_snr_db=config.perturb_snr_db)
    return windows


def assemble_batch(windows: list[SequenceWindow], bank, root) -> tuple[BatchInputs, np.ndarray, np.ndarray]:
    """Stack each distinct recording once; perturbed clips count as distinct."""
    root = Path(root)
    index: dict = {}
    chunks, owners = [], []
    day_rec = np.zeros((len(windows), len(windows[0].samples), len(MODALITIES)), dtype=np.int64)
    for w_i, w in enumerate(windows):
        for t, sample in enumerate(w.samples):
            for m, rel in enumerate(sample.clips):
                pert = w.perturbation
                key = (rel, pert, t, m) if pert is not None else rel
                if key not in index:
                    index[key] = len(index)
                    if pert is None:
                        patches = bank.patches(root / rel)
                    else:
                        patches = bank.perturbed_patches(root / rel, pert, t * len(MODALITIES) + m)
                    chunks.append(patches)
                    owners.append(np.full(patches.shape[0], index[key]))
                day_rec[w_i, t, m] = index[key]
    inputs = BatchInputs(np.concatenate(chunks), np.concatenate(owners), len(index), day_rec)
    labels = np.array([w.labels for w in windows], dtype=float)
    langs = np.array([w.language for w in windows], dtype=int)
    return inputs, labels, langs


def epoch_batches(windows: list[SequenceWindow], config: TrainConfig, epoch: int) -> list[list[int]]:
    """Seeded per-epoch batch order.

    ``participant`` batching permutes participants, then each participant's
    windows, so a batch covers few participants and shares their recordings;
    ``window`` batching permutes all windows uniformly.
    """
    rng = np.random.default_rng([config.seed, epoch])
    if config.batching == "window":
        order = list(rng.permutation(len(windows)))
    else:
        by_pid: dict[str, list[int]] = {}
        for i, w in enumerate(windows):
            by_pid.setdefault(w.participant_id, []).append(i)
        pids = sorted(by_pid)
        order = []
        for j in rng.permutation(len(pids)):
            members = by_pid[pids[j]]
            order.extend(members[k] for k in rng.permutation(len(members)))
    bs = config.batch_size
    return [order[i:i + bs] for i in range(0, len(order), bs)]


def _online_perturb(windows, config: TrainConfig, epoch: int, batch_no: int):
    out = []
    for k, w in enumerate(windows):
        if w.perturbation is None:
            seed = int(np.random.default_rng([config.seed, epoch, batch_no, k]).integers(2**31))
            w = SequenceWindow(w.samples, "perturb",
                               Perturbation((-config.perturb_gain_db, config.perturb_gain_db),
                                            config.perturb_snr_db, seed), w.language)
        out.append(w)
    return out


# -- training loop -----------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_bce: float
    val_auroc: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auroc: float = float("-inf")
    checkpoint_path: str | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_bce", "val_auroc", "best_so_far"])
            best = float("-inf")
            for r in self.epochs:
                best = max(best, r.val_auroc)
                w.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.train_bce:.6f}",
                            f"{r.val_auroc:.6f}", f"{best:.6f}"])


def validation_auroc(params: Params, cohort: Cohort, ids, bank) -> float:
    predictor = Predictor(params, bank, cohort.root)
    probs, labels = [], []
    for pid in sorted(ids):
        p = cohort.participants[pid]
        if len(p.samples) < 2:
            continue
        traj = predictor.predict_trajectory(p)
        probs.extend(traj.probs)
        labels.extend(traj.labels)
    return auroc(probs, labels)


def train(cohort: Cohort, split: DatasetSplit, config: TrainConfig, bank,
          out_path=None, epoch_callback=None) -> tuple[Checkpoint, TrainReport]:
    """Train from scratch; return the checkpoint with the best validation AUROC.

    Augmentation only ever touches training participants.  ``epoch_callback``
    receives ``(epoch, params)`` after every epoch.
    """
    windows = training_windows(cohort, split.train, config)
    if not windows:
        raise EmptyPartition("no training windows")
    if not any(len(cohort.participants[p].samples) >= 2 for p in split.validation):
        raise EmptyPartition("no validation participant with two or more samples")
    first = bank.patches(cohort.root / windows[0].samples[0].breath)
    model_cfg = config.model_config(mel_bands=first.shape[2], patch_frames=first.shape[1])
    dtype = np.dtype(config.dtype)
    params = init_params(model_cfg, config.seed, dtype=dtype)
    adam = AdamState.zeros_like(params, lr=config.lr)
    report = TrainReport()
    best = Checkpoint(model_cfg, {k: v.copy() for k, v in params.items()}, _copy_adam(adam))
    stale = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        total = total_bce = 0.0
        batches = epoch_batches(windows, config, epoch)
        for b_no, members in enumerate(batches):
            batch = [windows[i] for i in members]
            if config.augment_perturb:
                batch = _online_perturb(batch, config, epoch, b_no)
            inputs, labels, langs = assemble_batch(batch, bank, cohort.root)
            out, trace = forward_model(inputs, params, config.reverse_coeff)
            res = loss(out.probs, labels, out.lang_logits, langs, config.w_lang)
            grads = backward_model(trace, res.d_probs, res.d_lang_logits, params)
            params = adam_update(params, grads, adam)
            total += res.value * len(batch)
            total_bce += res.bce * len(batch)
        try:
            val = validation_auroc(params, cohort, split.validation, bank)
        except SingleClass:
            val = float("nan")
        rec = EpochRecord(epoch, total / len(windows), total_bce / len(windows), val,
                          time.perf_counter() - start)
        report.epochs.append(rec)
        log.info("epoch %d loss %.4f bce %.4f val_auroc %.4f (%.1fs)",
                 epoch, rec.train_loss, rec.train_bce, rec.val_auroc, rec.seconds)
        if epoch_callback is not None:
            epoch_callback(epoch, params)
        if val > report.best_val_auroc or (epoch == 1 and np.isnan(val)):
            report.best_val_auroc = val
            report.best_epoch = epoch
            best = Checkpoint(model_cfg, {k: v.copy() for k, v in params.items()}, _copy_adam(adam))
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if out_path is not None:
        save_checkpoint(best, out_path)
        report.checkpoint_path = str(out_path)
    return best, report


def _copy_adam(s: AdamState) -> AdamState:
    return AdamState({k: v.copy() for k, v in s.m.items()}, {k: v.copy() for k, v in s.v.items()},
                     s.step, s.lr, s.beta1, s.beta2, s.eps)
