"""Detection and trajectory metrics, resampling tests and analyses."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import ConstantInput, RankDeficient, SingleClass, WindowEmpty

THRESHOLD = 0.5


@dataclass(frozen=True)
class ScoredSample:
    participant_id: str
    day: int
    score: float
    label: int
    symptom_count: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise SingleClass("both classes are required")
    return s, y


# -- detection -------------------------------------------------------------------------

def auroc(scores, labels) -> float:
    """Normalized Mann-Whitney U; tied pairs count one half."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s)  # average ranks, exact multiples of 0.5
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def sens_spec(scores, labels, threshold: float = THRESHOLD) -> tuple[float, float]:
    """Sensitivity and specificity; a score equal to the threshold is positive."""
    s, y = _arrays(scores, labels)
    pred = s >= threshold
    tp = np.sum(pred & (y == 1))
    tn = np.sum(~pred & (y == 0))
    return float(tp / np.sum(y == 1)), float(tn / np.sum(y == 0))


def _by_participant(samples: Sequence[ScoredSample]) -> dict[str, list[ScoredSample]]:
    groups: dict[str, list[ScoredSample]] = defaultdict(list)
    for smp in samples:
        groups[smp.participant_id].append(smp)
    return dict(sorted(groups.items()))


def _resample_indices(n_groups: int, n_boot: int, rng, ok) -> Iterable[np.ndarray]:
    """Yield ``n_boot`` resamples of group indices accepted by ``ok``."""
    produced = attempts = 0
    while produced < n_boot:
        attempts += 1
        if attempts > 50 * n_boot + 100:
            raise SingleClass("resampling keeps producing single-class sets")
        idx = rng.integers(0, n_groups, size=n_groups)
        if ok(idx):
            produced += 1
            yield idx


def _group_arrays(samples):
    groups = _by_participant(samples)
    scores = [np.array([s.score for s in g]) for g in groups.values()]
    labels = [np.array([s.label for s in g]) for g in groups.values()]
    return list(groups), scores, labels


def bootstrap_ci(samples: Sequence[ScoredSample], n_boot: int = 1000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile interval of AUROC over participant-level resamples.

    Resamples that contain only one class are redrawn.
    """
    _, scores, labels = _group_arrays(samples)
    has_pos = np.array([l.any() for l in labels])
    has_neg = np.array([(l == 0).any() for l in labels])
    if has_pos.sum() < 1 or has_neg.sum() < 1 or len(labels) < 2:
        raise SingleClass("need participants contributing each class")
    rng = np.random.default_rng(seed)
    values = []
    for idx in _resample_indices(len(labels), n_boot, rng,
                                 lambda i: has_pos[i].any() and has_neg[i].any()):
        values.append(auroc(np.concatenate([scores[i] for i in idx]),
                            np.concatenate([labels[i] for i in idx])))
    values = np.sort(values)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def auroc_z_test(samples_a: Sequence[ScoredSample], samples_b: Sequence[ScoredSample],
                 n_boot: int = 1000, seed: int = 0) -> float:
    """One-tailed p for AUROC(A) > AUROC(B) from a paired participant bootstrap.

    ``z`` is the mean over the standard deviation of the bootstrap AUROC
    differences; identical scorers give ``z = 0`` and ``p = 0.5``.
    """
    key = lambda s: (s.participant_id, s.day)
    a = sorted(samples_a, key=key)
    b = sorted(samples_b, key=key)
    if [key(s) for s in a] != [key(s) for s in b] or [s.label for s in a] != [s.label for s in b]:
        raise ValueError("both scorers must cover identical samples")
    _, sa, labels = _group_arrays(a)
    _, sb, _ = _group_arrays(b)
    has_pos = np.array([l.any() for l in labels])
    has_neg = np.array([(l == 0).any() for l in labels])
    if not has_pos.any() or not has_neg.any():
        raise SingleClass("need both classes")
    rng = np.random.default_rng(seed)
    diffs = []
    for idx in _resample_indices(len(labels), n_boot, rng,
                                 lambda i: has_pos[i].any() and has_neg[i].any()):
        y = np.concatenate([labels[i] for i in idx])
        diffs.append(auroc(np.concatenate([sa[i] for i in idx]), y)
                     - auroc(np.concatenate([sb[i] for i in idx]), y))
    diffs = np.sort(diffs)
    sd = diffs.std(ddof=1)
    mean = diffs.mean()
    if sd == 0.0:
        z = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    else:
        z = mean / sd
    return float(norm.sf(z))


# -- trajectories -----------------------------------------------------------------------

def point_biserial(probs, labels) -> float:
    """Point-biserial correlation between scores and 0/1 labels.

    Uses the group-mean form ``(m1 - m0) / s * sqrt(p * q)`` with the
    population standard deviation ``s``.
    """
    x = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    n1 = int(y.sum())
    if n1 == 0 or n1 == y.size:
        raise ConstantInput("labels do not contain both classes")
    sd = x.std()
    if sd == 0.0:
        raise ConstantInput("predictions are constant")
    p = n1 / y.size
    return float((x[y == 1].mean() - x[y == 0].mean()) / sd * math.sqrt(p * (1 - p)))


def participant_accuracy(probs, labels, threshold: float = THRESHOLD) -> float:
    x = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.size == 0:
        raise ValueError("empty trajectory")
    return float(np.mean((x >= threshold).astype(int) == y))


@dataclass(frozen=True)
class ProgressionScore:
    kind: str  # "point_biserial" or "accuracy"
    value: float


def progression_score(probs, labels=None) -> ProgressionScore:
    """Point-biserial correlation when the labels change, otherwise accuracy.

    Accepts either ``(probs, labels)`` or a single trajectory object.
    """
    if labels is None:
        probs, labels = probs.probs, probs.labels
    y = np.asarray(labels, dtype=int)
    if y.size == 0:
        raise ValueError("empty trajectory")
    if y.min() != y.max():
        try:
            return ProgressionScore("point_biserial", point_biserial(probs, y))
        except ConstantInput:
            # constant predictions carry no correlation
            return ProgressionScore("point_biserial", 0.0)
    return ProgressionScore("accuracy", participant_accuracy(probs, y))


def progression_summary(scores: Sequence[ProgressionScore]) -> float:
    """Unweighted mean of the mixed correlation and accuracy values."""
    if not scores:
        raise ValueError("no trajectories")
    return float(np.mean([s.value for s in scores]))


@dataclass(frozen=True)
class DTWResult:
    path: list[tuple[int, int]]
    cost: float
    aligned_pb: float | None  # point-biserial over path-matched pairs; None if undefined


def dtw_cost_matrix(probs, labels) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    l = np.asarray(labels, dtype=float)
    cost = np.abs(p[:, None] - l[None, :])
    acc = np.full((p.size + 1, l.size + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, p.size + 1):
        for j in range(1, l.size + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
    return acc


def dtw_align(probs, labels) -> DTWResult:
    """Classic DTW between predictions and 0/1 labels with |p - l| cost.

    Steps are (1,0), (0,1), (1,1); the traceback prefers the diagonal on ties.
    """
    p = np.asarray(probs, dtype=float)
    l = np.asarray(labels, dtype=float)
    if p.size < 2 or l.size < 2:
        raise ValueError("both series need at least two points")
    acc = dtw_cost_matrix(p, l)
    i, j = p.size, l.size
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        moves = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(moves, key=lambda m: m[0])  # stable: diagonal wins ties
        path.append((i - 1, j - 1))
    path.reverse()
    pi = np.array([a for a, _ in path])
    lj = np.array([b for _, b in path])
    try:
        aligned = point_biserial(p[pi], l[lj].astype(int))
    except ConstantInput:
        aligned = None
    return DTWResult(path, float(acc[-1, -1]), aligned)


# -- latent space -------------------------------------------------------------------------

@dataclass(frozen=True)
class PCAResult:
    projections: np.ndarray  # (n, k)
    components: np.ndarray  # (k, d)
    eigenvalues: np.ndarray  # all, descending
    mean: np.ndarray
    rank_deficient: bool = False


def pca_project(vectors, k: int = 4, strict: bool = False) -> PCAResult:
    """Project mean-centred rows onto the top-``k`` covariance eigenvectors.

    Each component's largest-magnitude loading is made positive.  When fewer
    than ``k`` eigenvalues are nonzero the missing components are zero and
    ``rank_deficient`` is set (or :class:`RankDeficient` raised if ``strict``).
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2 or x.shape[0] < k + 1:
        raise ValueError(f"need at least {k + 1} vectors, got {x.shape[0] if x.ndim == 2 else 0}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    tol = max(evals[0], 1e-300) * max(cov.shape) * np.finfo(float).eps * 10
    n_nonzero = int(np.sum(evals > tol))
    deficient = n_nonzero < k
    if deficient and strict:
        raise RankDeficient(f"only {n_nonzero} nonzero eigenvalues for k={k}")
    comps = np.zeros((k, x.shape[1]))
    for c in range(min(k, n_nonzero, x.shape[1])):
        v = evecs[:, c]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps[c] = v
    return PCAResult(xc @ comps.T, comps, evals, mean, deficient)


# -- statistical analyses --------------------------------------------------------------------

@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r: float
    n: int


def symptom_fit(probs, symptom_counts, exclude_above: int = 5) -> LineFit:
    """Least-squares line of probability on symptom count, excluding heavy counts."""
    x = np.asarray(symptom_counts, dtype=float)
    y = np.asarray(probs, dtype=float)
    keep = x <= exclude_above
    x, y = x[keep], y[keep]
    if np.unique(x).size < 2:
        raise ConstantInput("need at least two distinct symptom counts")
    slope, intercept = np.polyfit(x, y, 1)
    r = 0.0 if y.std() == 0 else float(np.corrcoef(x, y)[0, 1])
    return LineFit(float(slope), float(intercept), r, int(x.size))


def symptom_correlation(samples: Sequence[ScoredSample], ever_positive: dict[str, bool],
                        exclude_above: int = 5) -> dict[str, LineFit]:
    """Symptom fits for ever-positive and never-positive participants separately."""
    out = {}
    for name, flag in (("ever_positive", True), ("never_positive", False)):
        group = [s for s in samples if ever_positive[s.participant_id] == flag]
        out[name] = symptom_fit([s.score for s in group], [s.symptom_count for s in group],
                                exclude_above)
    return out


def trend_anchor(days, labels, symptom_counts) -> int:
    """First symptom day, or the first positive test if no symptoms preceded it."""
    days = np.asarray(days)
    sym = days[np.asarray(symptom_counts) > 0]
    pos = days[np.asarray(labels) == 1]
    candidates = [int(d.min()) for d in (sym, pos) if d.size]
    if not candidates:
        raise WindowEmpty("no symptoms and no positive test to anchor the window")
    return min(candidates)


def seven_day_trend(pred_days, probs, history_days, history_labels, history_symptoms,
                    window_days: int = 7) -> str:
    """``"increasing"`` if the probability slope over the first week is positive."""
    anchor = trend_anchor(history_days, history_labels, history_symptoms)
    d = np.asarray(pred_days, dtype=float)
    p = np.asarray(probs, dtype=float)
    inside = (d >= anchor) & (d < anchor + window_days)
    if inside.sum() < 2:
        raise WindowEmpty(f"{int(inside.sum())} prediction(s) in the window from day {anchor}")
    slope = np.polyfit(d[inside], p[inside], 1)[0]
    return "increasing" if slope > 0 else "non-increasing"


@dataclass
class LengthCurve:
    """Accuracy per history cap; caps without predictions are absent."""

    points: dict[int, tuple[float, int]] = field(default_factory=dict)

    def monotone_fraction(self) -> float:
        """Share of adjacent caps whose accuracy does not drop."""
        values = [v for _, (v, _) in sorted(self.points.items())]
        if len(values) < 2:
            return 1.0
        return float(np.mean([b >= a - 1e-12 for a, b in zip(values, values[1:])]))


def seq_length_analysis(runs) -> LengthCurve:
    """Accuracy against history length.

    ``runs`` maps a history cap (samples or days) to the trajectories computed
    with the input history truncated to that cap.  Every cap scores the same
    days, so differences come from the amount of history alone.
    """
    curve = LengthCurve()
    for cap in sorted(runs):
        correct = [p.predicted_class == p.label for traj in runs[cap] for p in traj.points]
        if correct:
            curve.points[int(cap)] = (float(np.mean(correct)), len(correct))
    return curve
