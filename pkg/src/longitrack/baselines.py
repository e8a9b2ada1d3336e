"""Non-recurrent comparison models.

Both baselines put one logistic dense layer on the 384-dim fused day vector
produced by the trained embedder.  ``single`` scores the current day alone;
``average`` scores the element-wise mean of the window's day vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, generate_windows, time_inverse_augment
from .errors import NoHistory
from .evaluation import ScoredSample
from .model import AdamState, adam_update, sigmoid
from .trajectory import Predictor

AVERAGE_WINDOW = 5


@dataclass
class BaselineHead:
    w: np.ndarray
    b: float

    def score(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return sigmoid(x @ self.w + self.b)


def baseline_single(fused_window, head: BaselineHead) -> float:
    """Score from the final day's fused vector only."""
    return float(head.score(np.asarray(fused_window)[-1])[0])


def baseline_average(fused_window, head: BaselineHead) -> float:
    """Score from the mean of the window's fused vectors."""
    return float(head.score(np.asarray(fused_window).mean(axis=0))[0])


def fit_head(x, y, seed: int = 0, epochs: int = 400, lr: float = 0.01,
             l2: float = 1e-4) -> BaselineHead:
    """Full-batch Adam on mean logistic loss over standardized inputs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mu = x.mean(axis=0)
    sd = x.std(axis=0) + 1e-8
    z = (x - mu) / sd
    rng = np.random.default_rng(seed)
    params = {"w": rng.normal(0.0, 0.01, size=x.shape[1]), "b": np.zeros(1)}
    state = AdamState.zeros_like(params, lr=lr)
    for _ in range(epochs):
        p = sigmoid(z @ params["w"] + params["b"][0])
        g = (p - y) / y.size
        grads = {"w": z.T @ g + l2 * params["w"], "b": np.array([g.sum()])}
        params = adam_update(params, grads, state)
    # fold the standardization into the dense layer
    w = params["w"] / sd
    return BaselineHead(w, float(params["b"][0] - mu @ w))


def train_baselines(cohort: Cohort, ids, predictor: Predictor, seed: int = 0) -> dict[str, BaselineHead]:
    """Fit both heads on training participants using the frozen embedder."""
    single_x, single_y, avg_x, avg_y = [], [], [], []
    for pid in sorted(ids):
        p = cohort.participants[pid]
        for s in p.samples:
            single_x.append(predictor.day_vector(s))
            single_y.append(s.label)
        if not p.eligible:
            continue
        for w in generate_windows(p):
            for win in (w, time_inverse_augment(w)):
                avg_x.append(np.mean([predictor.day_vector(s) for s in win.samples], axis=0))
                avg_y.append(win.samples[-1].label)
    return {"single": fit_head(single_x, single_y, seed),
            "average": fit_head(avg_x, avg_y, seed)}


def score_baselines(cohort: Cohort, ids, predictor: Predictor,
                    heads: dict[str, BaselineHead]) -> dict[str, list[ScoredSample]]:
    """Score the same days the sequential model is evaluated on.

    The average baseline uses the last (up to) five samples of the lookback
    history ending on the scored day.
    """
    out = {name: [] for name in heads}
    for pid in sorted(ids):
        p = cohort.participants[pid]
        if len(p.samples) < 2:
            continue
        for s in p.samples[1:]:
            try:
                hist = predictor.history(p, s.day)
            except NoHistory:  # the sequence model skips these days too
                continue
            fused = np.stack([predictor.day_vector(h) for h in hist[-AVERAGE_WINDOW:]])
            scores = {"single": baseline_single(fused, heads["single"]),
                      "average": baseline_average(fused, heads["average"])}
            for name in heads:
                out[name].append(ScoredSample(pid, s.day, scores[name], s.label, s.symptom_count))
    return out
