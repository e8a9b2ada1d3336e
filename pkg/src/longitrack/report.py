"""Full evaluation of a checkpoint on the test partition, as one MetricReport."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import score_baselines, train_baselines
from .cohort import Cohort, DatasetSplit
from .errors import ConstantInput, EmptyPartition, SingleClass, WindowEmpty
from .evaluation import (
    LengthCurve,
    ScoredSample,
    auroc,
    auroc_z_test,
    bootstrap_ci,
    dtw_align,
    pca_project,
    point_biserial,
    progression_score,
    progression_summary,
    sens_spec,
    seq_length_analysis,
    seven_day_trend,
    symptom_correlation,
)
from .trajectory import Predictor, Trajectory, truncated_runs, write_trajectories

MODELS = ("sequential", "single", "average")


@dataclass
class MetricReport:
    rows: list[tuple[str, str, float]] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list)
    dtw_paths: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    pca_rows: list[tuple] = field(default_factory=list)
    length_curves: dict[str, LengthCurve] = field(default_factory=dict)
    scored: dict[str, list[ScoredSample]] = field(default_factory=dict)

    def add(self, section: str, name: str, value) -> None:
        self.rows.append((section, name, float(value)))

    def get(self, section: str, name: str) -> float:
        for s, n, v in self.rows:
            if (s, n) == (section, name):
                return v
        raise KeyError(f"{section}/{name}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["section", "metric", "value"])
            for s, n, v in self.rows:
                w.writerow([s, n, f"{v:.6f}"])

    def write_dtw_paths(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["participant_id", "step", "prediction_index", "label_index"])
            for pid in sorted(self.dtw_paths):
                for k, (i, j) in enumerate(self.dtw_paths[pid]):
                    w.writerow([pid, k, i, j])

    def write_pca(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["participant_id", "day", "label", "pc1", "pc2", "pc3", "pc4"])
            for pid, day, label, proj in self.pca_rows:
                w.writerow([pid, day, label] + [f"{v:.6f}" for v in proj])

    def summary(self) -> str:
        """Human-readable text in the order detection, progression, statistics."""
        by_section: dict[str, list[tuple[str, float]]] = {}
        for s, n, v in self.rows:
            by_section.setdefault(s, []).append((n, v))
        lines = []
        for section, items in by_section.items():
            lines.append(f"[{section}]")
            lines.extend(f"  {n:<28} {v:.4f}" for n, v in items)
        for kind, curve in self.length_curves.items():
            lines.append(f"[sequence length: {kind}]")
            lines.extend(f"  cap {cap:>3}  accuracy {acc:.4f}  n={n}"
                         for cap, (acc, n) in sorted(curve.points.items()))
            lines.append(f"  non-decreasing fraction {curve.monotone_fraction():.4f}")
        return "\n".join(lines) + "\n"


def _scored(traj: Trajectory) -> list[ScoredSample]:
    return [ScoredSample(traj.participant_id, p.day, p.probability, p.label, p.symptom_count)
            for p in traj.points]


def recovery_ids(trajectories) -> list[str]:
    """Participants whose labels start positive and end negative."""
    return [t.participant_id for t in trajectories
            if len(t) >= 2 and t.labels[0] == 1 and t.labels[-1] == 0]


def evaluate(cohort: Cohort, split: DatasetSplit, params, bank, seed: int = 0,
             n_boot: int = 1000) -> MetricReport:
    predictor = Predictor(params, bank, cohort.root)
    test = [cohort.participants[pid] for pid in sorted(split.test)]
    test = [p for p in test if len(p.samples) >= 2]
    if not test:
        raise EmptyPartition("no test participant with two or more samples")
    rep = MetricReport()
    rep.trajectories = [t for t in (predictor.predict_trajectory(p) for p in test) if len(t)]
    seq = [s for t in rep.trajectories for s in _scored(t)]
    if len({s.label for s in seq}) < 2:
        raise SingleClass("test predictions contain only one class")

    heads = train_baselines(cohort, split.train, predictor, seed)
    rep.scored = {"sequential": seq, **score_baselines(cohort, split.test, predictor, heads)}
    for name in MODELS:
        samples = rep.scored[name]
        scores = [s.score for s in samples]
        labels = [s.label for s in samples]
        lo, hi = bootstrap_ci(samples, n_boot, seed=seed)
        sens, spec = sens_spec(scores, labels)
        rep.add("detection", f"{name}_auroc", auroc(scores, labels))
        rep.add("detection", f"{name}_auroc_lo", lo)
        rep.add("detection", f"{name}_auroc_hi", hi)
        rep.add("detection", f"{name}_sensitivity", sens)
        rep.add("detection", f"{name}_specificity", spec)
    for name in MODELS[1:]:
        rep.add("detection", f"p_sequential_vs_{name}",
                auroc_z_test(seq, rep.scored[name], n_boot, seed))
    rep.add("detection", "n_predictions", len(seq))

    scores = [progression_score(t) for t in rep.trajectories]
    rep.add("progression", "cohort_mean", progression_summary(scores))
    rep.add("progression", "n_point_biserial", sum(s.kind == "point_biserial" for s in scores))
    rep.add("progression", "n_accuracy", sum(s.kind == "accuracy" for s in scores))

    by_id = {t.participant_id: t for t in rep.trajectories}
    unaligned, aligned = [], []
    for pid in recovery_ids(rep.trajectories):
        t = by_id[pid]
        res = dtw_align(t.probs, t.labels)
        rep.dtw_paths[pid] = res.path
        try:
            u = point_biserial(t.probs, t.labels)
        except ConstantInput:
            u = 0.0
        unaligned.append(u)
        aligned.append(u if res.aligned_pb is None else res.aligned_pb)
    rep.add("recovery", "n_participants", len(unaligned))
    if unaligned:
        rep.add("recovery", "point_biserial_unaligned", np.mean(unaligned))
        rep.add("recovery", "point_biserial_dtw", np.mean(aligned))

    tally = {"increasing": 0, "non-increasing": 0, "window_empty": 0}
    for p in test:
        if not p.ever_positive or p.id not in by_id:
            continue
        t = by_id[p.id]
        try:
            tally[seven_day_trend(t.days, t.probs, p.days, [s.label for s in p.samples],
                                  [s.symptom_count for s in p.samples])] += 1
        except WindowEmpty:
            tally["window_empty"] += 1
    for k, v in tally.items():
        rep.add("seven_day_trend", k, v)

    ever = {p.id: p.ever_positive for p in test}
    try:
        fits = symptom_correlation(seq, ever)
    except (ConstantInput, KeyError):
        fits = {}
    for group, fit in fits.items():
        rep.add("symptoms", f"{group}_r", fit.r)
        rep.add("symptoms", f"{group}_slope", fit.slope)
        rep.add("symptoms", f"{group}_n", fit.n)

    for kind in ("samples", "days"):
        curve = seq_length_analysis(truncated_runs(predictor, test, kind))
        rep.length_curves[kind] = curve
        rep.add("sequence_length", f"{kind}_monotone_fraction", curve.monotone_fraction())

    latents, owners = [], []
    for p in test:
        d, z = predictor.extract_latents(p)
        label_on = {s.day: s.label for s in p.samples}
        latents.append(z)
        owners.extend((p.id, int(day), label_on[int(day)]) for day in d)
    latents = np.concatenate(latents)
    if latents.shape[0] > 4:
        pca = pca_project(latents, k=4)
        total = pca.eigenvalues.sum()
        for c in range(4):
            rep.add("latent_pca", f"pc{c + 1}_variance_share",
                    pca.eigenvalues[c] / total if total > 0 else 0.0)
        rep.pca_rows = [(pid, day, lab, pca.projections[i])
                        for i, (pid, day, lab) in enumerate(owners)]
    return rep


def write_report(rep: MetricReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out / "metrics.csv")
    (out / "summary.txt").write_text(rep.summary(), encoding="utf-8")
    write_trajectories(out / "trajectories.csv", rep.trajectories)
    rep.write_dtw_paths(out / "dtw_paths.csv")
    rep.write_pca(out / "pca.csv")
    return out
