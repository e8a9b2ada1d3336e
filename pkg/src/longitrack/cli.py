"""Command-line entry point: ``longitrack <command> [flags]``.

Exit status is 0 on success, 2 for usage errors, 3 for data errors and 4 for
internal failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from xml.sax.saxutils import escape

from .cohort import load_manifest, split_participants
from .errors import DataError
from .features import FeatureBank
from .report import evaluate, write_report
from .synth import CohortSpec, generate_cohort
from .trajectory import THRESHOLD, Predictor, read_trajectories, write_trajectories
from .training import TrainConfig, load_checkpoint, train

log = logging.getLogger("longitrack")

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 2, 3, 4


class UsageError(Exception):
    pass


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _cohort_and_bank(args):
    manifest = _existing(args.manifest, "manifest")
    features = _existing(getattr(args, "features", None), "feature file")
    bank = FeatureBank.load(features) if features else FeatureBank()
    return load_manifest(manifest, quality=bank.quality), bank


# -- commands ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = CohortSpec.from_file(_existing(args.spec, "spec")) if args.spec else CohortSpec()
    people = generate_cohort(spec, args.out)
    print(f"wrote {len(people)} participants to {args.out}")


def cmd_preprocess(args) -> None:
    manifest = _existing(args.manifest, "manifest")
    bank = FeatureBank()
    out = Path(args.out)
    report = out.with_suffix(".quality.txt")
    cohort = load_manifest(manifest, quality=bank.quality, report_path=report)
    bank.save(out)
    print(f"{len(bank)} recordings cached, {len(cohort.dropped)} rows dropped (see {report})")


def cmd_train(args) -> None:
    config = TrainConfig.from_file(_existing(args.config, "config")) if args.config else TrainConfig()
    cohort, bank = _cohort_and_bank(args)
    split = split_participants(cohort, seed=config.seed)
    out = Path(args.out)
    _, report = train(cohort, split, config, bank, out_path=out)
    report.write_csv(out.with_suffix(".log.csv"))
    print(f"best epoch {report.best_epoch} val_auroc {report.best_val_auroc:.4f}; wrote {out}")


def cmd_eval(args) -> None:
    ckpt = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    cohort, bank = _cohort_and_bank(args)
    split = split_participants(cohort, seed=args.seed)
    rep = evaluate(cohort, split, ckpt.params, bank, seed=args.seed, n_boot=args.n_boot)
    out = write_report(rep, args.out)
    sys.stdout.write(rep.summary())
    print(f"wrote {out}")


def cmd_trajectory(args) -> None:
    ckpt = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    cohort, bank = _cohort_and_bank(args)
    if args.participant not in cohort.participants:
        raise DataError(f"participant {args.participant} not in manifest")
    traj = Predictor(ckpt.params, bank, cohort.root).predict_trajectory(
        cohort.participants[args.participant])
    write_trajectories(args.out, [traj])
    if traj.skipped_days:
        print(f"skipped days without history: {list(traj.skipped_days)}")
    print(f"wrote {len(traj)} predictions to {args.out}")


def cmd_plot(args) -> None:
    trajs = read_trajectories(_existing(args.trajectory_csv, "trajectory CSV"))
    if args.participant is not None:
        trajs = [t for t in trajs if t.participant_id == args.participant]
    elif len(trajs) > 1:
        raise UsageError("CSV holds several participants; pass --participant")
    if not trajs or not len(trajs[0]):
        raise DataError("empty trajectory")
    Path(args.out).write_text(render_svg(trajs[0]), encoding="utf-8")
    print(f"wrote {args.out}")


def cmd_report(args) -> None:
    d = Path(args.eval_dir)
    summary = _existing(str(d / "summary.txt"), "eval summary")
    parts = ["Detection, progression and statistical results", "",
             summary.read_text(encoding="utf-8")]
    traj_csv = d / "trajectories.csv"
    if traj_csv.is_file():
        parts.append("[per-participant trajectories]")
        for t in read_trajectories(traj_csv):
            hits = int((t.predicted == t.labels).sum())
            parts.append(f"  {t.participant_id}  days {t.days[0]}-{t.days[-1]}  "
                         f"correct {hits}/{len(t)}")
    dtw_csv = d / "dtw_paths.csv"
    if dtw_csv.is_file():
        with open(dtw_csv, newline="", encoding="utf-8") as fh:
            steps: dict[str, int] = {}
            for row in csv.DictReader(fh):
                steps[row["participant_id"]] = steps.get(row["participant_id"], 0) + 1
        parts.append("[DTW path lengths]")
        parts.extend(f"  {pid}  {n} steps" for pid, n in sorted(steps.items()))
    text = "\n".join(parts) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- SVG ----------------------------------------------------------------------------------

WIDTH, HEIGHT = 640, 320
LEFT, RIGHT, TOP, BOTTOM = 50, 20, 20, 40
BAND_COLORS = {1: "#f5a623", 0: "#4fc3d9"}  # orange positive, cyan negative


def render_svg(traj) -> str:
    """Probability curve over label bands with the decision threshold.

    Output depends only on the trajectory values, so identical input gives
    identical bytes.
    """
    days = [int(d) for d in traj.days]
    probs = [float(p) for p in traj.probs]
    labels = [int(l) for l in traj.labels]
    lo, hi = days[0], days[-1]
    span = max(hi - lo, 1)
    plot_w = WIDTH - LEFT - RIGHT
    plot_h = HEIGHT - TOP - BOTTOM
    x = lambda d: LEFT + (d - lo) / span * plot_w
    y = lambda p: TOP + (1.0 - p) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<title>{escape(traj.participant_id)}</title>']
    # label bands: runs of equal labels, split halfway between neighbouring days
    edges = [x(lo)] + [(x(a) + x(b)) / 2 for a, b in zip(days, days[1:])] + [x(hi)]
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            x0, x1 = edges[start], edges[i]
            kind = "positive" if labels[start] else "negative"
            out.append(f'<rect class="band {kind}" x="{x0:.2f}" y="{TOP}" '
                       f'width="{x1 - x0:.2f}" height="{plot_h}" '
                       f'fill="{BAND_COLORS[labels[start]]}" fill-opacity="0.3"/>')
            start = i
    out.append(f'<line class="threshold" x1="{LEFT}" y1="{y(THRESHOLD):.2f}" '
               f'x2="{WIDTH - RIGHT}" y2="{y(THRESHOLD):.2f}" stroke="#666666" '
               f'stroke-dasharray="4 3"/>')
    # axes and ticks
    out.append(f'<line class="axis" x1="{LEFT}" y1="{TOP + plot_h}" x2="{WIDTH - RIGHT}" '
               f'y2="{TOP + plot_h}" stroke="#000000"/>')
    out.append(f'<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" '
               f'y2="{TOP + plot_h}" stroke="#000000"/>')
    for p in (0.0, 0.5, 1.0):
        out.append(f'<text x="{LEFT - 6}" y="{y(p) + 4:.2f}" font-size="10" '
                   f'text-anchor="end">{p:.1f}</text>')
    for d in days:
        out.append(f'<text x="{x(d):.2f}" y="{TOP + plot_h + 14}" font-size="10" '
                   f'text-anchor="middle">{d}</text>')
    out.append(f'<text x="{LEFT + plot_w / 2:.2f}" y="{HEIGHT - 6}" font-size="11" '
               f'text-anchor="middle">day</text>')
    points = " ".join(f"{x(d):.2f},{y(p):.2f}" for d, p in zip(days, probs))
    out.append(f'<polyline points="{points}" fill="none" stroke="#1f3a93" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- argument parsing ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longitrack",
                                     description="Longitudinal audio biomarker toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", help="key=value cohort spec (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="quality-check and cache log-mel patches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="feature file (.npz)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the sequential model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="key=value training config")
    p.add_argument("--features", help="feature file from preprocess")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features")
    p.add_argument("--seed", type=int, default=0, help="split and bootstrap seed")
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trajectory", help="per-day predictions for one participant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--participant", required=True)
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("plot", help="render a trajectory CSV as SVG")
    p.add_argument("--trajectory-csv", required=True)
    p.add_argument("--participant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="combine eval artifacts into one text report")
    p.add_argument("--eval-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors itself
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant failures and anything unexpected
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
