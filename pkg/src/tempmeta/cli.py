"""Command-line entry points, one subcommand per pipeline stage.

Run ``python -m tempmeta <command> --help`` for the flags of each command.
Errors are reported as ``tempmeta <command>: error: ...`` on stderr with a
nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import stages as st
from .dataio import load_sequence, read_features, save_sequence, write_features, write_report
from .features import MAX_NC
from .meta.models import FAMILIES, fit_meta
from .meta.protocol import ProtocolError, run_protocol, split_sizes
from .pipeline import PipelineConfig, PipelineError, run_pipeline, tomllib
from .survival import CoxModel
from .synth import SynthConfig, generate
from .tracker import TrackingParams

EXIT_FAILURE = 1
OUTPUT_ARGS = ("out", "targets_out", "model_out")  # parents are created on demand


class CommandError(RuntimeError):
    pass


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path} is not valid JSON: {exc}") from exc


def _load(path, score_threshold=0.0, need_gt=False):
    seq = st.prepare(load_sequence(path), score_threshold)
    if need_gt and seq.gt is None:
        raise CommandError(f"sequence {path} has no gt/ directory")
    return seq


def _dataset(features, targets, n_c=None):
    ds = st.dataset_from(read_features(features), st.load_targets(read_features(targets)))
    return ds if n_c is None else ds.select(None, n_c)


def _write_curves_csv(report: dict, prefix: Path) -> list[Path]:
    out = []
    for mode, c in report["curves"].items():
        rows = [{"threshold": t, "fp": a, "fn": b} for t, a, b in zip(c["threshold"], c["fp"], c["fn"])]
        out.append(write_features(rows, prefix.parent / f"{prefix.name}_{mode}.csv"))
    return out


# --- commands ---------------------------------------------------------------


def cmd_synth(args):
    with open(args.config, "rb") as f:
        d = tomllib.load(f)
    d.setdefault("name", Path(args.out).name)
    cfg = SynthConfig.from_dict(d)
    seq, _ = generate(cfg)
    save_sequence(seq, args.out)
    print(f"wrote {len(seq.frames)} frames to {args.out}")


def cmd_track(args):
    params = TrackingParams(c_o=args.c_o, c_d=args.c_d, c_l=args.c_l, t_l=args.t_l)
    seq = _load(args.inp, args.score_threshold)
    tracked, _ = st.run_tracking(seq, params, seed=args.seed)
    write_report(st.tracks_to_dict(seq, tracked, params, args.seed), args.out)
    n = len({ti.track_id for fr in tracked for ti in fr})
    print(f"{n} tracks over {len(seq.frames)} frames -> {args.out}")


def cmd_gt_ratios(args):
    seqs = [_load(p, need_gt=True) for p in args.gt]
    write_report({"ratios": st.ratios_from(seqs)}, args.out)


def cmd_features(args):
    seq = _load(args.inp, args.score_threshold)
    tracked, history = st.tracks_from_dict(seq, _read_json(args.tracks))
    ratios = None
    if args.gt_ratios:
        ratios = {int(k): float(v) for k, v in _read_json(args.gt_ratios)["ratios"].items()}
    cox = CoxModel.from_dict(_read_json(args.cox)) if args.cox else None
    records = st.feature_records(st.metrics_for(seq, tracked, history, ratios, cox), args.n_c)
    if not records:
        raise CommandError("sequence has no tracked instances")
    write_features(records, args.out)
    if args.targets_out:
        if seq.gt is None:
            raise CommandError("--targets-out needs a gt/ directory in the sequence")
        write_features(st.targets_for(seq), args.targets_out)
    print(f"{len(records)} rows -> {args.out}")


def cmd_survival_fit(args):
    seqs = [_load(p, args.score_threshold, need_gt=True) for p in args.gt]
    model = st.fit_survival_from_records(read_features(args.features), seqs)
    write_report(model.to_dict(), args.out)
    print(f"Cox model on {len(model.beta)} covariates, converged={model.converged} -> {args.out}")


def cmd_meta_train(args):
    ds = _dataset(args.features, args.targets)
    metrics = args.metrics.split(",") if args.metrics else None
    report = run_protocol(ds, args.family, args.task, n_c=args.n_c, runs=args.runs, seed=args.seed,
                          metrics=metrics, group_split=args.group_split)
    write_report(report, args.out)
    if args.model_out:
        sub = ds.select(metrics, args.n_c)
        perm = np.random.default_rng([args.seed, 7]).permutation(len(sub))
        n_tr, n_va, _ = split_sizes(len(sub))
        val = perm[n_tr : n_tr + n_va]
        model = fit_meta(args.family, args.task, sub.take(np.sort(np.setdiff1d(perm, val))), sub.take(val),
                         seed=args.seed)
        write_report(model.to_dict(), args.model_out)
    key = "test_auroc" if args.task == "clf" else "test_r2"
    s = report["summary"][key]
    print(f"{args.family} {args.task} {key}: {s['mean']} +- {s['std']}")


def _sweep(args) -> dict:
    seqs = [_load(p, args.score_threshold, need_gt=True) for p in args.inp]
    ds = _dataset(args.features, args.targets, args.n_c) if args.features else None
    report = st.sweep_report(seqs, ds, args.family, args.seed)
    prefix = Path(args.csv_prefix) if args.csv_prefix else Path(args.out).with_suffix("")
    _write_curves_csv(report, prefix)
    return report


def cmd_sweep(args):
    write_report(_sweep(args), args.out)


def cmd_evaluate(args):
    if args.mode == "mot":
        if not args.inp or not args.tracks or len(args.inp) != len(args.tracks):
            raise CommandError("--mode mot needs one --tracks file per --in sequence")
        pairs = []
        for p, t in zip(args.inp, args.tracks):
            seq = _load(p, args.score_threshold, need_gt=True)
            pairs.append((seq, st.tracks_from_dict(seq, _read_json(t))[0]))
        report = st.mot_reports(pairs)
    elif args.mode == "corr":
        _require(args, "features", "targets")
        report = st.correlation_table(_dataset(args.features, args.targets))
    elif args.mode == "meta":
        _require(args, "features", "targets")
        ds = _dataset(args.features, args.targets)
        report = {}
        for task in args.tasks.split(","):
            for fam in args.families.split(","):
                try:
                    res = run_protocol(ds, fam, task, n_c=args.n_c, runs=args.runs, seed=args.seed,
                                       group_split=args.group_split)
                    res.pop("runs")
                except ProtocolError as exc:
                    res = {"family": fam, "task": task, "degenerate": True, "error": str(exc)}
                report.setdefault(task, {})[fam] = res
    else:
        if not args.inp:
            raise CommandError("--mode sweep needs --in sequence directories")
        report = _sweep(args)
    write_report(report, args.out)


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(args, n)]
    if missing:
        raise CommandError(f"--mode {args.mode} needs {' '.join(missing)}")


def cmd_run(args):
    cfg = PipelineConfig.load(args.config)
    report, executed = run_pipeline(cfg, return_executed=True)
    print(f"stages run: {', '.join(executed) or 'none (all up to date)'}")
    print(f"report: {cfg.report or cfg.workdir / 'report.json'}")


# --- parser -----------------------------------------------------------------


def _n_c(v: str) -> int:
    k = int(v)
    if not 0 <= k <= MAX_NC:
        raise argparse.ArgumentTypeError(f"must lie in [0, {MAX_NC}]")
    return k


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tempmeta", description="Tracking, temporal metrics and meta models for instance predictions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("synth", help="render a synthetic sequence")
    s.add_argument("--config", required=True, help="TOML file with the synthetic sequence settings")
    s.add_argument("--out", required=True, help="sequence directory to create")
    s.set_defaults(func=cmd_synth)

    d = TrackingParams()
    s = sub.add_parser("track", help="assign track ids to a sequence")
    s.add_argument("--in", dest="inp", required=True, help="sequence directory")
    s.add_argument("--out", required=True, help="tracks JSON to write")
    s.add_argument("--c-o", type=float, default=d.c_o, help=f"overlap threshold (default {d.c_o})")
    s.add_argument("--c-d", type=float, default=d.c_d, help=f"centre distance threshold in pixels (default {d.c_d})")
    s.add_argument("--c-l", type=float, default=d.c_l, help=f"regression distance threshold in pixels (default {d.c_l})")
    s.add_argument("--t-l", type=int, default=d.t_l, help=f"frames used by the regression (default {d.t_l})")
    s.add_argument("--seed", type=int, default=0, help="seed of the track id generator (default 0)")
    s.add_argument("--score-threshold", type=float, default=0.0, help="drop predictions scoring below this")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("gt-ratios", help="class-average height/width ratios from ground truth")
    s.add_argument("--gt", nargs="+", required=True, help="sequence directories with gt/")
    s.add_argument("--out", required=True, help="ratios JSON to write")
    s.set_defaults(func=cmd_gt_ratios)

    s = sub.add_parser("features", help="compute the per-instance metric table")
    s.add_argument("--in", dest="inp", required=True, help="sequence directory")
    s.add_argument("--tracks", required=True, help="tracks JSON from the track command")
    s.add_argument("--gt-ratios", help="ratios JSON from gt-ratios; omit to leave out the ratio metric")
    s.add_argument("--cox", help="Cox model JSON from survival-fit; omit to leave out the survival metric")
    s.add_argument("--n-c", type=_n_c, default=5, help="number of earlier frames per row (default 5)")
    s.add_argument("--out", required=True, help="features CSV to write")
    s.add_argument("--targets-out", help="also write the IoU targets CSV (needs gt/)")
    s.add_argument("--score-threshold", type=float, default=0.0, help="must match the value used by track")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("survival-fit", help="fit the survival model")
    s.add_argument("--features", required=True, help="features CSV with n_c >= 5")
    s.add_argument("--gt", nargs="+", required=True, help="sequence directories the rows were computed from")
    s.add_argument("--out", required=True, help="Cox model JSON to write")
    s.add_argument("--score-threshold", type=float, default=0.0, help="must match the value used by track")
    s.set_defaults(func=cmd_survival_fit)

    s = sub.add_parser("meta-train", help="run the repeated-split protocol for one model family")
    s.add_argument("--features", required=True, help="features CSV")
    s.add_argument("--targets", required=True, help="targets CSV")
    s.add_argument("--family", choices=FAMILIES, required=True, help="meta model family")
    s.add_argument("--task", choices=("clf", "reg"), required=True, help="classification of IoU >= 0.5 or IoU regression")
    s.add_argument("--n-c", type=_n_c, help="earlier frames to use (default: all in the table)")
    s.add_argument("--metrics", help="comma separated metric names to restrict to")
    s.add_argument("--runs", type=int, default=10, help="number of random splits (default 10)")
    s.add_argument("--seed", type=int, default=0, help="protocol seed (default 0)")
    s.add_argument("--group-split", action="store_true", help="split whole tracks instead of rows")
    s.add_argument("--out", required=True, help="protocol report JSON to write")
    s.add_argument("--model-out", help="also fit one model on a 90/10 train/validation split and save it")
    s.set_defaults(func=cmd_meta_train)

    def sweep_args(s):
        s.add_argument("--features", help="features CSV; enables the meta-probability curve")
        s.add_argument("--targets", help="targets CSV matching --features")
        s.add_argument("--n-c", type=_n_c, help="earlier frames fed to the meta classifier (default: all)")
        s.add_argument("--family", choices=FAMILIES, default="gb", help="meta classifier (default gb)")
        s.add_argument("--seed", type=int, default=0, help="cross-fitting seed; protocol seed for --mode meta (default 0)")
        s.add_argument("--csv-prefix", help="CSV path prefix; default is --out without suffix")
        s.add_argument("--score-threshold", type=float, default=0.0, help="must match the value used by track")

    s = sub.add_parser("sweep", help="FP/FN counts over score and meta-probability thresholds")
    s.add_argument("--in", dest="inp", nargs="+", required=True, help="sequence directories with gt/")
    s.add_argument("--out", required=True, help="report JSON to write; curves also go to CSV")
    sweep_args(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("evaluate", help="evaluation reports")
    s.add_argument("--mode", choices=("meta", "mot", "sweep", "corr"), required=True,
                   help="protocol summaries, CLEAR-MOT, FP/FN sweep or metric/IoU correlations")
    s.add_argument("--in", dest="inp", nargs="+", help="sequence directories (mot, sweep)")
    s.add_argument("--tracks", nargs="+", help="tracks JSON per sequence (mot)")
    s.add_argument("--out", required=True, help="report JSON to write")
    s.add_argument("--families", default=",".join(FAMILIES), help="comma separated families (meta)")
    s.add_argument("--tasks", default="clf,reg", help="comma separated tasks (meta)")
    s.add_argument("--runs", type=int, default=10, help="number of random splits (meta)")
    s.add_argument("--group-split", action="store_true", help="split whole tracks (meta)")
    sweep_args(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run", help="run the full pipeline from a TOML config")
    s.add_argument("--config", required=True, help="pipeline TOML file")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        for name in OUTPUT_ARGS:
            if getattr(args, name, None):
                Path(getattr(args, name)).parent.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except PipelineError as exc:
        print(f"tempmeta {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (CommandError, ProtocolError, ValueError, OSError, KeyError) as exc:
        print(f"tempmeta {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
