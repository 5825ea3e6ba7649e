"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import SEED_MAX, RunConfig, load_config, set_key, validate
from .errors import ConfigurationError, DataError, DomainError, EstimationError
from .evaluation import ALIGNMENTS, full_report, kitti_segment_rows
from .kitti import export_kitti_sequence, load_kitti_frame, open_sequence
from .pipeline import SyntheticSource, emit_report, run_pipeline
from .trajectory import read_trajectory

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--seed", type=_seed, help="overrides the configured seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--mode", choices=("bootstrap", "constvel"), help="LiDAR odometry initialization")
    p.add_argument("--sparse-lidar", action="store_true", help="FAST-12 pre-test keypoint selection")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="extra configuration override, may be repeated")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vloscale", description="LiDAR-anchored monocular scale correction and "
                                                  "visually bootstrapped LiDAR odometry.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic scenario and run the pipeline on it")
    _run_options(p)
    p.add_argument("--export-kitti", type=Path, metavar="DIR",
                   help="also write the generated frames in KITTI layout")

    p = sub.add_parser("run", help="run the pipeline on a KITTI-layout sequence")
    _run_options(p)
    p.add_argument("--sequence", type=Path, help="sequence directory (overrides kitti.sequence)")
    p.add_argument("--vo", type=Path, help="monocular VO trajectory file (overrides kitti.vo_trajectory)")

    p = sub.add_parser("eval", help="compare an estimated trajectory with ground truth")
    p.add_argument("ground_truth", type=Path)
    p.add_argument("estimate", type=Path)
    p.add_argument("--align", choices=ALIGNMENTS, default="similarity")
    p.add_argument("--out", type=Path, help="write eval.json and segments.csv here")

    p = sub.add_parser("kitti-import", help="validate a KITTI-layout sequence, optionally convert it")
    p.add_argument("sequence", type=Path)
    p.add_argument("--out", type=Path, help="write a PGM copy of the sequence here")
    p.add_argument("--first", type=int, default=0)
    p.add_argument("--count", type=int, default=0, help="number of frames, 0 for all")
    return parser


def _assemble_config(args, mode: str) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = replace(cfg, mode=mode)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.mode:
        cfg = replace(cfg, odom_mode=args.mode)
    if args.sparse_lidar:
        cfg = replace(cfg, selection=replace(cfg.selection, mode="sparse"))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        cfg = set_key(cfg, key.strip(), value)
    if mode == "kitti":
        kitti = cfg.kitti
        if getattr(args, "sequence", None):
            kitti = replace(kitti, sequence=str(args.sequence))
        if getattr(args, "vo", None):
            kitti = replace(kitti, vo_trajectory=str(args.vo))
        cfg = replace(cfg, kitti=kitti)
    return validate(cfg)


def _print_summary(report, paths) -> None:
    s = report.summary()
    print(f"frames {s['frame_count']}  keyframes {s['keyframe_count']}  events {s['event_count']} "
          f"(triggered {s['triggered_count']})  failures {len(s['failures'])}  fallbacks {s['fallback_count']}")
    for name, err in s["final_position_error"].items():
        ate = s["evaluation"].get(name, {}).get("ate_rmse")
        ate_txt = f"  ATE {ate:.3f} m" if ate is not None else ""
        print(f"{name:13s} final position error {err:.3f} m{ate_txt}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")


def cmd_simulate(args) -> int:
    cfg = _assemble_config(args, "synthetic")
    source = SyntheticSource(cfg)
    if args.export_kitti:
        export_kitti_sequence(args.export_kitti, (source.frame(i) for i in range(len(source))), source.K,
                              source.T_L_C)
    report = run_pipeline(cfg, source)
    _print_summary(report, emit_report(report, args.out))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _assemble_config(args, "kitti")
    report = run_pipeline(cfg)
    _print_summary(report, emit_report(report, args.out))
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = read_trajectory(args.ground_truth)
    est = read_trajectory(args.estimate)
    rep = full_report(gt, est, args.align)
    rows = kitti_segment_rows(gt, est)
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
        with (args.out / "segments.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("start_index", "length_m", "trans_err_pct", "rot_err_deg_per_m"))
            w.writerows((i, length, repr(t), repr(r)) for i, length, t, r in rows)
    return EXIT_OK


def cmd_kitti_import(args) -> int:
    calib, times, gt = open_sequence(args.sequence)
    if args.first < 0 or args.count < 0:
        raise UsageError("--first and --count must be non-negative")
    stop = len(times) if args.count == 0 else min(len(times), args.first + args.count)
    frames = []
    points = 0
    for i in range(args.first, stop):
        f = load_kitti_frame(args.sequence, i, times, gt)
        points += len(f.cloud)
        if args.out:
            frames.append(f)
    n = stop - args.first
    K = calib.K
    print(f"{args.sequence}: {n} frames, {points} points, image {K.width}x{K.height}, "
          f"fx {K.fx} fy {K.fy} cx {K.cx} cy {K.cy}, ground truth {'yes' if gt is not None else 'no'}")
    if args.out:
        export_kitti_sequence(args.out, frames, K, calib.T_L_C)
        print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "eval": cmd_eval, "kitti-import": cmd_kitti_import}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vloscale: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, DomainError) as exc:
        print(f"vloscale: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"vloscale: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"vloscale: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
