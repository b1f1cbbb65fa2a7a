"""Command-line front end.

    urbanscene generate --out data/ [--config run.ini] [--seed 3] [--fast]
    urbanscene run --input data/ --out run/ [--ablation heading_correction=off]
    urbanscene eval --tracks run/ --truth data/ [--out run/]
    urbanscene plot --tracks run/ --map data/ [--out run/plots]
    urbanscene all --out work/ [--config run.ini] [--seed 3] [--fast]
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import dump_config, load_config, parse_switch
from .evaluation import evaluate, read_detections, write_report
from .pipeline import run, write_outputs
from .plots import MissingLog, emit_plots
from .roadmap import load_map
from .scenario import InvalidConfig, load_dataset, read_truth, write_dataset
from .tracking import read_track_log

log = logging.getLogger("urbanscene")


def _ablation(text: str) -> tuple[str, bool]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected name=on|off, got {text!r}")
    try:
        return name.strip(), parse_switch(value)
    except InvalidConfig as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _configs(args):
    return load_config(args.config, args.seed, True if args.fast else None, dict(args.ablation or []))


def cmd_generate(args) -> None:
    scenario, pipeline = _configs(args)
    out = write_dataset(scenario, args.out)
    dump_config(scenario, pipeline, out / "config.ini")
    print(f"dataset written to {out}")


def cmd_run(args) -> None:
    _, pipeline = _configs(args)
    src = Path(args.input)
    if not (src / "sensors.csv").is_file():
        raise FileNotFoundError(f"{src} is not a dataset directory (no sensors.csv)")
    cam, roadmap, frames, dt = load_dataset(src)
    outputs = [out for _, out in run(frames, cam, roadmap, pipeline, dt)]
    out = write_outputs(outputs, args.out)
    print(f"{len(outputs)} frames processed; logs in {out}")


def evaluate_dirs(run_dir, dataset_dir, radius: float = 2.0):
    run_dir, dataset_dir = Path(run_dir), Path(dataset_dir)
    for p in (run_dir / "tracks.csv", run_dir / "detections.csv", dataset_dir / "truth.csv"):
        if not p.is_file():
            raise MissingLog(f"missing {p}")
    tracks: dict[float, list] = {}
    for t, track_id, label, point, _, lane in read_track_log(run_dir / "tracks.csv"):
        tracks.setdefault(t, []).append((track_id, label, point, lane))
    truth = read_truth(dataset_dir / "truth.csv")
    return evaluate(read_detections(run_dir / "detections.csv"), tracks, truth, radius)


def cmd_eval(args) -> None:
    _, pipeline = _configs(args)
    report = evaluate_dirs(args.tracks, args.truth, pipeline.match_radius)
    out = Path(args.out or args.tracks)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report")
    print(report.to_table())


def _read_poses(path: Path):
    if not path.is_file():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        return [(float(r["north"]), float(r["east"])) for r in csv.DictReader(fh)]


def cmd_plot(args) -> None:
    _, pipeline = _configs(args)
    run_dir = Path(args.tracks)
    map_path = Path(args.map)
    if map_path.is_dir():
        map_path = map_path / "map.ini"
    if not map_path.is_file():
        raise MissingLog(f"map not found: {map_path}")
    paths = emit_plots(run_dir / "tracks.csv", load_map(map_path), args.out or run_dir / "plots",
                       _read_poses(run_dir / "poses.csv"), pipeline.confirm_hits)
    print("figures: " + ", ".join(str(p) for p in paths))


def cmd_all(args) -> None:
    root = Path(args.out)
    data, run_dir = root / "dataset", root / "run"
    for sub, extra in ((cmd_generate, {"out": data}),
                       (cmd_run, {"input": data, "out": run_dir}),
                       (cmd_eval, {"tracks": run_dir, "truth": data, "out": run_dir}),
                       (cmd_plot, {"tracks": run_dir, "map": data, "out": root / "plots"})):
        sub(argparse.Namespace(**{**vars(args), **extra}))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with per-module sections")
    common.add_argument("--seed", type=int, help="scenario and filter seed")
    common.add_argument("--ablation", action="append", type=_ablation, metavar="NAME=on|off",
                        help="heading_correction, lane_weighting or semantic_clustering; repeatable")
    common.add_argument("--fast", action="store_true", help="256x192 render instead of 1024x768")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="urbanscene", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="render a synthetic scenario to a dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", parents=[common], help="run the pipeline on a dataset directory")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="score a run against ground truth")
    p.add_argument("--tracks", required=True, help="run directory with tracks.csv and detections.csv")
    p.add_argument("--truth", required=True, help="dataset directory with truth.csv")
    p.add_argument("--out", help="report directory (default: the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", parents=[common], help="write SVG figures for a run")
    p.add_argument("--tracks", required=True, help="run directory with tracks.csv")
    p.add_argument("--map", required=True, help="map.ini or a dataset directory")
    p.add_argument("--out", help="figure directory (default: <run>/plots)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("all", parents=[common], help="generate, run, eval and plot in one go")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_all)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InvalidConfig, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"urbanscene {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
