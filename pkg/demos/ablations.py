"""
Pipeline ablations on the synthetic intersection
================================================

Simulates the nominal scenario once per seed and runs three variants of the
pipeline on the same frames: the full system, the system with building-based
heading correction switched off, and the system with label-agnostic
clustering. Prints one metrics row per run.

    python demos/ablations.py [--seeds 0 1 2] [--full-res]
"""
import argparse
from dataclasses import replace

from urbanscene.pipeline import PipelineConfig, run_scenario
from urbanscene.scenario import ScenarioConfig, simulate

parser = argparse.ArgumentParser()
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
parser.add_argument("--full-res", action="store_true", help="render at full camera resolution (slow)")
args = parser.parse_args()

ARMS = {
    "full": {},
    "no heading correction": {"heading_correction": False},
    "label-agnostic clusters": {"semantic_clustering": False},
}

print(f"{'seed':>4}  {'arm':<24} {'detect':>7} {'FP frames':>9} {'MT':>6} {'ML':>6} {'lane':>6}")
for seed in args.seeds:
    cfg = ScenarioConfig(seed=seed, fast=not args.full_res)
    # simulate once, reuse the frames for every arm
    frames = list(simulate(cfg))
    for name, switches in ARMS.items():
        rep = run_scenario(cfg, replace(PipelineConfig(seed=seed), **switches), frames=frames).report
        print(f"{seed:>4}  {name:<24} {rep.detection_rate:7.1%} {rep.frames_with_false_positive:>9d} "
              f"{rep.mostly_tracked:6.1%} {rep.mostly_lost:6.1%} {rep.lane_localization_rate:6.1%}")

# Heading correction mostly pays off in lane assignment: a heading error of a
# fraction of a degree moves a vehicle 30 m ahead sideways by tens of
# centimetres. Without semantic labels, building stixels form clusters of
# their own and every frame reports a false obstacle.
