"""
Heading from building walls
===========================

Building outlines of the synthetic intersection are turned into per-cell
Gaussians. Wall points seen from the ego vehicle are rotated back into the
map at candidate headings; the best-scoring heading is the estimate. The
script compares one grid against four half-cell shifted grids, with exact
and with noisy wall points.

    python demos/ndt_heading.py [--trials 100]
"""
import argparse
import math

import numpy as np

from urbanscene.geometry import MapPoint, rotation_matrix
from urbanscene.ndt import build_ndt, estimate_heading
from urbanscene.scenario import ScenarioConfig, build_intersection

parser = argparse.ArgumentParser()
parser.add_argument("--trials", type=int, default=100)
args = parser.parse_args()

ego = MapPoint(-20.0, 2.0)
walls = build_intersection(ScenarioConfig()).building_points(0.25)
near = walls[np.hypot(*(walls - ego.as_array()).T) < 30.0]
grids = {
    "one grid": build_ndt(walls),
    "four shifted grids": build_ndt(walls, point_sigma=0.25, overlap=True),
}

rng = np.random.default_rng(0)
errors = {(name, sigma): [] for name in grids for sigma in (0.0, 0.1)}
for _ in range(args.trials):
    theta = math.radians(rng.uniform(-30.0, 30.0))
    prior = theta + math.radians(rng.uniform(-5.0, 5.0))  # what the INS would offer
    seen = (near[rng.choice(len(near), 200, replace=False)] - ego.as_array()) @ rotation_matrix(theta)
    noise = rng.normal(0.0, 0.1, seen.shape)
    for (name, sigma), errs in errors.items():
        est = estimate_heading(seen + (noise if sigma else 0.0), ego, grids[name], prior)
        errs.append(abs(math.degrees(est - theta)))

print(f"{'grid':<20} {'point noise':>11} {'median':>8} {'worst':>8} {'<= 0.5 deg':>10}")
for (name, sigma), errs in errors.items():
    errs = np.array(errs)
    print(f"{name:<20} {sigma:9.1f} m {np.median(errs):8.3f} {errs.max():8.3f} {np.mean(errs <= 0.5):10.0%}")

# A single grid leaves a few tenths of a degree of bias even for exact points:
# a point near a cell edge is scored against one Gaussian or its neighbour,
# and walls meeting at a corner share a cell. Averaging over the shifted
# grids smooths those jumps out. The wider cell Gaussians cost some precision
# once the points are noisy; both variants stay well inside half a degree.
