"""Heading estimation by Normal Distributions Transform matching.

Map building points are summarised as per-cell Gaussians. Building points
seen by the stereo camera are rotated by a candidate heading, translated by
the ego position, and scored against those Gaussians; the heading is found
by a 1-D search around the inertial prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import normalize_angle, rotation_matrix

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InsufficientPoints(ValueError):
    pass


class LowConfidence(RuntimeError):
    def __init__(self, message, theta=None, score=0.0):
        super().__init__(message)
        self.theta = theta
        self.score = score


@dataclass
class NdtGrid:
    cell_size: float
    means: dict = field(default_factory=dict)  # (i, j) -> (2,) mean
    covariances: dict = field(default_factory=dict)  # (i, j) -> (2, 2)
    counts: dict = field(default_factory=dict)
    inverses: dict = field(default_factory=dict)
    origin: tuple = (0.0, 0.0)
    companions: list = field(default_factory=list)  # half-cell shifted grids scored alongside this one

    def __len__(self):
        return len(self.means)

    def cell_of(self, points) -> np.ndarray:
        rel = np.asarray(points, dtype=float) - np.asarray(self.origin)
        return np.floor(rel / self.cell_size).astype(np.int64)

    def packed(self):
        """Sorted key array plus stacked means/inverse covariances for vectorised lookup."""
        if not hasattr(self, "_packed"):
            keys = sorted(self.means)
            self._packed = (
                np.array(keys, dtype=np.int64).reshape(-1, 2),
                np.array([self.means[k] for k in keys]).reshape(-1, 2),
                np.array([self.inverses[k] for k in keys]).reshape(-1, 2, 2),
            )
        return self._packed


def build_ndt(map_points, cell_size: float = 2.0, min_count: int = 3,
              floor_ratio: float = 0.01, point_sigma: float = 0.0, overlap: bool = False) -> NdtGrid:
    """Per-cell sample mean and covariance of the map points.

    Cells with fewer than ``min_count`` points are dropped. Covariance
    eigenvalues are floored at ``floor_ratio`` times the largest one, then
    ``point_sigma**2`` is added to both to absorb scan noise and ego position
    error. With ``overlap`` three more grids shifted by half a cell are built
    and every point is scored against all four, which removes most of the
    bias that cell boundaries put on the score maximum.
    """
    grid = _build_layer(map_points, cell_size, min_count, floor_ratio, point_sigma, (0.0, 0.0))
    if overlap:
        h = 0.5 * cell_size
        grid.companions = [_build_layer(map_points, cell_size, min_count, floor_ratio, point_sigma, o)
                           for o in ((h, 0.0), (0.0, h), (h, h))]
    return grid


def _build_layer(map_points, cell_size, min_count, floor_ratio, point_sigma, origin) -> NdtGrid:
    pts = np.asarray(map_points, dtype=float).reshape(-1, 2)
    grid = NdtGrid(cell_size, origin=origin)
    if len(pts) == 0:
        raise InsufficientPoints("no map points")
    cells = grid.cell_of(pts)
    order = np.lexsort((cells[:, 1], cells[:, 0]))
    cells, pts_sorted = cells[order], pts[order]
    keys, start, counts = np.unique(cells, axis=0, return_index=True, return_counts=True)
    for key, s, c in zip(keys, start, counts):
        if c < min_count:
            continue
        members = pts_sorted[s:s + c]
        mean = members.mean(axis=0)
        cov = np.cov(members, rowvar=False, bias=False)
        vals, vecs = np.linalg.eigh(cov)
        top = max(vals.max(), 1e-9)
        vals = np.maximum(vals, floor_ratio * top) + point_sigma**2
        cov = (vecs * vals) @ vecs.T
        k = (int(key[0]), int(key[1]))
        grid.means[k] = mean
        grid.covariances[k] = cov
        grid.counts[k] = int(c)
        grid.inverses[k] = (vecs / vals) @ vecs.T
    if not grid.means:
        raise InsufficientPoints(f"no cell holds {min_count} or more points")
    return grid


def transform_points(theta: float, points, ego) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ego = np.asarray(ego.as_array() if hasattr(ego, "as_array") else ego, dtype=float)
    return pts @ rotation_matrix(theta).T + ego


def score_points(points: np.ndarray, grid: NdtGrid) -> float:
    """NDT score of map-frame points: sum of Gaussian responses of their cells."""
    if len(grid) == 0:
        raise ValueError("empty NDT grid")
    return _layer_score(points, grid) + sum(_layer_score(points, g) for g in grid.companions)


def _layer_score(points: np.ndarray, grid: NdtGrid) -> float:
    keys, means, inverses = grid.packed()
    cells = grid.cell_of(points)
    # locate each point's cell in the sorted key array
    key_code = keys[:, 0] * (1 << 32) + keys[:, 1]
    cell_code = cells[:, 0] * (1 << 32) + cells[:, 1]
    pos = np.searchsorted(key_code, cell_code)
    pos = np.minimum(pos, len(key_code) - 1)
    hit = key_code[pos] == cell_code
    if not hit.any():
        return 0.0
    diff = points[hit] - means[pos[hit]]
    mahal = np.einsum("ni,nij,nj->n", diff, inverses[pos[hit]], diff)
    return float(np.exp(-0.5 * mahal).sum())


def ndt_score(theta: float, stixel_points, ego, grid: NdtGrid) -> float:
    """Score camera-frame building points rotated by ``theta`` and shifted to ``ego``."""
    return score_points(transform_points(theta, stixel_points, ego), grid)


def estimate_heading(stixel_points, ego, grid: NdtGrid, theta_init: float,
                     window: float = math.radians(15.0), coarse_step: float = math.radians(0.5),
                     resolution: float = math.radians(0.02), score_floor: float = 1.0) -> float:
    """Heading maximising the NDT score within ``theta_init +/- window``.

    A coarse sweep at ``coarse_step`` is refined by golden-section search on
    the bracket around the best sample. Raises :class:`LowConfidence` when
    the best score is below ``score_floor``.
    """
    pts = np.asarray(stixel_points, dtype=float).reshape(-1, 2)
    n_steps = int(round(2 * window / coarse_step))
    candidates = theta_init - window + coarse_step * np.arange(n_steps + 1)
    scores = np.array([ndt_score(t, pts, ego, grid) for t in candidates])
    best = int(np.argmax(scores))
    lo = candidates[max(best - 1, 0)]
    hi = candidates[min(best + 1, n_steps)]

    def f(t):
        return -ndt_score(t, pts, ego, grid)

    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > resolution:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    theta = 0.5 * (lo + hi)
    peak = ndt_score(theta, pts, ego, grid)
    if scores[best] > peak:
        theta, peak = float(candidates[best]), float(scores[best])
    if peak < score_floor:
        raise LowConfidence(f"NDT peak score {peak:.3f} below floor {score_floor}",
                            theta=normalize_angle(theta), score=peak)
    return normalize_angle(theta)
