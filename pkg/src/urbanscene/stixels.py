"""Semantic stixel extraction and DBSCAN obstacle clustering.

A stixel is a thin vertical slab ``[u, v_b, v_t, d, l]``: image column,
base row, top row, disparity and semantic class. Stixels are grouped into
obstacles by density clustering in the camera ground plane.
"""
from __future__ import annotations

import bisect
import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import D_MIN, CameraIntrinsics, unproject_array


class Label(enum.IntEnum):
    OTHER = 0  # ground, sky, unlabelled
    VEHICLE = 1
    PEDESTRIAN = 2
    BUILDING = 3

    @classmethod
    def parse(cls, text: str) -> "Label":
        """Class name in any case, or its integer code."""
        text = text.strip()
        return cls(int(text)) if text.isdigit() else cls[text.upper()]


class DimensionMismatch(ValueError):
    pass


class EmptyCluster(ValueError):
    pass


@dataclass(frozen=True)
class SemanticStixel:
    u: float
    v_b: float
    v_t: float
    d: float
    l: Label


@dataclass
class StixelSet:
    timestamp: float
    stixels: list[SemanticStixel] = field(default_factory=list)

    def __len__(self):
        return len(self.stixels)

    def with_label(self, *labels: Label) -> "StixelSet":
        return StixelSet(self.timestamp, [s for s in self.stixels if s.l in labels])

    def without_label(self, *labels: Label) -> "StixelSet":
        return StixelSet(self.timestamp, [s for s in self.stixels if s.l not in labels])


@dataclass
class ObstacleCluster:
    cluster_id: int
    members: list[SemanticStixel]
    u_center: float
    v_T_center: float
    d_center: float
    label: Label


@dataclass
class ObstacleSet:
    timestamp: float
    obstacles: list[ObstacleCluster] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.obstacles)


@dataclass
class StixelParams:
    width: int = 5
    disparity_tolerance: float = 1.0  # px, against the running median
    min_height: int = 3  # px


def extract_stixels(disparity, labels, cam: CameraIntrinsics, params: StixelParams | None = None,
                    timestamp: float = 0.0) -> StixelSet:
    """Column-band segmentation of disparity + label images into stixels.

    Each band of ``params.width`` columns is represented by its centre
    column's labels; per-row disparity is the median over band pixels that
    carry the same label. Maximal label runs are split wherever the disparity
    leaves ``disparity_tolerance`` of the run's running median.
    """
    params = params or StixelParams()
    disparity = np.asarray(disparity, dtype=float)
    labels = np.asarray(labels)
    if disparity.shape != labels.shape or disparity.shape != (cam.height, cam.width):
        raise DimensionMismatch(
            f"disparity {disparity.shape}, labels {labels.shape}, camera {(cam.height, cam.width)}"
        )
    H, W, w = cam.height, cam.width, params.width
    starts = np.arange(0, W, w)
    stops = np.minimum(starts + w, W)
    centres = starts + (stops - starts) // 2
    row_label = labels[:, centres]  # (H, bands)
    row_d = np.empty(row_label.shape)
    n_full = W // w
    if n_full:
        lab_b = labels[:, :n_full * w].reshape(H, n_full, w)
        d_b = disparity[:, :n_full * w].reshape(H, n_full, w)
        same = lab_b == row_label[:, :n_full, None]
        row_d[:, :n_full] = _masked_row_median(d_b.reshape(-1, w), same.reshape(-1, w)).reshape(H, n_full)
    if n_full < len(starts):
        same = labels[:, starts[-1]:] == row_label[:, -1:]
        row_d[:, -1] = _masked_row_median(disparity[:, starts[-1]:], same)
    with np.errstate(invalid="ignore"):
        valid = (row_label != Label.OTHER) & (row_d > D_MIN)

    # runs of equal label inside each band, scanned band-major
    code = np.where(valid, row_label.astype(np.int64), -1).T.ravel()
    dvals = row_d.T.ravel()
    brk = np.r_[True, code[1:] != code[:-1]]
    brk[::H] = True
    run_start = np.flatnonzero(brk)
    run_stop = np.r_[run_start[1:], len(code)]
    keep = code[run_start] >= 0
    run_start, run_stop = run_start[keep], run_stop[keep]
    if len(run_start) == 0:
        return StixelSet(timestamp, [])
    lo = np.minimum.reduceat(np.where(code >= 0, dvals, np.inf), run_start)
    hi = np.maximum.reduceat(np.where(code >= 0, dvals, -np.inf), run_start)
    run_id = np.cumsum(brk) - 1
    member = code >= 0
    order = np.lexsort((dvals[member], run_id[member]))
    sorted_d = dvals[member][order]
    lengths = run_stop - run_start
    offsets = np.r_[0, np.cumsum(lengths)[:-1]]
    medians = 0.5 * (sorted_d[offsets + (lengths - 1) // 2] + sorted_d[offsets + lengths // 2])

    out = []
    for r0, r1, lo_v, hi_v, med in zip(run_start.tolist(), run_stop.tolist(), lo.tolist(), hi.tolist(),
                                       medians.tolist()):
        band, row0 = divmod(r0, H)
        lab = Label(int(code[r0]))
        if hi_v - lo_v <= params.disparity_tolerance:
            pieces = [(row0, row0 + r1 - r0, med)]
        else:
            pieces = _split_run(dvals[r0:r1].tolist(), row0, params.disparity_tolerance)
        for a, b, m in pieces:
            if b - a >= params.min_height:
                out.append(SemanticStixel(u=float(centres[band]), v_b=float(b - 1), v_t=float(a), d=m, l=lab))
    return StixelSet(timestamp, out)


def _split_run(values: list, offset: int, tolerance: float):
    """Split a same-label run where a value leaves tolerance of the running median."""
    pieces = []
    start, window = 0, [values[0]]
    for i in range(1, len(values)):
        k = len(window)
        median = window[k // 2] if k % 2 else 0.5 * (window[k // 2 - 1] + window[k // 2])
        if abs(values[i] - median) > tolerance:
            pieces.append((offset + start, offset + i, _median_sorted(window)))
            start, window = i, [values[i]]
        else:
            bisect.insort(window, values[i])
    pieces.append((offset + start, offset + len(values), _median_sorted(window)))
    return pieces


def _median_sorted(window: list) -> float:
    k = len(window)
    return float(window[k // 2] if k % 2 else 0.5 * (window[k // 2 - 1] + window[k // 2]))


def _masked_row_median(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-row median over entries where ``mask`` holds (NaN for empty rows)."""
    filled = np.sort(np.where(mask, values, np.inf), axis=1)
    count = mask.sum(axis=1)
    rows = np.arange(len(values))
    lo = filled[rows, np.maximum((count - 1) // 2, 0)]
    hi = filled[rows, np.maximum(count // 2, 0)]
    with np.errstate(invalid="ignore"):
        out = 0.5 * (lo + hi)
    return np.where(count > 0, out, np.nan)


def dbscan(points: np.ndarray, eps: float, min_pts: int, groups=None) -> np.ndarray:
    """Order-independent DBSCAN; returns labels 0..k-1 with -1 for noise.

    Neighbourhoods include the point itself. Core points are linked into
    clusters by eps-connectivity; a border point joins the cluster of its
    nearest core neighbour (lowest index on ties). When ``groups`` is given,
    points in different groups are never neighbours.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts >= 1")
    if n == 0:
        return np.empty(0, dtype=int)
    groups = np.zeros(n, dtype=int) if groups is None else np.asarray(groups)
    pairs = []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        tree = cKDTree(points[idx])
        pg = tree.query_pairs(eps, output_type="ndarray")
        if len(pg):
            pairs.append(idx[pg])
    pairs = np.vstack(pairs) if pairs else np.empty((0, 2), dtype=int)
    degree = np.bincount(pairs.ravel(), minlength=n) + 1
    core = degree >= min_pts

    both_core = core[pairs[:, 0]] & core[pairs[:, 1]]
    cp = pairs[both_core]
    graph = coo_matrix((np.ones(len(cp)), (cp[:, 0], cp[:, 1])), shape=(n, n))
    _, component = connected_components(graph, directed=False)

    labels = np.full(n, -1)
    core_idx = np.flatnonzero(core)
    # components of core points, numbered by lowest member index
    remap = {}
    for i in core_idx:
        labels[i] = remap.setdefault(component[i], len(remap))

    mixed = pairs[core[pairs[:, 0]] != core[pairs[:, 1]]]
    if len(mixed):
        swap = core[mixed[:, 0]]
        border = np.where(swap, mixed[:, 1], mixed[:, 0])
        other = np.where(swap, mixed[:, 0], mixed[:, 1])
        dist = np.hypot(*(points[border] - points[other]).T)
        order = np.lexsort((other, dist, border))
        border, other = border[order], other[order]
        first = np.r_[True, border[1:] != border[:-1]]
        labels[border[first]] = labels[other[first]]
    return labels


def obstacle_centroid(members) -> tuple[float, float, float]:
    """Mean column, mean top row and median disparity of a stixel group."""
    if not members:
        raise EmptyCluster("cluster has no members")
    u = np.array([s.u for s in members])
    v_t = np.array([s.v_t for s in members])
    d = np.array([s.d for s in members])
    return float(u.mean()), float(v_t.mean()), float(np.median(d))


def _majority_label(members) -> Label:
    counts = Counter(s.l for s in members)
    return min(counts, key=lambda lab: (-counts[lab], int(lab)))


def cluster_stixels(s: StixelSet, cam: CameraIntrinsics, eps: float = 1.5, min_pts: int = 2,
                    label_aware: bool = True) -> ObstacleSet:
    """Group stixels into obstacles with DBSCAN in camera ground-plane coordinates.

    With ``label_aware`` the distance between stixels of different classes is
    infinite, so every cluster is class-pure. Noise stixels are dropped and
    clusters are numbered 1..C by their leftmost member column.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts >= 1")
    stixels = s.stixels
    if not stixels:
        return ObstacleSet(s.timestamp, [])
    u = np.array([st.u for st in stixels])
    d = np.array([st.d for st in stixels])
    pts = unproject_array(u, d, cam)
    groups = np.array([int(st.l) for st in stixels]) if label_aware else None
    labels = dbscan(pts, eps, min_pts, groups)

    groups_by_cluster: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        if lab >= 0:
            groups_by_cluster.setdefault(int(lab), []).append(i)

    def order_key(idx):
        members = [stixels[i] for i in idx]
        return (min(m.u for m in members), -max(m.d for m in members),
                sorted((m.u, m.v_t, m.v_b, m.d, int(m.l)) for m in members))

    ordered = sorted(groups_by_cluster.values(), key=order_key)
    obstacles = []
    for k, idx in enumerate(ordered, start=1):
        members = [stixels[i] for i in idx]
        u_c, v_c, d_c = obstacle_centroid(members)
        obstacles.append(ObstacleCluster(k, members, u_c, v_c, d_c, _majority_label(members)))
    return ObstacleSet(s.timestamp, obstacles)


STIXEL_FIELDS = ["timestamp", "u", "v_b", "v_t", "d", "l"]


def write_stixels(sets, path) -> None:
    """Write stixel sets as comma-separated records, one stixel per line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STIXEL_FIELDS)
        for sset in sets:
            for st in sset.stixels:
                writer.writerow([f"{sset.timestamp:.6f}", f"{st.u:.3f}", f"{st.v_b:.3f}",
                                 f"{st.v_t:.3f}", f"{st.d:.6f}", st.l.name.lower()])


def read_stixels(path) -> list[StixelSet]:
    sets: dict[float, StixelSet] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = float(row["timestamp"])
            sets.setdefault(t, StixelSet(t)).stixels.append(SemanticStixel(
                float(row["u"]), float(row["v_b"]), float(row["v_t"]), float(row["d"]),
                Label.parse(row["l"]),
            ))
    return [sets[t] for t in sorted(sets)]


# Raster layout: disparity as 16-bit grayscale PNG holding round(d * 256),
# 0 meaning invalid; labels as 8-bit grayscale PNG holding Label values.
DISPARITY_SCALE = 256.0


def write_disparity(path, disparity) -> None:
    fixed = np.clip(np.round(np.asarray(disparity) * DISPARITY_SCALE), 0, 65535).astype(np.uint16)
    Image.fromarray(fixed).save(Path(path), format="PNG")


def read_disparity(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint16).astype(float) / DISPARITY_SCALE


def write_labels(path, labels) -> None:
    Image.fromarray(np.asarray(labels, dtype=np.uint8)).save(Path(path), format="PNG")


def read_labels(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint8)
