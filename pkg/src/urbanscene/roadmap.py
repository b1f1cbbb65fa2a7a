"""Digital map: building footprints, lane centerlines and the intersection area.

Map file grammar (INI style, parsed with :mod:`configparser`)::

    [map]
    name = <free text>

    [building <id>]
    polygon = n1 e1; n2 e2; n3 e3; ...      # closed implicitly, meters

    [lane <id>]
    width = 3.5
    centerline = n1 e1; n2 e2; ...           # driving direction = point order

    [intersection]
    polygon = n1 e1; n2 e2; ...

Coordinates are (north, east) pairs separated by ``;``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INTERSECTION = "intersection"
OFF_ROAD = "off-road"


@dataclass
class Lane:
    lane_id: int
    centerline: np.ndarray  # (k, 2) north/east vertices
    width: float = 3.5

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float).reshape(-1, 2)
        if self.width <= 2.0:
            raise ValueError(f"lane {self.lane_id}: width must exceed 2 m")
        if len(self.centerline) < 2:
            raise ValueError(f"lane {self.lane_id}: centerline needs two vertices")


@dataclass
class DigitalMap:
    buildings: list[np.ndarray] = field(default_factory=list)
    lanes: list[Lane] = field(default_factory=list)
    intersection_polygon: np.ndarray | None = None

    def lane(self, lane_id: int) -> Lane:
        for lane in self.lanes:
            if lane.lane_id == lane_id:
                return lane
        raise KeyError(lane_id)

    def building_points(self, spacing: float = 0.25) -> np.ndarray:
        """Points sampled along every building edge at ``spacing`` meters."""
        chunks = [sample_polygon_edges(poly, spacing) for poly in self.buildings]
        if not chunks:
            return np.empty((0, 2))
        return np.vstack(chunks)


def point_in_polygon(points, polygon) -> np.ndarray:
    """Even-odd ray casting; ``points`` is (n, 2), returns a bool array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(polygon, dtype=float)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    straddles = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return np.count_nonzero(straddles & (x < x_cross), axis=1) % 2 == 1


def segment_projection(points, a, b):
    """Project points onto segment ab.

    Returns (distance, along, signed_offset) where ``along`` is the clamped
    arc position on the segment and ``signed_offset`` is positive to the right
    of the direction a->b (right = clockwise, heading convention).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    length = float(np.hypot(*ab))
    unit = ab / length
    rel = pts - a
    t = rel @ unit
    t_clamped = np.clip(t, 0.0, length)
    nearest = a + t_clamped[:, None] * unit
    dist = np.hypot(*(pts - nearest).T)
    # right-hand normal of a heading vector (cos, sin) is (-sin, cos)
    offset = rel @ np.array([-unit[1], unit[0]])
    return dist, t_clamped, offset


def polyline_distance(points, polyline) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance from points to a polyline plus offset/direction of the nearest segment."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    line = np.asarray(polyline, dtype=float)
    best = np.full(len(pts), np.inf)
    offset = np.zeros(len(pts))
    direction = np.zeros((len(pts), 2))
    for a, b in zip(line[:-1], line[1:]):
        dist, _, off = segment_projection(pts, a, b)
        better = dist < best
        best[better] = dist[better]
        offset[better] = off[better]
        seg = (b - a) / np.hypot(*(b - a))
        direction[better] = seg
    return best, offset, direction


def assign_lane(p, roadmap: DigitalMap):
    """Lane id for a map point, or ``"intersection"`` / ``"off-road"``.

    Inside the intersection polygon wins; otherwise the nearest centerline is
    accepted within half its width, with ties going to the lowest lane id.
    """
    xy = np.array([p.north, p.east]) if hasattr(p, "north") else np.asarray(p, dtype=float)
    return assign_lanes(xy.reshape(1, 2), roadmap)[0]


def assign_lanes(points, roadmap: DigitalMap) -> list:
    """Vectorised :func:`assign_lane` over an (n, 2) array."""
    if not roadmap.lanes:
        raise ValueError("map has no lanes")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    best_id = np.full(len(pts), -1)
    best_dist = np.full(len(pts), np.inf)
    for lane in sorted(roadmap.lanes, key=lambda lane: lane.lane_id):
        dist = polyline_distance(pts, lane.centerline)[0]
        better = (dist <= lane.width / 2.0) & (dist < best_dist - 1e-12)
        best_id[better] = lane.lane_id
        best_dist[better] = dist[better]
    out = [int(i) if i >= 0 else OFF_ROAD for i in best_id]
    if roadmap.intersection_polygon is not None:
        inside = point_in_polygon(pts, roadmap.intersection_polygon)
        out = [INTERSECTION if flag else lane for flag, lane in zip(inside, out)]
    return out


def lane_line_distances(points, heading: float, roadmap: DigitalMap):
    """Map-implied distances to the left and right lane lines for each point.

    The lane is the corridor containing the point whose direction best agrees
    with ``heading``. Points in no corridor get NaN.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h = np.array([np.cos(heading), np.sin(heading)])
    left = np.full(len(pts), np.nan)
    right = np.full(len(pts), np.nan)
    best_align = np.full(len(pts), 0.0)
    for lane in roadmap.lanes:
        dist, offset, direction = polyline_distance(pts, lane.centerline)
        half = lane.width / 2.0
        align = direction @ h
        inside = (np.abs(offset) <= half) & (dist <= half + 1e-9) & (align > best_align)
        best_align[inside] = align[inside]
        left[inside] = half + offset[inside]
        right[inside] = half - offset[inside]
    return left, right


def sample_polygon_edges(polygon, spacing: float) -> np.ndarray:
    poly = np.asarray(polygon, dtype=float)
    out = []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        length = float(np.hypot(*(b - a)))
        n = max(int(np.ceil(length / spacing)), 1)
        t = np.arange(n)[:, None] / n
        out.append(a + t * (b - a))
    return np.vstack(out)


def _format_coords(coords) -> str:
    return "; ".join(f"{n:.6f} {e:.6f}" for n, e in np.asarray(coords))


def _parse_coords(text: str) -> np.ndarray:
    rows = [chunk.split() for chunk in text.replace("\n", " ").split(";") if chunk.strip()]
    return np.array(rows, dtype=float).reshape(-1, 2)


def save_map(roadmap: DigitalMap, path, name: str = "synthetic intersection") -> None:
    parser = configparser.ConfigParser()
    parser["map"] = {"name": name}
    for i, poly in enumerate(roadmap.buildings, start=1):
        parser[f"building {i}"] = {"polygon": _format_coords(poly)}
    for lane in roadmap.lanes:
        parser[f"lane {lane.lane_id}"] = {
            "width": f"{lane.width:.6f}",
            "centerline": _format_coords(lane.centerline),
        }
    if roadmap.intersection_polygon is not None:
        parser["intersection"] = {"polygon": _format_coords(roadmap.intersection_polygon)}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_map(path) -> DigitalMap:
    parser = configparser.ConfigParser()
    if not parser.read(Path(path), encoding="utf-8"):
        raise FileNotFoundError(path)
    roadmap = DigitalMap()
    for section in parser.sections():
        kind, _, ident = section.partition(" ")
        body = parser[section]
        if kind == "building":
            roadmap.buildings.append(_parse_coords(body["polygon"]))
        elif kind == "lane":
            roadmap.lanes.append(
                Lane(int(ident), _parse_coords(body["centerline"]), float(body.get("width", "3.5")))
            )
        elif kind == "intersection":
            roadmap.intersection_polygon = _parse_coords(body["polygon"])
    roadmap.lanes.sort(key=lambda lane: lane.lane_id)
    return roadmap
