"""EKF obstacle tracking in the camera frame with flow-gated association.

The state of a track is its camera-frame ground position (forward, right).
Motion is a linear-Gaussian translation by ``dt * velocity`` with velocity
treated as a known input re-estimated from recent filtered states. The
measurement is the stereo pair (column, disparity) of the obstacle centroid.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import EPSILON_DEPTH, CameraIntrinsics, CameraPoint, DepthTooSmall, MapPoint, camera_to_map
from .stixels import Label, ObstacleSet

INITIAL_SPEED = 6.0  # m/s


class SingularInnovation(np.linalg.LinAlgError):
    pass


@dataclass
class MotionModel:
    dt: float = 1.0 / 15.0
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.25, 0.25]))
    R: np.ndarray = field(default_factory=lambda: np.diag([4.0, 1.0]))

    @property
    def A(self) -> np.ndarray:
        return np.eye(2)

    def B(self, velocity) -> np.ndarray:
        return self.dt * np.asarray(velocity, dtype=float)


@dataclass
class Track:
    id: int
    state: np.ndarray
    P: np.ndarray
    velocity: np.ndarray
    label: Label
    age: int = 1
    hits: int = 1
    misses: int = 0
    confirmed: bool = False
    time: float = 0.0
    last_image_coords: tuple[float, float, float] = (0.0, 0.0, 0.0)
    map_history: list = field(default_factory=list)
    recent_states: deque = field(default_factory=lambda: deque(maxlen=3))

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass
class FlowField:
    """Sparse optical flow: anchors (u, v) at t-1 with displacements (du, dv)."""

    anchors: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    vectors: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 2)
        self.vectors = np.asarray(self.vectors, dtype=float).reshape(-1, 2)

    def lookup(self, u: float, v: float, radius: float):
        """Flow of the anchor nearest to (u, v) within ``radius``, else None."""
        if len(self.anchors) == 0:
            return None
        dist = np.hypot(self.anchors[:, 0] - u, self.anchors[:, 1] - v)
        i = int(np.argmin(dist))
        return tuple(self.vectors[i]) if dist[i] <= radius else None


@dataclass
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_obstacles: list[int]


def measurement(state, cam: CameraIntrinsics) -> np.ndarray:
    """h(X'): stereo column and disparity of a camera-frame position."""
    north, east = state
    if not north > EPSILON_DEPTH:
        raise DepthTooSmall(f"track depth {north} <= {EPSILON_DEPTH} m")
    return np.array([cam.c_u + cam.f_u * east / north, cam.b_prime * cam.f_u / north])


def measurement_jacobian(state, cam: CameraIntrinsics) -> np.ndarray:
    north, east = state
    return np.array([
        [-cam.f_u * east / north**2, cam.f_u / north],
        [-cam.b_prime * cam.f_u / north**2, 0.0],
    ])


def predict(track: Track, model: MotionModel) -> Track:
    if model.dt <= 0:
        raise ValueError("dt must be positive")
    A = model.A
    track.state = A @ track.state + model.B(track.velocity)
    track.P = A @ track.P @ A.T + model.Q
    track.time += model.dt
    return track


def flow_propagate(coords, flow) -> tuple[float, float]:
    return (coords[0] + flow[0], coords[1] + flow[1])


def ekf_update(track: Track, z, cam: CameraIntrinsics, model: MotionModel) -> Track:
    """EKF correction with the (u, d) measurement; re-estimates velocity."""
    z = np.asarray(z, dtype=float)
    H = measurement_jacobian(track.state, cam)
    innovation = z - measurement(track.state, cam)
    S = H @ track.P @ H.T + model.R
    if not np.all(np.isfinite(S)) or abs(np.linalg.det(S)) < 1e-300:
        raise SingularInnovation("innovation covariance not invertible")
    try:
        K = np.linalg.solve(S.T, (track.P @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    track.state = track.state + K @ innovation
    I_KH = np.eye(2) - K @ H
    P = I_KH @ track.P @ I_KH.T + K @ model.R @ K.T
    track.P = 0.5 * (P + P.T)
    track.recent_states.append((track.time, track.state.copy()))
    if len(track.recent_states) >= 2:
        (t0, x0), (t1, x1) = track.recent_states[0], track.recent_states[-1]
        if t1 > t0:
            track.velocity = (x1 - x0) / (t1 - t0)
    return track


def _flow_consistent(track: Track, obstacle, flow: FlowField | None, gate: float) -> bool:
    if flow is None:
        return True
    u_prev, v_prev, _ = track.last_image_coords
    vec = flow.lookup(u_prev, v_prev, gate)
    if vec is None:
        return True
    u_prop, _ = flow_propagate((u_prev, v_prev), vec)
    return abs(u_prop - obstacle.u_center) <= gate


def cost_matrix(tracks, obstacles, flow, gate: float, cam: CameraIntrinsics):
    """Euclidean (u, d) costs with ``inf`` for forbidden pairs."""
    cost = np.full((len(tracks), len(obstacles)), np.inf)
    for i, track in enumerate(tracks):
        try:
            pred = measurement(track.state, cam)
        except DepthTooSmall:
            continue
        for j, ob in enumerate(obstacles):
            if ob.label != track.label:
                continue
            c = math.hypot(pred[0] - ob.u_center, pred[1] - ob.d_center)
            if c <= gate and _flow_consistent(track, ob, flow, gate):
                cost[i, j] = c
    return cost


def solve_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Maximum number of allowed pairs, then minimum total cost.

    ``inf`` marks forbidden pairs; allowed costs must be non-negative.
    Forbidden cells get a penalty larger than any achievable allowed total so
    cardinality dominates.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    allowed = np.isfinite(cost)
    if not allowed.any():
        return []
    if np.any(cost[allowed] < 0):
        raise ValueError("assignment costs must be non-negative")
    penalty = 2.0 * cost[allowed].sum() + 1.0
    filled = np.where(allowed, cost, penalty)
    rows, cols = linear_sum_assignment(filled)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]


def associate(tracks, obstacles: ObstacleSet, flow: FlowField | None, gate: float,
              cam: CameraIntrinsics) -> Assignment:
    """Optimal one-to-one track/obstacle matching within the gate.

    Returned matches are (track id, obstacle cluster id); unmatched lists hold
    track ids and cluster ids.
    """
    if gate <= 0:
        raise ValueError("gate must be positive")
    obs = obstacles.obstacles
    pairs = solve_assignment(cost_matrix(tracks, obs, flow, gate, cam))
    matched_t = {i for i, _ in pairs}
    matched_o = {j for _, j in pairs}
    return Assignment(
        matches=[(tracks[i].id, obs[j].cluster_id) for i, j in pairs],
        unmatched_tracks=[t.id for i, t in enumerate(tracks) if i not in matched_t],
        unmatched_obstacles=[o.cluster_id for j, o in enumerate(obs) if j not in matched_o],
    )


def localize_on_map(track: Track, pose, timestamp: float | None = None):
    """Register the track on the map and append (t, point, map-frame speed) to its history."""
    point = camera_to_map(CameraPoint(*track.state), pose)
    t = track.time if timestamp is None else timestamp
    if track.map_history and t <= track.map_history[-1][0]:
        raise ValueError("map history timestamps must increase")
    recent = [(h[0], h[1]) for h in track.map_history[-2:]] + [(t, point)]
    if len(recent) > 1:
        speed = recent[0][1].distance(point) / (t - recent[0][0])  # map-frame, last three fixes
    else:
        speed = track.speed
    track.map_history.append((t, point, speed))
    return point


@dataclass
class TrackerParams:
    gate: float = 40.0  # px
    confirm_hits: int = 3
    max_misses: int = 5
    initial_speed: float = INITIAL_SPEED


class Tracker:
    """Owns the track table and hands out ids that are never reused."""

    def __init__(self, cam: CameraIntrinsics, model: MotionModel | None = None,
                 params: TrackerParams | None = None):
        self.cam = cam
        self.model = model or MotionModel()
        self.params = params or TrackerParams()
        self.tracks: list[Track] = []
        self.next_id = 1

    def spawn(self, obstacle, timestamp: float) -> Track:
        u, d = obstacle.u_center, obstacle.d_center
        north = self.cam.b_prime * self.cam.f_u / d
        state = np.array([north, (u - self.cam.c_u) * north / self.cam.f_u])
        # first-order covariance of the unprojected measurement
        G = np.linalg.inv(measurement_jacobian(state, self.cam))
        P0 = G @ self.model.R @ G.T + self.model.Q
        track = Track(
            id=self.next_id, state=state, P=0.5 * (P0 + P0.T),
            velocity=np.array([self.params.initial_speed, 0.0]), label=obstacle.label,
            time=timestamp, last_image_coords=(u, obstacle.v_T_center, d),
        )
        track.recent_states.append((timestamp, state.copy()))
        track.confirmed = track.hits >= self.params.confirm_hits
        self.next_id += 1
        return track

    def manage_tracks(self, assignment: Assignment, obstacles: ObstacleSet, timestamp: float,
                      flow: FlowField | None = None) -> list[Track]:
        by_id = {t.id: t for t in self.tracks}
        by_cluster = {o.cluster_id: o for o in obstacles.obstacles}
        for track_id, cluster_id in assignment.matches:
            track, ob = by_id[track_id], by_cluster[cluster_id]
            ekf_update(track, (ob.u_center, ob.d_center), self.cam, self.model)
            track.last_image_coords = (ob.u_center, ob.v_T_center, ob.d_center)
            track.hits += 1
            track.misses = 0
            track.age += 1
            track.confirmed = track.confirmed or track.hits >= self.params.confirm_hits
        for track_id in assignment.unmatched_tracks:
            track = by_id[track_id]
            track.misses += 1
            track.hits = 0
            track.age += 1
            if flow is not None:
                u, v, d = track.last_image_coords
                vec = flow.lookup(u, v, self.params.gate)
                if vec is not None:
                    track.last_image_coords = (*flow_propagate((u, v), vec), d)
        survivors = [t for t in self.tracks if t.misses < self.params.max_misses]
        for cluster_id in assignment.unmatched_obstacles:
            survivors.append(self.spawn(by_cluster[cluster_id], timestamp))
        self.tracks = survivors
        return self.tracks

    def step(self, obstacles: ObstacleSet, flow: FlowField | None, timestamp: float) -> list[Track]:
        live = []
        for track in self.tracks:
            predict(track, self.model)
            track.time = timestamp
            if track.state[0] > EPSILON_DEPTH:
                live.append(track)
        self.tracks = live
        assignment = associate(self.tracks, obstacles, flow, self.params.gate, self.cam)
        return self.manage_tracks(assignment, obstacles, timestamp, flow)


TRACK_FIELDS = ["timestamp", "track_id", "label", "map_north", "map_east", "speed_mps", "lane_assignment"]


def write_track_log(records, path) -> None:
    """``records``: iterable of (timestamp, track_id, label, MapPoint, speed, lane)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACK_FIELDS)
        for t, track_id, label, point, speed, lane in records:
            writer.writerow([f"{t:.6f}", track_id, Label(label).name.lower(), f"{point.north:.4f}",
                             f"{point.east:.4f}", f"{speed:.4f}", lane])


def read_track_log(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            lane = row["lane_assignment"]
            out.append((float(row["timestamp"]), int(row["track_id"]), Label.parse(row["label"]),
                        MapPoint(float(row["map_north"]), float(row["map_east"])),
                        float(row["speed_mps"]), int(lane) if lane.lstrip("-").isdigit() else lane))
    return out
