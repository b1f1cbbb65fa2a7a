"""Synthetic urban intersection: map, actors, rendered stereo frames and sensors.

Everything is driven by one seeded generator per scenario so a given
configuration always produces the same frame stream.
"""
from __future__ import annotations

import configparser
import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import EPSILON_DEPTH, CameraIntrinsics, MapPoint, map_to_camera_array, normalize_angle
from .localization import (EgoPose, GnssReading, InsReading, LaneObservation, read_sensor_log,
                           write_sensor_log)
from .roadmap import DigitalMap, Lane, assign_lanes, lane_line_distances, load_map, point_in_polygon, save_map
from .stixels import Label, read_disparity, read_labels, write_disparity, write_labels
from .tracking import FlowField

VEHICLE_SIZE = (4.5, 1.8, 1.6)  # length, width, height in m
PEDESTRIAN_SIZE = (0.5, 0.5, 1.7)


class InvalidConfig(ValueError):
    pass


@dataclass
class MapConfig:
    half_length: float = 150.0
    lane_width: float = 3.5
    lanes_per_direction: int = 2
    building_setback: float = 12.0
    building_height: float = 25.0


@dataclass
class NoiseConfig:
    gnss_sigma: float = 2.0
    gnss_bias_episodes: list = field(default_factory=lambda: [(4.0, 3.0, 3.0), (12.0, 4.0, -3.0)])
    ins_heading_drift: float = 0.004  # rad/s
    ins_heading_bias: float = 0.0  # rad
    ins_speed_sigma: float = 0.05
    disparity_sigma: float = 0.3
    flow_sigma: float = 0.5
    lane_sigma: float = 0.05

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls(gnss_sigma=0.0, gnss_bias_episodes=[], ins_heading_drift=0.0, ins_heading_bias=0.0,
                   ins_speed_sigma=0.0, disparity_sigma=0.0, flow_sigma=0.0, lane_sigma=0.0)


@dataclass
class ActorSpec:
    """A body moving at constant speed along a polyline.

    ``s0`` is the arc position at t=0; the actor exists while its arc
    position lies on the polyline.
    """

    label: Label
    path: list
    speed: float
    s0: float = 0.0

    def __post_init__(self):
        self.label = Label(self.label)
        self.path = [tuple(map(float, p)) for p in self.path]
        if len(self.path) < 2 or self.speed < 0:
            raise InvalidConfig("actor path needs two vertices and speed >= 0")

    def pose(self, t: float):
        """(position, heading) at time t or None when off the path."""
        s = self.s0 + self.speed * t
        pts = np.asarray(self.path)
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(*seg.T)
        if s < 0 or s > lengths.sum():
            return None
        acc = 0.0
        for a, d, length in zip(pts[:-1], seg, lengths):
            if s <= acc + length:
                return a + (s - acc) / length * d, math.atan2(d[1], d[0])
            acc += length
        return pts[-1], math.atan2(seg[-1][1], seg[-1][0])


def default_actors() -> list[ActorSpec]:
    V, P = Label.VEHICLE, Label.PEDESTRIAN
    return [
        ActorSpec(V, [(-150, 1.75), (150, 1.75)], 8.5, s0=68.0),      # lead, ego lane
        ActorSpec(V, [(-150, 5.25), (150, 5.25)], 9.0, s0=72.0),      # outer northbound
        ActorSpec(V, [(150, -1.75), (-150, -1.75)], 9.0, s0=70.0),    # oncoming inner
        ActorSpec(V, [(150, -5.25), (-150, -5.25)], 7.0, s0=50.0),    # oncoming outer
        ActorSpec(V, [(-1.75, -150), (-1.75, 150)], 8.0, s0=100.0),   # crossing eastbound
        ActorSpec(V, [(5.25, 150), (5.25, -150)], 7.0, s0=70.0),      # crossing westbound
        ActorSpec(P, [(-150, 9.5), (150, 9.5)], 1.4, s0=100.0),       # pedestrian, east walk
        ActorSpec(P, [(150, -9.5), (-150, -9.5)], 1.2, s0=160.0),     # pedestrian, west walk
    ]


@dataclass
class ScenarioConfig:
    seed: int = 0
    duration: float = 20.0
    frame_rate: float = 15.0
    fast: bool = False
    ego_path: list = field(default_factory=lambda: [(-150.0, 1.75), (150.0, 1.75)])
    ego_speed: float = 8.0
    ego_s0: float = 50.0
    actors: list = field(default_factory=default_actors)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    map: MapConfig = field(default_factory=MapConfig)
    max_range: float = 40.0  # m, ground-truth visibility horizon
    min_visible_bands: int = 2
    min_visible_fraction: float = 0.5  # strictly more than this share of the unoccluded band span
    band_width: int = 5
    min_stixel_height: int = 3

    def validate(self):
        if self.frame_rate <= 0 or self.duration <= 0:
            raise InvalidConfig("frame_rate and duration must be positive")
        if self.map.lane_width <= 2.0 or self.map.lanes_per_direction < 1:
            raise InvalidConfig("lanes must be wider than 2 m and at least one per direction")
        road_half = self.map.lane_width * self.map.lanes_per_direction
        if self.map.building_setback <= road_half or self.map.half_length <= self.map.building_setback:
            raise InvalidConfig("buildings must sit between the road edge and the map border")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.frame_rate))

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def ego(self) -> ActorSpec:
        return ActorSpec(Label.VEHICLE, self.ego_path, self.ego_speed, self.ego_s0)

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics.default(fast=self.fast)


def build_intersection(cfg: ScenarioConfig) -> DigitalMap:
    """Two perpendicular roads, four corner blocks and the shared square.

    Lanes drive on the right. Northbound ids come first, then southbound,
    eastbound and westbound, inner lane before outer lane.
    """
    cfg.validate()
    m = cfg.map
    L, w, k = m.half_length, m.lane_width, m.lanes_per_direction
    offsets = [w * (i + 0.5) for i in range(k)]
    lanes = []
    specs = [
        (lambda o: [(-L, o), (L, o)]),     # northbound, east side
        (lambda o: [(L, -o), (-L, -o)]),   # southbound, west side
        (lambda o: [(-o, -L), (-o, L)]),   # eastbound, south side
        (lambda o: [(o, L), (o, -L)]),     # westbound, north side
    ]
    for make in specs:
        for o in offsets:
            lanes.append(Lane(len(lanes) + 1, np.array(make(o)), w))
    s = m.building_setback
    buildings = [
        np.array([(sn * s, se * s), (sn * L, se * s), (sn * L, se * L), (sn * s, se * L)])
        for sn, se in ((1, 1), (1, -1), (-1, -1), (-1, 1))
    ]
    half = w * k
    square = np.array([(-half, -half), (-half, half), (half, half), (half, -half)])
    return DigitalMap(buildings=buildings, lanes=lanes, intersection_polygon=square)


@dataclass
class ActorTruth:
    actor_id: int
    label: Label
    position: MapPoint
    heading: float
    lane: object
    visible: bool
    ignore: bool  # partly seen or out of range: excluded from scoring


@dataclass
class FrameTruth:
    ego: EgoPose
    actors: list[ActorTruth]


@dataclass
class SensorFrame:
    index: int
    timestamp: float
    disparity: np.ndarray
    labels: np.ndarray
    gnss: GnssReading
    ins: InsReading
    lane_obs: LaneObservation
    flow: FlowField
    truth: FrameTruth | None = None


def footprint(position, heading, length, width) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    along, cross = np.array([c, s]) * length / 2, np.array([-s, c]) * width / 2
    p = np.asarray(position)
    return np.array([p + along + cross, p + along - cross, p - along - cross, p - along + cross])


def render(cam: CameraIntrinsics, ego_pos, ego_theta: float, segments: np.ndarray, heights, labels,
           instances):
    """Depth-buffer rendering of vertical wall segments standing on flat ground.

    ``segments`` is (S, 2, 2) in map coordinates. Returns noiseless disparity,
    label and instance images (instance -1 for ground, sky and buildings).
    """
    H, W = cam.height, cam.width
    rows = np.arange(H, dtype=float)[:, None]
    zbuf = np.full((H, W), np.inf)
    below = rows[:, 0] > cam.c_v
    zbuf[below, :] = (cam.f_u * cam.mount_height / (rows[below, 0] - cam.c_v))[:, None]
    label_img = np.zeros((H, W), dtype=np.uint8)
    inst_img = np.full((H, W), -1, dtype=np.int32)

    cam_segs = map_to_camera_array(segments.reshape(-1, 2), ego_pos, ego_theta).reshape(-1, 2, 2)
    for (p0, p1), height, lab, inst in zip(cam_segs, heights, labels, instances):
        # clip to the near plane
        if p0[0] <= EPSILON_DEPTH and p1[0] <= EPSILON_DEPTH:
            continue
        if p0[0] <= EPSILON_DEPTH or p1[0] <= EPSILON_DEPTH:
            t = (EPSILON_DEPTH + 1e-6 - p0[0]) / (p1[0] - p0[0])
            cut = p0 + t * (p1 - p0)
            p0, p1 = (cut, p1) if p0[0] <= EPSILON_DEPTH else (p0, cut)
        u_ends = cam.c_u + cam.f_u * np.array([p0[1] / p0[0], p1[1] / p1[0]])
        c0 = max(int(math.ceil(u_ends.min())), 0)
        c1 = min(int(math.floor(u_ends.max())), W - 1)
        if c1 < c0:
            continue
        cols = np.arange(c0, c1 + 1)
        a = (cols - cam.c_u) / cam.f_u
        d = p1 - p0
        denom = a * d[0] - d[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (p0[1] - a * p0[0]) / denom
        z = p0[0] + s * d[0]
        ok = (s >= -1e-9) & (s <= 1 + 1e-9) & (z > EPSILON_DEPTH) & np.isfinite(z)
        if not ok.any():
            continue
        cols, z = cols[ok], z[ok]
        v_top = cam.c_v + cam.f_u * (cam.mount_height - height) / z
        v_bot = cam.c_v + cam.f_u * cam.mount_height / z
        r0 = max(int(math.ceil(v_top.min())), 0)
        r1 = min(int(math.floor(v_bot.max())), H - 1)
        if r1 < r0:
            continue
        rr = rows[r0:r1 + 1]
        sub = zbuf[r0:r1 + 1, cols]
        mask = (rr >= v_top[None, :]) & (rr <= v_bot[None, :]) & (z[None, :] < sub)
        if not mask.any():
            continue
        sub[mask] = np.broadcast_to(z[None, :], sub.shape)[mask]
        zbuf[r0:r1 + 1, cols] = sub
        lab_sub = label_img[r0:r1 + 1, cols]
        lab_sub[mask] = lab
        label_img[r0:r1 + 1, cols] = lab_sub
        inst_sub = inst_img[r0:r1 + 1, cols]
        inst_sub[mask] = inst
        inst_img[r0:r1 + 1, cols] = inst_sub
    with np.errstate(divide="ignore"):
        disparity = np.where(np.isfinite(zbuf), cam.b_prime * cam.f_u / zbuf, 0.0)
    return disparity, label_img, inst_img


def _static_segments(roadmap: DigitalMap, height: float):
    segs = []
    for poly in roadmap.buildings:
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            segs.append((a, b))
    n = len(segs)
    return np.array(segs).reshape(-1, 2, 2), [height] * n, [int(Label.BUILDING)] * n, [-1] * n


def actor_states(cfg: ScenarioConfig, t: float):
    """Present actors at time t as (actor_id, spec, position, heading)."""
    out = []
    for i, spec in enumerate(cfg.actors, start=1):
        pose = spec.pose(t)
        if pose is not None:
            out.append((i, spec, pose[0], pose[1]))
    return out


def _band_span(cam, band_width, spec, pos, heading, ego_pos, ego_theta) -> float:
    """Number of band centres the actor would cover with no occluders and an unbounded image."""
    size = VEHICLE_SIZE if spec.label == Label.VEHICLE else PEDESTRIAN_SIZE
    corners = map_to_camera_array(footprint(pos, heading, size[0], size[1]), ego_pos, ego_theta)
    if np.any(corners[:, 0] <= EPSILON_DEPTH):
        return np.inf
    u = cam.c_u + cam.f_u * corners[:, 1] / corners[:, 0]
    first = band_width // 2
    return max(math.floor((u.max() - first) / band_width) - math.ceil((u.min() - first) / band_width) + 1, 1)


def _bias_at(episodes, t: float) -> float:
    for start, duration, magnitude in episodes:
        if start <= t < start + duration:
            return magnitude
    return 0.0


def simulate(cfg: ScenarioConfig, roadmap: DigitalMap | None = None):
    """Yield :class:`SensorFrame` objects for every frame of the scenario."""
    cfg.validate()
    roadmap = roadmap or build_intersection(cfg)
    cam = cfg.camera()
    rng = np.random.default_rng(cfg.seed)
    noise = cfg.noise
    static = _static_segments(roadmap, cfg.map.building_height)
    ego_spec = cfg.ego()
    drift = noise.ins_heading_bias
    prev_proj = {}
    band_centres = np.arange(0, cam.width, cfg.band_width) + cfg.band_width // 2
    band_centres = band_centres[band_centres < cam.width]
    for k in range(cfg.n_frames):
        t = k * cfg.dt
        ego_pose = ego_spec.pose(t)
        if ego_pose is None:
            break
        ego_pos, ego_theta = ego_pose
        actors = actor_states(cfg, t)

        segs, heights, labs, insts = (list(x) for x in static)
        for actor_id, spec, pos, heading in actors:
            size = VEHICLE_SIZE if spec.label == Label.VEHICLE else PEDESTRIAN_SIZE
            corners = footprint(pos, heading, size[0], size[1])
            for a, b in zip(corners, np.roll(corners, -1, axis=0)):
                segs.append(np.array([a, b]))
                heights.append(size[2])
                labs.append(int(spec.label))
                insts.append(actor_id)
        disparity, label_img, inst_img = render(cam, ego_pos, ego_theta, np.array(segs), heights, labs, insts)
        if noise.disparity_sigma > 0:
            noisy = disparity + rng.normal(0.0, noise.disparity_sigma, disparity.shape)
            disparity = np.where(disparity > 0, np.maximum(noisy, 0.0), 0.0)

        # ground truth and visibility
        centre_cols = inst_img[:, band_centres]
        truths = []
        lanes = assign_lanes(np.array([a[2] for a in actors]).reshape(-1, 2), roadmap) if actors else []
        for (actor_id, spec, pos, heading), lane in zip(actors, lanes):
            rows_per_band = np.count_nonzero(centre_cols == actor_id, axis=0)
            bands = int(np.count_nonzero(rows_per_band >= cfg.min_stixel_height))
            span = _band_span(cam, cfg.band_width, spec, pos, heading, ego_pos, ego_theta)
            in_range = math.hypot(*(pos - ego_pos)) <= cfg.max_range
            seen = bool(np.any(rows_per_band))
            visible = (bands >= cfg.min_visible_bands and in_range
                       and bands > cfg.min_visible_fraction * span)
            truths.append(ActorTruth(actor_id, spec.label, MapPoint(*map(float, pos)), float(heading),
                                     lane, visible, seen and not visible))
        truth = FrameTruth(EgoPose(MapPoint(*map(float, ego_pos)), float(ego_theta), t), truths)

        # flow: displacement of each actor's projected centre top since the previous frame
        proj = {}
        for actor_id, spec, pos, _ in actors:
            size = VEHICLE_SIZE if spec.label == Label.VEHICLE else PEDESTRIAN_SIZE
            c = map_to_camera_array(pos, ego_pos, ego_theta)[0]
            if c[0] > EPSILON_DEPTH:
                proj[actor_id] = np.array([cam.c_u + cam.f_u * c[1] / c[0],
                                           cam.c_v + cam.f_u * (cam.mount_height - size[2]) / c[0]])
        anchors, vectors = [], []
        for actor_id, uv in proj.items():
            if actor_id in prev_proj:
                vec = uv - prev_proj[actor_id]
                if noise.flow_sigma > 0:
                    vec = vec + rng.normal(0.0, noise.flow_sigma, 2)
                anchors.append(prev_proj[actor_id])
                vectors.append(vec)
        prev_proj = proj
        flow = FlowField(anchors, vectors)

        # GNSS with multipath-like lateral bias episodes
        right = np.array([-math.sin(ego_theta), math.cos(ego_theta)])
        g = ego_pos + _bias_at(noise.gnss_bias_episodes, t) * right
        if noise.gnss_sigma > 0:
            g = g + rng.normal(0.0, noise.gnss_sigma, 2)
        gnss = GnssReading(MapPoint(float(g[0]), float(g[1])), t)

        if k > 0:
            drift += noise.ins_heading_drift * cfg.dt
        speed = ego_spec.speed + (rng.normal(0.0, noise.ins_speed_sigma) if noise.ins_speed_sigma > 0 else 0.0)
        ins = InsReading(max(speed, 0.0), float(normalize_angle(ego_theta + drift)), t)

        left, right_d = lane_line_distances(ego_pos, ego_theta, roadmap)
        inside = roadmap.intersection_polygon is not None and point_in_polygon(ego_pos, roadmap.intersection_polygon)[0]
        if np.isnan(left[0]) or inside:
            lane_obs = LaneObservation(0.0, 0.0, False)
        else:
            dl, dr = float(left[0]), float(right_d[0])
            if noise.lane_sigma > 0:
                dl += rng.normal(0.0, noise.lane_sigma)
                dr += rng.normal(0.0, noise.lane_sigma)
            lane_obs = LaneObservation(max(dl, 0.0), max(dr, 0.0), True)

        yield SensorFrame(k, t, disparity, label_img, gnss, ins, lane_obs, flow, truth)


# ---------------------------------------------------------------------------
# dataset directories

TRUTH_FIELDS = ["timestamp", "actor_id", "label", "north", "east", "heading_deg", "lane", "visible", "ignore"]
EGO_FIELDS = ["timestamp", "north", "east", "heading_deg"]
FLOW_FIELDS = ["timestamp", "anchor_u", "anchor_v", "du", "dv"]


def camera_to_config(cam: CameraIntrinsics) -> dict:
    return {f.name: repr(getattr(cam, f.name)) for f in fields(cam)}


def write_dataset(cfg: ScenarioConfig, out_dir, roadmap: DigitalMap | None = None) -> Path:
    """Render a scenario into ``out_dir``.

    Layout::

        map.ini            digital map
        camera.ini         intrinsics
        sensors.csv        GNSS / INS / lane log, one row per frame
        flow.csv           sparse flow vectors
        truth.csv          actor ground truth per frame
        ego_truth.csv      ego ground truth per frame
        frames/NNNNNN_disparity.png, frames/NNNNNN_labels.png
    """
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    roadmap = roadmap or build_intersection(cfg)
    save_map(roadmap, out / "map.ini")
    parser = configparser.ConfigParser()
    parser["camera"] = camera_to_config(cfg.camera())
    with open(out / "camera.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)
    sensor_rows = []
    with open(out / "flow.csv", "w", newline="", encoding="utf-8") as ff, \
            open(out / "truth.csv", "w", newline="", encoding="utf-8") as tf, \
            open(out / "ego_truth.csv", "w", newline="", encoding="utf-8") as ef:
        fw, tw, ew = (csv.writer(x, lineterminator="\n") for x in (ff, tf, ef))
        fw.writerow(FLOW_FIELDS)
        tw.writerow(TRUTH_FIELDS)
        ew.writerow(EGO_FIELDS)
        for frame in simulate(cfg, roadmap):
            t = frame.timestamp
            write_disparity(out / "frames" / f"{frame.index:06d}_disparity.png", frame.disparity)
            write_labels(out / "frames" / f"{frame.index:06d}_labels.png", frame.labels)
            sensor_rows.append((t, frame.gnss, frame.ins, frame.lane_obs))
            for a, v in zip(frame.flow.anchors, frame.flow.vectors):
                fw.writerow([f"{t:.6f}", f"{a[0]:.4f}", f"{a[1]:.4f}", f"{v[0]:.4f}", f"{v[1]:.4f}"])
            write_truth_rows(tw, ew, frame)
    write_sensor_log(sensor_rows, out / "sensors.csv")
    return out


def write_truth_rows(tw, ew, frame: SensorFrame) -> None:
    t = frame.timestamp
    ego = frame.truth.ego
    ew.writerow([f"{t:.6f}", f"{ego.position.north:.6f}", f"{ego.position.east:.6f}",
                 f"{math.degrees(ego.theta):.9f}"])
    for a in frame.truth.actors:
        tw.writerow([f"{t:.6f}", a.actor_id, a.label.name.lower(), f"{a.position.north:.6f}",
                     f"{a.position.east:.6f}", f"{math.degrees(a.heading):.6f}", a.lane,
                     int(a.visible), int(a.ignore)])


def _parse_lane(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def read_truth(path) -> dict[float, list[ActorTruth]]:
    out: dict[float, list[ActorTruth]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = float(row["timestamp"])
            out.setdefault(t, []).append(ActorTruth(
                int(row["actor_id"]), Label.parse(row["label"]),
                MapPoint(float(row["north"]), float(row["east"])), math.radians(float(row["heading_deg"])),
                _parse_lane(row["lane"]), row["visible"] == "1", row["ignore"] == "1",
            ))
    return out


def read_ego_truth(path) -> dict[float, EgoPose]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {float(r["timestamp"]): EgoPose(MapPoint(float(r["north"]), float(r["east"])),
                                                math.radians(float(r["heading_deg"])), float(r["timestamp"]))
                for r in csv.DictReader(fh)}


def read_camera(path) -> CameraIntrinsics:
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    sec = parser["camera"]
    return CameraIntrinsics(
        f_u=float(sec["f_u"]), b_prime=float(sec["b_prime"]), c_u=float(sec["c_u"]), c_v=float(sec["c_v"]),
        width=int(sec["width"]), height=int(sec["height"]), mount_height=float(sec["mount_height"]),
    )


def load_dataset(in_dir):
    """(camera, map, frames, dt) for a dataset directory; frames carry truth when present."""
    src = Path(in_dir)
    cam = read_camera(src / "camera.ini")
    roadmap = load_map(src / "map.ini")
    sensors = read_sensor_log(src / "sensors.csv")
    flows: dict[float, list] = {}
    with open(src / "flow.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            flows.setdefault(float(r["timestamp"]), []).append(
                [float(r["anchor_u"]), float(r["anchor_v"]), float(r["du"]), float(r["dv"])])
    truth = read_truth(src / "truth.csv") if (src / "truth.csv").exists() else {}
    ego = read_ego_truth(src / "ego_truth.csv") if (src / "ego_truth.csv").exists() else {}

    def frames():
        for k, (t, gnss, ins, lane) in enumerate(sensors):
            fl = np.array(flows.get(t, []), dtype=float).reshape(-1, 4)
            ft = FrameTruth(ego[t], truth.get(t, [])) if t in ego else None
            yield SensorFrame(
                k, t, read_disparity(src / "frames" / f"{k:06d}_disparity.png"),
                read_labels(src / "frames" / f"{k:06d}_labels.png"), gnss, ins, lane,
                FlowField(fl[:, :2], fl[:, 2:]), ft,
            )

    dt = sensors[1][0] - sensors[0][0] if len(sensors) > 1 else 1.0 / 15.0
    return cam, roadmap, frames(), dt


def noise_to_dict(noise: NoiseConfig) -> dict:
    return asdict(noise)
