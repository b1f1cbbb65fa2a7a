"""Per-frame fusion loop: stixels, obstacles, ego pose, heading, tracks, lanes."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ndt
from .evaluation import Report, evaluate, write_report
from .geometry import CameraIntrinsics, CameraPoint, camera_to_map, unproject_array
from .localization import EgoPose, LocalizationParams, Localizer, with_heading
from .roadmap import DigitalMap, assign_lanes
from .scenario import (EGO_FIELDS, TRUTH_FIELDS, FrameTruth, ScenarioConfig, SensorFrame,
                       build_intersection, simulate, write_truth_rows)
from .stixels import Label, ObstacleSet, StixelParams, cluster_stixels, extract_stixels
from .tracking import MotionModel, Tracker, TrackerParams, localize_on_map, write_track_log

log = logging.getLogger(__name__)

ABLATIONS = ("heading_correction", "lane_weighting", "semantic_clustering")


@dataclass
class PipelineConfig:
    stixels: StixelParams = field(default_factory=StixelParams)
    eps: float = 1.5
    min_pts: int = 2
    localization: LocalizationParams = field(default_factory=LocalizationParams)
    ndt_cell_size: float = 2.0
    ndt_window_deg: float = 15.0
    ndt_coarse_deg: float = 0.5
    ndt_resolution_deg: float = 0.02
    ndt_score_floor: float = 1.0
    ndt_point_sigma: float = 0.25
    ndt_overlap: bool = True
    min_building_stixels: int = 50  # at 1024 px width, scaled with resolution
    gate: float = 40.0  # px at 1024 px width, scaled with resolution
    process_noise: float = 0.25
    measurement_noise: tuple[float, float] = (4.0, 1.0)  # px² at 1024 px width, scaled with resolution
    confirm_hits: int = 3
    max_misses: int = 5
    max_range: float = 45.0
    centre_offsets: dict = field(default_factory=lambda: {Label.VEHICLE: 1.5, Label.PEDESTRIAN: 0.25})
    match_radius: float = 2.0
    heading_correction: bool = True
    lane_weighting: bool = True
    semantic_clustering: bool = True
    seed: int = 0

    def set_ablation(self, name: str, on: bool) -> None:
        if name not in ABLATIONS:
            raise KeyError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
        setattr(self, name, on)


@dataclass
class FrameOutput:
    timestamp: float
    pose: EgoPose
    heading_source: str
    detections: list  # (MapPoint, Label)
    track_records: list  # (timestamp, id, label, MapPoint, speed, lane)
    stixel_count: int
    obstacles: ObstacleSet


class Pipeline:
    def __init__(self, cam: CameraIntrinsics, roadmap: DigitalMap, config: PipelineConfig | None = None,
                 dt: float = 1.0 / 15.0):
        self.cam = cam
        self.map = roadmap
        self.cfg = config or PipelineConfig()
        self.dt = dt
        loc = replace(self.cfg.localization, use_lane=self.cfg.lane_weighting)
        self.localizer = Localizer(loc, seed=self.cfg.seed)
        q = self.cfg.process_noise
        model = MotionModel(dt=dt, Q=np.diag([q, q]), R=np.diag(self.cfg.measurement_noise) * cam.scale ** 2)
        self.tracker = Tracker(cam, model, TrackerParams(
            gate=self.cfg.gate * cam.scale, confirm_hits=self.cfg.confirm_hits,
            max_misses=self.cfg.max_misses))
        self.grid = ndt.build_ndt(roadmap.building_points(0.25), self.cfg.ndt_cell_size,
                                  point_sigma=self.cfg.ndt_point_sigma, overlap=self.cfg.ndt_overlap)
        self.theta = None
        self.prev_ins_heading = None
        self.min_building = max(int(math.ceil(self.cfg.min_building_stixels * cam.scale)), 3)

    def heading_prior(self, ins_heading: float) -> float:
        if not self.cfg.heading_correction or self.theta is None:
            return ins_heading
        return self.theta + (ins_heading - self.prev_ins_heading)

    def obstacles(self, stixels) -> ObstacleSet:
        if self.cfg.semantic_clustering:
            candidates = stixels.without_label(Label.BUILDING)
        else:
            candidates = stixels
        obs = cluster_stixels(candidates, self.cam, self.cfg.eps, self.cfg.min_pts,
                              label_aware=self.cfg.semantic_clustering)
        d_far = self.cam.b_prime * self.cam.f_u / self.cfg.max_range
        kept = []
        for ob in obs.obstacles:
            if ob.d_center < d_far:
                continue
            # shift the visible-surface centroid back to the body centre along the ray
            depth = self.cam.b_prime * self.cam.f_u / ob.d_center + self.cfg.centre_offsets.get(ob.label, 0.0)
            kept.append(replace(ob, d_center=self.cam.b_prime * self.cam.f_u / depth))
        return ObstacleSet(obs.timestamp, kept)

    def run_frame(self, frame: SensorFrame) -> FrameOutput:
        t = frame.timestamp
        stixels = extract_stixels(frame.disparity, frame.labels, self.cam, self.cfg.stixels, t)
        obstacles = self.obstacles(stixels)

        prior = self.heading_prior(frame.ins.heading)
        ins = with_heading(frame.ins, prior)
        position = self.localizer.step(ins, frame.gnss, frame.lane_obs, prior, self.map, self.dt)

        theta, source = prior, "ins"
        if self.cfg.heading_correction:
            building = stixels.with_label(Label.BUILDING).stixels
            if len(building) >= self.min_building:
                pts = unproject_array([s.u for s in building], [s.d for s in building], self.cam)
                try:
                    theta = ndt.estimate_heading(
                        pts, position, self.grid, prior, window=math.radians(self.cfg.ndt_window_deg),
                        coarse_step=math.radians(self.cfg.ndt_coarse_deg),
                        resolution=math.radians(self.cfg.ndt_resolution_deg),
                        score_floor=self.cfg.ndt_score_floor)
                    source = "ndt"
                except ndt.LowConfidence as exc:
                    log.debug("t=%.3f: %s; keeping inertial heading", t, exc)
        self.theta, self.prev_ins_heading = theta, frame.ins.heading
        pose = EgoPose(position, theta, t)

        detections = [
            (camera_to_map(CameraPoint(self.cam.b_prime * self.cam.f_u / ob.d_center,
                                       (ob.u_center - self.cam.c_u) / ob.d_center * self.cam.b_prime),
                           pose), ob.label)
            for ob in obstacles.obstacles
        ]

        fresh = []
        for track in self.tracker.step(obstacles, frame.flow, t):
            point = localize_on_map(track, pose, t)
            if track.misses == 0:
                fresh.append((track, point))
        lanes = assign_lanes(np.array([p.as_array() for _, p in fresh]).reshape(-1, 2), self.map) if fresh else []
        records = [(t, tr.id, tr.label, p, tr.map_history[-1][2], lane) for (tr, p), lane in zip(fresh, lanes)]
        return FrameOutput(t, pose, source, detections, records, len(stixels), obstacles)


def run(frames, cam: CameraIntrinsics, roadmap: DigitalMap, config: PipelineConfig | None = None,
        dt: float = 1.0 / 15.0):
    """Run the pipeline over a frame iterable, yielding (frame, FrameOutput).

    A frame that raises is logged and skipped.
    """
    pipe = Pipeline(cam, roadmap, config, dt)
    for frame in frames:
        try:
            out = pipe.run_frame(frame)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("frame %d skipped: %s", frame.index, exc)
            continue
        yield frame, out


@dataclass
class RunResult:
    report: Report
    outputs: list
    truth: dict
    ego_truth: dict


def run_scenario(scenario: ScenarioConfig, config: PipelineConfig | None = None,
                 out_dir=None, frames=None) -> RunResult:
    """Simulate (or reuse ``frames``), run the pipeline, evaluate, optionally write logs."""
    roadmap = build_intersection(scenario)
    config = config or PipelineConfig()
    frames = frames if frames is not None else simulate(scenario, roadmap)
    outputs, truth, ego_truth = [], {}, {}
    for frame, out in run(frames, scenario.camera(), roadmap, config, scenario.dt):
        outputs.append(out)
        truth[frame.timestamp] = frame.truth.actors
        ego_truth[frame.timestamp] = frame.truth.ego
    report = evaluate_outputs(outputs, truth, config.match_radius)
    if out_dir is not None:
        write_outputs(outputs, out_dir, report)
    return RunResult(report, outputs, truth, ego_truth)


def evaluate_outputs(outputs, truth, radius: float = 2.0) -> Report:
    detections = {o.timestamp: o.detections for o in outputs}
    tracks = {o.timestamp: [(r[1], r[2], r[3], r[5]) for r in o.track_records] for o in outputs}
    return evaluate(detections, tracks, truth, radius)


DETECTION_FIELDS = ["timestamp", "label", "map_north", "map_east"]
POSE_FIELDS = ["timestamp", "north", "east", "heading_deg", "heading_source"]


def write_outputs(outputs, out_dir, report: Report | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_track_log([r for o in outputs for r in o.track_records], out / "tracks.csv")
    with open(out / "detections.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_FIELDS)
        for o in outputs:
            for p, lab in o.detections:
                w.writerow([f"{o.timestamp:.6f}", Label(lab).name.lower(), f"{p.north:.4f}", f"{p.east:.4f}"])
    with open(out / "poses.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSE_FIELDS)
        for o in outputs:
            w.writerow([f"{o.timestamp:.6f}", f"{o.pose.position.north:.4f}", f"{o.pose.position.east:.4f}",
                        f"{math.degrees(o.pose.theta):.6f}", o.heading_source])
    if report is not None:
        write_report(report, out / "report")
    return out


def write_truth(frames_truth: dict, ego_truth: dict, out_dir) -> None:
    """Ground-truth files in the dataset layout, for runs that never hit disk."""
    out = Path(out_dir)
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as tf, \
            open(out / "ego_truth.csv", "w", newline="", encoding="utf-8") as ef:
        tw, ew = csv.writer(tf, lineterminator="\n"), csv.writer(ef, lineterminator="\n")
        tw.writerow(TRUTH_FIELDS)
        ew.writerow(EGO_FIELDS)
        for k, t in enumerate(sorted(frames_truth)):
            stub = SensorFrame(k, t, None, None, None, None, None, None, FrameTruth(ego_truth[t], frames_truth[t]))
            write_truth_rows(tw, ew, stub)
