"""Detection, tracking and lane-localization metrics against ground truth."""
from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import MapPoint
from .stixels import Label
from .tracking import solve_assignment

MT_THRESHOLD = 0.8
ML_THRESHOLD = 0.2
IGNORE_MARGIN = 2.25  # half a vehicle length: a fragment can sit anywhere on the body


@dataclass
class FrameEval:
    timestamp: float
    true_positives: int
    false_positives: int
    misses: int
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (detection index, truth index)


@dataclass
class TrackEval:
    actor_id: int
    frames: int
    covered: int
    coverage: float
    mostly_tracked: bool
    mostly_lost: bool


def _distance_costs(detections, truth, radius, use_labels):
    cost = np.full((len(detections), len(truth)), np.inf)
    for i, (dp, dl) in enumerate(detections):
        for j, (tp, tl) in enumerate(truth):
            if use_labels and Label(dl) != Label(tl):
                continue
            dist = dp.distance(tp)
            if dist <= radius:
                cost[i, j] = dist
    return cost


def match_frame(detections, truth, radius: float = 2.0, ignore=(), timestamp: float = 0.0,
                use_labels: bool = True, ignore_margin: float = IGNORE_MARGIN) -> FrameEval:
    """Optimal one-to-one matching of (MapPoint, label) detections to truth.

    Unmatched detections within ``radius + ignore_margin`` of an ``ignore``
    object (seen but not scored) are neither true nor false positives.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    detections, truth = list(detections), list(truth)
    pairs = solve_assignment(_distance_costs(detections, truth, radius, use_labels))
    used = {i for i, _ in pairs}
    leftover = [i for i in range(len(detections)) if i not in used]
    ignored = set()
    if leftover and ignore:
        ign = list(ignore)
        sub = _distance_costs([detections[i] for i in leftover], ign, radius + ignore_margin, use_labels)
        ignored = {leftover[i] for i in np.flatnonzero(np.isfinite(sub).any(axis=1))}
    fp = len(leftover) - len(ignored)
    return FrameEval(timestamp, len(pairs), fp, len(truth) - len(pairs), pairs)


def track_coverage(per_frame_ids: dict[int, list], mt: float = MT_THRESHOLD, ml: float = ML_THRESHOLD,
                   require_identity: bool = False):
    """Coverage per ground-truth trajectory.

    ``per_frame_ids[actor]`` lists, for each frame the actor was scoreable,
    the matched track id or None. By default coverage is the fraction of
    frames covered by any track output, so identity switches do not reduce it.
    With ``require_identity`` only frames matched to the actor's dominant
    track id count.
    """
    out = []
    for actor_id in sorted(per_frame_ids):
        ids = per_frame_ids[actor_id]
        counts = Counter(i for i in ids if i is not None)
        if require_identity:
            covered = max(counts.values()) if counts else 0
        else:
            covered = sum(counts.values())
        cov = covered / len(ids) if ids else 0.0
        out.append(TrackEval(actor_id, len(ids), covered, cov, cov > mt, cov < ml))
    return out


@dataclass
class Report:
    detection_rate: float
    false_positive_rate: float
    frames_with_false_positive: int
    frames: int
    mostly_tracked: float
    mostly_lost: float
    lane_localization_rate: float
    detections: int
    ground_truth: int
    trajectories: int
    lane_samples: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def to_table(self) -> str:
        rows = [
            ("Detection Rate", f"{100 * self.detection_rate:.1f}%"),
            ("False Positive", f"{100 * self.false_positive_rate:.2f}%"),
            ("Frames with False Positive", f"{self.frames_with_false_positive} / {self.frames}"),
            ("MT", f"{100 * self.mostly_tracked:.1f}%"),
            ("ML", f"{100 * self.mostly_lost:.1f}%"),
            ("Lane-Localization Rate", f"{100 * self.lane_localization_rate:.1f}%"),
        ]
        width = max(len(k) for k, _ in rows)
        lines = [f"{'Metric'.ljust(width)} | Value", f"{'-' * width}-+-------"]
        lines += [f"{k.ljust(width)} | {v}" for k, v in rows]
        return "\n".join(lines)

    def to_keyvalue(self) -> str:
        out = []
        for key, value in self.as_dict().items():
            out.append(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")
        return "\n".join(out) + "\n"


def aggregate(frames: list[FrameEval], track_evals: list[TrackEval], lane_hits: int = 0,
              lane_samples: int = 0) -> Report:
    if not frames:
        raise ValueError("no frames to aggregate")
    tp = sum(f.true_positives for f in frames)
    fp = sum(f.false_positives for f in frames)
    misses = sum(f.misses for f in frames)
    n_det = tp + fp
    n_traj = len(track_evals)
    return Report(
        detection_rate=tp / (tp + misses) if tp + misses else 1.0,
        false_positive_rate=fp / n_det if n_det else 0.0,
        frames_with_false_positive=sum(1 for f in frames if f.false_positives > 0),
        frames=len(frames),
        mostly_tracked=sum(t.mostly_tracked for t in track_evals) / n_traj if n_traj else 0.0,
        mostly_lost=sum(t.mostly_lost for t in track_evals) / n_traj if n_traj else 0.0,
        lane_localization_rate=lane_hits / lane_samples if lane_samples else 0.0,
        detections=n_det, ground_truth=tp + misses, trajectories=n_traj, lane_samples=lane_samples,
    )


def evaluate(detections_by_frame, tracks_by_frame, truth_by_frame, radius: float = 2.0,
             require_identity: bool = False) -> Report:
    """Score a run.

    detections_by_frame: {t: [(MapPoint, label)]}
    tracks_by_frame: {t: [(track_id, label, MapPoint, lane)]}
    truth_by_frame: {t: [ActorTruth]}
    Frames are processed in sorted time order, so input order does not matter.
    """
    frame_evals = []
    per_actor = defaultdict(list)
    lane_hits = lane_samples = 0
    for t in sorted(truth_by_frame):
        actors = truth_by_frame[t]
        scored = [a for a in actors if a.visible]
        ignore = [(a.position, a.label) for a in actors if a.ignore]
        truth = [(a.position, a.label) for a in scored]
        frame_evals.append(match_frame(detections_by_frame.get(t, []), truth, radius, ignore, t))

        recs = tracks_by_frame.get(t, [])
        fe = match_frame([(r[2], r[1]) for r in recs], truth, radius, ignore, t)
        matched = {j: i for i, j in fe.pairs}
        for j, actor in enumerate(scored):
            i = matched.get(j)
            per_actor[actor.actor_id].append(recs[i][0] if i is not None else None)
            if i is not None:
                lane_samples += 1
                lane_hits += int(str(recs[i][3]) == str(actor.lane))
    return aggregate(frame_evals, track_coverage(per_actor, require_identity=require_identity), lane_hits,
                     lane_samples)


def read_detections(path) -> dict[float, list]:
    out: dict[float, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = float(row["timestamp"])
            out.setdefault(t, []).append(
                (MapPoint(float(row["map_north"]), float(row["map_east"])), Label.parse(row["label"])))
    return out


def write_report(report: Report, stem) -> None:
    """Write ``<stem>.txt`` (table) and ``<stem>.kv`` (key=value)."""
    with open(f"{stem}.txt", "w", encoding="utf-8") as fh:
        fh.write(report.to_table() + "\n")
    with open(f"{stem}.kv", "w", encoding="utf-8") as fh:
        fh.write(report.to_keyvalue())
