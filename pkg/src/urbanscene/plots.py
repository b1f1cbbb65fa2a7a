"""Static SVG figures: trajectories on the map and speed against track age."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .roadmap import DigitalMap  # noqa: E402
from .tracking import read_track_log  # noqa: E402


class MissingLog(FileNotFoundError):
    pass


def confirmed_tracks(records, confirm_hits: int = 3) -> dict[int, list]:
    """Records grouped by track id, keeping ids seen in ``confirm_hits`` consecutive frames.

    A track writes a record only on frames where it was matched, so a run of
    consecutive frame times in the log is a run of consecutive hits.
    """
    times = np.unique([r[0] for r in records])
    index = {t: k for k, t in enumerate(times)}
    by_id = defaultdict(list)
    for r in records:
        by_id[r[1]].append(r)
    out = {}
    for track_id in sorted(by_id):
        rows = sorted(by_id[track_id], key=lambda r: r[0])
        frames = [index[r[0]] for r in rows]
        streak = best = 1
        for a, b in zip(frames, frames[1:]):
            streak = streak + 1 if b == a + 1 else 1
            best = max(best, streak)
        if best >= confirm_hits:
            out[track_id] = rows
    return out


def _save(fig, path: Path) -> None:
    # fixed ids and no timestamp so equal inputs give equal files
    with plt.rc_context({"svg.hashsalt": "urbanscene", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_map(roadmap: DigitalMap, tracks: dict[int, list], ego=None, path="trajectories.svg") -> Path:
    fig, ax = plt.subplots(figsize=(7, 7))
    for poly in roadmap.buildings:
        p = np.vstack([poly, poly[:1]])
        ax.fill(p[:, 1], p[:, 0], color="0.85", edgecolor="0.5", lw=0.5)
    if roadmap.intersection_polygon is not None:
        p = np.vstack([roadmap.intersection_polygon, roadmap.intersection_polygon[:1]])
        ax.plot(p[:, 1], p[:, 0], color="0.6", lw=0.5, ls=":")
    for lane in roadmap.lanes:
        c = lane.centerline
        ax.plot(c[:, 1], c[:, 0], color="0.7", lw=0.6, ls="--")
    if ego is not None and len(ego):
        e = np.asarray(ego, dtype=float)
        ax.plot(e[:, 1], e[:, 0], color="black", lw=2.0, label="ego", gid="ego")
    cmap = plt.get_cmap("tab10")
    for k, (track_id, rows) in enumerate(tracks.items()):
        xy = np.array([[r[3].north, r[3].east] for r in rows])
        ax.plot(xy[:, 1], xy[:, 0], color=cmap(k % 10), lw=1.2, gid=f"track-{track_id}")
    drawn = [np.asarray(ego, dtype=float).reshape(-1, 2)] if ego is not None else []
    drawn += [np.array([[r[3].north, r[3].east] for r in rows]) for rows in tracks.values()]
    if drawn:  # zoom on the traffic, keep some road context
        pts = np.vstack(drawn)
        lo, hi = pts.min(axis=0) - 25.0, pts.max(axis=0) + 25.0
        ax.set_xlim(lo[1], hi[1])
        ax.set_ylim(lo[0], hi[0])
    ax.set_aspect("equal")
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.set_title("Tracked obstacles on the map")
    out = Path(path)
    _save(fig, out)
    return out


def plot_velocity(tracks: dict[int, list], path="velocity_age.svg") -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    cmap = plt.get_cmap("tab10")
    for k, (track_id, rows) in enumerate(tracks.items()):
        age = np.array([r[0] - rows[0][0] for r in rows])
        speed = np.array([r[4] for r in rows])
        ax.plot(age, speed, color=cmap(k % 10), lw=1.0, gid=f"track-{track_id}")
    ax.set_xlabel("track age [s]")
    ax.set_ylabel("speed [m/s]")
    ax.set_title("Speed against track age")
    out = Path(path)
    _save(fig, out)
    return out


def emit_plots(track_log, roadmap: DigitalMap, out_dir, ego=None, confirm_hits: int = 3) -> tuple[Path, Path]:
    """Map overlay and speed/age figures for one run.

    ``ego`` is an optional sequence of (north, east) positions drawn in black.
    """
    log_path = Path(track_log)
    if not log_path.is_file():
        raise MissingLog(f"track log not found: {log_path}")
    tracks = confirmed_tracks(read_track_log(log_path), confirm_hits)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return (plot_map(roadmap, tracks, ego, out / "trajectories.svg"),
            plot_velocity(tracks, out / "velocity_age.svg"))
