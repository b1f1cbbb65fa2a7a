"""Particle-filter ego localization fusing GNSS, INS and lane-line distances.

Weights follow the mixture used for urban canyons: the lateral GNSS kernel
and the lane kernel are blended by ``gamma`` (GNSS credibility), and the
result is multiplied by the longitudinal GNSS kernel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import MapPoint, normalize_angle
from .roadmap import DigitalMap, lane_line_distances


class OffRoad(ValueError):
    pass


class DegenerateWeights(RuntimeError):
    pass


@dataclass
class ParticleSet:
    """Vectorised particles: ``states`` is (n, 2) north/east, ``weights`` sums to 1."""

    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.states) != len(self.weights):
            raise ValueError("states and weights differ in length")

    def __len__(self):
        return len(self.weights)

    @classmethod
    def uniform(cls, states) -> "ParticleSet":
        states = np.asarray(states, dtype=float).reshape(-1, 2)
        return cls(states, np.full(len(states), 1.0 / len(states)))

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.states.copy(), self.weights.copy())


@dataclass(frozen=True)
class InsReading:
    speed: float
    heading: float
    timestamp: float = 0.0


@dataclass(frozen=True)
class GnssReading:
    position: MapPoint
    timestamp: float = 0.0


@dataclass(frozen=True)
class LaneObservation:
    dist_left: float
    dist_right: float
    valid: bool = True


@dataclass
class LocalizationParams:
    n_particles: int = 500
    sigma_lane: float = 0.2
    sigma_gnss: float = 3.0
    gamma: float = 0.3
    propagation_noise: tuple[float, float] = (0.2, 0.1)  # (along, cross) m per step
    init_sigma: float = 5.0
    use_lane: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.sigma_lane <= 0 or self.sigma_gnss <= 0:
            raise ValueError("sigmas must be positive")


@dataclass(frozen=True)
class EgoPose:
    position: MapPoint
    theta: float
    timestamp: float = 0.0


def kernel(residual, sigma):
    """Unnormalised zero-mean Gaussian kernel."""
    r = np.asarray(residual, dtype=float)
    return np.exp(-0.5 * (r / sigma) ** 2)


def initialize(gnss: GnssReading, params: LocalizationParams, rng: np.random.Generator) -> ParticleSet:
    """Particles drawn around a GNSS fix."""
    centre = gnss.position.as_array()
    states = centre + rng.normal(0.0, params.init_sigma, size=(params.n_particles, 2))
    return ParticleSet.uniform(states)


def propagate(particles: ParticleSet, ins: InsReading, dt: float, params: LocalizationParams,
              rng: np.random.Generator | None = None) -> ParticleSet:
    if dt <= 0:
        raise ValueError("dt must be positive")
    along = np.array([math.cos(ins.heading), math.sin(ins.heading)])
    cross = np.array([-along[1], along[0]])
    step = particles.states + dt * ins.speed * along
    s_along, s_cross = params.propagation_noise
    if rng is not None and (s_along > 0 or s_cross > 0):
        noise = rng.normal(size=(len(particles), 2))
        step = step + np.outer(noise[:, 0] * s_along, along) + np.outer(noise[:, 1] * s_cross, cross)
    return ParticleSet(step, particles.weights.copy())


def weigh_lane_array(states, obs: LaneObservation, heading: float, roadmap: DigitalMap,
                     sigma_lane: float) -> np.ndarray:
    """Lane kernel for many particle states; 0 for particles outside every corridor."""
    left, right = lane_line_distances(states, heading, roadmap)
    w = kernel(left - obs.dist_left, sigma_lane) * kernel(right - obs.dist_right, sigma_lane)
    return np.where(np.isnan(w), 0.0, w)


def weigh_lane(state: MapPoint, obs: LaneObservation, heading: float, roadmap: DigitalMap,
               params: LocalizationParams) -> float:
    """Product of left/right lane-line kernels for one particle.

    Raises :class:`OffRoad` when the particle lies in no lane corridor.
    """
    if not obs.valid:
        raise ValueError("lane observation is not valid")
    left, right = lane_line_distances(state.as_array(), heading, roadmap)
    if np.isnan(left[0]):
        raise OffRoad(f"particle at {state} lies outside every lane corridor")
    return float(kernel(left[0] - obs.dist_left, params.sigma_lane)
                 * kernel(right[0] - obs.dist_right, params.sigma_lane))


def weigh_gnss_array(states, gnss: GnssReading, theta: float, sigma_gnss: float):
    residual = gnss.position.as_array() - np.asarray(states, dtype=float).reshape(-1, 2)
    along = np.array([math.cos(theta), math.sin(theta)])
    cross = np.array([-along[1], along[0]])
    return kernel(residual @ cross, sigma_gnss), kernel(residual @ along, sigma_gnss)


def gnss_residuals(state: MapPoint, gnss: GnssReading, theta: float) -> tuple[float, float]:
    """(lateral, longitudinal) components of the GNSS-minus-particle residual."""
    residual = gnss.position.as_array() - state.as_array()
    along = np.array([math.cos(theta), math.sin(theta)])
    cross = np.array([-along[1], along[0]])
    return float(residual @ cross), float(residual @ along)


def weigh_gnss(state: MapPoint, gnss: GnssReading, theta: float, params: LocalizationParams):
    lat, lon = gnss_residuals(state, gnss, theta)
    return float(kernel(lat, params.sigma_gnss)), float(kernel(lon, params.sigma_gnss))


def joint_weight(w_gnss_lat, w_lane, w_gnss_lon, gamma):
    return (gamma * np.asarray(w_gnss_lat) + (1.0 - gamma) * np.asarray(w_lane)) * np.asarray(w_gnss_lon)


def normalize(particles: ParticleSet) -> ParticleSet:
    total = particles.weights.sum()
    if not np.isfinite(total) or total <= 1e-300:
        raise DegenerateWeights("particle weights underflowed")
    return ParticleSet(particles.states, particles.weights / total)


def estimate(particles: ParticleSet) -> MapPoint:
    """Weighted mean of the particle states."""
    total = particles.weights.sum()
    if not np.isfinite(total) or total <= 1e-300:
        raise DegenerateWeights("particle weights underflowed")
    n, e = particles.weights @ particles.states / total
    return MapPoint(float(n), float(e))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return float(1.0 / np.sum(w * w))


def resample(particles: ParticleSet, rng_seed=None, u0: float | None = None) -> ParticleSet:
    """Systematic resampling; ``u0`` in [0, 1/n) overrides the random offset."""
    n = len(particles)
    if u0 is None:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        u0 = rng.uniform(0.0, 1.0 / n)
    positions = u0 + np.arange(n) / n
    cumulative = np.cumsum(particles.weights)
    cumulative[-1] = max(cumulative[-1], 1.0)
    idx = np.searchsorted(cumulative, positions, side="right")
    idx = np.minimum(idx, n - 1)
    return ParticleSet(particles.states[idx].copy(), np.full(n, 1.0 / n))


@dataclass
class Localizer:
    """Owns the particle set across frames."""

    params: LocalizationParams = field(default_factory=LocalizationParams)
    seed: int = 0
    particles: ParticleSet | None = None

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def step(self, ins: InsReading, gnss: GnssReading, lane_obs: LaneObservation, theta: float,
             roadmap: DigitalMap, dt: float) -> MapPoint:
        if self.particles is None:
            self.particles = initialize(gnss, self.params, self.rng)
            particles, est = weigh_and_estimate(self.particles, gnss, lane_obs, theta, roadmap,
                                                self.params, self.rng)
            self.particles = particles
            return est
        try:
            self.particles, est = localization_step(self.particles, ins, gnss, lane_obs, theta,
                                                    roadmap, self.params, dt, self.rng)
        except DegenerateWeights:
            self.particles = initialize(gnss, self.params, self.rng)
            self.particles, est = weigh_and_estimate(self.particles, gnss, lane_obs, theta, roadmap,
                                                     self.params, self.rng)
        return est


def weigh_and_estimate(particles: ParticleSet, gnss: GnssReading, lane_obs: LaneObservation,
                       theta: float, roadmap: DigitalMap, params: LocalizationParams,
                       rng: np.random.Generator):
    w_lat, w_lon = weigh_gnss_array(particles.states, gnss, theta, params.sigma_gnss)
    if lane_obs is not None and lane_obs.valid and params.use_lane:
        w_lane = weigh_lane_array(particles.states, lane_obs, theta, roadmap, params.sigma_lane)
        likelihood = joint_weight(w_lat, w_lane, w_lon, params.gamma)
    else:
        likelihood = w_lat * w_lon
    weighted = normalize(ParticleSet(particles.states, particles.weights * likelihood))
    est = estimate(weighted)
    if effective_sample_size(weighted.weights) < len(weighted) / 2.0:
        weighted = resample(weighted, rng)
    return weighted, est


def localization_step(particles: ParticleSet, ins: InsReading, gnss: GnssReading,
                      lane_obs: LaneObservation, theta: float, roadmap: DigitalMap,
                      params: LocalizationParams, dt: float, rng=None):
    """Propagate, weigh, normalise, estimate, and resample when n_eff < n/2."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    moved = propagate(particles, ins, dt, params, rng)
    return weigh_and_estimate(moved, gnss, lane_obs, normalize_angle(theta), roadmap, params, rng)


SENSOR_LOG_FIELDS = ["timestamp", "gnss_north", "gnss_east", "ins_speed", "ins_heading",
                     "lane_left", "lane_right", "lane_valid"]


def write_sensor_log(records, path) -> None:
    """``records`` yields (timestamp, GnssReading, InsReading, LaneObservation); heading in degrees."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SENSOR_LOG_FIELDS)
        for t, gnss, ins, lane in records:
            writer.writerow([
                f"{t:.6f}", f"{gnss.position.north:.6f}", f"{gnss.position.east:.6f}",
                f"{ins.speed:.6f}", f"{math.degrees(ins.heading):.9f}",
                f"{lane.dist_left:.6f}", f"{lane.dist_right:.6f}", int(bool(lane.valid)),
            ])


def read_sensor_log(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = float(row["timestamp"])
            out.append((
                t,
                GnssReading(MapPoint(float(row["gnss_north"]), float(row["gnss_east"])), t),
                InsReading(float(row["ins_speed"]), math.radians(float(row["ins_heading"])), t),
                LaneObservation(float(row["lane_left"]), float(row["lane_right"]),
                                row["lane_valid"].strip() in ("1", "true", "True")),
            ))
    return out


def with_heading(ins: InsReading, heading: float) -> InsReading:
    return replace(ins, heading=heading)
