"""INI run configuration with one section per module.

Every key is optional; missing keys keep the dataclass defaults. Example::

    [scenario]
    seed = 3
    duration = 20
    fast = yes

    [noise]
    gnss_sigma = 2.0
    gnss_bias_episodes = 4 3 3.0; 12 4 -3.0   # start s, length s, lateral bias m

    [localization]
    n_particles = 500
    propagation_noise = 0.2 0.1

    [tracking]
    measurement_noise = 4 1

    [ablation]
    heading_correction = off

Unknown sections or keys raise ``InvalidConfig`` so typos do not pass silently.
"""
from __future__ import annotations

import configparser
import math

from .pipeline import ABLATIONS, PipelineConfig
from .scenario import InvalidConfig, ScenarioConfig
from .stixels import Label

# section -> key -> (owner path, attribute); owner path is resolved on the pair (scenario, pipeline)
_KEYS = {
    "scenario": {k: ("scenario", k) for k in (
        "seed", "duration", "frame_rate", "fast", "ego_speed", "ego_s0", "max_range",
        "min_visible_bands", "min_visible_fraction")},
    "map": {k: ("scenario.map", k) for k in (
        "half_length", "lane_width", "lanes_per_direction", "building_setback", "building_height")},
    "noise": {
        **{k: ("scenario.noise", k) for k in (
            "gnss_sigma", "gnss_bias_episodes", "ins_speed_sigma", "disparity_sigma", "flow_sigma", "lane_sigma")},
        "ins_heading_drift_deg_per_s": ("scenario.noise", "ins_heading_drift"),
        "ins_heading_bias_deg": ("scenario.noise", "ins_heading_bias"),
    },
    "stixels": {k: ("pipeline.stixels", k) for k in ("width", "disparity_tolerance", "min_height")},
    "clustering": {"eps": ("pipeline", "eps"), "min_pts": ("pipeline", "min_pts")},
    "localization": {k: ("pipeline.localization", k) for k in (
        "n_particles", "sigma_lane", "sigma_gnss", "gamma", "propagation_noise", "init_sigma")},
    "ndt": {
        "cell_size": ("pipeline", "ndt_cell_size"), "window_deg": ("pipeline", "ndt_window_deg"),
        "coarse_deg": ("pipeline", "ndt_coarse_deg"), "resolution_deg": ("pipeline", "ndt_resolution_deg"),
        "score_floor": ("pipeline", "ndt_score_floor"), "point_sigma": ("pipeline", "ndt_point_sigma"),
        "overlap": ("pipeline", "ndt_overlap"), "min_building_stixels": ("pipeline", "min_building_stixels"),
    },
    "tracking": {k: ("pipeline", k) for k in (
        "gate", "process_noise", "measurement_noise", "confirm_hits", "max_misses", "max_range")},
    "evaluation": {"match_radius": ("pipeline", "match_radius")},
    "ablation": {k: ("pipeline", k) for k in ABLATIONS},
}
_DEGREE_KEYS = {"ins_heading_drift_deg_per_s", "ins_heading_bias_deg"}  # stored in radians
_OFFSETS = {"vehicle_centre_offset": Label.VEHICLE, "pedestrian_centre_offset": Label.PEDESTRIAN}


def parse_switch(text: str) -> bool:
    value = text.strip().lower()
    if value in ("on", "yes", "true", "1"):
        return True
    if value in ("off", "no", "false", "0"):
        return False
    raise InvalidConfig(f"expected on/off, got {text!r}")


def _convert(text: str, default):
    if isinstance(default, bool):
        return parse_switch(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(x) for x in text.split())
    if isinstance(default, list):  # list of tuples, ';'-separated
        return [tuple(float(x) for x in item.split()) for item in text.split(";") if item.strip()]
    raise InvalidConfig(f"cannot parse {text!r}")


def _owner(path: str, scenario, pipeline):
    root, *rest = path.split(".")
    obj = scenario if root == "scenario" else pipeline
    for name in rest:
        obj = getattr(obj, name)
    return obj


def apply_config(parser: configparser.ConfigParser, scenario: ScenarioConfig, pipeline: PipelineConfig):
    for section in parser.sections():
        if section not in _KEYS:
            raise InvalidConfig(f"unknown section [{section}]")
        for key, text in parser[section].items():
            if section == "tracking" and key in _OFFSETS:
                pipeline.centre_offsets[_OFFSETS[key]] = float(text)
                continue
            if key not in _KEYS[section]:
                raise InvalidConfig(f"unknown key {key!r} in [{section}]")
            path, attr = _KEYS[section][key]
            obj = _owner(path, scenario, pipeline)
            try:
                value = _convert(text, getattr(obj, attr))
                setattr(obj, attr, math.radians(value) if key in _DEGREE_KEYS else value)
            except ValueError as exc:
                raise InvalidConfig(f"[{section}] {key}: {exc}") from exc


def load_config(path=None, seed: int | None = None, fast: bool | None = None,
                ablations: dict[str, bool] | None = None) -> tuple[ScenarioConfig, PipelineConfig]:
    """Defaults, then the file, then command-line overrides."""
    scenario, pipeline = ScenarioConfig(), PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        if not parser.read(path, encoding="utf-8"):
            raise InvalidConfig(f"cannot read config {path}")
        apply_config(parser, scenario, pipeline)
    if seed is not None:
        scenario.seed = seed
    if fast is not None:
        scenario.fast = fast
    pipeline.seed = scenario.seed
    for name, on in (ablations or {}).items():
        try:
            pipeline.set_ablation(name, on)
        except KeyError as exc:
            raise InvalidConfig(str(exc)) from exc
    scenario.validate()
    return scenario, pipeline


def _format(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return " ".join(repr(float(x)) for x in value)
    if isinstance(value, list):
        return "; ".join(" ".join(repr(float(x)) for x in item) for item in value)
    return repr(value)


def dump_config(scenario: ScenarioConfig, pipeline: PipelineConfig, path) -> None:
    """Write every configurable key with its current value."""
    parser = configparser.ConfigParser()
    for section, keys in _KEYS.items():
        parser[section] = {}
        for key, (p, attr) in keys.items():
            value = getattr(_owner(p, scenario, pipeline), attr)
            parser[section][key] = _format(math.degrees(value) if key in _DEGREE_KEYS else value)
    for key, label in _OFFSETS.items():
        parser["tracking"][key] = repr(float(pipeline.centre_offsets[label]))
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)

