"""Semantic stixels, map-aided ego localization and EKF obstacle tracking on a digital map."""
from .geometry import CameraIntrinsics, CameraPoint, MapPoint, camera_to_map, project, unproject
from .pipeline import Pipeline, PipelineConfig, run_scenario
from .roadmap import DigitalMap, Lane, assign_lane
from .scenario import ScenarioConfig, build_intersection, simulate
from .stixels import Label, SemanticStixel, StixelSet, cluster_stixels, dbscan, extract_stixels

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "CameraPoint", "DigitalMap", "Label", "Lane", "MapPoint", "Pipeline",
    "PipelineConfig", "ScenarioConfig", "SemanticStixel", "StixelSet", "assign_lane", "build_intersection",
    "camera_to_map", "cluster_stixels", "dbscan", "extract_stixels", "project", "run_scenario", "simulate",
    "unproject",
]
