"""Multi-object tracking workbench: KF trackers, hijack simulation and a
deviation-clipping defense with evaluation tooling."""

from .association import Detection
from .defense import DefenseConfig, DeviationBuffer, modulate
from .geometry import BBox2D, BBox3D, iou_2d, iou_bev
from .kalman import KfModel, KfState, constant_velocity_model
from .kitti_io import Trace, SynthObject, parse, serialize, synth
from .metrics import ClearReport, GtTrack, clear, false_deviation, safety_verdicts
from .tracker import Tracker, TrackerConfig, profile, run_trace

__version__ = "0.1.0"

__all__ = [
    "BBox2D", "BBox3D", "ClearReport", "DefenseConfig", "Detection",
    "DeviationBuffer", "GtTrack", "KfModel", "KfState", "SynthObject",
    "Trace", "Tracker", "TrackerConfig", "clear", "constant_velocity_model",
    "false_deviation", "iou_2d", "iou_bev", "modulate", "parse", "profile",
    "run_trace", "safety_verdicts", "serialize", "synth", "__version__",
]
