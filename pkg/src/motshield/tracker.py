"""Per-frame multi-object tracking pipeline.

Each frame: predict every track, score and match detections against the
predictions, merge matched observations through the Kalman update
(optionally modulated by the deviation-clipping defense), apply the
predict-only rule to unmatched tracks, and run the hit-count /
reserved-age lifecycle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import kalman
from .association import (Detection, Matching, TrackView, dissim3d, gate2d,
                          gate3d, iou_matrix, match_greedy, match_hungarian,
                          sim2d)
from .defense import DefenseConfig, DeviationBuffer, InactiveDefense, modulate
from .geometry import BBox2D, BBox3D
from .kalman import KfModel, KfState, constant_velocity_model

SCORINGS = ("iou", "apollo2d", "apollo3d")
MATCHERS = ("greedy", "hungarian")


class NonMonotonicFrame(ValueError):
    """Frames must be stepped in strictly increasing order."""


@dataclass
class TrackerConfig:
    dims: int = 2
    matcher: str = "hungarian"
    scoring: str = "iou"
    hit_count: int = 3
    reserved_age: int = 2
    iou_gate: float = 0.1
    sigma_scale: float = 1.0      # momentum-similarity width scale
    feature_weight: float = 0.5   # 3D feature-dissimilarity coefficient
    kf_model: Optional[KfModel] = None
    defense: Optional[DefenseConfig] = None

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if self.matcher not in MATCHERS:
            raise ValueError(f"unknown matcher {self.matcher!r}")
        if self.scoring not in SCORINGS:
            raise ValueError(f"unknown scoring {self.scoring!r}")
        if self.scoring == "apollo2d" and self.dims != 2:
            raise ValueError("apollo2d scoring requires dims=2")
        if self.scoring == "apollo3d" and self.dims != 3:
            raise ValueError("apollo3d scoring requires dims=3")
        if self.hit_count < 1 or self.reserved_age < 1:
            raise ValueError("hit_count and reserved_age must be >= 1")
        if self.kf_model is None:
            r = 1.0 if self.dims == 2 else 0.25
            self.kf_model = constant_velocity_model(self.dims, q=0.01, r=r)


def profile(name: str, desk_scale: bool = True, **overrides) -> TrackerConfig:
    """Named tracker profiles; desk_scale=False switches to the long
    reserved age used by full-rate perception pipelines (60 frames)."""
    base = {
        "jia2d": dict(dims=2, matcher="hungarian", scoring="iou", iou_gate=0.1),
        "apollo2d": dict(dims=2, matcher="greedy", scoring="apollo2d"),
        "ab3dmot": dict(dims=3, matcher="hungarian", scoring="iou", iou_gate=0.1),
        "apollo3d": dict(dims=3, matcher="hungarian", scoring="apollo3d"),
    }
    if name not in base:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(base)}")
    kwargs = dict(base[name])
    if not desk_scale:
        kwargs["reserved_age"] = 60
    kwargs.update(overrides)
    return TrackerConfig(**kwargs)


@dataclass
class HistoryEntry:
    frame: int
    center: np.ndarray
    matched: bool


@dataclass
class Track:
    id: int
    state: KfState
    latest_box: object
    latest_feature: Optional[np.ndarray] = None
    latest_point_count: Optional[int] = None
    latest_mass_center: Optional[np.ndarray] = None
    hits: int = 1
    misses: int = 0
    confirmed: bool = False
    history: List[HistoryEntry] = field(default_factory=list)

    def center(self) -> np.ndarray:
        return kalman.position(self.state)

    def velocity(self) -> np.ndarray:
        return kalman.velocity(self.state)


@dataclass(frozen=True)
class TrackSnapshot:
    track_id: int
    center: np.ndarray
    velocity: np.ndarray
    box: object
    confirmed: bool
    matched: bool


@dataclass
class FrameResult:
    frame: int
    snapshots: List[TrackSnapshot]
    matches: List[tuple]        # (track_id, detection_index)
    born: List[int]
    destroyed: List[int]


class Tracker:
    """Owns the track table, the id counter and the shared deviation buffer;
    single-threaded by design."""

    def __init__(self, config: TrackerConfig):
        self.cfg = config
        self.model = config.kf_model
        self.tracks: List[Track] = []
        self.defense: Optional[DeviationBuffer] = (
            DeviationBuffer(config.dims, config.defense)
            if config.defense is not None else None)
        self._next_id = 0
        self._last_frame: Optional[int] = None

    # -- frame processing ---------------------------------------------------

    def step(self, frame: int, detections: Sequence[Detection]) -> FrameResult:
        if self._last_frame is not None and frame <= self._last_frame:
            raise NonMonotonicFrame(
                f"frame {frame} not after {self._last_frame}")
        self._last_frame = frame

        for trk in self.tracks:
            trk.state = kalman.predict(trk.state, self.model)

        modulate_fn = self._modulation()
        matching = self._associate(detections)

        residuals = []
        matched_pairs = []
        for row, col in matching.pairs:
            trk = self.tracks[row]
            det = detections[col]
            z = det.box.center()
            residuals.append(kalman.residual(trk.state, z, self.model))
            trk.state = kalman.update(trk.state, z, self.model, modulate_fn)
            trk.latest_box = det.box
            trk.latest_feature = det.feature
            trk.latest_point_count = det.point_count
            trk.latest_mass_center = det.mass_center
            trk.hits += 1
            trk.misses = 0
            if trk.hits >= self.cfg.hit_count:
                trk.confirmed = True
            trk.history.append(HistoryEntry(frame, trk.center(), True))
            matched_pairs.append((trk.id, col))

        for row in matching.unmatched_tracks:
            trk = self.tracks[row]
            trk.misses += 1
            trk.hits = 0
            trk.history.append(HistoryEntry(frame, trk.center(), False))

        born = []
        for col in matching.unmatched_detections:
            trk = self._spawn(frame, detections[col])
            born.append(trk.id)

        destroyed = [t.id for t in self.tracks if t.misses > self.cfg.reserved_age]
        if destroyed:
            dead = set(destroyed)
            self.tracks = [t for t in self.tracks if t.id not in dead]

        if self.defense is not None:
            for delta in residuals:
                self.defense.record(delta, frame)
            self.defense.trim()

        matched_ids = {tid for tid, _ in matched_pairs}
        snapshots = [TrackSnapshot(track_id=t.id, center=t.center(),
                                   velocity=t.velocity(), box=self._report_box(t),
                                   confirmed=t.confirmed,
                                   matched=t.id in matched_ids or t.id in born)
                     for t in self.tracks]
        return FrameResult(frame=frame, snapshots=snapshots,
                           matches=matched_pairs, born=born, destroyed=destroyed)

    def run(self, frames: Sequence[Sequence[Detection]]) -> List[FrameResult]:
        return [self.step(i, dets) for i, dets in enumerate(frames)]

    def confirmed_tracks(self) -> List[Track]:
        return [t for t in self.tracks if t.confirmed]

    def defense_thresholds(self) -> Optional[np.ndarray]:
        """Current per-axis clip bounds, or None while inactive."""
        if self.defense is None:
            return None
        try:
            return self.defense.threshold_vector()
        except InactiveDefense:
            return None

    # -- internals ----------------------------------------------------------

    def _modulation(self):
        dmax = self.defense_thresholds()
        if dmax is None:
            return None
        return lambda delta: modulate(delta, dmax)

    def _spawn(self, frame: int, det: Detection) -> Track:
        trk = Track(id=self._next_id,
                    state=kalman.initial_state(det.box.center(), self.model),
                    latest_box=det.box, latest_feature=det.feature,
                    latest_point_count=det.point_count,
                    latest_mass_center=det.mass_center,
                    hits=1, confirmed=self.cfg.hit_count <= 1)
        trk.history.append(HistoryEntry(frame, trk.center(), True))
        self._next_id += 1
        self.tracks.append(trk)
        return trk

    def _report_box(self, trk: Track):
        c = trk.center()
        box = trk.latest_box
        if isinstance(box, BBox2D):
            w, h = box.width, box.height
            return BBox2D(c[0] - w / 2, c[1] - h / 2, c[0] + w / 2, c[1] + h / 2)
        return BBox3D(cx=float(c[0]), cy=float(c[1]), cz=float(c[2]),
                      l=box.l, w=box.w, h=box.h, yaw=box.yaw)

    def _view(self, trk: Track) -> TrackView:
        vel = trk.velocity()
        return TrackView(predicted_center=trk.center(),
                         latest_box=trk.latest_box,
                         latest_feature=trk.latest_feature,
                         predicted_speed=float(np.linalg.norm(vel[:2])),
                         latest_point_count=trk.latest_point_count,
                         latest_mass_center=trk.latest_mass_center)

    def _associate(self, detections: Sequence[Detection]) -> Matching:
        n_tracks, n_dets = len(self.tracks), len(detections)
        if n_tracks == 0 or n_dets == 0:
            return Matching(pairs=[], unmatched_tracks=list(range(n_tracks)),
                            unmatched_detections=list(range(n_dets)))
        matrix, maximize = self._score(detections)
        if self.cfg.matcher == "greedy":
            return match_greedy(matrix, maximize)
        return match_hungarian(matrix, maximize)

    def _score(self, detections: Sequence[Detection]):
        if self.cfg.scoring == "iou":
            pred_boxes = [self._report_box(t) for t in self.tracks]
            det_boxes = [d.box for d in detections]
            return iou_matrix(pred_boxes, det_boxes, self.cfg.iou_gate), True
        views = [self._view(t) for t in self.tracks]
        if self.cfg.scoring == "apollo2d":
            pairwise = [[sim2d(v, d, sigma_scale=self.cfg.sigma_scale)
                         for d in detections] for v in views]
            return gate2d(pairwise), True
        pairwise = [[dissim3d(v, d, feature_weight=self.cfg.feature_weight)
                     for d in detections] for v in views]
        return gate3d(pairwise), False


def run_trace(config: TrackerConfig, frames: Sequence[Sequence[Detection]]) -> List[FrameResult]:
    """Fold the tracker over a whole trace; deterministic for fixed inputs."""
    return Tracker(config).run(frames)
