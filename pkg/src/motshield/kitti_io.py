"""KITTI tracking label parsing/serialization and synthetic trace generation.

Label rows follow the devkit field order:
frame track_id type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]

For 3D tracking the camera x-z ground plane maps to the tracker's (x, y)
and the camera vertical axis is carried as the third coordinate, so the
lateral axis of the ego vehicle is axis 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .association import Detection
from .geometry import BBox2D, BBox3D
from .metrics import GtTrack


class MalformedRow(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class NonContiguousFrames(ValueError):
    pass


@dataclass
class KittiRow:
    frame: int
    track_id: int
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple          # x1, y1, x2, y2
    dims: tuple          # h, w, l
    loc: tuple           # x, y, z (camera coordinates)
    rotation_y: float
    score: Optional[float] = None

    @classmethod
    def parse_line(cls, line: str, lineno: int) -> "KittiRow":
        parts = line.split()
        if len(parts) not in (17, 18):
            raise MalformedRow(lineno, f"expected 17 or 18 fields, got {len(parts)}")
        try:
            frame = int(parts[0])
            track_id = int(parts[1])
            numbers = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise MalformedRow(lineno, f"bad numeric field ({exc})") from exc
        if frame < 0:
            raise MalformedRow(lineno, f"negative frame index {frame}")
        return cls(frame=frame, track_id=track_id, type=parts[2],
                   truncated=numbers[0], occluded=int(numbers[1]),
                   alpha=numbers[2], bbox=tuple(numbers[3:7]),
                   dims=tuple(numbers[7:10]), loc=tuple(numbers[10:13]),
                   rotation_y=numbers[13],
                   score=numbers[14] if len(parts) == 18 else None)

    def to_line(self) -> str:
        fields = [str(self.frame), str(self.track_id), self.type,
                  f"{self.truncated:.6f}", str(self.occluded), f"{self.alpha:.6f}"]
        fields += [f"{v:.6f}" for v in self.bbox]
        fields += [f"{v:.6f}" for v in self.dims]
        fields += [f"{v:.6f}" for v in self.loc]
        fields.append(f"{self.rotation_y:.6f}")
        if self.score is not None:
            fields.append(f"{self.score:.6f}")
        return " ".join(fields)

    def box2d(self) -> BBox2D:
        return BBox2D(*self.bbox)

    def box3d(self) -> BBox3D:
        h, w, l = self.dims
        x, y, z = self.loc
        return BBox3D(cx=x, cy=z, cz=y, l=l, w=w, h=h, yaw=self.rotation_y)


@dataclass
class Trace:
    """Per-frame detection lists plus the parallel ground-truth tracks."""

    frames: List[List[Detection]]
    gt_tracks: Dict[int, GtTrack]
    dims: int
    units: str
    rows: Optional[List[KittiRow]] = None

    @classmethod
    def from_frame_map(cls, frame_map: Dict[int, List[Detection]],
                       gt_tracks: Dict[int, GtTrack], dims: int, units: str) -> "Trace":
        if frame_map:
            expected = set(range(max(frame_map) + 1))
            if set(frame_map) != expected:
                missing = sorted(expected - set(frame_map))
                raise NonContiguousFrames(f"missing frame indices {missing[:8]}")
        frames = [frame_map[i] for i in sorted(frame_map)]
        return cls(frames=frames, gt_tracks=gt_tracks, dims=dims, units=units)

    def copy_frames(self) -> List[List[Detection]]:
        return [list(dets) for dets in self.frames]


def _row_to_detection(row: KittiRow, dims: int) -> Detection:
    if dims == 2:
        return Detection(box=row.box2d())
    return Detection(box=row.box3d())


def parse(text: str, classes: Optional[Sequence[str]] = ("Car",),
          dims: int = 3) -> Trace:
    """Parse KITTI tracking labels into a trace.

    Rows of filtered classes become both detections (ids stripped) and
    ground-truth tracks (ids kept). Frames absent from the file come back
    as empty detection lists.
    """
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    rows: List[KittiRow] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        row = KittiRow.parse_line(line, lineno)
        if classes is not None and row.type not in classes:
            continue
        rows.append(row)

    n_frames = max((r.frame for r in rows), default=-1) + 1
    frames: List[List[Detection]] = [[] for _ in range(n_frames)]
    per_object: Dict[int, List[KittiRow]] = {}
    for row in rows:
        # DontCare regions carry placeholder geometry; keep the row for
        # serialization but never produce detections or tracks from it
        if row.type == "DontCare" or (dims == 3 and min(row.dims) <= 0):
            continue
        frames[row.frame].append(_row_to_detection(row, dims))
        if row.track_id >= 0:
            per_object.setdefault(row.track_id, []).append(row)

    gt_tracks = {}
    for oid, obj_rows in per_object.items():
        obj_rows.sort(key=lambda r: r.frame)
        if any(b.frame <= a.frame for a, b in zip(obj_rows, obj_rows[1:])):
            raise NonContiguousFrames(
                f"object {oid} has duplicate frame entries")
        boxes = [r.box2d() if dims == 2 else r.box3d() for r in obj_rows]
        gt_tracks[oid] = GtTrack(object_id=oid,
                                 frames=[r.frame for r in obj_rows],
                                 boxes=boxes, label=obj_rows[0].type)
    return Trace(frames=frames, gt_tracks=gt_tracks, dims=dims,
                 units="px" if dims == 2 else "m", rows=rows)


def serialize(trace: Trace) -> str:
    """Labels in devkit field order with fixed 6-decimal floats."""
    rows = trace.rows if trace.rows is not None else rows_from_gt(trace)
    return "\n".join(r.to_line() for r in rows) + ("\n" if rows else "")


def rows_from_gt(trace: Trace) -> List[KittiRow]:
    rows = []
    for oid in sorted(trace.gt_tracks):
        gt = trace.gt_tracks[oid]
        for frame, box in zip(gt.frames, gt.boxes):
            if trace.dims == 2:
                rows.append(KittiRow(frame=frame, track_id=oid, type=gt.label,
                                     truncated=0.0, occluded=0, alpha=0.0,
                                     bbox=(box.x1, box.y1, box.x2, box.y2),
                                     dims=(0.0, 0.0, 0.0), loc=(0.0, 0.0, 0.0),
                                     rotation_y=0.0))
            else:
                rows.append(KittiRow(frame=frame, track_id=oid, type=gt.label,
                                     truncated=0.0, occluded=0, alpha=0.0,
                                     bbox=(0.0, 0.0, 0.0, 0.0),
                                     dims=(box.h, box.w, box.l),
                                     loc=(box.cx, box.cz, box.cy),
                                     rotation_y=box.yaw))
    rows.sort(key=lambda r: (r.frame, r.track_id))
    return rows


@dataclass
class SynthObject:
    """Constant-velocity object for synthetic traces.

    start/velocity have 2 components (pixels) for dims=2 traces and
    3 components (meters, vertical last) for dims=3.
    """

    start: Sequence[float]
    velocity: Sequence[float]
    extents: Sequence[float]      # (w, h) pixels or (l, w, h) meters
    yaw: float = 0.0
    first_frame: int = 0
    last_frame: Optional[int] = None
    label: str = "Car"
    point_count: Optional[int] = None


def synth(objects: Sequence[SynthObject], n_frames: int, noise: float = 0.0,
          seed: int = 0, dims: int = 3) -> Trace:
    """Deterministic constant-velocity ground truth with Gaussian-perturbed
    detections; detections carry no identities."""
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    rng = np.random.default_rng(seed)
    frames: List[List[Detection]] = [[] for _ in range(n_frames)]
    gt_tracks: Dict[int, GtTrack] = {}

    for oid, obj in enumerate(objects):
        start = np.asarray(obj.start, dtype=float)
        vel = np.asarray(obj.velocity, dtype=float)
        last = obj.last_frame if obj.last_frame is not None else n_frames - 1
        last = min(last, n_frames - 1)
        gt_frames, gt_boxes = [], []
        for frame in range(obj.first_frame, last + 1):
            center = start + vel * (frame - obj.first_frame)
            box = _make_box(center, obj, dims)
            gt_frames.append(frame)
            gt_boxes.append(box)
            noisy = center + rng.normal(0.0, noise, size=dims) if noise > 0 else center
            det_box = _make_box(noisy, obj, dims)
            if dims == 3:
                frames[frame].append(Detection(box=det_box,
                                               point_count=obj.point_count,
                                               mass_center=det_box.center()))
            else:
                frames[frame].append(Detection(box=det_box))
        gt_tracks[oid] = GtTrack(object_id=oid, frames=gt_frames,
                                 boxes=gt_boxes, label=obj.label)
    return Trace(frames=frames, gt_tracks=gt_tracks, dims=dims,
                 units="px" if dims == 2 else "m")


def _make_box(center, obj: SynthObject, dims: int):
    if dims == 2:
        w, h = obj.extents
        return BBox2D(center[0] - w / 2, center[1] - h / 2,
                      center[0] + w / 2, center[1] + h / 2)
    l, w, h = obj.extents
    return BBox3D(cx=float(center[0]), cy=float(center[1]), cz=float(center[2]),
                  l=l, w=w, h=h, yaw=obj.yaw)
