"""Trajectory-hijack simulation against the tracker.

Two primitives act on a target object's detections: shifting its box by a
scaled direction vector and hiding it outright. Plans schedule those
primitives over frames, either as the classic two-phase pattern (one
feasible shift, then several hides) or as ratio-based schedules over the
whole trace with selectable layouts. The largest shift that still
associates with the target's track is found by black-box binary search,
re-running the tracker per probe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .association import Detection
from .geometry import BBox2D
from .kitti_io import Trace
from .metrics import identify_track


class TargetAbsent(RuntimeError):
    """The target has no detection in a scheduled frame."""


class NoFeasibleLambda(RuntimeError):
    """Even a vanishing shift breaks association with the target track."""


@dataclass(frozen=True)
class Shift:
    offset: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.offset, dtype=float)
        if not np.all(np.isfinite(off)):
            raise ValueError("shift offset must be finite")
        object.__setattr__(self, "offset", off)


@dataclass(frozen=True)
class Hide:
    pass


AttackOp = object  # Shift | Hide


@dataclass
class AttackPlan:
    target: int
    schedule: Dict[int, AttackOp]
    v_atk: np.ndarray
    lam: float
    s_ratio: float = 0.0
    h_ratio: float = 0.0
    r_ratio: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.v_atk, dtype=float)
        norm = float(np.linalg.norm(v))
        if norm > 0:
            v = v / norm
        self.v_atk = v
        if self.s_ratio + self.h_ratio > self.r_ratio + 1e-12:
            self.r_ratio = self.s_ratio + self.h_ratio

    def to_text(self) -> str:
        """Replayable plan document: header lines then one row per frame."""
        lines = [f"target {self.target}",
                 "v_atk " + " ".join(f"{v:.9g}" for v in self.v_atk),
                 f"lambda {self.lam:.9g}",
                 f"ratios {self.s_ratio:.9g} {self.h_ratio:.9g} {self.r_ratio:.9g}"]
        for frame in sorted(self.schedule):
            op = self.schedule[frame]
            if isinstance(op, Hide):
                lines.append(f"{frame} hide")
            else:
                lines.append(f"{frame} shift " +
                             " ".join(f"{v:.9g}" for v in op.offset))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AttackPlan":
        target = 0
        v_atk = np.array([1.0, 0.0])
        lam = 0.0
        ratios = (0.0, 0.0, 0.0)
        schedule: Dict[int, AttackOp] = {}
        for raw in text.splitlines():
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "target":
                target = int(parts[1])
            elif parts[0] == "v_atk":
                v_atk = np.array([float(p) for p in parts[1:]])
            elif parts[0] == "lambda":
                lam = float(parts[1])
            elif parts[0] == "ratios":
                ratios = tuple(float(p) for p in parts[1:4])
            else:
                frame = int(parts[0])
                if parts[1] == "hide":
                    schedule[frame] = Hide()
                else:
                    schedule[frame] = Shift(np.array([float(p) for p in parts[2:]]))
        return cls(target=target, schedule=schedule, v_atk=v_atk, lam=lam,
                   s_ratio=ratios[0], h_ratio=ratios[1], r_ratio=ratios[2])


@dataclass
class PerturbedTrace:
    frames: List[List[Detection]]
    applied: List[Tuple[int, AttackOp, int]] = field(default_factory=list)


def locate_target(detections: Sequence[Detection], gt_box) -> int:
    """Index of the detection whose center lies nearest the target's
    ground-truth box, within that box's diagonal."""
    if not detections:
        raise TargetAbsent("frame has no detections")
    gcenter = gt_box.center()
    dists = [float(np.linalg.norm(d.box.center() - gcenter)) for d in detections]
    idx = int(np.argmin(dists))
    if isinstance(gt_box, BBox2D):
        diag = math.hypot(gt_box.width, gt_box.height)
    else:
        diag = math.sqrt(gt_box.l ** 2 + gt_box.w ** 2 + gt_box.h ** 2)
    if dists[idx] > max(diag, 1e-9):
        raise TargetAbsent(f"nearest detection {dists[idx]:.3g} away from target")
    return idx


def apply_plan(trace: Trace, plan: AttackPlan) -> PerturbedTrace:
    """Apply the scheduled operations; untouched frames are shared as-is."""
    gt = trace.gt_tracks.get(plan.target)
    if gt is None:
        raise TargetAbsent(f"unknown target object {plan.target}")
    frames = trace.copy_frames()
    applied: List[Tuple[int, AttackOp, int]] = []
    for frame in sorted(plan.schedule):
        op = plan.schedule[frame]
        if frame < 0 or frame >= len(frames):
            raise TargetAbsent(f"scheduled frame {frame} outside trace")
        if not gt.has_frame(frame):
            raise TargetAbsent(f"target absent from ground truth at frame {frame}")
        idx = locate_target(frames[frame], gt.box_at(frame))
        if isinstance(op, Hide):
            del frames[frame][idx]
            applied.append((frame, op, -1))
        else:
            det = frames[frame][idx]
            frames[frame][idx] = replace(det, box=det.box.translated(op.offset))
            applied.append((frame, op, idx))
    return PerturbedTrace(frames=frames, applied=applied)


def _shift_offset(lam: float, v_atk: np.ndarray) -> np.ndarray:
    return lam * np.asarray(v_atk, dtype=float)


def two_phase_plan(target: int, frame: int, lam: float, v_atk,
                   hide_frames: int = 5) -> AttackPlan:
    """One shift followed by a contiguous hide block."""
    v = np.asarray(v_atk, dtype=float)
    schedule: Dict[int, AttackOp] = {frame: Shift(_shift_offset(lam, v))}
    for k in range(1, hide_frames + 1):
        schedule[frame + k] = Hide()
    return AttackPlan(target=target, schedule=schedule, v_atk=v, lam=lam)


def default_lambda_hi(gt_box, v_atk) -> float:
    """Upper search bound: four times the box extent along the direction."""
    v = np.abs(np.asarray(v_atk, dtype=float))
    if isinstance(gt_box, BBox2D):
        extent = v[0] * gt_box.width + v[1] * gt_box.height
    else:
        extent = v[0] * gt_box.l + v[1] * gt_box.w
        if v.size > 2:
            extent += v[2] * gt_box.h
    return 4.0 * max(extent, 1e-9)


def binary_search_lambda(trace: Trace, target: int, v_atk, frame: int,
                         tracker_factory: Callable, lambda_hi: Optional[float] = None,
                         iters: int = 20) -> float:
    """Largest shift scale that still associates the shifted box with the
    target's track at `frame`, probing the tracker as a black box."""
    gt = trace.gt_tracks.get(target)
    if gt is None or not gt.has_frame(frame):
        raise TargetAbsent(f"target {target} absent at frame {frame}")
    if lambda_hi is None:
        lambda_hi = default_lambda_hi(gt.box_at(frame), v_atk)
    if lambda_hi <= 0:
        raise ValueError("lambda_hi must be positive")

    baseline = tracker_factory()
    baseline_results = [baseline.step(f, dets)
                        for f, dets in enumerate(trace.frames[:frame + 1])]
    target_tid = identify_track(baseline_results, gt, upto=frame - 1)

    def associates(lam: float) -> bool:
        plan = AttackPlan(target=target,
                          schedule={frame: Shift(_shift_offset(lam, v_atk))},
                          v_atk=np.asarray(v_atk, dtype=float), lam=lam)
        pert = apply_plan(trace, plan)
        det_idx = next(idx for f, _op, idx in pert.applied if f == frame)
        tracker = tracker_factory()
        result = None
        for f, dets in enumerate(pert.frames[:frame + 1]):
            result = tracker.step(f, dets)
        return (target_tid, det_idx) in result.matches

    if associates(lambda_hi):
        return lambda_hi
    lo, hi = 0.0, lambda_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if associates(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise NoFeasibleLambda("no positive shift keeps the box associated")
    return lo


def poc_two_phase(trace: Trace, target: int, v_atk, tracker_factory: Callable,
                  hide_frames: int = 5, frame: Optional[int] = None,
                  lambda_hi: Optional[float] = None,
                  iters: int = 20) -> Tuple[AttackPlan, PerturbedTrace]:
    """Two-phase attack: binary-searched shift, then hides.

    The attack frame defaults to shortly after the target appears so the
    track exists and has settled.
    """
    gt = trace.gt_tracks.get(target)
    if gt is None:
        raise TargetAbsent(f"unknown target object {target}")
    if frame is None:
        frame = gt.frames[0] + 6
    if not gt.has_frame(frame):
        raise TargetAbsent(f"target absent at attack frame {frame}")
    hide_frames = min(hide_frames, gt.frames[-1] - frame)
    lam = binary_search_lambda(trace, target, v_atk, frame, tracker_factory,
                               lambda_hi=lambda_hi, iters=iters)
    plan = two_phase_plan(target, frame, lam, v_atk, hide_frames)
    return plan, apply_plan(trace, plan)


def layout_frames(n_frames: int, s_ratio: float, h_ratio: float, layout: str,
                  seed: Optional[int] = None) -> Tuple[List[int], List[int]]:
    """Shift and hide frame sets for a schedule layout.

    optimal places the shift block immediately before a terminal hide
    block; inverted swaps the two; uniform spreads the attack frames
    evenly; random scatters them reproducibly by seed.
    """
    if s_ratio < 0 or h_ratio < 0 or s_ratio + h_ratio > 1.0 + 1e-12:
        raise ValueError("invalid attack ratios")
    n_s = int(round(s_ratio * n_frames))
    n_h = int(round(h_ratio * n_frames))
    if layout == "optimal":
        shifts = list(range(n_frames - n_s - n_h, n_frames - n_h))
        hides = list(range(n_frames - n_h, n_frames))
    elif layout == "inverted":
        hides = list(range(n_frames - n_s - n_h, n_frames - n_s))
        shifts = list(range(n_frames - n_s, n_frames))
    elif layout == "uniform":
        total = n_s + n_h
        pos = np.unique(np.linspace(0, n_frames - 1, total).round().astype(int)) \
            if total else np.array([], dtype=int)
        while len(pos) < total:  # collisions from rounding on short traces
            extra = [f for f in range(n_frames) if f not in set(pos)]
            pos = np.sort(np.concatenate([pos, extra[:total - len(pos)]]))
        shifts = [int(f) for f in pos[:n_s]]
        hides = [int(f) for f in pos[n_s:total]]
    elif layout == "random":
        rng = np.random.default_rng(seed)
        pos = rng.choice(n_frames, size=n_s + n_h, replace=False)
        pos.sort()
        labels = np.array([0] * n_s + [1] * n_h)
        rng.shuffle(labels)
        shifts = [int(f) for f, lab in zip(pos, labels) if lab == 0]
        hides = [int(f) for f, lab in zip(pos, labels) if lab == 1]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return shifts, hides


def generalized_plan(n_frames: int, s_ratio: float, h_ratio: float, lam: float,
                     v_atk, target: int, layout: str = "optimal",
                     seed: Optional[int] = None) -> AttackPlan:
    """Ratio-based schedule of shifts and hides over the whole trace."""
    shifts, hides = layout_frames(n_frames, s_ratio, h_ratio, layout, seed)
    v = np.asarray(v_atk, dtype=float)
    schedule: Dict[int, AttackOp] = {f: Shift(_shift_offset(lam, v)) for f in shifts}
    for f in hides:
        schedule[f] = Hide()
    return AttackPlan(target=target, schedule=schedule, v_atk=v, lam=lam,
                      s_ratio=s_ratio, h_ratio=h_ratio,
                      r_ratio=s_ratio + h_ratio)
