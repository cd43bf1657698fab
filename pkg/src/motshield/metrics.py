"""Tracking quality metrics: the CLEAR protocol plus adversarial measures.

CLEAR correspondence carries previous-frame matches over before optimal
re-matching, counts misses, false positives and identity mismatches, and
derives MOTP, MOTA, precision/recall/F1 and the mostly-tracked /
mostly-lost ratios. The adversarial side reports False Deviation (the
perceived-vs-true center gap on a chosen axis) and Lost Frames (extra
unmatched frames versus a baseline run), with verdicts against published
accident deviation thresholds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .association import ScoreMatrix, match_hungarian
from .geometry import iou_2d

# Deviation (meters) required to push a front vehicle's perceived
# trajectory off the road or into a wrong way, per driving scenario.
SAFETY_THRESHOLDS_M = {
    "off_road_local": 0.895,
    "off_road_highway": 1.945,
    "wrong_way_local": 2.405,
    "wrong_way_highway": 2.855,
}


class EmptyGroundTruth(ValueError):
    pass


class NoOverlap(ValueError):
    pass


class NoTarget(ValueError):
    pass


class UnitsMismatch(ValueError):
    pass


@dataclass
class GtTrack:
    """Ground-truth trajectory of one object."""

    object_id: int
    frames: List[int]
    boxes: List[object]
    label: str = "Car"

    def __post_init__(self):
        if len(self.frames) != len(self.boxes):
            raise ValueError("frames/boxes length mismatch")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError("frames must be strictly increasing")
        self._index = {f: i for i, f in enumerate(self.frames)}

    def has_frame(self, frame: int) -> bool:
        return frame in self._index

    def box_at(self, frame: int):
        return self.boxes[self._index[frame]]

    def center_at(self, frame: int) -> np.ndarray:
        return self.boxes[self._index[frame]].center()


@dataclass
class ClearReport:
    motp: float
    mota: float
    precision: float
    recall: float
    f1: float
    mt: float
    ml: float
    dist_sum: float
    matches: int
    misses: int
    false_positives: int
    mismatches: int
    gt_total: int
    motp_normalized: float

    def as_dict(self) -> Dict[str, float]:
        return dict(motp=self.motp, mota=self.mota, precision=self.precision,
                    recall=self.recall, f1=self.f1, mt=self.mt, ml=self.ml,
                    motp_normalized=self.motp_normalized)


def track_histories(results) -> Dict[int, List[Tuple[int, np.ndarray, object, bool, bool]]]:
    """Reconstruct per-track (frame, center, box, matched, confirmed) rows
    from a run's frame results, destroyed tracks included."""
    hist: Dict[int, List[Tuple[int, np.ndarray, object, bool, bool]]] = {}
    for res in results:
        for snap in res.snapshots:
            hist.setdefault(snap.track_id, []).append(
                (res.frame, snap.center, snap.box, snap.matched, snap.confirmed))
    return hist


def frame_tracks(results, confirmed_only: bool = True):
    """Per-frame list of (track_id, center, box) for metric evaluation."""
    out: Dict[int, List[Tuple[int, np.ndarray, object]]] = {}
    for res in results:
        rows = []
        for snap in res.snapshots:
            if confirmed_only and not snap.confirmed:
                continue
            rows.append((snap.track_id, snap.center, snap.box))
        out[res.frame] = rows
    return out


def _pair_scores(gts, preds, dims: int, threshold: float) -> ScoreMatrix:
    rows, cols = len(gts), len(preds)
    scores = np.zeros((rows, cols))
    gated = np.zeros((rows, cols), dtype=bool)
    for i, (_, gbox) in enumerate(gts):
        for j, (_, pcenter, pbox) in enumerate(preds):
            if dims == 2:
                overlap = iou_2d(gbox, pbox)
                scores[i, j] = overlap
                gated[i, j] = overlap < threshold
            else:
                dist = float(np.linalg.norm(gbox.center() - pcenter))
                scores[i, j] = dist
                gated[i, j] = dist > threshold
    return ScoreMatrix(scores=scores, gated=gated)


def _within(gbox, pcenter, pbox, dims: int, threshold: float) -> bool:
    if dims == 2:
        return iou_2d(gbox, pbox) >= threshold
    return float(np.linalg.norm(gbox.center() - pcenter)) <= threshold


def match_frame_gt(pred_by_frame, gt_tracks: Sequence[GtTrack], dims: int,
                   threshold: float):
    """CLEAR correspondence over all frames.

    Returns (per-frame tallies, coverage counts, matched distances/overlaps).
    """
    frames = sorted(set(pred_by_frame) |
                    {f for g in gt_tracks for f in g.frames})
    mapping: Dict[int, int] = {}  # gt id -> track id
    tallies = []
    coverage: Dict[int, Dict[int, int]] = {g.object_id: {} for g in gt_tracks}
    dist_sum = 0.0
    overlap_sum = 0.0

    for frame in frames:
        gts = [(g.object_id, g.box_at(frame)) for g in gt_tracks
               if g.has_frame(frame)]
        preds = list(pred_by_frame.get(frame, []))

        pred_index = {tid: k for k, (tid, _, _) in enumerate(preds)}
        matched: Dict[int, int] = {}
        used_preds = set()
        # carry over still-valid correspondences first
        for gid, gbox in gts:
            tid = mapping.get(gid)
            if tid is None or tid not in pred_index or tid in used_preds:
                continue
            _, pcenter, pbox = preds[pred_index[tid]]
            if _within(gbox, pcenter, pbox, dims, threshold):
                matched[gid] = tid
                used_preds.add(tid)

        free_gts = [(gid, gbox) for gid, gbox in gts if gid not in matched]
        free_preds = [p for p in preds if p[0] not in used_preds]
        if free_gts and free_preds:
            matrix = _pair_scores(free_gts, free_preds, dims, threshold)
            assignment = match_hungarian(matrix, maximize=(dims == 2))
            for gi, pj in assignment.pairs:
                gid = free_gts[gi][0]
                tid = free_preds[pj][0]
                matched[gid] = tid
                used_preds.add(tid)

        mme = 0
        for gid, tid in matched.items():
            if gid in mapping and mapping[gid] != tid:
                mme += 1
            mapping[gid] = tid
            coverage[gid][tid] = coverage[gid].get(tid, 0) + 1

        for gid, tid in matched.items():
            gbox = dict(gts)[gid]
            _, pcenter, pbox = preds[pred_index[tid]]
            dist_sum += float(np.linalg.norm(gbox.center() - pcenter))
            if dims == 2:
                overlap_sum += iou_2d(gbox, pbox)

        c = len(matched)
        tallies.append(dict(frame=frame, c=c, m=len(gts) - c,
                            fp=len(preds) - c, mme=mme, g=len(gts)))
    return tallies, coverage, dist_sum, overlap_sum


def clear(results_or_frames, gt_tracks: Sequence[GtTrack], dims: int,
          threshold: Optional[float] = None, confirmed_only: bool = True) -> ClearReport:
    """CLEAR report; 2D correspondence gates on IoU, 3D on center distance."""
    gt_tracks = list(gt_tracks)
    if not gt_tracks or all(not g.frames for g in gt_tracks):
        raise EmptyGroundTruth("no ground-truth trajectories")
    if threshold is None:
        threshold = 0.5 if dims == 2 else 1.0
    if isinstance(results_or_frames, dict):
        pred_by_frame = results_or_frames
    else:
        pred_by_frame = frame_tracks(results_or_frames, confirmed_only)

    tallies, coverage, dist_sum, overlap_sum = match_frame_gt(
        pred_by_frame, gt_tracks, dims, threshold)

    c_total = sum(t["c"] for t in tallies)
    m_total = sum(t["m"] for t in tallies)
    fp_total = sum(t["fp"] for t in tallies)
    mme_total = sum(t["mme"] for t in tallies)
    g_total = sum(t["g"] for t in tallies)
    if g_total == 0:
        raise EmptyGroundTruth("ground truth covers zero frames")

    motp = dist_sum / c_total if c_total else 0.0
    mota = 1.0 - (m_total + fp_total + mme_total) / g_total
    pred_total = c_total + fp_total
    precision = c_total / pred_total if pred_total else 1.0
    recall = c_total / g_total
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)

    mt = ml = 0
    for g in gt_tracks:
        life = len(g.frames)
        best = max(coverage[g.object_id].values(), default=0)
        ratio = best / life if life else 0.0
        if ratio >= 0.8:
            mt += 1
        if ratio <= 0.2:
            ml += 1
    n_gt = len(gt_tracks)

    if dims == 2:
        motp_normalized = overlap_sum / c_total if c_total else 0.0
    else:
        motp_normalized = max(0.0, 1.0 - motp / threshold)

    return ClearReport(motp=motp, mota=mota, precision=precision,
                       recall=recall, f1=f1, mt=mt / n_gt, ml=ml / n_gt,
                       dist_sum=dist_sum, matches=c_total, misses=m_total,
                       false_positives=fp_total, mismatches=mme_total,
                       gt_total=g_total, motp_normalized=motp_normalized)


def identify_track(results, gt: GtTrack, upto: Optional[int] = None,
                   confirmed_only: bool = False) -> int:
    """Track id whose history lies closest (mean center distance) to the
    ground-truth object over their common frames."""
    best_tid, best_dist = None, None
    for tid, rows in track_histories(results).items():
        dists = []
        for frame, pcenter, _box, _m, conf in rows:
            if upto is not None and frame > upto:
                continue
            if confirmed_only and not conf:
                continue
            if gt.has_frame(frame):
                dists.append(float(np.linalg.norm(gt.center_at(frame) - pcenter)))
        if not dists:
            continue
        mean = float(np.mean(dists))
        if best_dist is None or mean < best_dist or \
                (mean == best_dist and tid < best_tid):
            best_tid, best_dist = tid, mean
    if best_tid is None:
        raise NoTarget(f"no track overlaps ground-truth object {gt.object_id}")
    return best_tid


def false_deviation(perceived: Iterable[Tuple[int, np.ndarray]], gt: GtTrack,
                    axis: int) -> Tuple[float, float]:
    """Max and mean absolute center gap on one axis over common frames."""
    diffs = [abs(float(center[axis]) - float(gt.center_at(frame)[axis]))
             for frame, center in perceived if gt.has_frame(frame)]
    if not diffs:
        raise NoOverlap("perceived track shares no frames with ground truth")
    return max(diffs), float(np.mean(diffs))


def perceived_centers(results, track_id: int) -> List[Tuple[int, np.ndarray]]:
    rows = track_histories(results).get(track_id, [])
    return [(frame, center) for frame, center, _b, _m, _c in rows]


def unmatched_count(results, track_id: int, gt: GtTrack) -> int:
    """Frames of the object's ground-truth life where its track is either
    present-but-unmatched or already gone."""
    present = {frame: matched for frame, _c, _b, matched, _conf
               in track_histories(results).get(track_id, [])}
    count = 0
    for frame in gt.frames:
        if not present.get(frame, False):
            count += 1
    return count


def lost_frames_trace(attacked_results, baseline_results, gt: GtTrack,
                      attacked_tid: Optional[int] = None,
                      baseline_tid: Optional[int] = None,
                      identify_upto: Optional[int] = None) -> int:
    """Increment of the target track's unmatched frames under attack."""
    if baseline_tid is None:
        baseline_tid = identify_track(baseline_results, gt, upto=identify_upto)
    if attacked_tid is None:
        attacked_tid = identify_track(attacked_results, gt, upto=identify_upto)
    return (unmatched_count(attacked_results, attacked_tid, gt) -
            unmatched_count(baseline_results, baseline_tid, gt))


def lost_frames(attacked_runs: Sequence, baseline_runs: Sequence,
                gt_targets: Sequence[GtTrack],
                identify_upto: Optional[int] = None) -> Tuple[int, float]:
    """Max and mean Lost Frames across parallel per-trace runs."""
    if not attacked_runs or len(attacked_runs) != len(baseline_runs) or \
            len(attacked_runs) != len(gt_targets):
        raise NoTarget("attacked/baseline/target lists must align")
    values = [lost_frames_trace(a, b, g, identify_upto=identify_upto)
              for a, b, g in zip(attacked_runs, baseline_runs, gt_targets)]
    return max(values), float(np.mean(values))


def safety_verdicts(fd_max: float, units: str = "m") -> Dict[str, bool]:
    """Scenario -> breached map against the accident deviation thresholds."""
    if units != "m":
        raise UnitsMismatch("safety thresholds are defined in meters")
    return {name: fd_max > limit for name, limit in SAFETY_THRESHOLDS_M.items()}
