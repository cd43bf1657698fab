"""Detection-to-track scoring and matching.

Two scoring families are provided: a 2D similarity (feature, momentum,
shape, intersection dimensions with a weighted unified score) and a 3D
dissimilarity (location, direction, shape, point-density, feature,
mass-center, intersection dimensions). Gated score matrices feed either
a greedy matcher or an optimal assignment matcher.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox2D, BBox3D, iou_2d, iou_bev

MS_GATE = 0.045
UNIFIED_GATE_2D = 0.6
DISSIM_GATE_3D = 4.0
FEATURE_DIM_MISMATCH_COST = 100.0
SPEED_WEIGHTED_THRESHOLD = 2.0  # m/frame

_TINY = 1e-12


@dataclass
class Detection:
    """One observed box plus optional sensor context.

    point_count, mass_center and foreground only apply to 3D detections.
    """

    box: object  # BBox2D | BBox3D
    feature: Optional[np.ndarray] = None
    point_count: Optional[int] = None
    mass_center: Optional[np.ndarray] = None
    foreground: bool = True


@dataclass(frozen=True)
class TrackView:
    """Read-only slice of a track as the scorers need it: the predicted
    center plus the latest associated detection's box/feature/context."""

    predicted_center: np.ndarray
    latest_box: object
    latest_feature: Optional[np.ndarray] = None
    predicted_speed: float = 0.0
    latest_point_count: Optional[int] = None
    latest_mass_center: Optional[np.ndarray] = None

    def predicted_box(self):
        """Latest extents re-centered at the predicted position."""
        box = self.latest_box
        c = self.predicted_center
        if isinstance(box, BBox2D):
            w, h = box.width, box.height
            return BBox2D(c[0] - w / 2.0, c[1] - h / 2.0,
                          c[0] + w / 2.0, c[1] + h / 2.0)
        return BBox3D(cx=float(c[0]), cy=float(c[1]), cz=float(c[2]),
                      l=box.l, w=box.w, h=box.h, yaw=box.yaw)


@dataclass(frozen=True)
class Sim2dScores:
    fs: Optional[float]
    ms: float
    ss: float
    iou: float
    unified: float


@dataclass(frozen=True)
class Dissim3dScores:
    ld: float
    dd: float
    sd: float
    pdd: float
    feat_d: float
    mcd: float
    iou_d: float
    unified: float


def _gauss_pdf(x: float, mean: float, sigma: float) -> float:
    sigma = max(sigma, 1e-9)
    zscore = (x - mean) / sigma
    return math.exp(-0.5 * zscore * zscore) / (sigma * math.sqrt(2.0 * math.pi))


def sim2d(track: TrackView, det: Detection, sigma_scale: float = 1.0,
          feature_weighted: Optional[bool] = None) -> Sim2dScores:
    """2D similarity dimensions and their weighted unified score.

    The feature-weighted combination is used iff both features are present.
    """
    obs: BBox2D = det.box
    pred_box = track.predicted_box()
    px, py = track.predicted_center[0], track.predicted_center[1]
    ox, oy = obs.center()

    fs = None
    if track.latest_feature is not None and det.feature is not None:
        fs = float(np.dot(np.asarray(track.latest_feature, dtype=float).ravel(),
                          np.asarray(det.feature, dtype=float).ravel()))

    ms = _gauss_pdf(px, ox, obs.width * sigma_scale) * \
        _gauss_pdf(py, oy, obs.height * sigma_scale)

    big_l, big_w = track.latest_box.width, track.latest_box.height
    denom = max(big_l * big_w, _TINY)
    ss = -abs((big_l - obs.width) * (big_w - obs.height) / denom)

    iou = iou_2d(pred_box, obs)

    if feature_weighted is None:
        feature_weighted = fs is not None
    if feature_weighted and fs is not None:
        unified = 0.45 * fs + 0.4 * ms + 0.15 * ss + 0.05 * iou
    else:
        unified = 0.5 * ms + 0.15 * ss + 0.35 * iou
    return Sim2dScores(fs=fs, ms=ms, ss=ss, iou=iou, unified=unified)


def dissim3d(track: TrackView, det: Detection,
             feature_weight: float = 0.5) -> Dissim3dScores:
    """3D dissimilarity dimensions and the unified score.

    The foreground combination weights location, direction, shape,
    point-density and feature terms; background falls back to mass-center
    and intersection terms. Missing features or point counts contribute
    zero rather than gating the pair out.
    """
    obs: BBox3D = det.box
    latest: BBox3D = track.latest_box
    dx = float(track.predicted_center[0] - obs.cx)
    dy = float(track.predicted_center[1] - obs.cy)
    if track.predicted_speed > SPEED_WEIGHTED_THRESHOLD:
        ld = math.sqrt(0.5 * dx * dx + 2.0 * dy * dy)
    else:
        ld = math.hypot(dx, dy)

    dd = 0.5 * (1.0 - math.cos(obs.yaw - latest.yaw))

    denom = max(latest.l * latest.w * latest.h, _TINY)
    sd = abs((latest.l - obs.l) * (latest.w - obs.w) * (latest.h - obs.h) / denom)

    if track.latest_point_count is None or det.point_count is None:
        pdd = 0.0
    else:
        n, m = track.latest_point_count, det.point_count
        pdd = 0.0 if max(n, m) == 0 else abs(n - m) / max(n, m)

    if track.latest_feature is None or det.feature is None:
        feat_d = 0.0
    else:
        fa = np.asarray(track.latest_feature, dtype=float).ravel()
        fb = np.asarray(det.feature, dtype=float).ravel()
        if fa.shape != fb.shape:
            feat_d = FEATURE_DIM_MISMATCH_COST
        else:
            feat_d = float(np.sum(np.abs(fa - fb)))

    if track.latest_mass_center is not None and det.mass_center is not None:
        mcd = float(np.linalg.norm(np.asarray(det.mass_center, dtype=float) -
                                   np.asarray(track.latest_mass_center, dtype=float)))
    else:
        mcd = math.hypot(dx, dy)

    iou_d = 1.0 - iou_bev(track.predicted_box(), obs)

    if det.foreground:
        unified = 0.6 * ld + 0.2 * dd + 0.1 * sd + 0.1 * pdd + feature_weight * feat_d
    else:
        unified = 0.2 * mcd + 0.8 * iou_d
    return Dissim3dScores(ld=ld, dd=dd, sd=sd, pdd=pdd, feat_d=feat_d,
                          mcd=mcd, iou_d=iou_d, unified=unified)


@dataclass
class ScoreMatrix:
    """Pairwise scores (rows are tracks, columns detections) with a gating
    mask; gated entries are never matched."""

    scores: np.ndarray
    gated: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.gated = np.asarray(self.gated, dtype=bool)
        if self.scores.shape != self.gated.shape:
            raise ValueError("scores/gated shape mismatch")

    @property
    def shape(self):
        return self.scores.shape


def gate2d(pairwise: Sequence[Sequence[Sim2dScores]]) -> ScoreMatrix:
    """Gate 2D similarity scores: momentum below 0.045 or unified below 0.6."""
    rows = len(pairwise)
    cols = len(pairwise[0]) if rows else 0
    scores = np.zeros((rows, cols))
    gated = np.zeros((rows, cols), dtype=bool)
    for i in range(rows):
        for j in range(cols):
            s = pairwise[i][j]
            scores[i, j] = s.unified
            gated[i, j] = s.ms < MS_GATE or s.unified < UNIFIED_GATE_2D
    return ScoreMatrix(scores=scores, gated=gated)


def gate3d(pairwise: Sequence[Sequence[Dissim3dScores]]) -> ScoreMatrix:
    """Gate 3D dissimilarity scores strictly above 4.0."""
    rows = len(pairwise)
    cols = len(pairwise[0]) if rows else 0
    scores = np.zeros((rows, cols))
    gated = np.zeros((rows, cols), dtype=bool)
    for i in range(rows):
        for j in range(cols):
            s = pairwise[i][j]
            scores[i, j] = s.unified
            gated[i, j] = s.unified > DISSIM_GATE_3D
    return ScoreMatrix(scores=scores, gated=gated)


def iou_matrix(pred_boxes: Sequence, det_boxes: Sequence, gate: float) -> ScoreMatrix:
    """Plain IoU score matrix, gated below `gate`; dispatches on box type."""
    rows, cols = len(pred_boxes), len(det_boxes)
    scores = np.zeros((rows, cols))
    for i, pb in enumerate(pred_boxes):
        for j, db in enumerate(det_boxes):
            if isinstance(pb, BBox2D):
                scores[i, j] = iou_2d(pb, db)
            else:
                scores[i, j] = iou_bev(pb, db)
    return ScoreMatrix(scores=scores, gated=scores < gate)


@dataclass
class Matching:
    pairs: list = field(default_factory=list)  # (track row, detection col)
    unmatched_tracks: list = field(default_factory=list)
    unmatched_detections: list = field(default_factory=list)


def match_greedy(matrix: ScoreMatrix, maximize: bool) -> Matching:
    """Repeatedly take the globally best ungated entry among unmatched
    rows and columns; ties break on lower row then lower column."""
    rows, cols = matrix.shape
    free_rows = set(range(rows))
    free_cols = set(range(cols))
    pairs = []
    while free_rows and free_cols:
        best = None
        best_val = None
        for i in sorted(free_rows):
            for j in sorted(free_cols):
                if matrix.gated[i, j]:
                    continue
                v = matrix.scores[i, j]
                better = best_val is None or (v > best_val if maximize else v < best_val)
                if better:
                    best, best_val = (i, j), v
        if best is None:
            break
        pairs.append(best)
        free_rows.discard(best[0])
        free_cols.discard(best[1])
    return Matching(pairs=pairs,
                    unmatched_tracks=sorted(free_rows),
                    unmatched_detections=sorted(free_cols))


def match_hungarian(matrix: ScoreMatrix, maximize: bool) -> Matching:
    """Optimal assignment on the ungated bipartite graph.

    Rectangular inputs are padded with gated sentinels; assignment pairs
    landing on sentinels come back unmatched.
    """
    rows, cols = matrix.shape
    if rows == 0 or cols == 0 or matrix.gated.all():
        return Matching(pairs=[],
                        unmatched_tracks=list(range(rows)),
                        unmatched_detections=list(range(cols)))
    cost = -matrix.scores if maximize else matrix.scores.copy()
    ungated = cost[~matrix.gated]
    span = float(ungated.max() - ungated.min())
    big = float(ungated.max()) + (span + 1.0) * (max(rows, cols) + 1)
    cost[matrix.gated] = big

    n = max(rows, cols)
    padded = np.full((n, n), big)
    padded[:rows, :cols] = cost
    row_ind, col_ind = linear_sum_assignment(padded)

    pairs = []
    for i, j in zip(row_ind, col_ind):
        if i < rows and j < cols and not matrix.gated[i, j]:
            pairs.append((int(i), int(j)))
    matched_rows = {i for i, _ in pairs}
    matched_cols = {j for _, j in pairs}
    return Matching(pairs=sorted(pairs),
                    unmatched_tracks=[i for i in range(rows) if i not in matched_rows],
                    unmatched_detections=[j for j in range(cols) if j not in matched_cols])
