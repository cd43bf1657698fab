"""Bounding-box geometry: pixel boxes, oriented ground-plane boxes, overlaps."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


def _check_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name}: non-finite component {v!r}")


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned pixel box from bottom-left (x1, y1) to upper-right (x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        _check_finite("BBox2D", self.x1, self.y1, self.x2, self.y2)
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"BBox2D corners out of order: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def center(self) -> np.ndarray:
        return np.array([(self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0])

    def translated(self, offset) -> "BBox2D":
        dx, dy = float(offset[0]), float(offset[1])
        return BBox2D(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


@dataclass(frozen=True)
class BBox3D:
    """Oriented box: center (cx, cy, cz) in meters, extents l x w x h, yaw about
    the vertical axis. The ground plane is (x, y); cz carries the vertical
    coordinate."""

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        _check_finite("BBox3D", self.cx, self.cy, self.cz,
                      self.l, self.w, self.h, self.yaw)
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox3D extents must be positive: {self}")
        # normalize yaw into (-pi, pi]
        yaw = math.remainder(self.yaw, 2.0 * math.pi)
        if yaw <= -math.pi:
            yaw += 2.0 * math.pi
        object.__setattr__(self, "yaw", yaw)

    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    def bev_corners(self) -> np.ndarray:
        """Corners of the ground-plane rectangle, counter-clockwise, shape (4, 2)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = self.l / 2.0, self.w / 2.0
        local = np.array([[dx, dy], [-dx, dy], [-dx, -dy], [dx, -dy]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def translated(self, offset) -> "BBox3D":
        off = np.asarray(offset, dtype=float)
        dz = float(off[2]) if off.size > 2 else 0.0
        return replace(self, cx=self.cx + float(off[0]),
                       cy=self.cy + float(off[1]), cz=self.cz + dz)


def center(box) -> np.ndarray:
    """Midpoint of a 2D box or the stored center of a 3D box."""
    return box.center()


def iou_2d(a: BBox2D, b: BBox2D) -> float:
    """Intersection over union of two axis-aligned boxes.

    Zero-area boxes overlap nothing except an identical zero-area box.
    """
    if a.area == 0.0 or b.area == 0.0:
        return 1.0 if a == b else 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon against a convex CCW polygon.

    Returns the clipped vertex list, possibly empty, shape (n, 2).
    """
    output = [tuple(p) for p in subject]
    n_clip = len(clip)
    for i in range(n_clip):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n_clip]
        edge = (b[0] - a[0], b[1] - a[1])

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        current = output
        output = []
        prev = current[-1]
        prev_side = side(prev)
        for point in current:
            cur_side = side(point)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_segment_intersection(prev, point, a, b))
                output.append(point)
            elif prev_side >= 0.0:
                output.append(_segment_intersection(prev, point, a, b))
            prev, prev_side = point, cur_side
    return np.array(output) if output else np.empty((0, 2))


def _segment_intersection(p, q, a, b):
    # intersection of line pq with line ab; callers guarantee non-parallel
    d1 = (q[0] - p[0], q[1] - p[1])
    d2 = (b[0] - a[0], b[1] - a[1])
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if den == 0.0:
        return tuple(q)
    t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / den
    return (p[0] + t * d1[0], p[1] + t * d1[1])


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area of a simple polygon."""
    if len(points) < 3:
        return 0.0
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def iou_bev(a: BBox3D, b: BBox3D) -> float:
    """IoU of the two yaw-rotated ground-plane rectangles."""
    ca, cb = a.bev_corners(), b.bev_corners()
    area_a = polygon_area(ca)
    area_b = polygon_area(cb)
    if area_a == 0.0 or area_b == 0.0:
        return 1.0 if np.allclose(ca, cb) else 0.0
    inter = polygon_area(clip_polygon(ca, cb))
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)
