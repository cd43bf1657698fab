import pytest

from motshield.association import Detection
from motshield.geometry import BBox2D, BBox3D
from motshield.kitti_io import SynthObject, synth


@pytest.fixture
def straight_trace_3d():
    """Two parallel constant-velocity objects, zero noise, 40 frames."""
    objects = [
        SynthObject(start=(0.0, 0.0, 0.8), velocity=(0.0, 1.0, 0.0),
                    extents=(4.0, 1.8, 1.5), point_count=100),
        SynthObject(start=(8.0, 0.0, 0.8), velocity=(0.0, 1.0, 0.0),
                    extents=(4.0, 1.8, 1.5), point_count=100),
    ]
    return synth(objects, 40, noise=0.0, seed=0, dims=3)


def make_det_2d(cx, cy, w=2.0, h=2.0, **kwargs):
    return Detection(box=BBox2D(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                     **kwargs)


def make_det_3d(cx, cy, cz=0.0, l=4.0, w=2.0, h=1.5, yaw=0.0, **kwargs):
    return Detection(box=BBox3D(cx=cx, cy=cy, cz=cz, l=l, w=w, h=h, yaw=yaw),
                     **kwargs)


def stationary_frames_2d(center, n, **det_kwargs):
    return [[make_det_2d(*center, **det_kwargs)] for _ in range(n)]
