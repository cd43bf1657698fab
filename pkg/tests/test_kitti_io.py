from pathlib import Path

import numpy as np
import pytest

from motshield.kitti_io import (KittiRow, MalformedRow, NonContiguousFrames,
                                SynthObject, Trace, parse, serialize, synth)
from motshield.metrics import clear
from motshield.tracker import TrackerConfig, run_trace

SAMPLE = (Path(__file__).parent / "data" / "sample_labels.txt").read_text()


class TestParse:
    def test_sample_counts(self):
        trace = parse(SAMPLE, classes=("Car",), dims=3)
        assert len(trace.frames) == 8
        assert set(trace.gt_tracks) == {0, 1}
        assert all(len(dets) == 2 for dets in trace.frames)
        assert trace.units == "m"

    def test_class_filter(self):
        cars = parse(SAMPLE, classes=("Car",), dims=2)
        people = parse(SAMPLE, classes=("Pedestrian",), dims=2)
        everything = parse(SAMPLE, classes=None, dims=2)
        assert set(cars.gt_tracks) == {0, 1}
        assert set(people.gt_tracks) == {2}
        assert len(everything.rows) == 21  # DontCare row included

    def test_camera_to_ground_plane_mapping(self):
        trace = parse(SAMPLE, classes=("Car",), dims=3)
        box = trace.gt_tracks[0].boxes[0]
        # camera (x, z) becomes the ground plane; camera y is carried as cz
        assert box.cx == pytest.approx(-2.22)
        assert box.cy == pytest.approx(8.26)
        assert box.cz == pytest.approx(1.48)
        assert box.l == pytest.approx(3.69)

    def test_2d_boxes(self):
        trace = parse(SAMPLE, classes=("Car",), dims=2)
        box = trace.gt_tracks[1].boxes[0]
        assert box.x1 == pytest.approx(387.63)
        assert box.y2 == pytest.approx(203.12)

    def test_malformed_row_reports_line_number(self):
        bad = SAMPLE.splitlines()
        bad[4] = " ".join(bad[4].split()[:16])  # 16 fields
        with pytest.raises(MalformedRow) as err:
            parse("\n".join(bad))
        assert err.value.lineno == 5
        assert "16" in str(err.value)

    def test_non_numeric_field(self):
        with pytest.raises(MalformedRow) as err:
            parse("0 0 Car a 0 0 0 0 0 0 0 0 0 0 0 0 0")
        assert err.value.lineno == 1

    def test_negative_frame(self):
        with pytest.raises(MalformedRow):
            parse("-1 0 Car 0 0 0 0 0 0 0 0 0 0 0 0 0 0")

    def test_empty_lines_skipped(self):
        trace = parse("\n\n" + SAMPLE + "\n\n", classes=("Car",))
        assert len(trace.frames) == 8

    def test_score_column(self):
        line = "0 -1 Car 0 0 0 10 10 20 20 1.5 1.6 3.7 1 1 9 0.1 0.87"
        trace = parse(line, classes=("Car",))
        assert trace.rows[0].score == pytest.approx(0.87)
        assert serialize(trace).split()[-1] == "0.870000"


class TestRoundTrip:
    def test_serialize_parse_fixpoint(self):
        first = parse(SAMPLE, classes=None, dims=3)
        text = serialize(first)
        second = parse(text, classes=None, dims=3)
        assert serialize(second) == text
        assert len(second.rows) == len(first.rows)
        for a, b in zip(first.rows, second.rows):
            assert a == b

    def test_synthetic_gt_serializes(self):
        trace = synth([SynthObject(start=(0, 0, 0.8), velocity=(0, 1, 0),
                                   extents=(4, 2, 1.5))], 5, dims=3)
        text = serialize(trace)
        back = parse(text, classes=("Car",), dims=3)
        assert len(back.gt_tracks[0].frames) == 5
        assert back.gt_tracks[0].boxes[3].cy == pytest.approx(3.0)

    def test_empty_trace(self):
        trace = synth([], 0, dims=2)
        assert serialize(trace) == ""


class TestTraceConstruction:
    def test_from_frame_map_contiguous(self):
        trace = parse(SAMPLE, classes=("Car",))
        frame_map = {i: dets for i, dets in enumerate(trace.frames)}
        rebuilt = Trace.from_frame_map(frame_map, trace.gt_tracks, 3, "m")
        assert len(rebuilt.frames) == 8

    def test_from_frame_map_rejects_gaps(self):
        with pytest.raises(NonContiguousFrames):
            Trace.from_frame_map({0: [], 2: []}, {}, 3, "m")


class TestSynth:
    def test_deterministic(self):
        spec = [SynthObject(start=(0, 0), velocity=(1, 0), extents=(4, 4))]
        a = synth(spec, 10, noise=0.3, seed=7, dims=2)
        b = synth(spec, 10, noise=0.3, seed=7, dims=2)
        for fa, fb in zip(a.frames, b.frames):
            for da, db in zip(fa, fb):
                assert da.box == db.box

    def test_zero_noise_detections_equal_gt(self):
        spec = [SynthObject(start=(2, 3), velocity=(1, -1), extents=(4, 4))]
        trace = synth(spec, 10, noise=0.0, seed=0, dims=2)
        gt = trace.gt_tracks[0]
        for f, dets in enumerate(trace.frames):
            assert np.allclose(dets[0].box.center(), gt.center_at(f))

    def test_gt_obeys_constant_velocity(self):
        spec = [SynthObject(start=(0, 0, 0), velocity=(0.5, 1.0, 0.0),
                            extents=(4, 2, 1.5))]
        trace = synth(spec, 20, noise=0.4, seed=1, dims=3)
        gt = trace.gt_tracks[0]
        for f in range(1, 20):
            step = gt.center_at(f) - gt.center_at(f - 1)
            assert np.allclose(step, [0.5, 1.0, 0.0])

    def test_lifetime_window(self):
        spec = [SynthObject(start=(0, 0), velocity=(1, 0), extents=(2, 2),
                            first_frame=3, last_frame=6)]
        trace = synth(spec, 10, dims=2)
        assert [len(f) for f in trace.frames] == [0, 0, 0, 1, 1, 1, 1, 0, 0, 0]
        assert trace.gt_tracks[0].frames == [3, 4, 5, 6]

    def test_end_to_end_perfect_tracking(self):
        spec = [SynthObject(start=(0, 0), velocity=(1, 0), extents=(6, 6)),
                SynthObject(start=(50, 0), velocity=(1, 0), extents=(6, 6))]
        trace = synth(spec, 15, noise=0.0, seed=0, dims=2)
        from motshield.kalman import constant_velocity_model
        cfg = TrackerConfig(dims=2, hit_count=1, reserved_age=3,
                            kf_model=constant_velocity_model(2, q=1.0, r=0.01))
        results = run_trace(cfg, trace.frames)
        rep = clear(results, list(trace.gt_tracks.values()), dims=2)
        assert rep.mota == 1.0
        assert rep.mt == 1.0


class TestKittiRow:
    def test_field_order(self):
        row = KittiRow(frame=2, track_id=7, type="Car", truncated=0.0,
                       occluded=1, alpha=-1.5, bbox=(1, 2, 3, 4),
                       dims=(1.5, 1.6, 3.7), loc=(9, 8, 7), rotation_y=0.25)
        parts = row.to_line().split()
        assert parts[:3] == ["2", "7", "Car"]
        assert parts[6:10] == ["1.000000", "2.000000", "3.000000", "4.000000"]
        assert parts[10:13] == ["1.500000", "1.600000", "3.700000"]
        assert parts[13:16] == ["9.000000", "8.000000", "7.000000"]
        assert parts[16] == "0.250000"
        assert KittiRow.parse_line(row.to_line(), 1) == row
