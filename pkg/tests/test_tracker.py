import numpy as np
import pytest

from conftest import make_det_2d, stationary_frames_2d
from motshield.defense import DefenseConfig
from motshield.kalman import constant_velocity_model
from motshield.kitti_io import SynthObject, synth
from motshield.tracker import (NonMonotonicFrame, Tracker, TrackerConfig,
                               profile, run_trace)


def fast_model(dims):
    # near-deadbeat filter: settles within a few frames on clean data
    return constant_velocity_model(dims, q=1.0, r=0.01)


class TestLifecycle:
    def test_birth_is_provisional(self):
        tracker = Tracker(TrackerConfig(hit_count=3))
        res = tracker.step(0, [make_det_2d(0, 0)])
        assert res.born == [0]
        assert tracker.confirmed_tracks() == []

    def test_confirmation_after_hit_count(self):
        tracker = Tracker(TrackerConfig(hit_count=3, kf_model=fast_model(2)))
        for f, dets in enumerate(stationary_frames_2d((5.0, 5.0), 5)):
            tracker.step(f, dets)
        confirmed = tracker.confirmed_tracks()
        assert len(confirmed) == 1
        assert np.allclose(confirmed[0].velocity(), 0.0, atol=1e-6)
        assert np.allclose(confirmed[0].center(), [5.0, 5.0], atol=1e-6)

    def test_death_after_reserved_age(self):
        tracker = Tracker(TrackerConfig(hit_count=1, reserved_age=2))
        tracker.step(0, [make_det_2d(0, 0)])
        tracker.step(1, [])
        res = tracker.step(2, [])
        assert res.destroyed == []          # misses == reserved_age: kept
        res = tracker.step(3, [])
        assert res.destroyed == [0]         # one more unmatched frame: gone
        assert tracker.tracks == []

    def test_reappearance_within_reserved_age_keeps_id(self):
        cfg = TrackerConfig(hit_count=1, reserved_age=3, kf_model=fast_model(2))
        tracker = Tracker(cfg)
        tracker.step(0, [make_det_2d(0, 0)])
        tracker.step(1, [make_det_2d(0, 0)])
        for f in (2, 3):
            tracker.step(f, [])
        res = tracker.step(4, [make_det_2d(0, 0)])
        assert res.born == []
        assert res.matches == [(0, 0)]

    def test_ids_never_reused(self):
        tracker = Tracker(TrackerConfig(hit_count=1, reserved_age=1))
        seen = set()
        rng = np.random.default_rng(0)
        for f in range(30):
            dets = [make_det_2d(rng.uniform(0, 500), rng.uniform(0, 500))
                    for _ in range(rng.integers(0, 3))]
            res = tracker.step(f, dets)
            for tid in res.born:
                assert tid not in seen
                seen.add(tid)

    def test_matched_resets_misses_and_counts_hits(self):
        tracker = Tracker(TrackerConfig(hit_count=2, reserved_age=5,
                                        kf_model=fast_model(2)))
        tracker.step(0, [make_det_2d(1, 1)])
        tracker.step(1, [])
        trk = tracker.tracks[0]
        assert trk.misses == 1 and trk.hits == 0
        tracker.step(2, [make_det_2d(1, 1)])
        assert trk.misses == 0 and trk.hits == 1

    def test_non_monotonic_frame(self):
        tracker = Tracker(TrackerConfig())
        tracker.step(0, [])
        with pytest.raises(NonMonotonicFrame):
            tracker.step(0, [])


class TestIouGating:
    def test_low_overlap_never_updates_existing_track(self):
        cfg = TrackerConfig(hit_count=1, reserved_age=10, iou_gate=0.5,
                            kf_model=fast_model(2))
        tracker = Tracker(cfg)
        tracker.step(0, [make_det_2d(0, 0)])
        res = tracker.step(1, [make_det_2d(1.8, 0)])  # IoU well below 0.5
        assert res.matches == []
        assert res.born == [1]


class TestRunTrace:
    def test_deterministic(self, straight_trace_3d):
        cfg = TrackerConfig(dims=3, hit_count=2, reserved_age=3)
        a = run_trace(cfg, straight_trace_3d.frames)
        b = run_trace(cfg, straight_trace_3d.frames)
        assert len(a) == len(b)
        for ra, rb in zip(a, b):
            assert ra.matches == rb.matches
            assert ra.born == rb.born and ra.destroyed == rb.destroyed
            for sa, sb in zip(ra.snapshots, rb.snapshots):
                assert sa.track_id == sb.track_id
                assert np.array_equal(sa.center, sb.center)

    def test_zero_noise_convergence(self):
        objects = [SynthObject(start=(0.0, 0.0), velocity=(2.0, 1.0),
                               extents=(4.0, 4.0))]
        trace = synth(objects, 15, noise=0.0, seed=0, dims=2)
        cfg = TrackerConfig(hit_count=1, reserved_age=3, kf_model=fast_model(2))
        results = run_trace(cfg, trace.frames)
        gt = trace.gt_tracks[0]
        for res in results[10:]:
            snap = res.snapshots[0]
            assert np.allclose(snap.center, gt.center_at(res.frame), atol=1e-6)

    def test_two_parallel_objects_two_tracks(self, straight_trace_3d):
        cfg = TrackerConfig(dims=3, hit_count=3, reserved_age=3)
        run = run_trace(cfg, straight_trace_3d.frames)
        final_ids = {s.track_id for s in run[-1].snapshots if s.confirmed}
        assert len(final_ids) == 2


class TestDefenseIntegration:
    def _clean_settling_trace(self):
        # zero noise: residual magnitudes decay monotonically, so every
        # post-warmup deviation sits below the fitted high quantile
        objects = [
            SynthObject(start=(0.0, 0.0, 0.8), velocity=(0.0, 1.0, 0.0),
                        extents=(4.0, 1.8, 1.5)),
            SynthObject(start=(6.0, 0.0, 0.8), velocity=(0.0, 1.0, 0.0),
                        extents=(4.0, 1.8, 1.5)),
            SynthObject(start=(-6.0, 0.0, 0.8), velocity=(0.0, 1.0, 0.0),
                        extents=(4.0, 1.8, 1.5)),
        ]
        return synth(objects, 80, noise=0.0, seed=0, dims=3)

    def test_defended_run_bit_identical_when_residuals_in_bound(self):
        trace = self._clean_settling_trace()
        base = TrackerConfig(dims=3, hit_count=2, reserved_age=5)
        defended = TrackerConfig(dims=3, hit_count=2, reserved_age=5,
                                 defense=DefenseConfig(warmup_min=20))
        run_plain = run_trace(base, trace.frames)
        run_defended = run_trace(defended, trace.frames)
        for ra, rb in zip(run_plain, run_defended):
            assert ra.matches == rb.matches
            assert ra.born == rb.born and ra.destroyed == rb.destroyed
            for sa, sb in zip(ra.snapshots, rb.snapshots):
                assert np.array_equal(sa.center, sb.center)
                assert np.array_equal(sa.velocity, sb.velocity)

    def test_modulation_activates_after_warmup(self):
        trace = self._clean_settling_trace()
        cfg = TrackerConfig(dims=3, hit_count=2, reserved_age=5,
                            defense=DefenseConfig(warmup_min=20))
        tracker = Tracker(cfg)
        assert tracker.defense_thresholds() is None
        for f, dets in enumerate(trace.frames):
            tracker.step(f, dets)
        assert tracker.defense_thresholds() is not None

    def test_buffer_capacity_respected(self):
        trace = self._clean_settling_trace()
        cfg = TrackerConfig(dims=3, hit_count=2, reserved_age=5,
                            defense=DefenseConfig(buffer_size=25))
        tracker = Tracker(cfg)
        for f, dets in enumerate(trace.frames):
            tracker.step(f, dets)
            assert all(n <= 25 for n in tracker.defense.sizes())


class TestProfiles:
    def test_profile_table(self):
        assert profile("jia2d").scoring == "iou"
        assert profile("apollo2d").matcher == "greedy"
        assert profile("ab3dmot").dims == 3
        assert profile("apollo3d").scoring == "apollo3d"
        assert profile("apollo3d", desk_scale=False).reserved_age == 60
        with pytest.raises(ValueError):
            profile("nope")

    def test_scoring_dims_compatibility(self):
        with pytest.raises(ValueError):
            TrackerConfig(dims=3, scoring="apollo2d")
        with pytest.raises(ValueError):
            TrackerConfig(dims=2, scoring="apollo3d")

    def test_apollo3d_pipeline_tracks_objects(self, straight_trace_3d):
        cfg = profile("apollo3d", hit_count=2, reserved_age=3)
        results = run_trace(cfg, straight_trace_3d.frames)
        confirmed = {s.track_id for s in results[-1].snapshots if s.confirmed}
        assert len(confirmed) == 2

    def test_apollo2d_pipeline_tracks_object(self):
        # normalized momentum densities admit only residuals well inside the
        # scaled box widths, so the object must move slowly relative to them
        objects = [SynthObject(start=(100.0, 100.0), velocity=(0.2, 0.1),
                               extents=(30.0, 20.0))]
        trace = synth(objects, 20, noise=0.05, seed=1, dims=2)
        cfg = profile("apollo2d", hit_count=2, reserved_age=3,
                      sigma_scale=0.02, kf_model=fast_model(2))
        results = run_trace(cfg, trace.frames)
        assert any(s.confirmed for s in results[-1].snapshots)
        assert results[-1].snapshots[0].matched
