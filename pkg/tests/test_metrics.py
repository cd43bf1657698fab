import numpy as np
import pytest

from motshield.geometry import BBox2D, BBox3D
from motshield.metrics import (SAFETY_THRESHOLDS_M, EmptyGroundTruth, GtTrack,
                               NoOverlap, NoTarget, UnitsMismatch, clear,
                               false_deviation, lost_frames, lost_frames_trace,
                               safety_verdicts)


def box3(x, y):
    return BBox3D(cx=x, cy=y, cz=0.0, l=4.0, w=2.0, h=1.5)


def gt_track(oid, coords, first=0):
    frames = list(range(first, first + len(coords)))
    return GtTrack(object_id=oid, frames=frames,
                   boxes=[box3(x, y) for x, y in coords])


def pred_frames(rows):
    """rows: {frame: [(tid, (x, y))]} -> metric input with boxes."""
    out = {}
    for frame, entries in rows.items():
        out[frame] = [(tid, np.array([x, y, 0.0]), box3(x, y))
                      for tid, (x, y) in entries]
    return out


class TestClearHandScenarios:
    def test_perfect_tracking(self):
        gts = [gt_track(0, [(0, 0), (0, 1), (0, 2)]),
               gt_track(1, [(10, 0), (10, 1), (10, 2)])]
        preds = pred_frames({
            0: [(100, (0, 0)), (200, (10, 0))],
            1: [(100, (0, 1)), (200, (10, 1))],
            2: [(100, (0, 2)), (200, (10, 2))],
        })
        rep = clear(preds, gts, dims=3)
        assert rep.mota == 1.0
        assert rep.motp == 0.0
        assert rep.mt == 1.0 and rep.ml == 0.0
        assert rep.precision == rep.recall == rep.f1 == 1.0

    def test_mota_with_miss_and_false_positive(self):
        # g = 10, one miss, one false positive, no mismatches: MOTA = 0.8
        gts = [gt_track(0, [(0, 0)] * 5), gt_track(1, [(10, 0)] * 5)]
        rows = {f: [(100, (0, 0)), (200, (10, 0))] for f in range(5)}
        rows[2] = [(100, (0, 0)), (300, (50, 50))]  # miss gt 1, stray pred
        rep = clear(pred_frames(rows), gts, dims=3)
        assert rep.gt_total == 10
        assert rep.misses == 1 and rep.false_positives == 1 and rep.mismatches == 0
        assert rep.mota == pytest.approx(0.8)

    def test_motp_mean_distance(self):
        # six matched pairs with total distance 3.0: MOTP = 0.5
        gts = [gt_track(0, [(0, 0), (0, 1), (0, 2)]),
               gt_track(1, [(10, 0), (10, 1), (10, 2)])]
        preds = pred_frames({
            f: [(100, (0.5, f)), (200, (10.5, f))] for f in range(3)
        })
        rep = clear(preds, gts, dims=3)
        assert rep.matches == 6
        assert rep.dist_sum == pytest.approx(3.0)
        assert rep.motp == pytest.approx(0.5)

    def test_identity_swap_counts_two_mismatches(self):
        # two objects cross; predicted ids swap at frame 2
        gts = [gt_track(0, [(0, 0), (0, 1), (0, 2)]),
               gt_track(1, [(6, 0), (6, 1), (6, 2)])]
        preds = pred_frames({
            0: [(100, (0, 0)), (200, (6, 0))],
            1: [(100, (0, 1)), (200, (6, 1))],
            2: [(200, (0, 2)), (100, (6, 2))],
        })
        rep = clear(preds, gts, dims=3)
        assert rep.mismatches == 2
        assert rep.mota == pytest.approx(1.0 - 2 / 6)

    def test_mostly_tracked_and_lost(self):
        # object 0 covered 5/5 by one track; object 1 covered 1/5
        gts = [gt_track(0, [(0, i) for i in range(5)]),
               gt_track(1, [(10, i) for i in range(5)])]
        rows = {f: [(100, (0, f))] for f in range(5)}
        rows[0].append((200, (10, 0)))
        rep = clear(pred_frames(rows), gts, dims=3)
        assert rep.mt == pytest.approx(0.5)
        assert rep.ml == pytest.approx(0.5)

    def test_f1_harmonic_consistency(self):
        gts = [gt_track(0, [(0, i) for i in range(6)])]
        rows = {f: [(100, (0, f))] for f in range(4)}
        rows[4] = [(300, (50, 50))]
        rows[5] = []
        rep = clear(pred_frames(rows), gts, dims=3)
        expected = 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
        assert rep.f1 == pytest.approx(expected, abs=1e-12)

    def test_motp_invariant_to_id_relabeling(self):
        gts = [gt_track(0, [(0, i) for i in range(4)])]
        rows_a = {f: [(100, (0.25, f))] for f in range(4)}
        rows_b = {f: [(900 + f, (0.25, f))] for f in range(4)}  # new id per frame
        rep_a = clear(pred_frames(rows_a), gts, dims=3)
        rep_b = clear(pred_frames(rows_b), gts, dims=3)
        assert rep_a.motp == pytest.approx(rep_b.motp)
        assert rep_b.mismatches == 3  # relabeling costs mismatches, not motp

    def test_2d_overlap_matching(self):
        box = BBox2D(0, 0, 10, 10)
        gts = [GtTrack(object_id=0, frames=[0], boxes=[box])]
        preds = {0: [(1, np.array([5.0, 5.0]), BBox2D(1, 1, 11, 11))]}
        rep = clear(preds, gts, dims=2, threshold=0.5)
        assert rep.matches == 1
        assert 0.0 < rep.motp_normalized <= 1.0

    def test_empty_ground_truth(self):
        with pytest.raises(EmptyGroundTruth):
            clear({}, [], dims=3)


class TestFalseDeviation:
    def test_zero_for_exact_track(self):
        gt = gt_track(0, [(0, i) for i in range(4)])
        perceived = [(f, np.array([0.0, f, 0.0])) for f in range(4)]
        assert false_deviation(perceived, gt, axis=0) == (0.0, 0.0)

    def test_max_and_mean(self):
        gt = gt_track(0, [(0, i) for i in range(4)])
        offsets = [0.0, 1.0, 3.0, 0.0]
        perceived = [(f, np.array([off, f, 0.0]))
                     for f, off in enumerate(offsets)]
        fd_max, fd_avg = false_deviation(perceived, gt, axis=0)
        assert fd_max == 3.0
        assert fd_avg == pytest.approx(1.0)

    def test_no_overlap(self):
        gt = gt_track(0, [(0, 0)])
        with pytest.raises(NoOverlap):
            false_deviation([(5, np.zeros(3))], gt, axis=0)


class TestLostFrames:
    def _run(self, rows):
        class Snap:
            def __init__(self, tid, matched):
                self.track_id = tid
                self.center = np.zeros(3)
                self.velocity = np.zeros(3)
                self.box = box3(0, 0)
                self.matched = matched
                self.confirmed = True

        class Res:
            def __init__(self, frame, snaps):
                self.frame = frame
                self.snapshots = snaps
                self.matches = []
                self.born = []
                self.destroyed = []

        return [Res(f, [Snap(tid, ok) for tid, ok in entries])
                for f, entries in enumerate(rows)]

    def test_identical_runs_zero(self):
        gt = gt_track(0, [(0, i) for i in range(4)])
        run = self._run([[(0, True)]] * 4)
        assert lost_frames_trace(run, run, gt, attacked_tid=0, baseline_tid=0) == 0

    def test_hidden_block_counts(self):
        gt = gt_track(0, [(0, i) for i in range(10)])
        baseline = self._run([[(0, True)]] * 10)
        attacked = self._run([[(0, True)]] * 3 +
                             [[(0, False)]] * 5 +
                             [[(0, True)]] * 2)
        assert lost_frames_trace(attacked, baseline, gt,
                                 attacked_tid=0, baseline_tid=0) == 5

    def test_destroyed_track_accrues_remaining_life(self):
        gt = gt_track(0, [(0, i) for i in range(10)])
        baseline = self._run([[(0, True)]] * 10)
        attacked = self._run([[(0, True)]] * 4 + [[]] * 6)  # track gone
        assert lost_frames_trace(attacked, baseline, gt,
                                 attacked_tid=0, baseline_tid=0) == 6

    def test_aggregate(self):
        gt = gt_track(0, [(0, i) for i in range(4)])
        run = self._run([[(0, True)]] * 4)
        worse = self._run([[(0, True)]] * 2 + [[(0, False)]] * 2)
        lf_max, lf_avg = lost_frames([worse, run], [run, run], [gt, gt],
                                     identify_upto=None)
        assert lf_max == 2 and lf_avg == pytest.approx(1.0)

    def test_alignment_check(self):
        with pytest.raises(NoTarget):
            lost_frames([], [], [])


class TestSafetyVerdicts:
    def test_all_breached(self):
        verdicts = safety_verdicts(4.53)
        assert all(verdicts.values())

    def test_none_breached(self):
        verdicts = safety_verdicts(0.30)
        assert not any(verdicts.values())

    def test_partial(self):
        verdicts = safety_verdicts(2.0)
        assert verdicts["off_road_local"] and verdicts["off_road_highway"]
        assert not verdicts["wrong_way_local"]
        assert not verdicts["wrong_way_highway"]

    def test_thresholds_table(self):
        assert SAFETY_THRESHOLDS_M == {
            "off_road_local": 0.895, "off_road_highway": 1.945,
            "wrong_way_local": 2.405, "wrong_way_highway": 2.855}

    def test_pixels_rejected(self):
        with pytest.raises(UnitsMismatch):
            safety_verdicts(100.0, units="px")


class TestGtTrack:
    def test_strictly_increasing_frames(self):
        with pytest.raises(ValueError):
            GtTrack(object_id=0, frames=[0, 0], boxes=[box3(0, 0), box3(0, 0)])

    def test_lookup(self):
        gt = gt_track(0, [(1, 2), (3, 4)], first=5)
        assert gt.has_frame(6) and not gt.has_frame(7)
        assert np.allclose(gt.center_at(5), [1, 2, 0])
