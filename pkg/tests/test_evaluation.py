"""Track-quality metrics: match events, id crediting, overlap curves,
expected average overlap, and summary statistics."""
import numpy as np
import pytest

from airtrack.errors import EmptyGroundTruth
from airtrack.evaluation import (
    AUID,
    OUID,
    CreditSpan,
    IdMapping,
    TrackRecord,
    eao,
    evaluate,
    kde_interval,
    map_ids,
    match_events,
    overlap_curve,
    summary_metrics,
)

from conftest import make_box


def rec(tid, frame, x=0.0, y=0.0, present=True, w=10.0, h=10.0):
    return TrackRecord(track_id=tid, frame_index=frame,
                       box=make_box(x, y, w, h), present=present)


class TestMatchEvents:
    def test_single_exact_match(self):
        events = match_events([rec(1, 0)], [rec(10, 0)])
        assert len(events) == 1
        ev = events[0]
        assert (ev.frame_index, ev.gt_id, ev.pred_id) == (0, 1, 10)
        assert ev.overlap == 1.0

    def test_below_threshold_excluded(self):
        # 4px x-offset: IoU = 60/140 < 0.5
        events = match_events([rec(1, 0)], [rec(10, 0, x=4.0)])
        assert events == []
        assert len(match_events([rec(1, 0)], [rec(10, 0, x=4.0)], iou_min=0.3)) == 1

    def test_one_to_one_best_overlap_first(self):
        gt = [rec(1, 0, x=0.0), rec(2, 0, x=8.0)]
        # pred 10 overlaps gt1 perfectly and gt2 partially; pred 11 only gt2
        pred = [rec(10, 0, x=0.0), rec(11, 0, x=8.0)]
        events = match_events(gt, pred)
        got = {(e.gt_id, e.pred_id) for e in events}
        assert got == {(1, 10), (2, 11)}

    def test_each_id_used_once_per_frame(self):
        gt = [rec(1, 0, x=0.0)]
        pred = [rec(10, 0, x=0.0), rec(11, 0, x=1.0)]
        events = match_events(gt, pred)
        assert len(events) == 1
        assert events[0].pred_id == 10  # higher overlap wins

    def test_tie_breaks_by_gt_then_pred_id(self):
        # identical geometry: both preds IoU 1.0 with the single gt
        gt = [rec(5, 0)]
        pred = [rec(11, 0), rec(10, 0)]
        assert match_events(gt, pred)[0].pred_id == 10

    def test_absent_gt_rows_do_not_match(self):
        events = match_events([rec(1, 0, present=False)], [rec(10, 0)])
        assert events == []

    def test_frames_scanned_ascending(self):
        gt = [rec(1, 2), rec(1, 0)]
        pred = [rec(10, 2), rec(10, 0)]
        frames = [e.frame_index for e in match_events(gt, pred)]
        assert frames == [0, 2]

    def test_duplicate_records_rejected(self):
        with pytest.raises(ValueError):
            match_events([rec(1, 0), rec(1, 0, x=3.0)], [])
        with pytest.raises(ValueError):
            match_events([rec(1, 0)], [rec(10, 0), rec(10, 0, x=3.0)])


class TestMapIds:
    def test_mode_validated(self):
        with pytest.raises(ValueError):
            map_ids([rec(1, 0)], [rec(10, 0)], "wrong")

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(EmptyGroundTruth):
            map_ids([], [rec(10, 0)])
        with pytest.raises(EmptyGroundTruth):
            map_ids([rec(1, 0, present=False)], [rec(10, 0)])

    def switch_fixture(self):
        """gt 1 is covered by pred 10 (frames 0-4) then pred 11 (frames 5-9)."""
        gt = [rec(1, f) for f in range(10)]
        pred = [rec(10, f) for f in range(5)] + [rec(11, f) for f in range(5, 10)]
        return gt, pred

    def test_first_bound_mode_keeps_only_anchor(self):
        gt, pred = self.switch_fixture()
        m = map_ids(gt, pred, OUID)
        assert m.mode == OUID
        assert m.assignment[1] == (CreditSpan(pred_id=10, first_frame=0),)

    def test_any_consistent_mode_credits_clean_successors(self):
        gt, pred = self.switch_fixture()
        m = map_ids(gt, pred, AUID)
        assert m.assignment[1] == (
            CreditSpan(pred_id=10, first_frame=0),
            CreditSpan(pred_id=11, first_frame=5),
        )

    def test_successor_that_touched_another_gt_not_credited(self):
        gt = [rec(1, f) for f in range(10)] + [rec(2, f, x=100.0) for f in range(10)]
        pred = (
            [rec(10, f) for f in range(5)]
            + [rec(11, f) for f in range(5, 10)]     # candidate successor for gt 1
            + [rec(11, 3, x=100.0)]                  # ...but it also matched gt 2
            + [rec(12, f, x=100.0) for f in range(10) if f != 3]
        )
        m = map_ids(gt, pred, AUID)
        assert [s.pred_id for s in m.assignment[1]] == [10]

    def test_bound_pred_cannot_anchor_second_gt(self):
        # pred 10 anchors gt 1 at frame 0; a later overlap with gt 2 must
        # not credit gt 2, which instead anchors to the next free id
        gt = [rec(1, 0), rec(2, 5), rec(2, 6)]
        pred = [rec(10, 0), rec(10, 5), rec(11, 6)]
        m = map_ids(gt, pred, OUID)
        assert m.assignment[1] == (CreditSpan(10, 0),)
        assert m.assignment[2] == (CreditSpan(11, 6),)

    def test_unmatched_gt_gets_empty_assignment(self):
        gt = [rec(1, 0), rec(2, 0, x=500.0)]
        m = map_ids(gt, [rec(10, 0)], OUID)
        assert m.assignment[2] == ()

    def test_anchor_kept_even_after_wandering(self):
        # pred 10 anchors gt 1 then drifts onto gt 2's box; its credit
        # for gt 1 survives in both modes
        gt = [rec(1, 0), rec(1, 1), rec(2, 1, x=100.0)]
        pred = [rec(10, 0), rec(10, 1, x=100.0), rec(11, 1)]
        for mode in (OUID, AUID):
            m = map_ids(gt, pred, mode)
            assert m.assignment[1][0] == CreditSpan(10, 0)


def random_fixture(rng):
    """Randomized tracks with jitter, dropouts, id switches, absences."""
    gt, pred = [], []
    next_pred = 100
    for gid in range(3):
        x = float(rng.uniform(0.0, 200.0))
        y = float(rng.uniform(0.0, 200.0))
        pid = next_pred
        next_pred += 1
        switch = int(rng.integers(5, 20))
        for f in range(25):
            x += float(rng.normal(0.0, 2.0))
            y += float(rng.normal(0.0, 2.0))
            present = not (gid == 0 and 10 <= f < 13)
            gt.append(rec(gid, f, x=x, y=y, present=present))
            if f == switch:
                pid = next_pred
                next_pred += 1
            if present and rng.random() < 0.9:
                pred.append(rec(pid, f,
                                x=x + float(rng.normal(0.0, 1.5)),
                                y=y + float(rng.normal(0.0, 1.5))))
    return gt, pred


class TestCreditSubsetProperty:
    def test_first_bound_credit_is_subset_and_eao_never_higher(self):
        rng = np.random.default_rng(99)
        checked_proper = 0
        for _ in range(100):
            gt, pred = random_fixture(rng)
            mo = map_ids(gt, pred, OUID)
            ma = map_ids(gt, pred, AUID)
            for gid, spans in mo.assignment.items():
                assert set(spans) <= set(ma.assignment[gid])
            eo = eao(gt, pred, mo)
            ea = eao(gt, pred, ma)
            assert eo.value <= ea.value + 1e-12
            if ea.value > eo.value + 1e-9:
                checked_proper += 1
        # the generator's id switches must actually exercise the gap
        assert checked_proper > 10


class TestOverlapCurve:
    def test_zero_before_credit_becomes_valid(self):
        gt = [rec(1, f) for f in range(4)]
        pred = [rec(10, f) for f in range(4)]
        mapping = IdMapping(mode=OUID, assignment={1: (CreditSpan(10, 2),)})
        phi = overlap_curve(gt, pred, 1, mapping)
        assert phi.tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_best_across_spans(self):
        gt = [rec(1, 0)]
        pred = [rec(10, 0, x=2.0), rec(11, 0)]
        mapping = IdMapping(
            mode=AUID, assignment={1: (CreditSpan(10, 0), CreditSpan(11, 0))}
        )
        assert overlap_curve(gt, pred, 1, mapping)[0] == 1.0

    def test_covers_present_frames_only(self):
        gt = [rec(1, 0), rec(1, 1, present=False), rec(1, 2)]
        pred = [rec(10, f) for f in range(3)]
        mapping = IdMapping(mode=OUID, assignment={1: (CreditSpan(10, 0),)})
        assert overlap_curve(gt, pred, 1, mapping).shape == (2,)

    def test_no_credit_all_zero(self):
        gt = [rec(1, f) for f in range(3)]
        phi = overlap_curve(gt, [], 1, IdMapping(mode=OUID, assignment={1: ()}))
        assert phi.tolist() == [0.0, 0.0, 0.0]


class TestKdeInterval:
    def test_empty_rejected(self):
        with pytest.raises(EmptyGroundTruth):
            kde_interval([])

    def test_nonpositive_length_rejected(self):
        with pytest.raises(ValueError):
            kde_interval([3, 0])

    def test_few_distinct_lengths_degenerate(self):
        assert kde_interval([4]) == (1, 4)
        assert kde_interval([4, 4, 4]) == (1, 4)
        assert kde_interval([3, 7]) == (1, 7)

    def test_matches_direct_computation(self):
        lengths = [10, 12, 14, 30]
        arr = np.asarray(sorted(lengths), dtype=np.float64)
        n = arr.size
        std = float(np.std(arr, ddof=1))
        q1, q3 = np.percentile(arr, [25.0, 75.0])
        spread = min(std, float(q3 - q1) / 1.34) if q3 > q1 else std
        h = 0.9 * spread * n ** -0.2
        grid = np.arange(1, 31, dtype=np.float64)
        dens = np.exp(-0.5 * ((grid[:, None] - arr[None, :]) / h) ** 2).sum(axis=1)
        lo = hi = int(np.argmax(dens))
        mass, total = float(dens[lo]), float(dens.sum())
        while mass / total < 0.5 and (lo > 0 or hi < 29):
            left = dens[lo - 1] if lo > 0 else -np.inf
            right = dens[hi + 1] if hi < 29 else -np.inf
            if left >= right:
                lo -= 1
                mass += float(dens[lo])
            else:
                hi += 1
                mass += float(dens[hi])
        assert kde_interval(lengths) == (lo + 1, hi + 1)

    def test_interval_concentrates_around_dominant_mode(self):
        lo, hi = kde_interval([5, 5, 5, 6, 30])
        assert lo <= 5 <= hi
        assert hi < 30

    def test_interval_bounds_sane(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            lengths = rng.integers(1, 60, size=rng.integers(3, 12)).tolist()
            lo, hi = kde_interval(lengths)
            assert 1 <= lo <= hi <= max(lengths)


class TestEao:
    def test_pinned_hand_computed_value(self):
        # single length-4 track, overlaps (1,1,0,0); degenerate interval
        # [1,4]: mean of (1, 1, 2/3, 1/2) = 19/24 exactly
        gt = [rec(1, f) for f in range(4)]
        pred = [rec(10, 0), rec(10, 1), rec(10, 2, x=50.0), rec(10, 3, x=50.0)]
        mapping = map_ids(gt, pred, OUID)
        result = eao(gt, pred, mapping)
        assert result.interval == (1, 4)
        assert result.value == 19.0 / 24.0

    def test_perfect_tracker_scores_one_in_both_modes(self):
        gt = [rec(1, f) for f in range(6)] + [rec(2, f, x=80.0) for f in range(6)]
        pred = [rec(10, f) for f in range(6)] + [rec(20, f, x=80.0) for f in range(6)]
        report = evaluate(gt, pred)
        assert report.ouid_eao.value == 1.0
        assert report.auid_eao.value == 1.0

    def test_track_average_is_unweighted(self):
        gt = [rec(1, f) for f in range(4)] + [rec(2, f, x=200.0) for f in range(4)]
        pred = [rec(10, f) for f in range(4)]  # covers track 1 only
        result = eao(gt, pred, map_ids(gt, pred, OUID))
        assert result.per_track[1] == 1.0
        assert result.per_track[2] == 0.0
        assert result.value == 0.5

    def test_explicit_interval_override(self):
        gt = [rec(1, f) for f in range(4)]
        pred = [rec(10, 0), rec(10, 1), rec(10, 2, x=50.0), rec(10, 3, x=50.0)]
        result = eao(gt, pred, map_ids(gt, pred, OUID), interval=(1, 2))
        assert result.value == 1.0
        assert result.interval == (1, 2)

    def test_interval_longer_than_track_repeats_full_mean(self):
        gt = [rec(1, f) for f in range(2)]
        pred = [rec(10, 0)]
        result = eao(gt, pred, map_ids(gt, pred, OUID), interval=(1, 5))
        # means: Ns=1 -> 1.0; Ns>=2 -> 0.5 repeated
        assert result.value == pytest.approx((1.0 + 0.5 * 4) / 5.0)

    def test_invalid_interval_rejected(self):
        gt = [rec(1, 0)]
        mapping = map_ids(gt, [rec(10, 0)], OUID)
        with pytest.raises(ValueError):
            eao(gt, [rec(10, 0)], mapping, interval=(3, 2))
        with pytest.raises(ValueError):
            eao(gt, [rec(10, 0)], mapping, interval=(0, 2))

    def test_empty_ground_truth_rejected(self):
        mapping = IdMapping(mode=OUID, assignment={})
        with pytest.raises(EmptyGroundTruth):
            eao([rec(1, 0, present=False)], [], mapping)


class TestSummaryMetrics:
    def gap_fixture(self, emit_during_gap):
        gt = [rec(1, f, present=f not in (2, 3)) for f in range(6)]
        frames = range(6) if emit_during_gap else [f for f in range(6) if f not in (2, 3)]
        pred = [rec(10, f) for f in frames]
        return gt, pred

    def test_perfect_run(self):
        gt, pred = self.gap_fixture(emit_during_gap=False)
        m = summary_metrics(gt, pred, map_ids(gt, pred, OUID))
        assert m.precision == 1.0
        assert m.recall == 1.0
        assert m.absence_accuracy == 1.0

    def test_emitting_through_absence_penalized(self):
        gt, pred = self.gap_fixture(emit_during_gap=True)
        m = summary_metrics(gt, pred, map_ids(gt, pred, OUID))
        assert m.absence_accuracy == 0.0
        # the two gap boxes match nothing, so precision drops to 4/6
        assert m.precision == pytest.approx(4.0 / 6.0)
        assert m.recall == 1.0

    def test_uncredited_predictions_are_false_positives(self):
        gt = [rec(1, f) for f in range(4)]
        pred = [rec(10, f) for f in range(4)] + [rec(77, f, x=300.0) for f in range(4)]
        m = summary_metrics(gt, pred, map_ids(gt, pred, OUID))
        assert m.precision == 0.5
        assert m.recall == 1.0

    def test_boxes_before_credit_window_do_not_count(self):
        gt = [rec(1, f) for f in range(4)]
        pred = [rec(10, f) for f in range(4)]
        mapping = IdMapping(mode=OUID, assignment={1: (CreditSpan(10, 2),)})
        m = summary_metrics(gt, pred, mapping)
        assert m.precision == 0.5
        assert m.recall == 0.5

    def test_no_predictions_conventions(self):
        gt = [rec(1, 0), rec(1, 1, present=False)]
        m = summary_metrics(gt, [], IdMapping(mode=OUID, assignment={1: ()}))
        assert m.precision == 1.0
        assert m.recall == 0.0
        assert m.absence_accuracy == 1.0


class TestEvaluateReport:
    def test_switch_fixture_ordering_and_table(self):
        gt = [rec(1, f) for f in range(10)]
        pred = [rec(10, f) for f in range(5)] + [rec(11, f) for f in range(5, 10)]
        report = evaluate(gt, pred)
        assert report.ouid_eao.value < report.auid_eao.value
        assert report.auid_eao.value == 1.0
        table = report.as_table()
        assert "ouid" in table and "auid" in table
        assert f"{report.ouid_eao.value:8.4f}".strip() in table
