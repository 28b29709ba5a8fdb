"""Single-hypothesis greedy association baseline."""
import pytest

from airtrack.comparators import default_normalizers
from airtrack.errors import FrameOrderViolation
from airtrack.fusion import FusionConfig
from airtrack.greedy import GreedyTracker
from airtrack.mht import CONFIRMED, DEAD, MhtConfig

from conftest import make_detection


def make_tracker(**cfg_kw):
    fusion = FusionConfig(weights={"ekf": 1.0}, normalizers=default_normalizers())
    return GreedyTracker(MhtConfig(**cfg_kw), fusion)


def run_frames(tracker, frames):
    results = []
    for f, dets in enumerate(frames):
        detections = [
            make_detection(frame_index=f, detection_id=i, x=x, y=y)
            for i, x, y in dets
        ]
        results.append(tracker.process_frame(f, detections))
    return results


class TestBasicTracking:
    def test_single_object_continuous_track(self):
        tracker = make_tracker(confirm_hits=2)
        results = run_frames(tracker, [[(0, 5.0 * f, 0.0)] for f in range(8)])
        assert results[0].assignments == ()
        assert results[0].spawned == (1,)
        for r in results[1:]:
            assert len(r.assignments) == 1
            a = r.assignments[0]
            assert (a.track_id, a.detection_id, a.coasted) == (1, 0, False)
            assert a.fused is not None
            assert any(s.name == "ekf" for s in a.comparator_scores)

    def test_confirm_hits_one_emits_on_spawn_frame(self):
        tracker = make_tracker(confirm_hits=1)
        r = run_frames(tracker, [[(0, 0.0, 0.0)]])[0]
        assert len(r.assignments) == 1
        assert r.assignments[0].coasted is False

    def test_separated_objects_get_stable_ids(self):
        tracker = make_tracker(confirm_hits=2)
        results = run_frames(
            tracker, [[(0, 0.0, 0.0), (1, 300.0, 0.0)] for _ in range(6)]
        )
        for r in results[1:]:
            pairing = {a.track_id: a.detection_id for a in r.assignments}
            assert pairing == {1: 0, 2: 1}

    def test_coasts_through_gap_then_resumes(self):
        tracker = make_tracker(confirm_hits=2, max_misses=4)
        frames = [[(0, 5.0 * f, 0.0)] if f != 4 else [] for f in range(8)]
        results = run_frames(tracker, frames)
        gap = results[4].assignments[0]
        assert gap.coasted and gap.detection_id is None
        assert (gap.box.w, gap.box.h) == (10.0, 10.0)
        resumed = results[5].assignments[0]
        assert resumed.track_id == gap.track_id and not resumed.coasted

    def test_miss_budget_kills_track(self):
        tracker = make_tracker(confirm_hits=1, max_misses=2)
        results = run_frames(tracker, [[(0, 0.0, 0.0)], [], [], []])
        assert results[3].died == (1,)
        assert tracker.tracks[1].status == DEAD
        assert results[3].assignments == ()

    def test_frame_order_enforced(self):
        tracker = make_tracker()
        tracker.process_frame(5, [])
        with pytest.raises(FrameOrderViolation):
            tracker.process_frame(5, [])
        with pytest.raises(FrameOrderViolation):
            tracker.process_frame(0, [])


class TestAssignmentPolicy:
    def test_one_to_one_even_when_one_detection_fits_both(self):
        tracker = make_tracker(confirm_hits=1, max_misses=4)
        run_frames(tracker, [[(0, 0.0, 0.0), (1, 12.0, 0.0)]] * 2)
        r = tracker.process_frame(
            2, [make_detection(frame_index=2, detection_id=0, x=6.0, y=0.0)]
        )
        hits = [a for a in r.assignments if not a.coasted]
        assert len(hits) == 1  # the detection is claimed exactly once

    def test_symmetric_tie_breaks_deterministically(self):
        tracker = make_tracker(confirm_hits=1)
        run_frames(tracker, [[(0, 0.0, 0.0), (1, 0.0, 0.0)]])
        r = tracker.process_frame(
            1,
            [
                make_detection(frame_index=1, detection_id=0, x=0.0),
                make_detection(frame_index=1, detection_id=1, x=0.0),
            ],
        )
        pairing = {a.track_id: a.detection_id for a in r.assignments}
        # equal fused scores: lowest track id pairs with lowest detection id
        assert pairing == {1: 0, 2: 1}

    def test_better_fit_wins_the_contested_detection(self):
        tracker = make_tracker(confirm_hits=1, max_misses=4)
        run_frames(tracker, [[(0, 0.0, 0.0), (1, 30.0, 0.0)]] * 3)
        r = tracker.process_frame(
            3, [make_detection(frame_index=3, detection_id=0, x=29.0, y=0.0)]
        )
        hits = [a for a in r.assignments if not a.coasted]
        assert len(hits) == 1
        assert hits[0].track_id == 2  # track sitting at x=30 is the better match

    def test_unclaimed_detection_spawns_new_track(self):
        tracker = make_tracker(confirm_hits=1)
        run_frames(tracker, [[(0, 0.0, 0.0)]])
        r = tracker.process_frame(
            1,
            [
                make_detection(frame_index=1, detection_id=0, x=0.0),
                make_detection(frame_index=1, detection_id=1, x=500.0),
            ],
        )
        assert r.spawned == (2,)
        assert tracker.tracks[2].status == CONFIRMED

    def test_cache_rotates_on_association(self):
        tracker = make_tracker(confirm_hits=1)
        run_frames(tracker, [[(0, 0.0, 0.0)]])
        old_cache = tracker.tracks[1].cache
        tracker.process_frame(1, [make_detection(frame_index=1, detection_id=0, x=2.0)])
        assert tracker.tracks[1].parent_cache is old_cache
        assert tracker.tracks[1].cache is not old_cache
