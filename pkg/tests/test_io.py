"""Text formats: headers, lossless float round-trips, chip sidecars,
parse failures with line numbers, and byte-stable output."""
import hashlib
import os

import numpy as np
import pytest

from airtrack.core import BoundingBox, Chip, ComparatorScore, Detection, PlatformMeta
from airtrack.errors import MissingChipWarning, ParseError
from airtrack.evaluation import TrackRecord
from airtrack.io_formats import (
    assignments_to_tracks,
    load_assignments,
    load_chip_npy,
    load_detections,
    load_tracks,
    write_chip_npy,
    write_chip_pgm,
    write_detections,
    write_tracks,
    write_assignments,
)
from airtrack.mht import Assignment

from conftest import make_box, make_chip


def sample_detections():
    chip = make_chip(4, 4, 3, value=0.25)
    meta = PlatformMeta(lon=1.25, lat=-2.5, azimuth=0.1, elevation=-45.0, zoom=1.5)
    f0 = [
        Detection(0, 0, BoundingBox(1.5, 2.25, 10.0, 11.0), "object", 0.875, chip, meta),
        Detection(0, 1, BoundingBox(-3.0, 0.1, 5.0, 5.0), "", 1.0, None, None),
    ]
    f2 = [Detection(2, 0, BoundingBox(40.0, 41.0, 6.0, 7.0), "clutter", 0.25, chip, None)]
    return [f0, f2]


def sample_assignments():
    return [
        Assignment(track_id=1, frame_index=0, detection_id=3,
                   box=BoundingBox(1.0, 2.0, 3.0, 4.0), coasted=False,
                   fused=0.625,
                   comparator_scores=(
                       ComparatorScore("ekf", 0.001953125, 0.5),
                       ComparatorScore("ssd", 123.25, 0.25),
                   )),
        Assignment(track_id=1, frame_index=1, detection_id=None,
                   box=BoundingBox(2.0, 3.0, 3.0, 4.0), coasted=True,
                   fused=None, comparator_scores=()),
    ]


class TestChipFiles:
    def test_npy_round_trip_bit_exact(self, tmp_path, rng):
        chip = make_chip(5, 7, 3, rng=rng)
        p = os.path.join(tmp_path, "c.npy")
        write_chip_npy(chip, p)
        back = load_chip_npy(p)
        assert np.array_equal(back.pixels, chip.pixels)

    def test_pgm_header_and_payload(self, tmp_path):
        chip = Chip(pixels=np.full((2, 3, 3), 0.5))
        p = os.path.join(tmp_path, "c.pgm")
        write_chip_pgm(chip, p)
        blob = open(p, "rb").read()
        assert blob.startswith(b"P5\n3 2\n255\n")
        assert blob[len(b"P5\n3 2\n255\n"):] == bytes([127] * 6)


class TestDetectionsFormat:
    def test_round_trip_values_bit_exact(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        write_detections(p, sample_detections(), chip_dir="chips")
        frames = load_detections(p)
        flat_in = [d for f in sample_detections() for d in f]
        flat_out = [d for f in frames for d in f]
        assert len(flat_out) == 3
        for a, b in zip(flat_in, flat_out):
            assert a.frame_index == b.frame_index
            assert a.detection_id == b.detection_id
            assert a.box == b.box  # %.17g floats survive exactly
            assert a.label == b.label
            assert a.confidence == b.confidence
            assert a.platform == b.platform
            assert (a.chip is None) == (b.chip is None)
            if a.chip is not None:
                assert np.array_equal(a.chip.pixels, b.chip.pixels)

    def test_distinct_frames_grouped(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        write_detections(p, sample_detections())
        frames = load_detections(p)
        # two groups (frames 0 and 2); gaps are not filled in
        assert len(frames) == 2
        assert [d.frame_index for d in frames[0]] == [0, 0]
        assert [d.frame_index for d in frames[1]] == [2]

    def test_write_is_byte_stable(self, tmp_path):
        pa, pb = os.path.join(tmp_path, "a.tsv"), os.path.join(tmp_path, "b.tsv")
        write_detections(pa, sample_detections())
        write_detections(pb, sample_detections())
        assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_header_checked(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        with open(p, "w") as fh:
            fh.write("# airtrack-tracks v1\n")
        with pytest.raises(ParseError, match="line 1"):
            load_detections(p)

    def test_field_count_error_carries_line_number(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        with open(p, "w") as fh:
            fh.write("# airtrack-detections v1\n1\t2\t3\n")
        with pytest.raises(ParseError, match="line 2"):
            load_detections(p)

    def test_bad_float_reported_with_column(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        fields = ["0", "0", "1.0", "oops", "3.0", "4.0", "", "1.0", ""] + [""] * 5
        with open(p, "w") as fh:
            fh.write("# airtrack-detections v1\n" + "\t".join(fields) + "\n")
        with pytest.raises(ParseError, match="bad float for y"):
            load_detections(p)

    def test_frame_order_must_be_non_decreasing(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        row = lambda f: "\t".join(
            [str(f), "0", "0", "0", "1", "1", "", "1.0", ""] + [""] * 5)
        with open(p, "w") as fh:
            fh.write("# airtrack-detections v1\n" + row(3) + "\n" + row(1) + "\n")
        with pytest.raises(ParseError, match="non-decreasing"):
            load_detections(p)

    def test_partial_platform_fields_rejected(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        fields = ["0", "0", "0", "0", "1", "1", "", "1.0", "", "1.5", "", "", "", ""]
        with open(p, "w") as fh:
            fh.write("# airtrack-detections v1\n" + "\t".join(fields) + "\n")
        with pytest.raises(ParseError, match="all present or all empty"):
            load_detections(p)

    def test_missing_chip_file_warns_and_substitutes_zeros(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        write_detections(p, sample_detections(), chip_dir="chips")
        os.remove(os.path.join(tmp_path, "chips", "f0_d0.npy"))
        with pytest.warns(MissingChipWarning):
            frames = load_detections(p)
        sub = frames[0][0].chip
        assert sub is not None and np.all(sub.pixels == 0.0)

    def test_label_with_tab_rejected_at_write(self, tmp_path):
        bad = [[Detection(0, 0, make_box(), label="a\tb")]]
        with pytest.raises(ValueError):
            write_detections(os.path.join(tmp_path, "d.tsv"), bad)

    def test_empty_file_loads_empty(self, tmp_path):
        p = os.path.join(tmp_path, "det.tsv")
        open(p, "w").close()
        assert load_detections(p) == []


class TestTracksFormat:
    def test_round_trip(self, tmp_path):
        recs = [
            TrackRecord(track_id=0, frame_index=0, box=make_box(0.1, 0.2, 3.5, 4.5),
                        present=True),
            TrackRecord(track_id=0, frame_index=1, box=make_box(1, 2, 3, 4),
                        present=False),
            TrackRecord(track_id=7, frame_index=0, box=make_box(9, 9, 2, 2),
                        present=True),
        ]
        p = os.path.join(tmp_path, "t.tsv")
        write_tracks(p, recs)
        assert load_tracks(p) == recs

    def test_present_flag_strict(self, tmp_path):
        p = os.path.join(tmp_path, "t.tsv")
        with open(p, "w") as fh:
            fh.write("# airtrack-tracks v1\n0\t0\t0\t0\t1\t1\t2\n")
        with pytest.raises(ParseError, match="present flag"):
            load_tracks(p)

    def test_bad_int_reported(self, tmp_path):
        p = os.path.join(tmp_path, "t.tsv")
        with open(p, "w") as fh:
            fh.write("# airtrack-tracks v1\nx\t0\t0\t0\t1\t1\t1\n")
        with pytest.raises(ParseError, match="bad integer for track_id"):
            load_tracks(p)


class TestAssignmentsFormat:
    def test_round_trip_including_miss_and_scores(self, tmp_path):
        p = os.path.join(tmp_path, "a.tsv")
        write_assignments(p, sample_assignments())
        back = load_assignments(p)
        assert back == sample_assignments()

    def test_miss_token_serialized(self, tmp_path):
        p = os.path.join(tmp_path, "a.tsv")
        write_assignments(p, sample_assignments())
        text = open(p).read()
        assert "\tMISS\t" in text

    def test_malformed_score_entry(self, tmp_path):
        p = os.path.join(tmp_path, "a.tsv")
        with open(p, "w") as fh:
            fh.write("# airtrack-assignments v1\n"
                     "0\t1\t2\t0\t0\t1\t1\t0.5\tekf-nope\n")
        with pytest.raises(ParseError, match="bad score entry"):
            load_assignments(p)

    def test_assignments_to_tracks(self):
        recs = assignments_to_tracks(sample_assignments())
        assert [r.frame_index for r in recs] == [0, 1]
        assert all(r.present for r in recs)
        assert recs[0].box == sample_assignments()[0].box


class TestFloatPrecision:
    def test_seventeen_digit_round_trip(self, tmp_path):
        import math

        # A value that loses precision at fewer significant digits.
        v = 0.1 + 0.2  # 0.30000000000000004
        rec = [TrackRecord(track_id=0, frame_index=0,
                           box=make_box(v, v * 7, 1 / 3, math.pi), present=True)]
        p = os.path.join(tmp_path, "t.tsv")
        write_tracks(p, rec)
        back = load_tracks(p)[0]
        assert back.box.x == v
        assert back.box.y == v * 7
        assert back.box.w == 1 / 3
        assert back.box.h == math.pi
