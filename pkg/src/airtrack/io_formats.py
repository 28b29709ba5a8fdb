"""File formats: detections, track records, and assignment logs.

Every file is line-delimited UTF-8 text: a single header line
``# airtrack-<kind> v1`` followed by one tab-separated record per line.
Floats are written with 17 significant digits so write-then-load
reproduces values bit-for-bit.  Chips live next to the detection file
as ``.npy`` arrays referenced by relative path; a referenced chip that
cannot be read is replaced by a zero chip with a warning rather than
failing the whole load.

Detection columns (14, tab-separated)::

    frame_index  detection_id  x  y  w  h  label  confidence
    chip_path  lon  lat  azimuth  elevation  zoom

``label`` may be empty; ``chip_path`` empty means no chip; the last
five columns are either all present or all empty.  Track records carry
``track_id  frame_index  x  y  w  h  present``; assignment logs carry
``frame_index  track_id  detection_id|MISS  fused  scores`` where
``scores`` packs ``name=raw:normalized`` entries separated by ``;``.
"""
from __future__ import annotations

import os
import warnings
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BoundingBox, Chip, ComparatorScore, Detection, PlatformMeta
from .errors import MissingChipWarning, ParseError
from .evaluation import TrackRecord
from .mht import Assignment

FORMAT_VERSION = 1
DETECTIONS_KIND = "detections"
TRACKS_KIND = "tracks"
ASSIGNMENTS_KIND = "assignments"
MISS_TOKEN = "MISS"
_ZERO_CHIP_SIZE = 16


def _fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _header(kind: str) -> str:
    return f"# airtrack-{kind} v{FORMAT_VERSION}"


def _check_header(line: str, kind: str, path: str) -> None:
    expected = _header(kind)
    if line.rstrip("\n") != expected:
        raise ParseError(f"{path}: line 1: expected header {expected!r}, got {line.rstrip()!r}")


def _check_text_field(value: str, name: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise ValueError(f"{name} must not contain tabs or newlines: {value!r}")
    return value


def _parse_float(token: str, path: str, lineno: int, col: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{path}: line {lineno}: bad float for {col}: {token!r}") from None


def _parse_int(token: str, path: str, lineno: int, col: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{path}: line {lineno}: bad integer for {col}: {token!r}") from None


def write_chip_npy(chip: Chip, path: str) -> None:
    np.save(path, chip.pixels, allow_pickle=False)


def load_chip_npy(path: str) -> Chip:
    return Chip(pixels=np.load(path, allow_pickle=False))


def write_chip_pgm(chip: Chip, path: str) -> None:
    """Grayscale 8-bit binary PGM export for quick visual inspection."""
    gray = np.clip(chip.pixels.mean(axis=2) * 255.0, 0.0, 255.0).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_detections(
    path: str,
    frames: Sequence[Sequence[Detection]],
    chip_dir: Optional[str] = None,
) -> None:
    """Serialize per-frame detections.

    With ``chip_dir`` (created if needed, relative paths resolved against
    the output file's directory), each chip is stored as
    ``chip_dir/f<frame>_d<id>.npy`` and referenced from its record;
    without it chips are dropped and the chip column left empty.
    """
    base = os.path.dirname(os.path.abspath(path))
    rel_chip_dir: Optional[str] = None
    if chip_dir is not None:
        abs_chip_dir = chip_dir if os.path.isabs(chip_dir) else os.path.join(base, chip_dir)
        os.makedirs(abs_chip_dir, exist_ok=True)
        rel_chip_dir = os.path.relpath(abs_chip_dir, base)
    lines = [_header(DETECTIONS_KIND)]
    for frame_dets in frames:
        for det in frame_dets:
            chip_field = ""
            if det.chip is not None and rel_chip_dir is not None:
                name = f"f{det.frame_index}_d{det.detection_id}.npy"
                write_chip_npy(det.chip, os.path.join(base, rel_chip_dir, name))
                chip_field = os.path.join(rel_chip_dir, name)
            if det.platform is not None:
                meta = det.platform
                meta_fields = [
                    _fmt_float(meta.lon),
                    _fmt_float(meta.lat),
                    _fmt_float(meta.azimuth),
                    _fmt_float(meta.elevation),
                    _fmt_float(meta.zoom),
                ]
            else:
                meta_fields = ["", "", "", "", ""]
            lines.append(
                "\t".join(
                    [
                        str(det.frame_index),
                        str(det.detection_id),
                        _fmt_float(det.box.x),
                        _fmt_float(det.box.y),
                        _fmt_float(det.box.w),
                        _fmt_float(det.box.h),
                        _check_text_field(det.label, "label"),
                        _fmt_float(det.confidence),
                        _check_text_field(chip_field, "chip_path"),
                    ]
                    + meta_fields
                )
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_detections(path: str) -> List[List[Detection]]:
    """Parse a detection file into per-frame groups, frame order preserved.

    Frame indices must be non-decreasing.  A record referencing an
    unreadable chip file gets a zero chip and raises MissingChipWarning.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    if not raw_lines:
        return []
    _check_header(raw_lines[0], DETECTIONS_KIND, path)
    base = os.path.dirname(os.path.abspath(path))
    frames: List[List[Detection]] = []
    current_frame: Optional[int] = None
    for lineno, line in enumerate(raw_lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 14:
            raise ParseError(f"{path}: line {lineno}: expected 14 fields, got {len(parts)}")
        frame_index = _parse_int(parts[0], path, lineno, "frame_index")
        if current_frame is not None and frame_index < current_frame:
            raise ParseError(
                f"{path}: line {lineno}: frame {frame_index} after frame "
                f"{current_frame}; frames must be non-decreasing"
            )
        box = BoundingBox(
            x=_parse_float(parts[2], path, lineno, "x"),
            y=_parse_float(parts[3], path, lineno, "y"),
            w=_parse_float(parts[4], path, lineno, "w"),
            h=_parse_float(parts[5], path, lineno, "h"),
        )
        chip: Optional[Chip] = None
        if parts[8]:
            chip_path = os.path.join(base, parts[8])
            try:
                chip = load_chip_npy(chip_path)
            except (OSError, ValueError):
                warnings.warn(
                    f"{path}: line {lineno}: chip file {parts[8]!r} unreadable; "
                    "substituting zeros",
                    MissingChipWarning,
                )
                chip = Chip(pixels=np.zeros((_ZERO_CHIP_SIZE, _ZERO_CHIP_SIZE, 3)))
        meta_fields = parts[9:14]
        platform: Optional[PlatformMeta] = None
        if any(meta_fields):
            if not all(meta_fields):
                raise ParseError(
                    f"{path}: line {lineno}: platform fields must be all present or all empty"
                )
            platform = PlatformMeta(
                lon=_parse_float(meta_fields[0], path, lineno, "lon"),
                lat=_parse_float(meta_fields[1], path, lineno, "lat"),
                azimuth=_parse_float(meta_fields[2], path, lineno, "azimuth"),
                elevation=_parse_float(meta_fields[3], path, lineno, "elevation"),
                zoom=_parse_float(meta_fields[4], path, lineno, "zoom"),
            )
        det = Detection(
            frame_index=frame_index,
            detection_id=_parse_int(parts[1], path, lineno, "detection_id"),
            box=box,
            label=parts[6],
            confidence=_parse_float(parts[7], path, lineno, "confidence"),
            chip=chip,
            platform=platform,
        )
        if current_frame is None or frame_index != current_frame:
            frames.append([])
            current_frame = frame_index
        frames[-1].append(det)
    return frames


def write_tracks(path: str, records: Sequence[TrackRecord]) -> None:
    lines = [_header(TRACKS_KIND)]
    for r in records:
        lines.append(
            "\t".join(
                [
                    str(r.track_id),
                    str(r.frame_index),
                    _fmt_float(r.box.x),
                    _fmt_float(r.box.y),
                    _fmt_float(r.box.w),
                    _fmt_float(r.box.h),
                    "1" if r.present else "0",
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tracks(path: str) -> List[TrackRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    if not raw_lines:
        return []
    _check_header(raw_lines[0], TRACKS_KIND, path)
    out: List[TrackRecord] = []
    for lineno, line in enumerate(raw_lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise ParseError(f"{path}: line {lineno}: expected 7 fields, got {len(parts)}")
        if parts[6] not in ("0", "1"):
            raise ParseError(f"{path}: line {lineno}: present flag must be 0 or 1")
        out.append(
            TrackRecord(
                track_id=_parse_int(parts[0], path, lineno, "track_id"),
                frame_index=_parse_int(parts[1], path, lineno, "frame_index"),
                box=BoundingBox(
                    x=_parse_float(parts[2], path, lineno, "x"),
                    y=_parse_float(parts[3], path, lineno, "y"),
                    w=_parse_float(parts[4], path, lineno, "w"),
                    h=_parse_float(parts[5], path, lineno, "h"),
                ),
                present=parts[6] == "1",
            )
        )
    return out


def _pack_scores(scores: Sequence[ComparatorScore]) -> str:
    return ";".join(
        f"{_check_text_field(s.name, 'comparator name')}={_fmt_float(s.raw)}:{_fmt_float(s.normalized)}"
        for s in scores
    )


def _unpack_scores(field: str, path: str, lineno: int) -> Tuple[ComparatorScore, ...]:
    if not field:
        return ()
    out: List[ComparatorScore] = []
    for part in field.split(";"):
        try:
            name, rest = part.split("=", 1)
            raw_s, norm_s = rest.split(":", 1)
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: bad score entry {part!r}") from None
        out.append(
            ComparatorScore(
                name=name,
                raw=_parse_float(raw_s, path, lineno, "raw score"),
                normalized=_parse_float(norm_s, path, lineno, "normalized score"),
            )
        )
    return tuple(out)


def write_assignments(path: str, assignments: Sequence[Assignment]) -> None:
    lines = [_header(ASSIGNMENTS_KIND)]
    for a in assignments:
        lines.append(
            "\t".join(
                [
                    str(a.frame_index),
                    str(a.track_id),
                    MISS_TOKEN if a.detection_id is None else str(a.detection_id),
                    _fmt_float(a.box.x),
                    _fmt_float(a.box.y),
                    _fmt_float(a.box.w),
                    _fmt_float(a.box.h),
                    "" if a.fused is None else _fmt_float(a.fused),
                    _pack_scores(a.comparator_scores),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_assignments(path: str) -> List[Assignment]:
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    if not raw_lines:
        return []
    _check_header(raw_lines[0], ASSIGNMENTS_KIND, path)
    out: List[Assignment] = []
    for lineno, line in enumerate(raw_lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 9:
            raise ParseError(f"{path}: line {lineno}: expected 9 fields, got {len(parts)}")
        miss = parts[2] == MISS_TOKEN
        out.append(
            Assignment(
                track_id=_parse_int(parts[1], path, lineno, "track_id"),
                frame_index=_parse_int(parts[0], path, lineno, "frame_index"),
                detection_id=None if miss else _parse_int(parts[2], path, lineno, "detection_id"),
                box=BoundingBox(
                    x=_parse_float(parts[3], path, lineno, "x"),
                    y=_parse_float(parts[4], path, lineno, "y"),
                    w=_parse_float(parts[5], path, lineno, "w"),
                    h=_parse_float(parts[6], path, lineno, "h"),
                ),
                coasted=miss,
                fused=None if parts[7] == "" else _parse_float(parts[7], path, lineno, "fused"),
                comparator_scores=_unpack_scores(parts[8], path, lineno),
            )
        )
    return out


def assignments_to_tracks(assignments: Sequence[Assignment]) -> List[TrackRecord]:
    """Flatten an assignment log into plain track records for evaluation."""
    return [
        TrackRecord(
            track_id=a.track_id,
            frame_index=a.frame_index,
            box=a.box,
            present=True,
        )
        for a in assignments
    ]
