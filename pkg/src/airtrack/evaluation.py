"""Tracking quality metrics: id mapping, overlap curves, expected
average overlap, and detection-level summaries.

Ground truth and predictions are flat sequences of per-frame box
records.  A scan over frames produces match events (IoU at or above a
threshold, one-to-one per frame); the mapping stage turns events into
per-ground-truth credited predicted ids under one of two crediting
modes; the overlap stage scores credited boxes against ground truth.

Crediting modes:

* ``ouid``: each ground-truth id is credited exactly one predicted id,
  the first one that ever matched it.
* ``auid``: later predicted ids are also credited, provided they never
  matched a different ground-truth id; the first-credited id is always
  kept even if it wanders later, so ouid credit is a subset of auid
  credit and ouid EAO can never exceed auid EAO.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .core import BoundingBox, iou
from .errors import EmptyGroundTruth

OUID = "ouid"
AUID = "auid"
DEFAULT_IOU_MIN = 0.5


@dataclass(frozen=True)
class TrackRecord:
    """One id's box at one frame.  Ground truth uses ``present=False``
    for frames inside an absence window; predictions are always
    emissions (present True)."""

    track_id: int
    frame_index: int
    box: BoundingBox
    present: bool = True


@dataclass(frozen=True)
class CreditSpan:
    """A predicted id credited to a ground-truth id, valid from the
    frame of their first match onward."""

    pred_id: int
    first_frame: int


@dataclass(frozen=True)
class IdMapping:
    mode: str
    assignment: Mapping[int, Tuple[CreditSpan, ...]]  # gt id -> credited spans


@dataclass(frozen=True)
class EaoResult:
    value: float
    interval: Tuple[int, int]
    per_track: Mapping[int, float]


@dataclass(frozen=True)
class SummaryMetrics:
    precision: float
    recall: float
    absence_accuracy: float


@dataclass(frozen=True)
class MatchEvent:
    frame_index: int
    gt_id: int
    pred_id: int
    overlap: float


def _validate(records: Sequence[TrackRecord], label: str) -> None:
    seen: Set[Tuple[int, int]] = set()
    for r in records:
        key = (r.track_id, r.frame_index)
        if key in seen:
            raise ValueError(f"duplicate {label} record for id {r.track_id} frame {r.frame_index}")
        seen.add(key)


def _by_frame(records: Sequence[TrackRecord]) -> Dict[int, List[TrackRecord]]:
    out: Dict[int, List[TrackRecord]] = {}
    for r in records:
        out.setdefault(r.frame_index, []).append(r)
    return out


def match_events(
    gt: Sequence[TrackRecord],
    pred: Sequence[TrackRecord],
    iou_min: float = DEFAULT_IOU_MIN,
) -> List[MatchEvent]:
    """One-to-one greedy IoU matches per frame, frames ascending.

    Within a frame, candidate pairs at or above ``iou_min`` are taken
    in order of descending overlap (ties by gt id then predicted id),
    each gt and each predicted id matching at most once per frame.
    Absent ground-truth rows do not participate.
    """
    _validate(gt, "ground-truth")
    _validate(pred, "prediction")
    gt_frames = _by_frame([r for r in gt if r.present])
    pred_frames = _by_frame(pred)
    events: List[MatchEvent] = []
    for frame in sorted(set(gt_frames) | set(pred_frames)):
        g_rows = gt_frames.get(frame, [])
        p_rows = pred_frames.get(frame, [])
        candidates: List[Tuple[float, int, int]] = []
        for g in g_rows:
            for p in p_rows:
                o = iou(g.box, p.box)
                if o >= iou_min:
                    candidates.append((o, g.track_id, p.track_id))
        candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
        used_g: Set[int] = set()
        used_p: Set[int] = set()
        for o, gid, pid in candidates:
            if gid in used_g or pid in used_p:
                continue
            used_g.add(gid)
            used_p.add(pid)
            events.append(MatchEvent(frame_index=frame, gt_id=gid, pred_id=pid, overlap=o))
    return events


def map_ids(
    gt: Sequence[TrackRecord],
    pred: Sequence[TrackRecord],
    mode: str = OUID,
    iou_min: float = DEFAULT_IOU_MIN,
) -> IdMapping:
    """Credit predicted ids to ground-truth ids from the match events."""
    if mode not in (OUID, AUID):
        raise ValueError(f"mode must be {OUID!r} or {AUID!r}, got {mode!r}")
    if not any(r.present for r in gt):
        raise EmptyGroundTruth("id mapping needs at least one present ground-truth record")
    events = match_events(gt, pred, iou_min)

    # A binding forms only when the gt is still unbound and the predicted
    # id is not already bound to a different gt; both then freeze.
    anchor_of_gt: Dict[int, CreditSpan] = {}
    bound_gt_of_pred: Dict[int, int] = {}
    gts_of_pred: Dict[int, Set[int]] = {}
    first_match: Dict[Tuple[int, int], int] = {}  # (gt, pred) -> frame
    for ev in events:
        gts_of_pred.setdefault(ev.pred_id, set()).add(ev.gt_id)
        first_match.setdefault((ev.gt_id, ev.pred_id), ev.frame_index)
        if ev.gt_id in anchor_of_gt or ev.pred_id in bound_gt_of_pred:
            continue
        anchor_of_gt[ev.gt_id] = CreditSpan(ev.pred_id, ev.frame_index)
        bound_gt_of_pred[ev.pred_id] = ev.gt_id

    assignment: Dict[int, Tuple[CreditSpan, ...]] = {}
    gt_ids = sorted({r.track_id for r in gt})
    for gid in gt_ids:
        anchor = anchor_of_gt.get(gid)
        if mode == OUID:
            assignment[gid] = (anchor,) if anchor is not None else ()
            continue
        spans: List[CreditSpan] = []
        for (g, p), frame in first_match.items():
            if g != gid:
                continue
            # The anchor is kept even if it wanders later; any other id
            # must have matched this ground truth exclusively.
            if (anchor is not None and p == anchor.pred_id) or gts_of_pred[p] == {gid}:
                spans.append(CreditSpan(p, frame))
        spans.sort(key=lambda s: (s.first_frame, s.pred_id))
        assignment[gid] = tuple(spans)
    return IdMapping(mode=mode, assignment=assignment)


def _gt_present_frames(gt: Sequence[TrackRecord], gt_id: int) -> List[TrackRecord]:
    rows = [r for r in gt if r.track_id == gt_id and r.present]
    rows.sort(key=lambda r: r.frame_index)
    return rows


def overlap_curve(
    gt: Sequence[TrackRecord],
    pred: Sequence[TrackRecord],
    gt_id: int,
    mapping: IdMapping,
) -> np.ndarray:
    """Per-present-frame best overlap of valid credited boxes, in [0, 1]."""
    rows = _gt_present_frames(gt, gt_id)
    spans = mapping.assignment.get(gt_id, ())
    pred_boxes: Dict[Tuple[int, int], BoundingBox] = {
        (r.track_id, r.frame_index): r.box for r in pred
    }
    phi = np.zeros(len(rows))
    for i, row in enumerate(rows):
        best = 0.0
        for span in spans:
            if row.frame_index < span.first_frame:
                continue
            box = pred_boxes.get((span.pred_id, row.frame_index))
            if box is not None:
                best = max(best, iou(row.box, box))
        phi[i] = best
    return phi


def _silverman_bandwidth(lengths: np.ndarray) -> float:
    n = lengths.size
    std = float(np.std(lengths, ddof=1))
    q1, q3 = np.percentile(lengths, [25.0, 75.0])
    iqr = float(q3 - q1)
    spread = min(std, iqr / 1.34) if iqr > 0.0 else std
    return 0.9 * spread * n ** (-0.2)


def kde_interval(lengths: Sequence[int]) -> Tuple[int, int]:
    """Sequence-length interval for the expected-overlap average.

    A Gaussian kernel density estimate over the track lengths
    (Silverman bandwidth) is evaluated on the integer grid 1..max;
    the interval is the contiguous region around the density mode
    holding at least half the grid mass, grown one cell at a time
    toward the denser side (ties toward shorter lengths).  With fewer
    than 3 distinct lengths the estimate is degenerate and the
    interval spans [1, max].
    """
    arr = np.asarray(sorted(lengths), dtype=np.float64)
    if arr.size == 0:
        raise EmptyGroundTruth("interval needs at least one track length")
    if np.any(arr < 1):
        raise ValueError("track lengths must be >= 1")
    max_len = int(arr.max())
    if np.unique(arr).size < 3:
        return (1, max_len)
    h = _silverman_bandwidth(arr)
    grid = np.arange(1, max_len + 1, dtype=np.float64)
    density = np.exp(-0.5 * ((grid[:, None] - arr[None, :]) / h) ** 2).sum(axis=1)
    total = float(density.sum())
    mode = int(np.argmax(density))
    lo = hi = mode
    mass = float(density[mode])
    while mass / total < 0.5 and (lo > 0 or hi < max_len - 1):
        left = density[lo - 1] if lo > 0 else -math.inf
        right = density[hi + 1] if hi < max_len - 1 else -math.inf
        if left >= right:
            lo -= 1
            mass += float(density[lo])
        else:
            hi += 1
            mass += float(density[hi])
    return (int(grid[lo]), int(grid[hi]))


def eao(
    gt: Sequence[TrackRecord],
    pred: Sequence[TrackRecord],
    mapping: IdMapping,
    interval: Optional[Tuple[int, int]] = None,
) -> EaoResult:
    """Expected average overlap under a crediting mapping.

    Per ground-truth track, the average overlap at sequence length Ns
    is the mean of the first min(Ns, track length) present-frame
    overlaps; the track's score averages that over the length interval
    (from the KDE over all track lengths unless given), and the final
    value averages the tracks.
    """
    gt_ids = sorted({r.track_id for r in gt if r.present})
    if not gt_ids:
        raise EmptyGroundTruth("EAO needs at least one present ground-truth record")
    lengths = [len(_gt_present_frames(gt, gid)) for gid in gt_ids]
    if interval is None:
        interval = kde_interval(lengths)
    lo, hi = interval
    if not (1 <= lo <= hi):
        raise ValueError(f"invalid interval {interval}")
    per_track: Dict[int, float] = {}
    for gid in gt_ids:
        phi = overlap_curve(gt, pred, gid, mapping)
        length = phi.size
        means = []
        for ns in range(lo, hi + 1):
            k = min(ns, length)
            means.append(float(phi[:k].mean()) if k > 0 else 0.0)
        per_track[gid] = float(np.mean(means))
    value = float(np.mean([per_track[g] for g in gt_ids]))
    return EaoResult(value=value, interval=(lo, hi), per_track=per_track)


def summary_metrics(
    gt: Sequence[TrackRecord],
    pred: Sequence[TrackRecord],
    mapping: IdMapping,
    iou_min: float = DEFAULT_IOU_MIN,
) -> SummaryMetrics:
    """Detection-level precision/recall of credited boxes, plus the
    fraction of absent ground-truth frames with no credited emission.

    A predicted box is a true positive when its id is credited (and
    valid) for some ground truth present that frame with overlap at or
    above the threshold.  With no predictions at all, precision is 1.0
    by the empty-set convention.
    """
    _validate(gt, "ground-truth")
    _validate(pred, "prediction")
    credited_of_pred: Dict[int, List[Tuple[int, CreditSpan]]] = {}
    for gid, spans in mapping.assignment.items():
        for span in spans:
            credited_of_pred.setdefault(span.pred_id, []).append((gid, span))

    gt_present: Dict[Tuple[int, int], BoundingBox] = {
        (r.track_id, r.frame_index): r.box for r in gt if r.present
    }
    tp_boxes = 0
    matched_gt: Set[Tuple[int, int]] = set()
    for r in pred:
        hit = False
        for gid, span in credited_of_pred.get(r.track_id, []):
            if r.frame_index < span.first_frame:
                continue
            box = gt_present.get((gid, r.frame_index))
            if box is not None and iou(box, r.box) >= iou_min:
                hit = True
                matched_gt.add((gid, r.frame_index))
        if hit:
            tp_boxes += 1
    precision = tp_boxes / len(pred) if pred else 1.0
    n_gt = len(gt_present)
    recall = len(matched_gt) / n_gt if n_gt else 0.0

    pred_frames_of_id: Dict[int, Set[int]] = {}
    for r in pred:
        pred_frames_of_id.setdefault(r.track_id, set()).add(r.frame_index)
    absent_total = 0
    absent_clean = 0
    for r in gt:
        if r.present:
            continue
        absent_total += 1
        emitted = False
        for span in mapping.assignment.get(r.track_id, ()):
            if r.frame_index < span.first_frame:
                continue
            if r.frame_index in pred_frames_of_id.get(span.pred_id, ()):
                emitted = True
                break
        if not emitted:
            absent_clean += 1
    absence_accuracy = absent_clean / absent_total if absent_total else 1.0
    return SummaryMetrics(
        precision=precision, recall=recall, absence_accuracy=absence_accuracy
    )


@dataclass(frozen=True)
class EvaluationReport:
    ouid_eao: EaoResult
    auid_eao: EaoResult
    ouid_metrics: SummaryMetrics
    auid_metrics: SummaryMetrics
    iou_min: float

    def as_table(self) -> str:
        header = f"{'mode':6s} {'eao':>8s} {'precision':>10s} {'recall':>8s} {'absence':>8s}"
        rows = [header, "-" * len(header)]
        for mode, e, m in (
            (OUID, self.ouid_eao, self.ouid_metrics),
            (AUID, self.auid_eao, self.auid_metrics),
        ):
            rows.append(
                f"{mode:6s} {e.value:8.4f} {m.precision:10.4f} "
                f"{m.recall:8.4f} {m.absence_accuracy:8.4f}"
            )
        return "\n".join(rows)


def evaluate(
    gt: Sequence[TrackRecord],
    pred: Sequence[TrackRecord],
    iou_min: float = DEFAULT_IOU_MIN,
) -> EvaluationReport:
    """Both crediting modes plus summary metrics in one report."""
    ouid_map = map_ids(gt, pred, OUID, iou_min)
    auid_map = map_ids(gt, pred, AUID, iou_min)
    return EvaluationReport(
        ouid_eao=eao(gt, pred, ouid_map),
        auid_eao=eao(gt, pred, auid_map),
        ouid_metrics=summary_metrics(gt, pred, ouid_map, iou_min),
        auid_metrics=summary_metrics(gt, pred, auid_map, iou_min),
        iou_min=iou_min,
    )
