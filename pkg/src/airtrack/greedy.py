"""Single-hypothesis greedy association baseline.

Keeps one state per track.  Every frame, all gated (track, detection)
pairs are scored with the same comparator and fusion machinery the
multi-hypothesis associator uses, then assigned best-first one-to-one.
There is no deferred decision window: an ambiguous frame is resolved
immediately and never revisited, which is exactly the failure mode the
hypothesis-tree associator exists to avoid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .comparators import DeepEkfComparator, comparator_registry, fallback_fusion_config
from .core import BranchView, ComparatorScore, Detection, SignatureComparator
from .errors import FrameOrderViolation
from .fusion import FusionConfig, fuse, fused_log_score, normalize
from .kinematic import (
    KinematicState,
    chi2_gate_threshold,
    innovation_of,
    kf_init,
    kf_predict,
    kf_update,
    mahalanobis_sq,
)
from .mht import (
    CONFIRMED,
    DEAD,
    TENTATIVE,
    Assignment,
    MhtConfig,
    coast_box,
    validate_detections,
)


class GreedyTrack:
    """Mutable state of one greedily associated track."""

    __slots__ = (
        "track_id",
        "kinematic",
        "history",
        "misses",
        "n_obs",
        "consec_hits",
        "status",
        "log_score",
        "last_frame",
        "cache",
        "parent_cache",
    )

    def __init__(self, track_id: int, frame_index: int, det: Detection, kinematic: KinematicState, log_score: float) -> None:
        self.track_id = track_id
        self.kinematic = kinematic
        self.history: List[Tuple[int, Detection]] = [(frame_index, det)]
        self.misses = 0
        self.n_obs = 1
        self.consec_hits = 1
        self.status = TENTATIVE
        self.log_score = log_score
        self.last_frame = frame_index
        # Scratch dicts comparators use for incremental encodings; rotated
        # on every association so they always describe history[:-1] and
        # history respectively, mirroring hypothesis-tree node caches.
        self.cache: Dict[str, object] = {}
        self.parent_cache: Optional[Dict[str, object]] = None


@dataclass(frozen=True)
class GreedyFrameResult:
    frame_index: int
    assignments: Tuple[Assignment, ...]
    spawned: Tuple[int, ...]
    died: Tuple[int, ...]


@dataclass(frozen=True)
class _Candidate:
    fused: float
    track_id: int
    detection_id: int
    log_gain: float
    scores: Tuple[ComparatorScore, ...]
    detection: Detection


class GreedyTracker:
    """Online greedy tracker over per-frame detections.

    Accepts the same configuration as the multi-hypothesis tracker;
    the hypothesis-tree knobs (scan depth, leaf cap) are simply unused.
    """

    def __init__(
        self,
        config: MhtConfig,
        fusion: FusionConfig,
        comparators: Sequence[SignatureComparator] = (),
    ) -> None:
        self.cfg = config
        self.fusion = fusion
        self._comparators = comparator_registry(comparators, fusion)
        self._fallback_fusion = fallback_fusion_config(fusion, config.noise, config.gate_prob)
        self._gate_threshold = chi2_gate_threshold(config.gate_prob)
        self.tracks: Dict[int, GreedyTrack] = {}
        self._next_track = 1
        self._last_frame: Optional[int] = None

    def _dekf_min_history(self) -> int:
        comp = self._comparators.get("dekf")
        if isinstance(comp, DeepEkfComparator):
            return comp.min_history
        return 2

    def _live_tracks(self) -> List[GreedyTrack]:
        return [t for t in self.tracks.values() if t.status != DEAD]

    def _score_pairs(
        self,
        frame_index: int,
        detections: Sequence[Detection],
        predicted: Dict[int, KinematicState],
    ) -> List[_Candidate]:
        cfg = self.cfg
        min_hist = self._dekf_min_history()
        candidates: List[_Candidate] = []
        for track in self._live_tracks():
            pred = predicted[track.track_id]
            dt = frame_index - track.last_frame
            use_fallback = (
                "dekf" in self.fusion.weights and len(track.history) < min_hist
            )
            active = self._fallback_fusion if use_fallback else self.fusion
            history = tuple(track.history)
            for det in detections:
                nu, S = innovation_of(pred, det, cfg.noise)
                if mahalanobis_sq(nu, S) > self._gate_threshold:
                    continue
                view = BranchView(
                    key=track.track_id,
                    history=history,
                    predicted_mean=pred.mean,
                    predicted_cov=pred.cov,
                    innovation=nu,
                    innovation_cov=S,
                    dt=dt,
                    cache=track.cache,
                    parent_cache=track.parent_cache,
                )
                scores: Dict[str, ComparatorScore] = {}
                for name in active.weights:
                    raw = self._comparators[name].score(view, det)
                    scores[name] = ComparatorScore(
                        name=name, raw=raw, normalized=normalize(raw, active.normalizers[name])
                    )
                fused = fuse(scores, active)
                candidates.append(
                    _Candidate(
                        fused=fused,
                        track_id=track.track_id,
                        detection_id=det.detection_id,
                        log_gain=fused_log_score(fused, active.log_floor),
                        scores=tuple(scores.values()),
                        detection=det,
                    )
                )
        return candidates

    def process_frame(self, frame_index: int, detections: Sequence[Detection]) -> GreedyFrameResult:
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise FrameOrderViolation(
                f"frame {frame_index} after frame {self._last_frame}; frames must increase"
            )
        validate_detections(frame_index, detections)
        self._last_frame = frame_index

        for comp in self._comparators.values():
            comp.begin_frame(frame_index, detections)

        predicted: Dict[int, KinematicState] = {}
        for track in self._live_tracks():
            dt = float(frame_index - track.last_frame)
            predicted[track.track_id] = kf_predict(track.kinematic, dt, self.cfg.noise)

        candidates = self._score_pairs(frame_index, detections, predicted)
        candidates.sort(key=lambda c: (-c.fused, c.track_id, c.detection_id))

        taken_tracks: Set[int] = set()
        taken_dets: Set[int] = set()
        chosen: Dict[int, _Candidate] = {}
        for cand in candidates:
            if cand.track_id in taken_tracks or cand.detection_id in taken_dets:
                continue
            taken_tracks.add(cand.track_id)
            taken_dets.add(cand.detection_id)
            chosen[cand.track_id] = cand

        died: List[int] = []
        assignments: List[Assignment] = []
        for track in self._live_tracks():
            cand = chosen.get(track.track_id)
            if cand is not None:
                posterior, _, _ = kf_update(
                    predicted[track.track_id], cand.detection, self.cfg.noise
                )
                track.kinematic = posterior
                track.history.append((frame_index, cand.detection))
                track.misses = 0
                track.n_obs += 1
                track.consec_hits += 1
                track.log_score += cand.log_gain
                track.parent_cache = track.cache
                track.cache = {}
                if track.status == TENTATIVE and track.consec_hits >= self.cfg.confirm_hits:
                    track.status = CONFIRMED
            else:
                track.kinematic = predicted[track.track_id]
                track.misses += 1
                track.consec_hits = 0
                track.log_score += self.cfg.miss_log_penalty
                if track.misses > self.cfg.max_misses:
                    track.status = DEAD
                    died.append(track.track_id)
            track.last_frame = frame_index
            if track.status != CONFIRMED:
                continue
            hit = cand is not None
            assignments.append(
                Assignment(
                    track_id=track.track_id,
                    frame_index=frame_index,
                    detection_id=cand.detection_id if hit else None,
                    box=cand.detection.box if hit else coast_box(track.kinematic, track.history),
                    coasted=not hit,
                    fused=cand.fused if hit else None,
                    comparator_scores=cand.scores if hit else (),
                )
            )

        spawned: List[int] = []
        for det in detections:
            if det.detection_id in taken_dets:
                continue
            track = GreedyTrack(
                track_id=self._next_track,
                frame_index=frame_index,
                det=det,
                kinematic=kf_init(det.box, self.cfg.noise),
                log_score=self.cfg.new_track_log_penalty,
            )
            self._next_track += 1
            if self.cfg.confirm_hits <= track.consec_hits:
                track.status = CONFIRMED
                # A track confirmed on its spawn frame emits immediately,
                # matching the hypothesis-tree associator's behavior.
                assignments.append(
                    Assignment(
                        track_id=track.track_id,
                        frame_index=frame_index,
                        detection_id=det.detection_id,
                        box=det.box,
                        coasted=False,
                    )
                )
            self.tracks[track.track_id] = track
            spawned.append(track.track_id)

        return GreedyFrameResult(
            frame_index=frame_index,
            assignments=tuple(assignments),
            spawned=tuple(spawned),
            died=tuple(died),
        )
