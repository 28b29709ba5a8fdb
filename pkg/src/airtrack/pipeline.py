"""End-to-end plumbing: build trackers from run configs, stream frames,
evaluate results, and train the learned comparators on generated data.

Everything here is deterministic given the config seed; tracking itself
draws no randomness at all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import load_deepekf_checkpoint, load_siamese_checkpoint
from .comparators import (
    DeepEkfComparator,
    EkfComparator,
    SiameseComparator,
    SsdComparator,
    default_normalizers,
)
from .config import MHT, RunConfig, resolve_checkpoint
from .core import BoundingBox, Chip, Detection
from .deepekf import (
    DeepEkfConfig,
    DeepEkfModel,
    TrainItem,
    decode_with_attention,
    dekf_affinity,
    dekf_train_step,
    encode_measurement,
    encode_sequence,
    featurize,
)
from .errors import EmptySequence
from .evaluation import EvaluationReport, TrackRecord, evaluate
from .fusion import EXP_NEG_SCALED, FusionConfig, NormalizerSpec
from .greedy import GreedyFrameResult, GreedyTracker
from .io_formats import assignments_to_tracks
from .mht import Assignment, FrameResult, MhtTracker
from .scenario import (
    CROSSING,
    CURVED,
    LINEAR,
    ObjectSpec,
    gain_adjusted,
    render_chip,
    runners_spec,
    trajectory,
)
from .visual import (
    SiameseConfig,
    SiameseModel,
    contrastive_train_step,
    evaluate_reid,
)

AnyFrameResult = Union[FrameResult, GreedyFrameResult]


# -- tracker construction ----------------------------------------------

def build_comparators(
    cfg: RunConfig, base_dir: Optional[str] = None
) -> Tuple[List[object], FusionConfig]:
    """Instantiate the configured comparators (loading checkpoints for the
    model-backed ones) and the fusion config that weighs them."""
    comparators: List[object] = []
    dekf_model: Optional[DeepEkfModel] = None
    for name in cfg.comparators:
        if name == "ekf":
            comparators.append(EkfComparator())
        elif name == "ssd":
            comparators.append(SsdComparator(size=cfg.chip_size))
        elif name == "dekf":
            dekf_model = load_deepekf_checkpoint(resolve_checkpoint(cfg, "dekf", base_dir))
            comparators.append(DeepEkfComparator(dekf_model, frame_size=cfg.frame_size))
        elif name in ("siamese", "siamese_attn"):
            model = load_siamese_checkpoint(resolve_checkpoint(cfg, name, base_dir))
            wants_attention = name == "siamese_attn"
            if model.cfg.attention != wants_attention:
                raise ValueError(
                    f"comparator {name!r} expects a model with attention="
                    f"{wants_attention}, checkpoint has attention={model.cfg.attention}"
                )
            comparators.append(SiameseComparator(model, name=name))

    weights = dict(cfg.weights) if cfg.weights else {name: 1.0 for name in cfg.comparators}
    norm_kwargs = {}
    if dekf_model is not None:
        norm_kwargs = {
            "meas_var_floor": dekf_model.cfg.meas_var_floor,
            "latent_dim": dekf_model.cfg.latent_dim,
        }
    normalizers = default_normalizers(cfg.noise, cfg.mht.gate_prob, **norm_kwargs)
    ssd_pixels = cfg.chip_size[0] * cfg.chip_size[1] * 3
    normalizers["ssd"] = NormalizerSpec(EXP_NEG_SCALED, 0.02 * ssd_pixels)
    normalizers.update(cfg.normalizer_overrides)
    fusion = FusionConfig(weights=weights, normalizers=normalizers)
    return comparators, fusion


def build_tracker(
    cfg: RunConfig, base_dir: Optional[str] = None
) -> Union[MhtTracker, GreedyTracker]:
    comparators, fusion = build_comparators(cfg, base_dir)
    if cfg.associator == MHT:
        return MhtTracker(cfg.mht, fusion, comparators)
    return GreedyTracker(cfg.mht, fusion, comparators)


# -- tracking runs -----------------------------------------------------

@dataclass(frozen=True)
class TrackingRun:
    """Everything a tracking pass produced, in emission order."""

    frame_results: Tuple[AnyFrameResult, ...]
    assignments: Tuple[Assignment, ...]
    records: Tuple[TrackRecord, ...]


def frames_by_index(frames: Sequence[Sequence[Detection]]) -> Dict[int, List[Detection]]:
    """Group detections by their own frame index; empty groups drop out."""
    groups: Dict[int, List[Detection]] = {}
    for group in frames:
        for det in group:
            groups.setdefault(det.frame_index, []).append(det)
    return groups


def run_tracking(
    cfg: RunConfig,
    frames: Sequence[Sequence[Detection]],
    base_dir: Optional[str] = None,
    n_frames: Optional[int] = None,
) -> TrackingRun:
    """Stream detections through the configured tracker.

    Frames 0 through the last populated index (or ``n_frames - 1`` when
    given) are processed in order; frames without detections still
    advance the tracker so misses accumulate.
    """
    groups = frames_by_index(frames)
    if n_frames is None:
        n_frames = (max(groups) + 1) if groups else 0
    tracker = build_tracker(cfg, base_dir)
    results: List[AnyFrameResult] = []
    for fi in range(n_frames):
        results.append(tracker.process_frame(fi, groups.get(fi, [])))
    flat: List[Assignment] = []
    for res in results:
        flat.extend(res.assignments)
    return TrackingRun(
        frame_results=tuple(results),
        assignments=tuple(flat),
        records=tuple(assignments_to_tracks(flat)),
    )


def run_eval(
    gt: Sequence[TrackRecord],
    pred: Sequence[TrackRecord],
    iou_min: float = 0.5,
) -> EvaluationReport:
    """Score a tracking output against ground truth in both crediting
    modes; the report's ``as_table`` renders one combined table."""
    return evaluate(gt, pred, iou_min)


def _sample_chip(
    obj: ObjectSpec,
    frame: int,
    chip_size: int,
    noise_std: float,
    gain_jitter: float,
    rng: np.random.Generator,
) -> Chip:
    chip = render_chip(obj, frame, chip_size, noise_std=noise_std, rng=rng)
    if gain_jitter > 0.0:
        chip = gain_adjusted(chip, float(rng.normal(1.0, gain_jitter)))
    return chip


# -- sequence-predictor training data ----------------------------------

def motion_train_items(
    n_items: int,
    frame_size: Tuple[int, int] = (256, 256),
    history_len: int = 6,
    horizons: Tuple[int, ...] = (1, 2, 3),
    speed_range: Tuple[float, float] = (1.0, 3.0),
    turn_rate_max: float = 0.0,
    bounce_prob: float = 0.0,
    measurement_std: float = 0.5,
    chip_noise: float = 0.02,
    gain_jitter: float = 0.0,
    chip_size: int = 16,
    n_textures: int = 40,
    size: Tuple[float, float] = (14.0, 14.0),
    seed: int = 0,
) -> List[TrainItem]:
    """Training sequences from procedurally generated single-object paths.

    Each item observes ``history_len`` consecutive noisy detections and
    targets the clean normalized center ``horizon`` frames past the
    last one.  With ``turn_rate_max`` zero every path is constant
    velocity; otherwise turn rates are drawn uniformly, and with
    ``bounce_prob`` some paths reflect heading mid-history so the
    encoder sees direction reversals.
    """
    if n_items <= 0:
        raise EmptySequence("n_items must be positive")
    rng = np.random.default_rng(seed)
    W, H = frame_size
    margin = 60.0
    items: List[TrainItem] = []
    for k in range(n_items):
        horizon = int(rng.choice(horizons))
        total = history_len + horizon
        speed = float(rng.uniform(*speed_range))
        heading = float(rng.uniform(0.0, 2.0 * math.pi))
        turn = 0.0 if turn_rate_max == 0.0 else float(rng.uniform(-turn_rate_max, turn_rate_max))
        bounce = bounce_prob > 0.0 and rng.uniform() < bounce_prob
        if bounce:
            motion = CROSSING
            bounce_frame: Optional[int] = history_len // 2
        elif turn != 0.0:
            motion = CURVED
            bounce_frame = None
        else:
            motion = LINEAR
            turn = 0.0
            bounce_frame = None
        obj = ObjectSpec(
            motion=motion,
            texture_id=int(rng.integers(0, n_textures)),
            anchor=(float(rng.uniform(margin, W - margin)), float(rng.uniform(margin, H - margin))),
            anchor_frame=total // 2,
            speed=speed,
            heading=heading,
            turn_rate=turn,
            bounce_frame=bounce_frame,
            size=size,
        )
        path = trajectory(obj, total)
        dets: List[Detection] = []
        for f in range(history_len):
            cx = path[f, 0] + rng.normal(0.0, measurement_std)
            cy = path[f, 1] + rng.normal(0.0, measurement_std)
            dets.append(
                Detection(
                    frame_index=f,
                    detection_id=0,
                    box=BoundingBox(x=cx - size[0] / 2, y=cy - size[1] / 2, w=size[0], h=size[1]),
                    chip=_sample_chip(obj, f, chip_size, chip_noise, gain_jitter, rng),
                )
            )
        ff = history_len - 1 + horizon
        fx = path[ff, 0] + rng.normal(0.0, measurement_std)
        fy = path[ff, 1] + rng.normal(0.0, measurement_std)
        future = Detection(
            frame_index=ff,
            detection_id=0,
            box=BoundingBox(x=fx - size[0] / 2, y=fy - size[1] / 2, w=size[0], h=size[1]),
            chip=_sample_chip(obj, ff, chip_size, chip_noise, gain_jitter, rng),
        )
        target = np.array([path[ff, 0] / W, path[ff, 1] / H])
        items.append(
            TrainItem(
                detections=tuple(dets),
                dts=tuple([0] + [1] * (history_len - 1)),
                future_detection=future,
                horizon=horizon,
                target=target,
            )
        )
    return items


def train_deepekf(
    items: Sequence[TrainItem],
    config: Optional[DeepEkfConfig] = None,
    steps: int = 500,
    batch_size: int = 8,
    frame_size: Tuple[int, int] = (256, 256),
    seed: int = 0,
) -> Tuple[DeepEkfModel, List[float]]:
    """Gradient-descend the sequence predictor on sampled minibatches;
    returns the model and the per-step pre-update losses."""
    if len(items) == 0:
        raise EmptySequence("no training items")
    model = DeepEkfModel(config or DeepEkfConfig(), seed=seed)
    rng = np.random.default_rng(seed + 1)
    losses: List[float] = []
    for _ in range(steps):
        take = min(batch_size, len(items))
        idx = rng.choice(len(items), size=take, replace=False)
        batch = [items[int(i)] for i in idx]
        losses.append(dekf_train_step(model, batch, frame_size))
    return model, losses


def dekf_rank_accuracy(
    model: DeepEkfModel,
    items: Sequence[TrainItem],
    frame_size: Tuple[int, int] = (256, 256),
    n_decoys: int = 3,
    offset_range: Tuple[float, float] = (10.0, 30.0),
    seed: int = 0,
) -> float:
    """Fraction of items whose true continuation out-scores position
    decoys (the same observation displaced by a random offset)."""
    if len(items) == 0:
        raise EmptySequence("no items to rank")
    rng = np.random.default_rng(seed)
    hits = 0
    for item in items:
        feats = [
            featurize(model, det, dt, frame_size)
            for det, dt in zip(item.detections, item.dts)
        ]
        enc = encode_sequence(model, feats)
        pred = decode_with_attention(model, enc, item.horizon)
        candidates = [item.future_detection]
        true_box = item.future_detection.box
        for _ in range(n_decoys):
            r = rng.uniform(*offset_range)
            th = rng.uniform(0.0, 2.0 * math.pi)
            candidates.append(
                Detection(
                    frame_index=item.future_detection.frame_index,
                    detection_id=0,
                    box=BoundingBox(
                        x=true_box.x + r * math.cos(th),
                        y=true_box.y + r * math.sin(th),
                        w=true_box.w,
                        h=true_box.h,
                    ),
                    chip=item.future_detection.chip,
                )
            )
        scores = []
        for cand in candidates:
            feat = featurize(model, cand, item.horizon, frame_size)
            latent = encode_measurement(model, feat, init=enc)
            scores.append(dekf_affinity(pred, latent, model.cfg.meas_var_floor))
        if max(range(len(scores)), key=lambda i: scores[i]) == 0:
            hits += 1
    return hits / len(items)


# -- embedding-model training data -------------------------------------

def texture_identities(
    n: int = 10, seed: int = 0, jitter: float = 0.15
) -> List[ObjectSpec]:
    """Distinct procedural appearance identities (texture plus a fixed
    per-identity color cast); motion fields are placeholders."""
    rng = np.random.default_rng(seed)
    out: List[ObjectSpec] = []
    for i in range(n):
        gains = tuple(float(g) for g in rng.uniform(1.0 - jitter, 1.0 + jitter, size=3))
        out.append(
            ObjectSpec(
                motion=LINEAR,
                texture_id=i,
                anchor=(0.0, 0.0),
                anchor_frame=0,
                speed=1.0,
                heading=0.0,
                color_jitter=gains,
            )
        )
    return out


def twin_identities(seed: int = 0) -> List[ObjectSpec]:
    """The near-identical pair from the runner preset: same texture,
    distinguishable only by a small stamped patch."""
    return list(runners_spec(seed).objects)


def contrastive_pairs(
    identities: Sequence[ObjectSpec],
    n_pairs: int,
    chip_size: int = 16,
    frame_range: int = 48,
    noise_std: float = 0.02,
    gain_jitter: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> List[Tuple[Chip, Chip, bool]]:
    """Alternating positive/negative chip pairs; positives are the same
    identity rendered at different frames (phase drift plus noise)."""
    if len(identities) < 2:
        raise ValueError("need at least two identities for contrastive pairs")
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs: List[Tuple[Chip, Chip, bool]] = []
    for k in range(n_pairs):
        same = k % 2 == 0
        if same:
            i = j = int(rng.integers(0, len(identities)))
        else:
            i = int(rng.integers(0, len(identities)))
            j = int(rng.integers(0, len(identities) - 1))
            if j >= i:
                j += 1
        fa = int(rng.integers(0, frame_range))
        fb = int(rng.integers(0, frame_range))
        pairs.append(
            (
                _sample_chip(identities[i], fa, chip_size, noise_std, gain_jitter, rng),
                _sample_chip(identities[j], fb, chip_size, noise_std, gain_jitter, rng),
                same,
            )
        )
    return pairs


def train_siamese(
    identities: Sequence[ObjectSpec],
    config: Optional[SiameseConfig] = None,
    steps: int = 1000,
    pairs_per_step: int = 8,
    chip_size: int = 16,
    frame_range: int = 48,
    noise_std: float = 0.02,
    gain_jitter: float = 0.0,
    seed: int = 0,
) -> Tuple[SiameseModel, List[float]]:
    """Contrastive training on procedural identity chips; returns the
    model and per-step pre-update losses."""
    model = SiameseModel(config or SiameseConfig(), seed=seed)
    rng = np.random.default_rng(seed + 1)
    losses: List[float] = []
    for _ in range(steps):
        batch = contrastive_pairs(
            identities, pairs_per_step, chip_size, frame_range, noise_std, gain_jitter, rng
        )
        losses.append(contrastive_train_step(model, batch))
    return model, losses


def reid_sets(
    identities: Sequence[ObjectSpec],
    chip_size: int = 16,
    gallery_per_id: int = 4,
    queries_per_id: int = 4,
    frame_range: int = 48,
    noise_std: float = 0.02,
    gain_jitter: float = 0.0,
    seed: int = 0,
) -> Tuple[List[Tuple[int, Chip]], List[Tuple[int, Chip]]]:
    """Disjoint gallery and query chip sets labeled by identity index."""
    rng = np.random.default_rng(seed)
    gallery: List[Tuple[int, Chip]] = []
    queries: List[Tuple[int, Chip]] = []
    for ident, obj in enumerate(identities):
        frames = rng.choice(frame_range, size=gallery_per_id + queries_per_id, replace=False)
        for f in frames[:gallery_per_id]:
            gallery.append((ident, _sample_chip(obj, int(f), chip_size, noise_std, gain_jitter, rng)))
        for f in frames[gallery_per_id:]:
            queries.append((ident, _sample_chip(obj, int(f), chip_size, noise_std, gain_jitter, rng)))
    return gallery, queries


def reid_eval(
    model: SiameseModel,
    identities: Sequence[ObjectSpec],
    chip_size: int = 16,
    gallery_per_id: int = 4,
    queries_per_id: int = 4,
    seed: int = 0,
):
    """Retrieval quality of the embedding on held-out identity chips."""
    gallery, queries = reid_sets(
        identities,
        chip_size=chip_size,
        gallery_per_id=gallery_per_id,
        queries_per_id=queries_per_id,
        seed=seed,
    )
    return evaluate_reid(model, gallery, queries)
