"""Signature comparator adapters used by the associators.

Each adapter wraps one similarity model behind the common
``SignatureComparator`` protocol: a kinematic filter likelihood, a
learned latent-space predictor, raw pixel distance, and learned
embedding distance.  ``default_normalizers`` builds matching
normalization rules so raw outputs land on a shared [0, 1] scale.
"""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import deepekf
from .core import BranchView, Chip, Detection, SignatureComparator, resize_chip
from .deepekf import DeepEkfModel, EncoderOutput, FeatureVector
from .errors import MissingComparator
from .fusion import EXP_NEG_SCALED, LIKELIHOOD_RATIO, FusionConfig, NormalizerSpec
from .kinematic import NoiseConfig, chi2_gate_threshold, kf_likelihood
from .visual import SSD_SIZE, SiameseModel, embed_many

# Frames an appearance cache entry survives before eviction.
_CACHE_HORIZON = 64


class EkfComparator:
    """Gaussian measurement likelihood of the branch's kinematic filter."""

    def __init__(self, name: str = "ekf") -> None:
        self.name = name

    def begin_frame(self, frame_index: int, detections: Sequence[Detection]) -> None:
        pass

    def score(self, branch: BranchView, candidate: Detection) -> float:
        return kf_likelihood(branch.innovation, branch.innovation_cov)


class SsdComparator:
    """Sum of squared pixel differences between resized chips.

    Lower is better; pairs without a usable chip score the worst-case
    distance (every pixel off by the full intensity range).
    """

    def __init__(self, name: str = "ssd", size: Tuple[int, int] = SSD_SIZE) -> None:
        self.name = name
        self.size = size
        self._frame: Optional[int] = None
        self._candidates: Dict[int, Optional[np.ndarray]] = {}
        self._history: Dict[Tuple[int, int], Optional[np.ndarray]] = {}

    def _resized(self, chip: Optional[Chip]) -> Optional[np.ndarray]:
        if chip is None:
            return None
        return resize_chip(chip, self.size).pixels

    def worst_case(self, channels: int = 3) -> float:
        return float(self.size[0] * self.size[1] * channels)

    def begin_frame(self, frame_index: int, detections: Sequence[Detection]) -> None:
        self._frame = frame_index
        self._candidates = {d.detection_id: self._resized(d.chip) for d in detections}
        cutoff = frame_index - _CACHE_HORIZON
        self._history = {k: v for k, v in self._history.items() if k[0] >= cutoff}

    def _history_pixels(self, frame: int, det: Detection) -> Optional[np.ndarray]:
        key = (frame, det.detection_id)
        if key not in self._history:
            self._history[key] = self._resized(det.chip)
        return self._history[key]

    def score(self, branch: BranchView, candidate: Detection) -> float:
        cand = self._candidates.get(candidate.detection_id)
        if cand is None:
            cand = self._resized(candidate.chip)
        last_frame, last_det = branch.history[-1]
        ref = self._history_pixels(last_frame, last_det)
        if cand is None or ref is None:
            return self.worst_case()
        if cand.shape != ref.shape:
            return self.worst_case(max(cand.shape[2], ref.shape[2]))
        return float(np.sum((cand - ref) ** 2))


class SiameseComparator:
    """Euclidean distance between learned chip embeddings (lower is better).

    The branch side is a temporal signature: the mean embedding of the
    branch's most recent ``signature_len`` observations.  Averaging
    suppresses per-chip embedding noise while identity-level offsets
    between embeddings survive, so near-identical objects separate more
    reliably than with a single reference chip.
    """

    def __init__(
        self, model: SiameseModel, name: str = "siamese", signature_len: int = 5
    ) -> None:
        if signature_len < 1:
            raise ValueError(f"signature_len must be >= 1, got {signature_len}")
        self.model = model
        self.name = name
        self.signature_len = signature_len
        self._candidates: Dict[int, np.ndarray] = {}
        self._history: Dict[Tuple[int, int], np.ndarray] = {}

    def _blank(self) -> Chip:
        size = self.model.cfg.chip_size
        return Chip(pixels=np.zeros((size, size, self.model.cfg.in_channels)))

    def begin_frame(self, frame_index: int, detections: Sequence[Detection]) -> None:
        chips = [d.chip if d.chip is not None else self._blank() for d in detections]
        if chips:
            rows = embed_many(self.model, chips)
            self._candidates = {d.detection_id: rows[i] for i, d in enumerate(detections)}
        else:
            self._candidates = {}
        cutoff = frame_index - _CACHE_HORIZON
        self._history = {k: v for k, v in self._history.items() if k[0] >= cutoff}

    def _history_embedding(self, frame: int, det: Detection) -> np.ndarray:
        key = (frame, det.detection_id)
        if key not in self._history:
            chip = det.chip if det.chip is not None else self._blank()
            self._history[key] = embed_many(self.model, [chip])[0]
        return self._history[key]

    def score(self, branch: BranchView, candidate: Detection) -> float:
        cand = self._candidates.get(candidate.detection_id)
        if cand is None:
            chip = candidate.chip if candidate.chip is not None else self._blank()
            cand = embed_many(self.model, [chip])[0]
        recent = branch.history[-self.signature_len:]
        ref = np.mean(
            [self._history_embedding(f, d) for f, d in recent], axis=0
        )
        return float(np.linalg.norm(cand - ref))


class DeepEkfComparator:
    """Latent-space Gaussian affinity from the learned sequence predictor.

    The branch history is encoded once per branch (incrementally when
    the parent branch's encoding is cached), decoded to the candidate's
    frame, and compared against the candidate's latent coordinates from
    the shared-weight measurement path.  Needs at least ``min_history``
    past observations; the associator substitutes the plain kinematic
    likelihood below that.
    """

    def __init__(
        self,
        model: DeepEkfModel,
        frame_size: Tuple[int, int],
        name: str = "dekf",
        min_history: int = 2,
    ) -> None:
        self.model = model
        self.frame_size = frame_size
        self.name = name
        self.min_history = min_history
        self._frame: Optional[int] = None
        self._chip_emb: Dict[int, np.ndarray] = {}
        self._features: Dict[Tuple[int, int], FeatureVector] = {}
        self._dets: Dict[int, Detection] = {}
        self._hist_emb: Dict[Tuple[int, int], np.ndarray] = {}

    def begin_frame(self, frame_index: int, detections: Sequence[Detection]) -> None:
        self._frame = frame_index
        self._features = {}
        self._dets = {d.detection_id: d for d in detections}
        if detections:
            planes = np.stack(
                [deepekf._chip_plane(d, self.model.cfg.chip_size) for d in detections]
            )
            emb = deepekf._embed_chips_t(self.model, planes).data
            self._chip_emb = {d.detection_id: emb[i] for i, d in enumerate(detections)}
        else:
            self._chip_emb = {}
        cutoff = frame_index - _CACHE_HORIZON
        self._hist_emb = {k: v for k, v in self._hist_emb.items() if k[0] >= cutoff}

    def _feature_of(self, det: Detection, dt: int) -> FeatureVector:
        """Feature row for a current-frame candidate (chip embedding cached)."""
        key = (det.detection_id, dt)
        if key not in self._features:
            emb = self._chip_emb.get(det.detection_id)
            if emb is None:
                return deepekf.featurize(self.model, det, dt, self.frame_size)
            aux = deepekf._aux_block(det, dt, self.frame_size, self.model.cfg.dt_scale)
            self._features[key] = FeatureVector(values=np.concatenate([emb, aux]))
        return self._features[key]

    def _history_feature(self, frame: int, det: Detection, dt: int) -> FeatureVector:
        key = (frame, det.detection_id)
        if key not in self._hist_emb:
            feat = deepekf.featurize(self.model, det, dt, self.frame_size)
            self._hist_emb[key] = feat.values[: self.model.cfg.chip_embed_dim].copy()
            return feat
        emb = self._hist_emb[key]
        aux = deepekf._aux_block(det, dt, self.frame_size, self.model.cfg.dt_scale)
        return FeatureVector(values=np.concatenate([emb, aux]))

    def _encode_full(self, history: Tuple[Tuple[int, Detection], ...]) -> EncoderOutput:
        enc: Optional[EncoderOutput] = None
        prev_frame: Optional[int] = None
        for frame, det in history:
            dt = 0 if prev_frame is None else frame - prev_frame
            enc = deepekf.encode_step(self.model, self._history_feature(frame, det, dt), enc)
            prev_frame = frame
        assert enc is not None
        return enc

    def _branch_encoding(self, branch: BranchView) -> EncoderOutput:
        cache = branch.cache
        if cache is not None and "dekf_enc" in cache:
            return cache["dekf_enc"]  # type: ignore[return-value]
        enc: Optional[EncoderOutput] = None
        parent = branch.parent_cache
        if parent is not None and "dekf_enc" in parent and len(branch.history) >= 1:
            last_frame, last_det = branch.history[-1]
            dt = 0
            if len(branch.history) >= 2:
                dt = last_frame - branch.history[-2][0]
            feat = self._history_feature(last_frame, last_det, dt)
            enc = deepekf.encode_step(self.model, feat, parent["dekf_enc"])  # type: ignore[arg-type]
        else:
            enc = self._encode_full(branch.history)
        if cache is not None:
            cache["dekf_enc"] = enc
        return enc

    def score(self, branch: BranchView, candidate: Detection) -> float:
        enc = self._branch_encoding(branch)
        assert self._frame is not None
        horizon = self._frame - branch.history[-1][0]
        cache = branch.cache
        pred = None
        pred_key = ("dekf_pred", horizon)
        if cache is not None:
            pred = cache.get(pred_key)
        if pred is None:
            pred = deepekf.decode_with_attention(self.model, enc, horizon)
            if cache is not None:
                cache[pred_key] = pred
        z = self._measurement_latent(branch, enc, candidate, horizon)
        return deepekf.dekf_affinity(pred, z, self.model.cfg.meas_var_floor)

    def _measurement_latent(
        self,
        branch: BranchView,
        enc: EncoderOutput,
        candidate: Detection,
        horizon: int,
    ) -> np.ndarray:
        """Candidate latent; computed for the whole frame's detections in
        one batch per branch, since they share the branch encoding."""
        cache = branch.cache
        meas_key = ("dekf_meas", self._frame)
        zmap: Optional[Dict[int, np.ndarray]] = None
        if cache is not None:
            zmap = cache.get(meas_key)  # type: ignore[assignment]
        if zmap is None:
            det_ids = sorted(self._dets)
            feats = [self._feature_of(self._dets[i], horizon) for i in det_ids]
            rows = deepekf.encode_measurements(self.model, feats, enc)
            zmap = {i: rows[k] for k, i in enumerate(det_ids)}
            if cache is not None:
                cache[meas_key] = zmap
        z = zmap.get(candidate.detection_id)
        if z is None:
            z = deepekf.encode_measurement(
                self.model, self._feature_of(candidate, horizon), enc
            )
        return z


def comparator_registry(
    comparators: Sequence[SignatureComparator],
    fusion: FusionConfig,
) -> Dict[str, "SignatureComparator"]:
    """Name-keyed comparator map with the kinematic default filled in;
    every fusion weight must have a registered comparator."""
    registry: Dict[str, SignatureComparator] = {}
    for comp in comparators:
        if comp.name in registry:
            raise ValueError(f"duplicate comparator name {comp.name!r}")
        registry[comp.name] = comp
    if "ekf" not in registry:
        registry["ekf"] = EkfComparator()
    for name in fusion.weights:
        if name not in registry:
            raise MissingComparator(f"no comparator registered for weight {name!r}")
    return registry


def fallback_fusion_config(
    fusion: FusionConfig, noise: NoiseConfig, gate_prob: float
) -> FusionConfig:
    """Fusion config with the learned kinematic weight folded into the
    plain filter, for histories too short to run the learned predictor."""
    if "dekf" not in fusion.weights:
        return fusion
    weights = {k: v for k, v in fusion.weights.items() if k != "dekf"}
    weights["ekf"] = weights.get("ekf", 0.0) + fusion.weights["dekf"]
    normalizers = dict(fusion.normalizers)
    if "ekf" not in normalizers:
        normalizers["ekf"] = NormalizerSpec(
            LIKELIHOOD_RATIO, ekf_boundary_likelihood(noise, gate_prob)
        )
    return FusionConfig(weights=weights, normalizers=normalizers, log_floor=fusion.log_floor)


def ekf_boundary_likelihood(noise: NoiseConfig, gate_prob: float = 0.99) -> float:
    """Kinematic density of a gate-boundary innovation at nominal spread.

    Nominal innovation covariance is the measurement noise plus one
    step of position diffusion; the value anchors the likelihood-ratio
    normalizer so a boundary-quality association maps to 0.5.
    """
    s_nom = noise.measurement_std**2 + noise.process_std_pos**2
    thr = chi2_gate_threshold(gate_prob)
    return math.exp(-0.5 * thr) / (2.0 * math.pi * s_nom)


def dekf_boundary_density(
    meas_var_floor: float = 0.01, latent_dim: int = 2, gate_prob: float = 0.99
) -> float:
    """Latent-space analogue of ``ekf_boundary_likelihood`` at the
    measurement variance floor."""
    thr = chi2_gate_threshold(gate_prob)
    return math.exp(-0.5 * thr) * (2.0 * math.pi * meas_var_floor) ** (-latent_dim / 2.0)


def default_normalizers(
    noise: Optional[NoiseConfig] = None,
    gate_prob: float = 0.99,
    meas_var_floor: float = 0.01,
    latent_dim: int = 2,
    ssd_channels: int = 3,
    siamese_scale: float = 0.5,
) -> Dict[str, NormalizerSpec]:
    """Normalizer set covering every built-in comparator name."""
    noise = noise if noise is not None else NoiseConfig()
    ssd_pixels = SSD_SIZE[0] * SSD_SIZE[1] * ssd_channels
    return {
        "ekf": NormalizerSpec(LIKELIHOOD_RATIO, ekf_boundary_likelihood(noise, gate_prob)),
        "dekf": NormalizerSpec(
            LIKELIHOOD_RATIO, dekf_boundary_density(meas_var_floor, latent_dim, gate_prob)
        ),
        "ssd": NormalizerSpec(EXP_NEG_SCALED, 0.02 * ssd_pixels),
        "siamese": NormalizerSpec(EXP_NEG_SCALED, siamese_scale),
        "siamese_attn": NormalizerSpec(EXP_NEG_SCALED, siamese_scale),
    }
