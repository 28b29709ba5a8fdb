"""Appearance comparators: raw pixel distance and learned embeddings.

Two appearance signals are provided.  ``ssd_distance`` is the blunt
baseline: resize both chips to a common size and sum squared pixel
differences.  The embedding model is a small convolutional network
whose decoder applies one global spatial-attention pass to suppress
irrelevant grid locations, followed by multiple attention heads that
each pool the grid into a sub-embedding; concatenated sub-embeddings
are compared by euclidean distance.  A no-attention variant replaces
decoder and heads with flatten-plus-linear so the contribution of
attention can be measured.

Training is contrastive: same-identity pairs are pulled together,
different-identity pairs pushed beyond a margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .core import Chip, resize_chip
from .errors import (
    AttentionDisabled,
    DimensionMismatch,
    EmptySequence,
    IdentityMissing,
    NonFiniteLoss,
)
from .nn import Tensor

SSD_SIZE = (100, 100)


def ssd_distance(a: Chip, b: Chip, size: Tuple[int, int] = SSD_SIZE) -> float:
    """Sum of squared pixel differences after resizing both chips to ``size``."""
    if a.channels != b.channels:
        raise DimensionMismatch(f"chip channels differ: {a.channels} vs {b.channels}")
    pa = resize_chip(a, size).pixels
    pb = resize_chip(b, size).pixels
    diff = pa - pb
    return float(np.sum(diff * diff))


@dataclass(frozen=True)
class Embedding:
    """Appearance embedding vector."""

    values: np.ndarray


@dataclass(frozen=True)
class AttentionMaps:
    """Per-head spatial softmax maps, shape (heads, grid, grid); each map sums to 1."""

    maps: np.ndarray


@dataclass(frozen=True)
class ReidResult:
    rank1: float
    mean_ap: float
    per_query_ap: Tuple[float, ...]
    n_queries: int


@dataclass
class SiameseConfig:
    chip_size: int = 64
    in_channels: int = 3
    conv_channels: Tuple[int, int, int] = (8, 16, 32)
    grid: int = 8
    embed_dim: int = 32
    heads: int = 4
    attention: bool = True
    margin: float = 1.0
    learning_rate: float = 1e-2
    clip_norm: float = 5.0

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


class SiameseModel:
    """Embedding network; twin branches share these parameters."""

    def __init__(self, cfg: SiameseConfig = None, seed: int = 0):
        self.cfg = cfg or SiameseConfig()
        if self.cfg.attention and self.cfg.embed_dim % self.cfg.heads != 0:
            raise ValueError("embed_dim must divide evenly among heads")
        self.params: Dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        c1, c2, c3 = cfg.conv_channels
        p = self.params
        p["bb.w1"] = nn.conv_init(rng, c1, cfg.in_channels, 3, 3)
        p["bb.b1"] = nn.zeros_param(c1)
        p["bb.w2"] = nn.conv_init(rng, c2, c1, 3, 3)
        p["bb.b2"] = nn.zeros_param(c2)
        p["bb.w3"] = nn.conv_init(rng, c3, c2, 3, 3)
        p["bb.b3"] = nn.zeros_param(c3)
        p["neck.W"] = nn.dense_init(rng, c3, c3)
        p["neck.b"] = nn.zeros_param(c3)
        if cfg.attention:
            p["gate.w"] = nn.dense_init(rng, c3, 1)
            p["gate.b"] = nn.zeros_param(1)
            for k in range(cfg.heads):
                p[f"head{k}.att_w"] = nn.dense_init(rng, c3, 1)
                p[f"head{k}.att_b"] = nn.zeros_param(1)
                p[f"head{k}.proj_W"] = nn.dense_init(rng, c3, cfg.head_dim)
                p[f"head{k}.proj_b"] = nn.zeros_param(cfg.head_dim)
        else:
            flat = c3 * cfg.grid * cfg.grid
            p["flat.W"] = nn.dense_init(rng, flat, cfg.embed_dim)
            p["flat.b"] = nn.zeros_param(cfg.embed_dim)


def _prepare_chips(model: SiameseModel, chips: Sequence[Chip]) -> np.ndarray:
    cfg = model.cfg
    out = np.empty((len(chips), cfg.in_channels, cfg.chip_size, cfg.chip_size))
    for i, chip in enumerate(chips):
        if chip.channels != cfg.in_channels:
            raise DimensionMismatch(
                f"chip has {chip.channels} channels, model expects {cfg.in_channels}"
            )
        px = resize_chip(chip, (cfg.chip_size, cfg.chip_size)).pixels
        out[i] = np.transpose(px, (2, 0, 1))
    return out


def _neck_grid_t(model: SiameseModel, x: Tensor) -> Tensor:
    """Backbone + neck: (B, C_in, S, S) image -> (B, HW, C) feature grid."""
    p, cfg = model.params, model.cfg
    h = nn.tanh(nn.conv2d(x, p["bb.w1"], p["bb.b1"], stride=2, pad=1))
    h = nn.tanh(nn.conv2d(h, p["bb.w2"], p["bb.b2"], stride=2, pad=1))
    h = nn.tanh(nn.conv2d(h, p["bb.w3"], p["bb.b3"], stride=2, pad=1))
    B = h.shape[0]
    c3 = cfg.conv_channels[2]
    hw = cfg.grid * cfg.grid
    grid = nn.transpose(nn.reshape(h, (B, c3, hw)), (0, 2, 1))  # (B, HW, C)
    flat = nn.reshape(grid, (B * hw, c3))
    necked = nn.tanh(nn.add(nn.matmul(flat, p["neck.W"]), p["neck.b"]))
    return nn.reshape(necked, (B, hw, c3))


def _forward_t(model: SiameseModel, x: Tensor, want_maps: bool = False):
    """Embeddings (B, e); with ``want_maps`` also the head maps (B, H, HW)."""
    p, cfg = model.params, model.cfg
    grid = _neck_grid_t(model, x)
    B, hw, c3 = grid.shape
    if not cfg.attention:
        emb = nn.add(nn.matmul(nn.reshape(grid, (B, hw * c3)), p["flat.W"]), p["flat.b"])
        return (emb, None) if want_maps else (emb, None)
    flat = nn.reshape(grid, (B * hw, c3))
    gate_logits = nn.reshape(nn.add(nn.matmul(flat, p["gate.w"]), p["gate.b"]), (B, hw, 1))
    gate = nn.softmax(gate_logits, axis=1)
    # Scaling by location count makes zeroed logits an exact pass-through.
    gated = nn.mul(grid, nn.mul(gate, float(hw)))
    gated_flat = nn.reshape(gated, (B * hw, c3))
    subs: List[Tensor] = []
    maps: List[Tensor] = []
    for k in range(cfg.heads):
        logits = nn.reshape(
            nn.add(nn.matmul(gated_flat, p[f"head{k}.att_w"]), p[f"head{k}.att_b"]), (B, hw, 1)
        )
        m = nn.softmax(logits, axis=1)
        pooled = nn.tsum(nn.mul(m, gated), axis=1)  # (B, C)
        subs.append(nn.add(nn.matmul(pooled, p[f"head{k}.proj_W"]), p[f"head{k}.proj_b"]))
        if want_maps:
            maps.append(nn.reshape(m, (B, 1, hw)))
    emb = nn.concat(subs, axis=1)
    head_maps = nn.concat(maps, axis=1) if want_maps else None
    return emb, head_maps


def embed(model: SiameseModel, chip: Chip) -> Embedding:
    """Embed one chip."""
    x = Tensor(_prepare_chips(model, [chip]))
    emb, _ = _forward_t(model, x)
    return Embedding(values=emb.data[0].copy())


def embed_many(model: SiameseModel, chips: Sequence[Chip]) -> np.ndarray:
    """Embed a batch of chips; rows follow input order."""
    if len(chips) == 0:
        raise EmptySequence("no chips to embed")
    x = Tensor(_prepare_chips(model, chips))
    emb, _ = _forward_t(model, x)
    return emb.data.copy()


def embedding_distance(a: Embedding, b: Embedding) -> float:
    """Euclidean distance between embeddings."""
    va, vb = np.asarray(a.values), np.asarray(b.values)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"embedding shapes differ: {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb))


def attention_maps(model: SiameseModel, chip: Chip) -> AttentionMaps:
    """Per-head spatial attention maps for one chip."""
    if not model.cfg.attention:
        raise AttentionDisabled("model was built without attention")
    x = Tensor(_prepare_chips(model, [chip]))
    _, maps = _forward_t(model, x, want_maps=True)
    g = model.cfg.grid
    return AttentionMaps(maps=maps.data[0].reshape(model.cfg.heads, g, g).copy())


# -- training ------------------------------------------------------------

def _pair_loss_t(model: SiameseModel, chips: Sequence[Chip], same: np.ndarray) -> Tensor:
    """Contrastive loss over interleaved pair chips [a0, b0, a1, b1, ...]."""
    cfg = model.cfg
    x = Tensor(_prepare_chips(model, chips))
    emb, _ = _forward_t(model, x)
    a = emb[0::2]
    b = emb[1::2]
    diff = nn.add(a, nn.mul(b, -1.0))
    d2 = nn.tsum(nn.mul(diff, diff), axis=1)
    # Tiny offset keeps sqrt differentiable when a pair collapses to d=0.
    d = nn.sqrt(nn.add(d2, 1e-12))
    hinge = nn.maximum(nn.add(cfg.margin, nn.mul(d, -1.0)), 0.0)
    same_t = Tensor(same.astype(np.float64))
    loss_vec = nn.add(
        nn.mul(same_t, d2), nn.mul(nn.add(1.0, nn.mul(same_t, -1.0)), nn.mul(hinge, hinge))
    )
    return nn.tmean(loss_vec)


def contrastive_train_step(
    model: SiameseModel, pairs: Sequence[Tuple[Chip, Chip, bool]]
) -> float:
    """One plain gradient-descent step on contrastive pairs; returns the
    pre-update loss."""
    if len(pairs) == 0:
        raise EmptySequence("training batch is empty")
    chips: List[Chip] = []
    same = np.empty(len(pairs))
    for i, (ca, cb, is_same) in enumerate(pairs):
        chips.extend((ca, cb))
        same[i] = 1.0 if is_same else 0.0
    nn.zero_grads(model.params)
    loss = _pair_loss_t(model, chips, same)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"training loss is {value}")
    loss.backward()
    nn.sgd_step(model.params, model.cfg.learning_rate, model.cfg.clip_norm)
    return value


def siamese_gradient_check(
    model: SiameseModel,
    pairs: Sequence[Tuple[Chip, Chip, bool]],
    seed: int = 0,
    n_samples: int = 200,
) -> Dict[str, float]:
    """Backprop-vs-central-difference check of the contrastive loss."""
    chips: List[Chip] = []
    same = np.empty(len(pairs))
    for i, (ca, cb, is_same) in enumerate(pairs):
        chips.extend((ca, cb))
        same[i] = 1.0 if is_same else 0.0
    rng = np.random.default_rng(seed)
    return nn.gradient_check(
        lambda: _pair_loss_t(model, chips, same), model.params, rng, n_samples=n_samples
    )


# -- retrieval evaluation ------------------------------------------------

def evaluate_reid(
    model: SiameseModel,
    gallery: Sequence[Tuple[int, Chip]],
    queries: Sequence[Tuple[int, Chip]],
) -> ReidResult:
    """Gallery/query retrieval quality: rank-1 accuracy and mean average
    precision.

    Every query identity must appear in the gallery.  Ties in distance
    break by gallery order (stable sort), so results are deterministic.
    """
    if len(gallery) == 0 or len(queries) == 0:
        raise EmptySequence("gallery and queries must be non-empty")
    gallery_ids = np.array([gid for gid, _ in gallery])
    query_ids = np.array([qid for qid, _ in queries])
    missing = set(query_ids.tolist()) - set(gallery_ids.tolist())
    if missing:
        raise IdentityMissing(f"query identities absent from gallery: {sorted(missing)}")
    g_emb = embed_many(model, [c for _, c in gallery])
    q_emb = embed_many(model, [c for _, c in queries])
    diffs = q_emb[:, None, :] - g_emb[None, :, :]
    dist = np.sqrt(np.sum(diffs * diffs, axis=2))

    hits = 0
    aps: List[float] = []
    for qi in range(len(queries)):
        order = np.argsort(dist[qi], kind="stable")
        ranked_ids = gallery_ids[order]
        relevant = ranked_ids == query_ids[qi]
        if relevant[0]:
            hits += 1
        n_rel = int(relevant.sum())
        precisions = np.cumsum(relevant) / np.arange(1, len(ranked_ids) + 1)
        aps.append(float(np.sum(precisions * relevant) / n_rel))
    return ReidResult(
        rank1=hits / len(queries),
        mean_ap=float(np.mean(aps)),
        per_query_ap=tuple(aps),
        n_queries=len(queries),
    )
