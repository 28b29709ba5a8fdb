"""Learned latent-state prediction for track scoring.

A sequence of observations (appearance chip, normalized box geometry,
time gap, platform state) is folded through a recurrent encoder; a
recurrent decoder with additive attention over the encoder states rolls
the latent forward a requested number of frames and emits a Gaussian
(mean plus diagonal variance) in an n-dimensional latent space.
Candidate detections are pushed through the same encoder cell and mean
head, so track-vs-detection affinity reduces to a Gaussian density in
latent space with a fixed measurement-noise floor.

The default latent dimension is 2 and training targets are normalized
future box centers, which makes the latent directly interpretable as
position; the dimension is configurable up to 8 for richer targets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .core import Chip, Detection, chip_to_gray, resize_chip
from .errors import DimensionMismatch, EmptySequence, NonFiniteLoss
from .nn import Tensor

PLATFORM_DIM = 5
BOX_DIM = 4
DT_DIM = 1


@dataclass(frozen=True)
class FeatureVector:
    """Model input for one observation; layout:
    [chip embedding | cx/W, cy/H, w/W, h/H | dt | platform(5)]."""

    values: np.ndarray


@dataclass(frozen=True)
class EncoderOutput:
    """Recurrent encoder state after a sequence.

    ``hidden`` holds the most recent per-step hidden states (attention
    window), ``final`` the full-memory final hidden state.  ``cell`` is
    the LSTM cell state when that cell kind is configured.
    """

    hidden: np.ndarray
    final: np.ndarray
    cell: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LatentPrediction:
    """Gaussian latent forecast ``horizon`` frames past the last input."""

    mean: np.ndarray
    var: np.ndarray
    horizon: int
    attention: np.ndarray  # (horizon, T) softmax weights, rows sum to 1


@dataclass(frozen=True)
class TrainItem:
    """One training example: an observed sequence and its future truth."""

    detections: Tuple[Detection, ...]
    dts: Tuple[int, ...]            # gap before each observation; first is 0
    future_detection: Detection
    horizon: int                    # frames between last observation and future
    target: np.ndarray              # latent target, usually normalized center


@dataclass
class DeepEkfConfig:
    chip_size: int = 32
    chip_embed_dim: int = 16
    conv_channels: Tuple[int, int] = (4, 8)
    hidden_dim: int = 32
    attention_dim: int = 16
    latent_dim: int = 2             # up to 8
    cell: str = "gru"               # "gru" or "lstm"
    meas_var_floor: float = 0.01
    learning_rate: float = 1e-2
    clip_norm: float = 5.0
    max_history: int = 8            # attention window length
    measurement_loss_weight: float = 1.0
    dt_scale: float = 0.1

    @property
    def d_in(self) -> int:
        return self.chip_embed_dim + BOX_DIM + DT_DIM + PLATFORM_DIM


_GRU_GATES = ("z", "r", "h")
_LSTM_GATES = ("i", "f", "o", "g")


class DeepEkfModel:
    """Holds parameters; all operations are module-level functions."""

    def __init__(self, cfg: DeepEkfConfig = None, seed: int = 0):
        self.cfg = cfg or DeepEkfConfig()
        if self.cfg.cell not in ("gru", "lstm"):
            raise ValueError(f"unknown cell kind {self.cfg.cell!r}")
        if not (1 <= self.cfg.latent_dim <= 8):
            raise ValueError("latent_dim must be in [1, 8]")
        self.params: Dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        c1, c2 = cfg.conv_channels
        p = self.params
        p["cenc.w1"] = nn.conv_init(rng, c1, 1, 3, 3)
        p["cenc.b1"] = nn.zeros_param(c1)
        p["cenc.w2"] = nn.conv_init(rng, c2, c1, 3, 3)
        p["cenc.b2"] = nn.zeros_param(c2)
        side = _conv_out(_conv_out(cfg.chip_size))
        p["cenc.fc_W"] = nn.dense_init(rng, c2 * side * side, cfg.chip_embed_dim)
        p["cenc.fc_b"] = nn.zeros_param(cfg.chip_embed_dim)
        h, a, n = cfg.hidden_dim, cfg.attention_dim, cfg.latent_dim
        gates = _GRU_GATES if cfg.cell == "gru" else _LSTM_GATES
        for scope, d_in in (("enc", cfg.d_in), ("dec", h)):
            for g in gates:
                p[f"{scope}.W{g}"] = nn.dense_init(rng, d_in, h)
                p[f"{scope}.U{g}"] = nn.dense_init(rng, h, h)
                p[f"{scope}.b{g}"] = nn.zeros_param(h)
        p["att.Wenc"] = nn.dense_init(rng, h, a)
        p["att.Wdec"] = nn.dense_init(rng, h, a)
        p["att.b"] = nn.zeros_param(a)
        p["att.v"] = nn.dense_init(rng, a, 1)
        p["head.mu_W"] = nn.dense_init(rng, h, n)
        p["head.mu_b"] = nn.parameter(np.full(n, 0.5))
        p["head.lv_W"] = nn.dense_init(rng, h, n)
        p["head.lv_b"] = nn.zeros_param(n)


def _conv_out(size: int, k: int = 3, stride: int = 2) -> int:
    return (size - k) // stride + 1


# -- feature construction ----------------------------------------------

def _chip_plane(det: Detection, chip_size: int) -> np.ndarray:
    if det.chip is None:
        return np.zeros((chip_size, chip_size))
    resized = resize_chip(det.chip, (chip_size, chip_size))
    return chip_to_gray(resized)


def _aux_block(det: Detection, dt: int, frame_size: Tuple[int, int], dt_scale: float) -> np.ndarray:
    W, Hf = float(frame_size[0]), float(frame_size[1])
    cx, cy = det.box.center
    box = [cx / W, cy / Hf, det.box.w / W, det.box.h / Hf]
    if det.platform is None:
        plat = [0.0] * PLATFORM_DIM
    else:
        pm = det.platform
        zoom = math.log10(pm.zoom) if pm.zoom > 0 else 0.0
        plat = [pm.lon / 180.0, pm.lat / 90.0, pm.azimuth / 360.0, pm.elevation / 90.0, zoom]
    return np.array(box + [dt * dt_scale] + plat)


def _embed_chips_t(model: DeepEkfModel, planes: np.ndarray) -> Tensor:
    """Chip planes (B, s, s) -> learned embeddings (B, chip_embed_dim)."""
    p, cfg = model.params, model.cfg
    x = Tensor(planes[:, None, :, :])
    h1 = nn.tanh(nn.conv2d(x, p["cenc.w1"], p["cenc.b1"], stride=2))
    h2 = nn.tanh(nn.conv2d(h1, p["cenc.w2"], p["cenc.b2"], stride=2))
    B = planes.shape[0]
    flat = nn.reshape(h2, (B, -1))
    return nn.tanh(nn.add(nn.matmul(flat, p["cenc.fc_W"]), p["cenc.fc_b"]))


def _featurize_many_t(
    model: DeepEkfModel,
    dets: Sequence[Detection],
    dts: Sequence[int],
    frame_size: Tuple[int, int],
) -> Tensor:
    """All observations at once -> (M, d_in) feature rows (graph-connected)."""
    cfg = model.cfg
    planes = np.stack([_chip_plane(d, cfg.chip_size) for d in dets])
    emb = _embed_chips_t(model, planes)
    aux = np.stack([_aux_block(d, dt, frame_size, cfg.dt_scale) for d, dt in zip(dets, dts)])
    return nn.concat([emb, Tensor(aux)], axis=1)


def featurize(
    model: DeepEkfModel, det: Detection, dt: int, frame_size: Tuple[int, int]
) -> FeatureVector:
    """Feature row for one observation; ``dt`` is the gap since the
    previous observation (0 for the first)."""
    row = _featurize_many_t(model, [det], [dt], frame_size)
    return FeatureVector(values=row.data[0].copy())


# -- recurrent cells ----------------------------------------------------

def _cell_t(
    model: DeepEkfModel, scope: str, x: Tensor, h: Tensor, c: Optional[Tensor]
) -> Tuple[Tensor, Optional[Tensor]]:
    """One recurrent step; x (B, d), h (B, H) -> new (h, c)."""
    p = model.params

    def lin(gate: str, inp: Tensor, hid: Tensor) -> Tensor:
        return nn.add(
            nn.add(nn.matmul(inp, p[f"{scope}.W{gate}"]), nn.matmul(hid, p[f"{scope}.U{gate}"])),
            p[f"{scope}.b{gate}"],
        )

    if model.cfg.cell == "gru":
        z = nn.sigmoid(lin("z", x, h))
        r = nn.sigmoid(lin("r", x, h))
        h_cand = nn.tanh(
            nn.add(
                nn.add(nn.matmul(x, p[f"{scope}.Wh"]), nn.matmul(nn.mul(r, h), p[f"{scope}.Uh"])),
                p[f"{scope}.bh"],
            )
        )
        h_new = nn.add(nn.mul(nn.add(1.0, nn.mul(z, -1.0)), h), nn.mul(z, h_cand))
        return h_new, None
    i = nn.sigmoid(lin("i", x, h))
    f = nn.sigmoid(lin("f", x, h))
    o = nn.sigmoid(lin("o", x, h))
    g = nn.tanh(lin("g", x, h))
    c_new = nn.add(nn.mul(f, c), nn.mul(i, g))
    h_new = nn.mul(o, nn.tanh(c_new))
    return h_new, c_new


def _zero_state(model: DeepEkfModel) -> Tuple[Tensor, Optional[Tensor]]:
    h = Tensor(np.zeros((1, model.cfg.hidden_dim)))
    c = Tensor(np.zeros((1, model.cfg.hidden_dim))) if model.cfg.cell == "lstm" else None
    return h, c


def _encode_t(
    model: DeepEkfModel, feature_rows: Tensor
) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """Feature rows (T, d_in) -> (hidden (Tw, H), final (1, H), cell)."""
    T = feature_rows.shape[0]
    if T == 0:
        raise EmptySequence("encoder requires at least one feature row")
    h, c = _zero_state(model)
    rows: List[Tensor] = []
    for t in range(T):
        x = feature_rows[t : t + 1]
        h, c = _cell_t(model, "enc", x, h, c)
        rows.append(h)
    window = rows[-model.cfg.max_history :]
    hidden = nn.concat(window, axis=0) if len(window) > 1 else window[0]
    return hidden, h, c


def encode_sequence(model: DeepEkfModel, features: Sequence[FeatureVector]) -> EncoderOutput:
    """Fold feature rows through the encoder cell from the zero state."""
    if len(features) == 0:
        raise EmptySequence("encode_sequence needs at least one feature")
    d_in = model.cfg.d_in
    for f in features:
        if f.values.shape != (d_in,):
            raise DimensionMismatch(f"feature must be ({d_in},), got {f.values.shape}")
    rows = Tensor(np.stack([f.values for f in features]))
    hidden, final, cell = _encode_t(model, rows)
    return EncoderOutput(
        hidden=hidden.data.copy(),
        final=final.data[0].copy(),
        cell=None if cell is None else cell.data[0].copy(),
    )


def encode_step(
    model: DeepEkfModel, feature: FeatureVector, prev: Optional[EncoderOutput]
) -> EncoderOutput:
    """Extend an encoding by one observation (incremental form of
    ``encode_sequence``; used for per-branch caching)."""
    h, c = _state_from(model, prev)
    x = Tensor(feature.values[None, :])
    h_new, c_new = _cell_t(model, "enc", x, h, c)
    if prev is None:
        hidden = h_new.data.copy()
    else:
        hidden = np.vstack([prev.hidden, h_new.data])[-model.cfg.max_history :]
    return EncoderOutput(
        hidden=hidden,
        final=h_new.data[0].copy(),
        cell=None if c_new is None else c_new.data[0].copy(),
    )


def _state_from(
    model: DeepEkfModel, enc: Optional[EncoderOutput]
) -> Tuple[Tensor, Optional[Tensor]]:
    if enc is None:
        return _zero_state(model)
    h = Tensor(enc.final[None, :])
    if model.cfg.cell == "lstm":
        cell = enc.cell if enc.cell is not None else np.zeros(model.cfg.hidden_dim)
        return h, Tensor(cell[None, :])
    return h, None


# -- attention decoder ---------------------------------------------------

def _attend_t(model: DeepEkfModel, hidden: Tensor, s: Tensor) -> Tuple[Tensor, Tensor]:
    """Additive attention of decoder state s (1,H) over hidden (T,H)."""
    p = model.params
    scores = nn.matmul(
        nn.tanh(nn.add(nn.add(nn.matmul(hidden, p["att.Wenc"]), nn.matmul(s, p["att.Wdec"])), p["att.b"])),
        p["att.v"],
    )  # (T, 1)
    weights = nn.softmax(scores, axis=0)
    context = nn.tsum(nn.mul(weights, hidden), axis=0, keepdims=True)  # (1, H)
    return context, weights


def _decode_t(
    model: DeepEkfModel,
    hidden: Tensor,
    final: Tensor,
    cell: Optional[Tensor],
    horizon: int,
) -> Tuple[Tensor, Tensor, List[Tensor]]:
    """Roll the decoder ``horizon`` steps; returns (mean, logvar, att weights)."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    p = model.params
    s = final
    c = cell
    atts: List[Tensor] = []
    for _ in range(horizon):
        context, weights = _attend_t(model, hidden, s)
        s, c = _cell_t(model, "dec", context, s, c)
        atts.append(weights)
    mu = nn.add(nn.matmul(s, p["head.mu_W"]), p["head.mu_b"])
    lv = nn.add(nn.matmul(s, p["head.lv_W"]), p["head.lv_b"])
    return mu, lv, atts


def decode_with_attention(model: DeepEkfModel, enc: EncoderOutput, horizon: int) -> LatentPrediction:
    """Predict the latent Gaussian ``horizon`` frames past the sequence end."""
    hidden = Tensor(enc.hidden)
    final = Tensor(enc.final[None, :])
    cell = None
    if model.cfg.cell == "lstm":
        cell = Tensor((enc.cell if enc.cell is not None else np.zeros(model.cfg.hidden_dim))[None, :])
    mu, lv, atts = _decode_t(model, hidden, final, cell, horizon)
    att = np.stack([a.data[:, 0] for a in atts])
    return LatentPrediction(
        mean=mu.data[0].copy(),
        var=np.exp(lv.data[0]),
        horizon=horizon,
        attention=att,
    )


def _measure_t(model: DeepEkfModel, feature_row: Tensor, h: Tensor, c: Optional[Tensor]) -> Tensor:
    """Shared-weight measurement path: one encoder step then the mean head."""
    h_new, _ = _cell_t(model, "enc", feature_row, h, c)
    p = model.params
    return nn.add(nn.matmul(h_new, p["head.mu_W"]), p["head.mu_b"])


def encode_measurement(
    model: DeepEkfModel, feature: FeatureVector, init: Optional[EncoderOutput] = None
) -> np.ndarray:
    """Latent coordinates of a single candidate observation.

    The encoder hidden state starts from ``init``'s final state (the
    track's encoding) so the measurement is embedded in the same frame
    of reference as the prediction; with ``init=None`` this equals a
    length-1 ``encode_sequence`` followed by the mean head.
    """
    h, c = _state_from(model, init)
    x = Tensor(feature.values[None, :])
    return _measure_t(model, x, h, c).data[0].copy()


def encode_measurements(
    model: DeepEkfModel,
    features: Sequence[FeatureVector],
    init: Optional[EncoderOutput] = None,
) -> np.ndarray:
    """Batched ``encode_measurement``: one row of latent coordinates per
    feature, all relative to the same track encoding."""
    if len(features) == 0:
        raise EmptySequence("encode_measurements needs at least one feature")
    h, c = _state_from(model, init)
    B = len(features)
    hB = Tensor(np.repeat(h.data, B, axis=0))
    cB = Tensor(np.repeat(c.data, B, axis=0)) if c is not None else None
    x = Tensor(np.stack([f.values for f in features]))
    return _measure_t(model, x, hB, cB).data.copy()


# -- affinity ------------------------------------------------------------

def dekf_affinity(
    pred: LatentPrediction, meas_latent: np.ndarray, meas_var_floor: float = 0.01
) -> float:
    """Gaussian density of the measurement latent under the prediction.

    Covariance is the predicted diagonal plus a constant measurement
    floor, so the density stays bounded even for confident predictions.
    """
    mean = np.asarray(pred.mean, dtype=np.float64)
    var = np.asarray(pred.var, dtype=np.float64)
    z = np.asarray(meas_latent, dtype=np.float64).reshape(-1)
    if z.shape != mean.shape:
        raise DimensionMismatch(f"latent shape {z.shape} vs prediction {mean.shape}")
    S = var + meas_var_floor
    r = z - mean
    n = mean.shape[0]
    log_density = -0.5 * float(np.sum(np.log(S) + r * r / S)) - 0.5 * n * math.log(2.0 * math.pi)
    return math.exp(log_density)


# -- training ------------------------------------------------------------

def _train_loss_t(
    model: DeepEkfModel, batch: Sequence[TrainItem], frame_size: Tuple[int, int]
) -> Tensor:
    """Mean Gaussian NLL of the predicted latent, plus a consistency term
    pinning the measurement path of each true future observation to the
    same target (without it the measurement encoding is never trained and
    affinities carry no signal)."""
    cfg = model.cfg
    if len(batch) == 0:
        raise EmptySequence("training batch is empty")
    # One conv pass over every chip in the batch.
    all_dets: List[Detection] = []
    all_dts: List[int] = []
    for item in batch:
        if len(item.detections) != len(item.dts):
            raise DimensionMismatch("detections and dts must align")
        all_dets.extend(item.detections)
        all_dts.extend(item.dts)
        all_dets.append(item.future_detection)
        all_dts.append(item.horizon)
    feats = _featurize_many_t(model, all_dets, all_dts, frame_size)

    n = cfg.latent_dim
    floor = cfg.meas_var_floor
    log2pi = math.log(2.0 * math.pi)
    total: Optional[Tensor] = None
    offset = 0
    for item in batch:
        T = len(item.detections)
        seq_rows = feats[offset : offset + T]
        fut_row = feats[offset + T : offset + T + 1]
        offset += T + 1
        target = Tensor(np.asarray(item.target, dtype=np.float64)[None, :])
        if target.shape != (1, n):
            raise DimensionMismatch(f"target must have {n} entries")

        hidden, final, cell = _encode_t(model, seq_rows)
        mu, lv, _ = _decode_t(model, hidden, final, cell, item.horizon)
        S = nn.add(nn.exp(lv), floor)
        r = nn.add(target, nn.mul(mu, -1.0))
        nll_pred = nn.add(
            nn.mul(nn.tsum(nn.add(nn.log(S), nn.mul(nn.mul(r, r), nn.power(S, -1.0)))), 0.5),
            0.5 * n * log2pi,
        )
        item_loss = nll_pred
        if cfg.measurement_loss_weight > 0.0:
            m = _measure_t(model, fut_row, final, cell)
            rm = nn.add(target, nn.mul(m, -1.0))
            nll_meas = nn.add(
                nn.mul(nn.tsum(nn.mul(rm, rm)), 0.5 / floor),
                0.5 * n * (math.log(floor) + log2pi),
            )
            item_loss = nn.add(item_loss, nn.mul(nll_meas, cfg.measurement_loss_weight))
        total = item_loss if total is None else nn.add(total, item_loss)
    return nn.mul(total, 1.0 / len(batch))


def dekf_train_step(
    model: DeepEkfModel, batch: Sequence[TrainItem], frame_size: Tuple[int, int]
) -> float:
    """One plain gradient-descent step; returns the pre-update loss."""
    nn.zero_grads(model.params)
    loss = _train_loss_t(model, batch, frame_size)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"training loss is {value}")
    loss.backward()
    nn.sgd_step(model.params, model.cfg.learning_rate, model.cfg.clip_norm)
    return value


def dekf_gradient_check(
    model: DeepEkfModel,
    batch: Sequence[TrainItem],
    frame_size: Tuple[int, int],
    seed: int = 0,
    n_samples: int = 200,
) -> Dict[str, float]:
    """Backprop-vs-central-difference check of the training loss."""
    rng = np.random.default_rng(seed)
    return nn.gradient_check(
        lambda: _train_loss_t(model, batch, frame_size), model.params, rng, n_samples=n_samples
    )
