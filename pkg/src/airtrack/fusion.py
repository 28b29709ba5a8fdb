"""Combining comparator outputs into one association similarity.

Raw comparator outputs live on incompatible scales: Gaussian densities
for the kinematic comparators, distances for the appearance ones.
Each is first normalized to [0, 1] by its declared rule, then fused by
a weighted arithmetic mean; the tracker consumes the log of the fused
similarity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

from .core import ComparatorScore
from .errors import MissingComparator, NonFiniteInput

LIKELIHOOD_RATIO = "likelihood_ratio"
EXP_NEG_SCALED = "exp_neg_scaled"
IDENTITY = "identity"
_KINDS = (LIKELIHOOD_RATIO, EXP_NEG_SCALED, IDENTITY)


@dataclass(frozen=True)
class NormalizerSpec:
    """How one comparator's raw output maps to [0, 1].

    ``likelihood_ratio``: raw / (raw + scale) for likelihood-style raw
    values (higher is better); with scale set to the likelihood at the
    gating boundary, a boundary-quality association maps to 0.5.
    ``exp_neg_scaled``: exp(-raw / scale) for distance-style raw values
    (lower is better); zero distance maps to 1, scale maps to 1/e.
    ``identity``: raw clamped into [0, 1].
    """

    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown normalizer kind {self.kind!r}")
        if self.kind != IDENTITY and not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")


@dataclass(frozen=True)
class FusionConfig:
    """Comparator weights and normalizers; weights are renormalized to sum 1."""

    weights: Mapping[str, float]
    normalizers: Mapping[str, NormalizerSpec]
    log_floor: float = 1e-6

    def __post_init__(self):
        if not self.weights:
            raise ValueError("fusion requires at least one comparator weight")
        for name, w in self.weights.items():
            if not (w >= 0.0 and math.isfinite(w)):
                raise ValueError(f"weight for {name!r} must be finite and >= 0")
            if name not in self.normalizers:
                raise MissingComparator(f"no normalizer configured for {name!r}")
        if sum(self.weights.values()) <= 0.0:
            raise ValueError("weights must not all be zero")
        if not (0.0 < self.log_floor < 1.0):
            raise ValueError("log_floor must be in (0, 1)")


def normalize(raw: float, spec: NormalizerSpec) -> float:
    """Map a raw comparator output into [0, 1] per its normalizer."""
    if not math.isfinite(raw):
        raise NonFiniteInput(f"raw score must be finite, got {raw}")
    if spec.kind == IDENTITY:
        return min(max(raw, 0.0), 1.0)
    if raw < 0.0:
        raise ValueError(f"{spec.kind} normalizer requires raw >= 0, got {raw}")
    if spec.kind == LIKELIHOOD_RATIO:
        return raw / (raw + spec.scale)
    return math.exp(-raw / spec.scale)


def fuse(scores: Mapping[str, Union[float, ComparatorScore]], cfg: FusionConfig) -> float:
    """Weighted arithmetic mean of normalized scores.

    ``scores`` maps comparator name to the raw output (a float) or to a
    full ``ComparatorScore``, whose ``raw`` field is used.  Every
    comparator named in the config weights must be present; extra
    entries are ignored.
    """
    total_w = sum(cfg.weights.values())
    fused = 0.0
    for name, w in cfg.weights.items():
        if name not in scores:
            raise MissingComparator(f"score for configured comparator {name!r} missing")
        value = scores[name]
        raw = value.raw if isinstance(value, ComparatorScore) else value
        s = normalize(raw, cfg.normalizers[name])
        fused += (w / total_w) * s
    return fused


def fused_log_score(fused: float, log_floor: float = 1e-6) -> float:
    """Log of the fused similarity, floored so empty matches stay finite."""
    if not math.isfinite(fused):
        raise NonFiniteInput(f"fused similarity must be finite, got {fused}")
    return math.log(max(fused, log_floor))
