"""Run configuration: associator choice, comparators, fusion weights,
noise model, and checkpoint paths, serialized as JSON.

A run config names everything needed to reproduce a tracking run.  The
seven shipped presets (one per associator/comparator variant) live in
the package's ``presets`` directory; ``preset_run_config`` loads one by
name.  Checkpoint existence is deliberately not checked at parse time:
configs are written before training produces the files, and the check
happens when a tracker is actually built.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Optional, Tuple

from .fusion import EXP_NEG_SCALED, IDENTITY, LIKELIHOOD_RATIO, NormalizerSpec
from .kinematic import NoiseConfig
from .mht import MhtConfig

GREEDY = "greedy"
MHT = "mht"
ASSOCIATORS = (GREEDY, MHT)

COMPARATOR_NAMES = ("ekf", "dekf", "ssd", "siamese", "siamese_attn")
_NORMALIZER_KINDS = (LIKELIHOOD_RATIO, EXP_NEG_SCALED, IDENTITY)

PRESET_NAMES = (
    "greedy_ekf",
    "mht_ekf_ssd",
    "mht_ekf_siamese",
    "mht_ekf_siamese_attn",
    "mht_dekf_ssd",
    "mht_dekf_siamese",
    "mht_dekf_siamese_attn",
)


@dataclass(frozen=True)
class RunConfig:
    associator: str
    comparators: Tuple[str, ...]
    weights: Dict[str, float]
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    mht: MhtConfig = field(default_factory=MhtConfig)
    chip_size: Tuple[int, int] = (100, 100)
    frame_size: Tuple[int, int] = (256, 256)
    checkpoints: Dict[str, Optional[str]] = field(default_factory=dict)
    normalizer_overrides: Dict[str, NormalizerSpec] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.associator not in ASSOCIATORS:
            raise ValueError(f"associator must be one of {ASSOCIATORS}, got {self.associator!r}")
        for name in self.comparators:
            if name not in COMPARATOR_NAMES:
                raise ValueError(f"unknown comparator {name!r}; known: {COMPARATOR_NAMES}")
        if len(set(self.comparators)) != len(self.comparators):
            raise ValueError("comparator list contains duplicates")
        if not self.comparators:
            raise ValueError("at least one comparator is required")
        for name in self.weights:
            if name not in self.comparators:
                raise ValueError(f"weight for {name!r} but it is not in the comparator list")
        for name, w in self.weights.items():
            if w < 0.0:
                raise ValueError(f"weight for {name!r} must be >= 0")
        for name in self.checkpoints:
            if name not in ("dekf", "siamese", "siamese_attn"):
                raise ValueError(f"checkpoint key {name!r} is not a model-backed comparator")
        if self.chip_size[0] <= 0 or self.chip_size[1] <= 0:
            raise ValueError("chip_size must be positive")
        if self.frame_size[0] <= 0 or self.frame_size[1] <= 0:
            raise ValueError("frame_size must be positive")
        # The MHT config must agree with the top-level noise model.
        if self.mht.noise != self.noise:
            object.__setattr__(
                self,
                "mht",
                MhtConfig(
                    gate_prob=self.mht.gate_prob,
                    nscan=self.mht.nscan,
                    max_misses=self.mht.max_misses,
                    confirm_hits=self.mht.confirm_hits,
                    max_leaves_per_tree=self.mht.max_leaves_per_tree,
                    miss_log_penalty=self.mht.miss_log_penalty,
                    new_track_log_penalty=self.mht.new_track_log_penalty,
                    max_exact_vertices=self.mht.max_exact_vertices,
                    noise=self.noise,
                ),
            )


def run_config_to_dict(cfg: RunConfig) -> dict:
    return {
        "associator": cfg.associator,
        "comparators": list(cfg.comparators),
        "weights": dict(cfg.weights),
        "noise": {
            "measurement_std": cfg.noise.measurement_std,
            "process_std_pos": cfg.noise.process_std_pos,
            "process_std_vel": cfg.noise.process_std_vel,
            "init_vel_var_inflation": cfg.noise.init_vel_var_inflation,
        },
        "mht": {
            "gate_prob": cfg.mht.gate_prob,
            "nscan": cfg.mht.nscan,
            "max_misses": cfg.mht.max_misses,
            "confirm_hits": cfg.mht.confirm_hits,
            "max_leaves_per_tree": cfg.mht.max_leaves_per_tree,
            "miss_log_penalty": cfg.mht.miss_log_penalty,
            "new_track_log_penalty": cfg.mht.new_track_log_penalty,
            "max_exact_vertices": cfg.mht.max_exact_vertices,
        },
        "chip_size": list(cfg.chip_size),
        "frame_size": list(cfg.frame_size),
        "checkpoints": dict(cfg.checkpoints),
        "normalizers": {
            name: {"kind": spec.kind, "scale": spec.scale}
            for name, spec in sorted(cfg.normalizer_overrides.items())
        },
        "seed": cfg.seed,
    }


def run_config_from_dict(data: dict) -> RunConfig:
    noise = NoiseConfig(**data.get("noise", {}))
    mht_kwargs = dict(data.get("mht", {}))
    mht = MhtConfig(noise=noise, **mht_kwargs)
    overrides: Dict[str, NormalizerSpec] = {}
    for name, spec in data.get("normalizers", {}).items():
        kind = spec.get("kind")
        if kind not in _NORMALIZER_KINDS:
            raise ValueError(f"unknown normalizer kind {kind!r} for {name!r}")
        overrides[name] = NormalizerSpec(kind=kind, scale=float(spec.get("scale", 1.0)))
    return RunConfig(
        associator=data["associator"],
        comparators=tuple(data["comparators"]),
        weights={k: float(v) for k, v in data.get("weights", {}).items()},
        noise=noise,
        mht=mht,
        chip_size=tuple(data.get("chip_size", (100, 100))),
        frame_size=tuple(data.get("frame_size", (256, 256))),
        checkpoints={k: v for k, v in data.get("checkpoints", {}).items()},
        normalizer_overrides=overrides,
        seed=int(data.get("seed", 0)),
    )


def save_run_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(run_config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return run_config_from_dict(json.load(fh))


def preset_run_config(name: str) -> RunConfig:
    """Load one of the shipped associator/comparator variant presets."""
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; available: {list(PRESET_NAMES)}")
    ref = resources.files("airtrack").joinpath("presets", f"{name}.json")
    with ref.open("r", encoding="utf-8") as fh:
        return run_config_from_dict(json.load(fh))


def resolve_checkpoint(cfg: RunConfig, name: str, base_dir: Optional[str] = None) -> str:
    """Absolute checkpoint path for a model-backed comparator; raises when
    the config names no file or the file does not exist."""
    path = cfg.checkpoints.get(name)
    if not path:
        raise ValueError(
            f"comparator {name!r} needs a checkpoint; set checkpoints[{name!r}] in the config"
        )
    if not os.path.isabs(path) and base_dir is not None:
        path = os.path.join(base_dir, path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint for {name!r} not found: {path}")
    return path
