"""Model checkpoints as deterministic flat binary files.

Layout: an ASCII header line, one canonical-JSON metadata line (model
kind, config, parameter names and shapes in sorted order), then the
raw little-endian float64 parameter buffers concatenated in that same
order.  The same model always serializes to the same bytes, so runs
can be compared by file hash; archive formats that embed timestamps
would break that.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from typing import Dict, List, Tuple, Union

import numpy as np

from . import nn
from .deepekf import DeepEkfConfig, DeepEkfModel
from .errors import ParseError
from .visual import SiameseConfig, SiameseModel

_MAGIC = b"airtrack-checkpoint v1\n"
KIND_DEEPEKF = "deepekf"
KIND_SIAMESE = "siamese"

AnyModel = Union[DeepEkfModel, SiameseModel]


def _tupled(config_dict: dict, tuple_keys: Tuple[str, ...]) -> dict:
    out = dict(config_dict)
    for key in tuple_keys:
        if key in out and isinstance(out[key], list):
            out[key] = tuple(out[key])
    return out


def save_checkpoint(model: AnyModel, path: str) -> None:
    if isinstance(model, DeepEkfModel):
        kind = KIND_DEEPEKF
    elif isinstance(model, SiameseModel):
        kind = KIND_SIAMESE
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    names = sorted(model.params)
    meta = {
        "kind": kind,
        "config": asdict(model.cfg),
        "params": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
    }
    meta_line = json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(meta_line.encode("utf-8"))
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())


def _read_meta(path: str) -> Tuple[dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise ParseError(f"{path}: not a checkpoint file (bad magic)")
    rest = blob[len(_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: truncated metadata line")
    try:
        meta = json.loads(rest[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad metadata: {exc}") from None
    return meta, rest[nl + 1:]


def checkpoint_kind(path: str) -> str:
    meta, _ = _read_meta(path)
    kind = meta.get("kind")
    if kind not in (KIND_DEEPEKF, KIND_SIAMESE):
        raise ParseError(f"{path}: unknown checkpoint kind {kind!r}")
    return kind


def load_checkpoint(path: str) -> AnyModel:
    meta, payload = _read_meta(path)
    kind = meta.get("kind")
    if kind == KIND_DEEPEKF:
        cfg = DeepEkfConfig(**_tupled(meta["config"], ("conv_channels",)))
        model: AnyModel = DeepEkfModel(cfg)
    elif kind == KIND_SIAMESE:
        cfg = SiameseConfig(**_tupled(meta["config"], ("conv_channels",)))
        model = SiameseModel(cfg)
    else:
        raise ParseError(f"{path}: unknown checkpoint kind {kind!r}")

    entries: List[dict] = meta.get("params", [])
    stored = {e["name"]: tuple(e["shape"]) for e in entries}
    have = {n: model.params[n].data.shape for n in model.params}
    if stored != have:
        missing = sorted(set(have) - set(stored))
        extra = sorted(set(stored) - set(have))
        mismatched = sorted(
            n for n in set(stored) & set(have) if stored[n] != have[n]
        )
        raise ParseError(
            f"{path}: parameter layout mismatch "
            f"(missing {missing}, extra {extra}, shape-mismatched {mismatched})"
        )
    offset = 0
    for e in entries:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise ParseError(f"{path}: truncated parameter data at {e['name']!r}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        model.params[e["name"]] = nn.parameter(arr.astype(np.float64))
        offset += nbytes
    if offset != len(payload):
        raise ParseError(f"{path}: {len(payload) - offset} trailing bytes after parameters")
    return model


def load_deepekf_checkpoint(path: str) -> DeepEkfModel:
    model = load_checkpoint(path)
    if not isinstance(model, DeepEkfModel):
        raise ParseError(f"{path}: expected a {KIND_DEEPEKF} checkpoint")
    return model


def load_siamese_checkpoint(path: str) -> SiameseModel:
    model = load_checkpoint(path)
    if not isinstance(model, SiameseModel):
        raise ParseError(f"{path}: expected a {KIND_SIAMESE} checkpoint")
    return model
