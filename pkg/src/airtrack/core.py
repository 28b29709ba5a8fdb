"""Shared data model: boxes, detections, chips, tracklets, comparator contract.

Every other module builds on the types here.  Boxes are axis-aligned
rectangles in pixel coordinates with top-left origin.  Chips are small
image crops stored as float arrays in [0, 1], row-major (height, width,
channel).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from .errors import DimensionMismatch, NonFiniteInput


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y) plus width and height in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise NonFiniteInput(f"box fields must be finite, got {vals}")

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return max(self.w, 0.0) * max(self.h, 0.0)


@dataclass(frozen=True)
class PlatformMeta:
    """Sensor platform state attached to a detection."""

    lon: float
    lat: float
    azimuth: float
    elevation: float
    zoom: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.lon, self.lat, self.azimuth, self.elevation, self.zoom],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Chip:
    """Image crop as float64 pixels in [0, 1], shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3:
            raise DimensionMismatch(f"chip pixels must be (h, w, c), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise NonFiniteInput("chip pixels must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("chip pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class Detection:
    """A single sensor report on one frame."""

    frame_index: int
    detection_id: int
    box: BoundingBox
    label: str = ""
    confidence: float = 1.0
    chip: Optional[Chip] = None
    platform: Optional[PlatformMeta] = None


@dataclass
class Tracklet:
    """A confirmed or growing track: ordered observations plus bookkeeping."""

    track_id: int
    observations: list = field(default_factory=list)  # [(frame_index, Detection)]
    last_update_frame: int = -1
    misses: int = 0

    def append(self, frame_index: int, det: Detection) -> None:
        self.observations.append((frame_index, det))
        self.last_update_frame = frame_index
        self.misses = 0


@dataclass(frozen=True)
class ComparatorScore:
    """One comparator's verdict on a (branch, detection) pair."""

    name: str
    raw: float
    normalized: float

    def __post_init__(self):
        if not (0.0 <= self.normalized <= 1.0):
            raise ValueError(f"normalized score out of [0, 1]: {self.normalized}")


@runtime_checkable
class SignatureComparator(Protocol):
    """Contract every comparator implements.

    ``score`` returns a raw affinity for associating ``candidate`` with the
    branch described by ``branch``.  Raw values live on comparator-specific
    scales (likelihoods, distances); the fusion stage normalizes them.
    """

    name: str

    def begin_frame(self, frame_index: int, detections: Sequence[Detection]) -> None:
        """Hook called once per frame before any score; may precompute caches."""

    def score(self, branch: "BranchView", candidate: Detection) -> float:
        """Raw affinity of candidate vs branch; higher-is-better or
        lower-is-better depends on the comparator's declared normalizer."""


@dataclass(frozen=True)
class BranchView:
    """Read-only view of one hypothesis branch handed to comparators.

    ``key`` is stable for the branch's lifetime so comparators may cache
    per-branch state.  ``history`` holds associated observations only
    (misses excluded), oldest first.  ``cache`` is per-branch scratch
    space comparators may read and write; ``parent_cache`` is the parent
    branch's scratch space (read-only by convention) so incremental
    encoders can extend parent state instead of replaying the history.
    """

    key: int
    history: Tuple[Tuple[int, Detection], ...]
    predicted_mean: np.ndarray
    predicted_cov: np.ndarray
    innovation: np.ndarray
    innovation_cov: np.ndarray
    dt: int
    cache: Optional[Dict[str, object]] = None
    parent_cache: Optional[Dict[str, object]] = None


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when either is degenerate."""
    if a.w <= 0.0 or a.h <= 0.0 or b.w <= 0.0 or b.h <= 0.0:
        return 0.0
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def resize_chip(chip: Chip, size: Tuple[int, int]) -> Chip:
    """Resize a chip to (width, height) with bilinear interpolation.

    Uses half-pixel sample centers with edge clamping.  Resizing to the
    chip's own size returns the pixels unchanged bit-for-bit.
    """
    out_w, out_h = int(size[0]), int(size[1])
    if out_w <= 0 or out_h <= 0:
        raise ValueError(f"target size must be positive, got {size}")
    src = chip.pixels
    in_h, in_w = src.shape[0], src.shape[1]
    if (out_w, out_h) == (in_w, in_h):
        return Chip(pixels=src.copy())

    def axis_coords(n_out: int, n_in: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Half-pixel convention: output center i maps to (i + 0.5) * scale - 0.5.
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    # Convex weights keep values in range; clip guards float dust only.
    return Chip(pixels=np.clip(out, 0.0, 1.0))


def chip_to_gray(chip: Chip) -> np.ndarray:
    """Collapse channels to a single grayscale plane by averaging."""
    return chip.pixels.mean(axis=2)
