"""Seeded synthetic scenario generation.

A scenario describes a handful of objects moving through a fixed-size
frame under a drifting, zooming camera.  The generator produces both
the noisy per-frame detections a tracker consumes (with procedural
appearance chips) and the clean ground-truth track records the
evaluator scores against.  Everything is a pure function of the spec,
so a fixed seed reproduces byte-identical output.

Motion kinds:

* ``linear``: constant velocity.
* ``curved``: constant velocity magnitude with a nonzero heading turn
  rate, optionally confined to a frame window.
* ``crossing``: a path anchored at a shared meeting point so that two
  objects with the same anchor pass through it at the same frame; may
  additionally carry a turn window or a bounce (heading reflection),
  which keeps the visible segments smooth while letting the hidden part
  of an occluded interval break a straight-line extrapolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BoundingBox, Chip, Detection, PlatformMeta
from .errors import SpecError
from .evaluation import TrackRecord

LINEAR = "linear"
CURVED = "curved"
CROSSING = "crossing"
MOTION_KINDS = (LINEAR, CURVED, CROSSING)

PRESENCE_ABSENT = "absent"
PRESENCE_UNDETECTED = "undetected"
PRESENCE_MODES = (PRESENCE_ABSENT, PRESENCE_UNDETECTED)

DEFAULT_CHIP_SIZE = 16


@dataclass(frozen=True)
class PatchSpec:
    """A small solid-color block stamped into an object's chips.

    Twin objects share a texture and differ only in their patch, so
    whole-chip pixel distances barely separate them while an embedding
    that attends to the right region can.
    """

    row: int
    col: int
    size: int
    color: Tuple[float, float, float]

    def validate(self, chip_size: int) -> None:
        if self.size < 1:
            raise SpecError("patch size must be >= 1")
        if not (0 <= self.row and self.row + self.size <= chip_size):
            raise SpecError("patch rows out of chip bounds")
        if not (0 <= self.col and self.col + self.size <= chip_size):
            raise SpecError("patch cols out of chip bounds")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise SpecError("patch color channels must lie in [0, 1]")


@dataclass(frozen=True)
class ObjectSpec:
    """One object's motion, appearance, and occlusion schedule.

    The path is anchored: the object sits at ``anchor`` on frame
    ``anchor_frame`` and is integrated forward and backward from there,
    so crossing pairs are built by sharing an anchor.
    """

    motion: str
    texture_id: int
    anchor: Tuple[float, float]
    anchor_frame: int
    speed: float
    heading: float
    size: Tuple[float, float] = (14.0, 14.0)
    turn_rate: float = 0.0
    turn_window: Optional[Tuple[int, int]] = None
    bounce_frame: Optional[int] = None
    occlusions: Tuple[Tuple[int, int], ...] = ()
    color_jitter: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    patch: Optional[PatchSpec] = None

    def validate(self, n_frames: int, chip_size: int) -> None:
        if self.motion not in MOTION_KINDS:
            raise SpecError(f"unknown motion kind {self.motion!r}")
        if self.speed <= 0.0:
            raise SpecError("speed must be positive")
        if self.size[0] <= 0.0 or self.size[1] <= 0.0:
            raise SpecError("object size must be positive")
        if not (0 <= self.anchor_frame < n_frames):
            raise SpecError("anchor_frame outside the sequence")
        if self.motion == LINEAR:
            if self.turn_rate != 0.0 or self.turn_window is not None:
                raise SpecError("linear motion cannot turn")
            if self.bounce_frame is not None:
                raise SpecError("linear motion cannot bounce")
        if self.motion == CURVED and self.turn_rate == 0.0:
            raise SpecError("curved motion needs a nonzero turn_rate")
        if self.turn_window is not None:
            a, b = self.turn_window
            if not (0 <= a <= b < n_frames):
                raise SpecError(f"turn window {self.turn_window} outside the sequence")
        if self.bounce_frame is not None and not (0 <= self.bounce_frame < n_frames):
            raise SpecError("bounce_frame outside the sequence")
        for a, b in self.occlusions:
            if not (0 <= a <= b < n_frames):
                raise SpecError(f"occlusion window ({a}, {b}) outside the sequence")
        if not all(c > 0.0 for c in self.color_jitter):
            raise SpecError("color jitter gains must be positive")
        if self.patch is not None:
            self.patch.validate(chip_size)

    def occluded_at(self, frame: int) -> bool:
        return any(a <= frame <= b for a, b in self.occlusions)


@dataclass(frozen=True)
class CameraSpec:
    """Linear camera drift and zoom ramp over the sequence."""

    drift: Tuple[float, float] = (0.0, 0.0)
    zoom_start: float = 1.0
    zoom_end: float = 1.0

    def validate(self) -> None:
        if self.zoom_start <= 0.0 or self.zoom_end <= 0.0:
            raise SpecError("zoom factors must be positive")

    def zoom_at(self, frame: int, n_frames: int) -> float:
        if n_frames <= 1:
            return self.zoom_start
        t = frame / (n_frames - 1)
        return self.zoom_start + (self.zoom_end - self.zoom_start) * t


@dataclass(frozen=True)
class ScenarioNoise:
    """Additive corruption applied to emitted detections.

    ``gain_jitter`` is the standard deviation of a per-detection
    multiplicative brightness gain (exposure variation); it perturbs
    every chip pixel coherently.
    """

    measurement_std: float = 1.5
    size_jitter: float = 0.0
    chip_noise: float = 0.02
    gain_jitter: float = 0.0
    clutter_rate: float = 0.0
    drop_prob: float = 0.0

    def validate(self) -> None:
        if self.measurement_std < 0.0 or self.size_jitter < 0.0 or self.chip_noise < 0.0:
            raise SpecError("noise magnitudes must be >= 0")
        if self.gain_jitter < 0.0:
            raise SpecError("gain_jitter must be >= 0")
        if self.clutter_rate < 0.0:
            raise SpecError("clutter_rate must be >= 0")
        if not (0.0 <= self.drop_prob < 1.0):
            raise SpecError("drop_prob must lie in [0, 1)")


@dataclass(frozen=True)
class ScenarioSpec:
    n_frames: int
    frame_size: Tuple[int, int]  # (width, height)
    objects: Tuple[ObjectSpec, ...]
    camera: CameraSpec = field(default_factory=CameraSpec)
    noise: ScenarioNoise = field(default_factory=ScenarioNoise)
    occlusion_presence: str = PRESENCE_ABSENT
    chip_size: int = DEFAULT_CHIP_SIZE
    seed: int = 0

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def __post_init__(self):
        if self.n_frames < 1:
            raise SpecError("n_frames must be >= 1")
        if self.frame_size[0] <= 0 or self.frame_size[1] <= 0:
            raise SpecError("frame dimensions must be positive")
        if self.occlusion_presence not in PRESENCE_MODES:
            raise SpecError(
                f"occlusion_presence must be one of {PRESENCE_MODES}, "
                f"got {self.occlusion_presence!r}"
            )
        if self.chip_size < 4:
            raise SpecError("chip_size must be >= 4")
        self.camera.validate()
        self.noise.validate()
        for obj in self.objects:
            obj.validate(self.n_frames, self.chip_size)


@dataclass(frozen=True)
class Scenario:
    """Generated detections (per frame) and clean ground truth."""

    spec: ScenarioSpec
    frames: Tuple[Tuple[Detection, ...], ...]
    gt: Tuple[TrackRecord, ...]


def trajectory(obj: ObjectSpec, n_frames: int) -> np.ndarray:
    """World-coordinate centers for every frame, shape (n_frames, 2).

    Heading evolves by the turn rate inside the turn window (or always,
    when no window is given) and reflects about horizontal at the
    bounce frame; position integrates one speed-step per frame.  The
    path passes through the anchor exactly at the anchor frame.
    """

    def rate_at(frame: int) -> float:
        if obj.turn_rate == 0.0:
            return 0.0
        if obj.turn_window is None:
            return obj.turn_rate
        a, b = obj.turn_window
        return obj.turn_rate if a <= frame <= b else 0.0

    headings = np.empty(n_frames)
    headings[obj.anchor_frame] = obj.heading
    for f in range(obj.anchor_frame + 1, n_frames):
        prev = headings[f - 1]
        if obj.bounce_frame is not None and f == obj.bounce_frame:
            prev = -prev
        headings[f] = prev + rate_at(f - 1)
    for f in range(obj.anchor_frame - 1, -1, -1):
        nxt = headings[f + 1]
        if obj.bounce_frame is not None and f + 1 == obj.bounce_frame:
            nxt = -nxt
        headings[f] = nxt - rate_at(f)

    pos = np.empty((n_frames, 2))
    pos[obj.anchor_frame] = obj.anchor
    for f in range(obj.anchor_frame + 1, n_frames):
        th = headings[f - 1]
        pos[f] = pos[f - 1] + obj.speed * np.array([math.cos(th), math.sin(th)])
    for f in range(obj.anchor_frame - 1, -1, -1):
        th = headings[f]
        pos[f] = pos[f + 1] - obj.speed * np.array([math.cos(th), math.sin(th)])
    return pos


def _texture_params(texture_id: int) -> Dict[str, np.ndarray]:
    """Deterministic per-texture parameters for the procedural pattern."""
    rng = np.random.default_rng(1_000_003 * (texture_id + 1))
    return {
        "freq": rng.uniform(1.5, 5.0, size=2),
        "angle": rng.uniform(0.0, math.pi),
        "mix": rng.uniform(0.3, 0.7),
        "phase": rng.uniform(0.0, 2.0 * math.pi, size=2),
        "checker": rng.uniform(2.0, 4.0),
    }


def render_chip(
    obj: ObjectSpec,
    frame: int,
    chip_size: int,
    noise_std: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Chip:
    """Procedural appearance crop for one object at one frame.

    The pattern combines two oriented sinusoids and a soft checker,
    drifts slowly in phase over frames (a stand-in for viewpoint
    change), is tinted by the object's color jitter, and finally gets
    the identity patch stamped in.
    """
    p = _texture_params(obj.texture_id)
    grid = (np.arange(chip_size) + 0.5) / chip_size
    xx, yy = np.meshgrid(grid, grid)
    ca, sa = math.cos(p["angle"]), math.sin(p["angle"])
    u = xx * ca + yy * sa
    v = -xx * sa + yy * ca
    drift = 0.05 * frame
    s1 = np.sin(2.0 * math.pi * p["freq"][0] * u + p["phase"][0] + drift)
    s2 = np.cos(2.0 * math.pi * p["freq"][1] * v + p["phase"][1] - 0.7 * drift)
    check = np.sin(2.0 * math.pi * p["checker"] * xx) * np.sin(
        2.0 * math.pi * p["checker"] * yy
    )
    base = 0.5 + 0.5 * (p["mix"] * s1 + (1.0 - p["mix"]) * s2) * (0.7 + 0.3 * check)
    gains = np.array(obj.color_jitter)
    pixels = np.clip(base[:, :, None] * gains[None, None, :] / gains.max(), 0.0, 1.0)
    if obj.patch is not None:
        pa = obj.patch
        pixels[pa.row : pa.row + pa.size, pa.col : pa.col + pa.size, :] = pa.color
    if noise_std > 0.0 and rng is not None:
        pixels = np.clip(pixels + rng.normal(0.0, noise_std, pixels.shape), 0.0, 1.0)
    return Chip(pixels=pixels)


def gain_adjusted(chip: Chip, gain: float) -> Chip:
    """Chip under a multiplicative brightness gain, clipped to [0, 1]."""
    if gain == 1.0:
        return chip
    return Chip(pixels=np.clip(chip.pixels * max(gain, 0.1), 0.0, 1.0))


def _clutter_chip(chip_size: int, rng: np.random.Generator) -> Chip:
    return Chip(pixels=rng.uniform(0.0, 1.0, size=(chip_size, chip_size, 3)))


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Materialize detections and ground truth for a scenario spec."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_frames
    w_frame, h_frame = spec.frame_size
    center = np.array([w_frame / 2.0, h_frame / 2.0])
    paths = [trajectory(obj, n) for obj in spec.objects]

    frames: List[Tuple[Detection, ...]] = []
    gt: List[TrackRecord] = []
    for f in range(n):
        zoom = spec.camera.zoom_at(f, n)
        shift = np.array(spec.camera.drift) * f
        dets: List[Detection] = []
        det_id = 0
        meta = PlatformMeta(
            lon=float(shift[0]) * 1e-5,
            lat=float(shift[1]) * 1e-5,
            azimuth=math.degrees(math.atan2(shift[1], 1e4)),
            elevation=-45.0,
            zoom=zoom,
        )
        for idx, obj in enumerate(spec.objects):
            pos_img = (paths[idx][f] - center) * zoom + center + shift
            size_img = np.array(obj.size) * zoom
            gt_box = BoundingBox(
                x=float(pos_img[0] - size_img[0] / 2.0),
                y=float(pos_img[1] - size_img[1] / 2.0),
                w=float(size_img[0]),
                h=float(size_img[1]),
            )
            occluded = obj.occluded_at(f)
            present = True
            if occluded and spec.occlusion_presence == PRESENCE_ABSENT:
                present = False
            gt.append(TrackRecord(track_id=idx, frame_index=f, box=gt_box, present=present))

            # Noise draws happen for every object on every frame so the
            # stream layout is independent of occlusion schedules.
            center_noise = rng.normal(0.0, spec.noise.measurement_std, size=2)
            size_noise = rng.normal(0.0, spec.noise.size_jitter, size=2)
            drop_draw = rng.random()
            confidence = float(np.clip(rng.normal(0.9, 0.05), 0.0, 1.0))
            gain = float(rng.normal(1.0, spec.noise.gain_jitter))
            chip = render_chip(
                obj, f, spec.chip_size, noise_std=spec.noise.chip_noise, rng=rng
            )
            if occluded or drop_draw < spec.noise.drop_prob:
                continue
            if spec.noise.gain_jitter > 0.0:
                chip = gain_adjusted(chip, gain)
            size_d = np.clip(size_img * (1.0 + size_noise), 2.0, None)
            pos_d = pos_img + center_noise
            dets.append(
                Detection(
                    frame_index=f,
                    detection_id=det_id,
                    box=BoundingBox(
                        x=float(pos_d[0] - size_d[0] / 2.0),
                        y=float(pos_d[1] - size_d[1] / 2.0),
                        w=float(size_d[0]),
                        h=float(size_d[1]),
                    ),
                    label="object",
                    confidence=confidence,
                    chip=chip,
                    platform=meta,
                )
            )
            det_id += 1
        if spec.noise.clutter_rate > 0.0:
            for _ in range(int(rng.poisson(spec.noise.clutter_rate))):
                cpos = rng.uniform(0.0, [w_frame, h_frame])
                cw, ch = rng.uniform(6.0, 20.0, size=2)
                dets.append(
                    Detection(
                        frame_index=f,
                        detection_id=det_id,
                        box=BoundingBox(
                            x=float(cpos[0] - cw / 2.0),
                            y=float(cpos[1] - ch / 2.0),
                            w=float(cw),
                            h=float(ch),
                        ),
                        label="clutter",
                        confidence=float(np.clip(rng.normal(0.4, 0.1), 0.0, 1.0)),
                        chip=_clutter_chip(spec.chip_size, rng),
                        platform=meta,
                    )
                )
                det_id += 1
        frames.append(tuple(dets))
    return Scenario(spec=spec, frames=tuple(frames), gt=tuple(gt))


def walkers_spec(seed: int = 0) -> ScenarioSpec:
    """Three well-separated objects with distinct textures: one straight
    line, one gentle constant curve, one straight path crossing the
    first.  Staggered occlusions include a single 10-frame window."""
    objects = (
        ObjectSpec(
            motion=LINEAR,
            texture_id=11,
            anchor=(128.0, 74.0),
            anchor_frame=62,
            speed=1.6,
            heading=0.10,
            size=(16.0, 16.0),
            occlusions=((84, 93),),
            color_jitter=(1.0, 0.72, 0.55),
        ),
        ObjectSpec(
            motion=CURVED,
            texture_id=12,
            anchor=(52.0, 196.0),
            anchor_frame=0,
            speed=1.4,
            heading=-0.18,
            turn_rate=0.004,
            size=(15.0, 15.0),
            occlusions=((30, 36),),
            color_jitter=(0.6, 1.0, 0.8),
        ),
        ObjectSpec(
            motion=CROSSING,
            texture_id=13,
            anchor=(128.0, 74.0),
            anchor_frame=62,
            speed=1.5,
            heading=0.62,
            size=(14.0, 14.0),
            occlusions=((104, 109),),
            color_jitter=(0.75, 0.75, 1.0),
        ),
    )
    return ScenarioSpec(
        n_frames=124,
        frame_size=(256, 256),
        objects=objects,
        camera=CameraSpec(drift=(0.06, -0.03), zoom_start=1.0, zoom_end=1.05),
        noise=ScenarioNoise(measurement_std=1.2, chip_noise=0.02),
        occlusion_presence=PRESENCE_ABSENT,
        seed=seed,
    )


def runners_spec(seed: int = 0) -> ScenarioSpec:
    """Two near-identical objects on shallow crossing paths with a joint
    10-frame occlusion.

    The pair crosses in view around frame 12, bends back toward each
    other in a visible turn window, and meets again inside the occlusion
    where both bounce apart.  A straight-line extrapolation across the
    gap therefore lands each track on the other object, so kinematics
    alone prefer the identity swap.  The twins share texture and color;
    only a small stamped patch differs, and the per-detection gain
    jitter buries that difference below what raw pixel distances can
    resolve while a trained embedding still separates it.
    """
    meet = (56.0, 128.0)
    objects = (
        ObjectSpec(
            motion=CROSSING,
            texture_id=21,
            anchor=meet,
            anchor_frame=12,
            speed=2.2,
            heading=0.20,
            size=(14.0, 14.0),
            turn_rate=-0.05,
            turn_window=(24, 31),
            bounce_frame=45,
            occlusions=((40, 49),),
            patch=PatchSpec(row=11, col=2, size=3, color=(0.70, 0.45, 0.30)),
        ),
        ObjectSpec(
            motion=CROSSING,
            texture_id=21,
            anchor=meet,
            anchor_frame=12,
            speed=2.2,
            heading=-0.20,
            size=(14.0, 14.0),
            turn_rate=0.05,
            turn_window=(24, 31),
            bounce_frame=45,
            occlusions=((40, 49),),
            patch=PatchSpec(row=2, col=11, size=3, color=(0.30, 0.45, 0.70)),
        ),
    )
    return ScenarioSpec(
        n_frames=90,
        frame_size=(256, 256),
        objects=objects,
        camera=CameraSpec(),
        noise=ScenarioNoise(measurement_std=2.0, chip_noise=0.04, gain_jitter=0.12),
        occlusion_presence=PRESENCE_ABSENT,
        seed=seed,
    )


PRESETS = {
    "walkers": walkers_spec,
    "runners": runners_spec,
}


def preset_spec(name: str, seed: int = 0) -> ScenarioSpec:
    if name not in PRESETS:
        raise SpecError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](seed)
