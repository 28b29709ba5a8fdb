"""Shared fixtures for the airtrack test suite."""
import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_box(x=0.0, y=0.0, w=10.0, h=10.0):
    from airtrack.core import BoundingBox

    return BoundingBox(x=x, y=y, w=w, h=h)


def make_detection(frame_index=0, detection_id=0, x=0.0, y=0.0, w=10.0, h=10.0,
                   chip=None, confidence=1.0, label=""):
    from airtrack.core import Detection

    return Detection(
        frame_index=frame_index,
        detection_id=detection_id,
        box=make_box(x, y, w, h),
        label=label,
        confidence=confidence,
        chip=chip,
    )


def make_chip(h=8, w=8, c=3, value=0.5, rng=None):
    from airtrack.core import Chip

    if rng is not None:
        return Chip(pixels=rng.uniform(0.0, 1.0, size=(h, w, c)))
    return Chip(pixels=np.full((h, w, c), float(value)))
