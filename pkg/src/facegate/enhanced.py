"""Adaptive detection sweep with center-proximity face selection.

The sweep starts strict (scale factor 1.10, 10 required neighbors) and
relaxes in lockstep down to (1.01, 1), stopping at the first pass that finds
anything. One face is then chosen: the largest detection whose center falls
within a configurable radius of the image center, falling back to the
detection nearest the center when none qualifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .cascade import CascadeModel
from .detector import DetectParams, Detection, detect_multiscale
from .imageio import GrayImage, Rect

ScheduleStep = tuple[float, int]


@dataclass(frozen=True)
class SweepSchedule:
    """Ordered (scale_factor, min_neighbors) passes, strictest first."""

    steps: tuple[ScheduleStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("empty schedule")
        if self.steps[0] != (1.10, 10):
            raise ValueError(f"schedule must start at (1.10, 10), got {self.steps[0]}")
        if self.steps[-1] != (1.01, 1):
            raise ValueError(f"schedule must end at (1.01, 1), got {self.steps[-1]}")
        for (f0, n0), (f1, n1) in zip(self.steps, self.steps[1:]):
            if not f1 < f0:
                raise ValueError("scale factors must strictly decrease")
            if n1 > n0:
                raise ValueError("min_neighbors must not increase")

    def __iter__(self):
        return iter(self.steps)

    def __len__(self):
        return len(self.steps)


def default_schedule() -> SweepSchedule:
    """Ten lockstep passes: (1.10, 10), (1.09, 9), ..., (1.01, 1)."""
    return SweepSchedule(tuple(
        (round(1.10 - 0.01 * i, 2), 10 - i) for i in range(10)
    ))


@dataclass(frozen=True)
class SelectionPolicy:
    """`center_radius_fraction` scales the image diagonal into the radius
    inside which detections count as central."""

    center_radius_fraction: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.center_radius_fraction <= 1.0:
            raise ValueError(
                f"center_radius_fraction must be in (0, 1], got "
                f"{self.center_radius_fraction}")


@dataclass(frozen=True)
class SelectedFace:
    rect: Rect
    dist_to_center: float
    used_params: ScheduleStep
    candidates_at_stop: int


@dataclass(frozen=True)
class EnhancedResult:
    """Selected face plus every detection from the pass that produced it."""

    face: SelectedFace
    detections: tuple[Detection, ...]


def _dist_to_center(rect: Rect, img_w: int, img_h: int) -> float:
    cx, cy = rect.center()
    return math.hypot(cx - img_w / 2.0, cy - img_h / 2.0)


def select_face(dets: list[Detection], img_w: int, img_h: int,
                policy: SelectionPolicy,
                used_params: ScheduleStep = (1.10, 10)) -> SelectedFace | None:
    """Pick one detection: largest inside the central radius, else nearest
    to the center. Invariant under permutation of `dets`."""
    if not dets:
        return None
    radius = policy.center_radius_fraction * math.hypot(img_w, img_h)
    annotated = [(d, _dist_to_center(d.rect, img_w, img_h)) for d in dets]
    central = [(d, dist) for d, dist in annotated if dist <= radius]
    if central:
        best = min(central, key=lambda t: (-t[0].rect.area, t[1],
                                           t[0].rect.y, t[0].rect.x, t[0].rect.w))
    else:
        best = min(annotated, key=lambda t: (t[1], -t[0].rect.area,
                                             t[0].rect.y, t[0].rect.x, t[0].rect.w))
    det, dist = best
    return SelectedFace(det.rect, dist, used_params, len(dets))


def detect_enhanced(model: CascadeModel, img: GrayImage,
                    schedule: SweepSchedule | None = None,
                    policy: SelectionPolicy | None = None,
                    min_size: tuple[int, int] = (30, 30),
                    on_pass: Callable[[ScheduleStep, list[Detection]], None] | None = None,
                    ) -> EnhancedResult | None:
    """Run the sweep, stopping at the first pass with detections.

    `on_pass` is called with (step, detections) for every executed pass;
    tests use it to observe the earliest-stop behavior.
    """
    schedule = schedule or default_schedule()
    policy = policy or SelectionPolicy()
    for step in schedule:
        scale_factor, min_neighbors = step
        dets = detect_multiscale(model, img, DetectParams(
            scale_factor=scale_factor,
            min_neighbors=min_neighbors,
            min_size=min_size,
        ))
        if on_pass is not None:
            on_pass(step, dets)
        if dets:
            face = select_face(dets, img.width, img.height, policy, step)
            return EnhancedResult(face, tuple(dets))
    return None
