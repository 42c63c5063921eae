"""Axis-aligned boxes, IoU and the per-coordinate overlap bounds used by the bounded regression cost.

Boxes are stored in center form ``(cx, cy, w, h)``. Corner form
``(x_min, y_min, x_max, y_max)`` is an explicit conversion. Areas use
continuous coordinates, no ``+1`` pixel convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in center form."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("cx", "cy", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"box {name} must be finite, got {getattr(self, name)!r}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive width and height, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x_min: float, y_min: float, x_max: float, y_max: float) -> "Box":
        return cls(
            (x_min + x_max) / 2.0,
            (y_min + y_max) / 2.0,
            x_max - x_min,
            y_max - y_min,
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box":
        cx, cy, w, h = (float(v) for v in values)
        return cls(cx, cy, w, h)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        hw, hh = self.w / 2.0, self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


def _overlap_1d(c1: float, s1: float, c2: float, s2: float) -> float:
    lo = max(c1 - s1 / 2.0, c2 - s2 / 2.0)
    hi = min(c1 + s1 / 2.0, c2 + s2 / 2.0)
    return max(0.0, hi - lo)


def iou(a: Box, b: Box) -> float:
    """Intersection area divided by union area of two boxes."""
    inter = _overlap_1d(a.cx, a.w, b.cx, b.w) * _overlap_1d(a.cy, a.h, b.cy, b.h)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` center-form array."""
    rows = [b.as_array() for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=float)
    return np.stack(rows)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two ``(N, 4)`` and ``(M, 4)`` center-form arrays.

    Returns an ``(N, M)`` array. Inputs are assumed to hold valid boxes.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    a_lo = a[:, None, :2] - a[:, None, 2:] / 2.0
    a_hi = a[:, None, :2] + a[:, None, 2:] / 2.0
    b_lo = b[None, :, :2] - b[None, :, 2:] / 2.0
    b_hi = b[None, :, :2] + b[None, :, 2:] / 2.0
    span = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    inter = span[..., 0] * span[..., 1]
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    return np.minimum(1.0, inter / union)


def iou_bound_x(dx: float, w_t: float) -> float:
    """Closed-form positional overlap term ``(w_t - 2|dx|) / (w_t + 2|dx|)``, floored at 0.

    Equals 0.5 at ``|dx| = w_t / 6`` and 0 at ``|dx| = w_t / 2``. It is not
    the IoU of ``(x_t + dx, y_t, w_t, h_t)`` with the target, which is
    ``(w_t - |dx|) / (w_t + |dx|)``; it sits below that curve for every
    ``dx != 0``. Also used for the vertical offset with ``h_t`` substituted.
    """
    if not w_t > 0:
        raise ValueError(f"target extent must be positive, got {w_t}")
    a = 2.0 * abs(dx)
    return max(0.0, (w_t - a) / (w_t + a))


def iou_bound_w(w: float, w_t: float) -> float:
    """Best IoU reachable when only the width is free (or height, by substitution)."""
    if not (w > 0 and w_t > 0):
        raise ValueError(f"widths must be positive, got w={w}, w_t={w_t}")
    return min(w / w_t, w_t / w)


def iou_bounds(b: Box, target: Box) -> dict[str, float]:
    """All four per-coordinate bounds of ``b`` against ``target``."""
    return {
        "x": iou_bound_x(b.cx - target.cx, target.w),
        "y": iou_bound_x(b.cy - target.cy, target.h),
        "w": iou_bound_w(b.w, target.w),
        "h": iou_bound_w(b.h, target.h),
    }


def max_iou_over(gt: Iterable[Box], b: Box) -> float:
    """Largest IoU between ``b`` and any box of ``gt``; 0 for an empty set."""
    return max((iou(b, g) for g in gt), default=0.0)
