"""Candidate RoI reduction: corner-grid local maxima and box-level NMS.

Corner types are indexed 0..3 as top-left, top-right, bottom-left,
bottom-right. A cell is a corner when its probability exceeds ``lambda_c``
and it is the maximum of the ``(2m+1) x (2m+1)`` window around it. Windows
are truncated at the grid edge. Inside a window, equal values are broken in
favour of the lexicographically smallest ``(y, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Box, boxes_to_array
from .suppression import nms_indices

TOP_LEFT, TOP_RIGHT, BOTTOM_LEFT, BOTTOM_RIGHT = range(4)
CORNER_NAMES = ("top_left", "top_right", "bottom_left", "bottom_right")


class Corner(NamedTuple):
    k: int
    y: int
    x: int
    prob: float


@dataclass(frozen=True, eq=False)
class CornerGrid:
    probs: np.ndarray
    lambda_c: float = 0.01
    m: int = 1

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 3 or probs.shape[0] != 4 or probs.shape[1] < 1 or probs.shape[2] < 1:
            raise ValueError(f"corner grid must have shape (4, H, W) with H, W >= 1, got {probs.shape}")
        if not np.all(np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0:
            raise ValueError("corner probabilities must lie in [0, 1]")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"window radius m must be a positive integer, got {self.m!r}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)


def local_max_mask(plane: np.ndarray, m: int) -> np.ndarray:
    """Cells that beat every other cell in their truncated window.

    A neighbour earlier in raster order must be strictly smaller; a later
    one may tie.
    """
    h, w = plane.shape
    padded = np.full((h + 2 * m, w + 2 * m), -np.inf)
    padded[m : m + h, m : m + w] = plane
    mask = np.ones((h, w), dtype=bool)
    for dy in range(-m, m + 1):
        for dx in range(-m, m + 1):
            if dy == 0 and dx == 0:
                continue
            other = padded[m + dy : m + dy + h, m + dx : m + dx + w]
            if (dy, dx) < (0, 0):
                mask &= plane > other
            else:
                mask &= plane >= other
    return mask


def corner_local_max(grid: CornerGrid) -> list[Corner]:
    """Corners sorted by ``(k, y, x)``."""
    out = []
    for k in range(4):
        plane = grid.probs[k]
        mask = local_max_mask(plane, grid.m) & (plane > grid.lambda_c)
        ys, xs = np.nonzero(mask)
        out.extend(Corner(k, int(y), int(x), float(plane[y, x])) for y, x in zip(ys, xs))
    return out


def corners_to_rois(
    top_left: Sequence[Corner], bottom_right: Sequence[Corner], max_rois: int
) -> list[tuple[Box, float]]:
    """Pair top-left with bottom-right corners into scored boxes.

    A pair is valid when the bottom-right corner lies strictly right of and
    below the top-left one. The score is the product of corner probabilities.
    The best ``max_rois`` pairs are returned, ties going to the smaller
    ``(x_min, y_min, x_max, y_max)``.
    """
    if max_rois < 1:
        raise ValueError(f"max_rois must be >= 1, got {max_rois}")
    pairs = []
    for tl in top_left:
        for br in bottom_right:
            if br.x > tl.x and br.y > tl.y:
                pairs.append((-(tl.prob * br.prob), tl.x, tl.y, br.x, br.y))
    pairs.sort()
    return [
        (Box.from_corners(float(x0), float(y0), float(x1), float(y1)), -neg)
        for neg, x0, y0, x1, y1 in pairs[:max_rois]
    ]


def roi_nms_cluster(boxes: Sequence[tuple[Box, float]], threshold: float = 0.7) -> list[Box]:
    """Hard NMS over candidate RoIs scored by their candidate score."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if not boxes:
        return []
    arr = boxes_to_array(b for b, _ in boxes)
    scores = np.array([s for _, s in boxes], dtype=float)
    return [boxes[i][0] for i in nms_indices(arr, scores, threshold)]
