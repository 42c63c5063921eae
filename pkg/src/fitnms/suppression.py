"""Hard NMS (the all-pairs rule) and Gaussian Soft-NMS.

Hard NMS discards box ``i`` when some box ``j`` overlaps it by more than
``lambda_nms`` and has a strictly higher score. A discarded box still
suppresses others, and equal scores never suppress each other. The fast
path uses the equivalent form: keep ``i`` iff the largest IoU between ``i``
and any strictly higher-scored box is at most ``lambda_nms``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fitness import Detection, FitnessParams, score_array
from .geometry import boxes_to_array, iou, iou_matrix, Box


@dataclass(frozen=True)
class SoftNmsParams:
    sigma: float = 0.5
    score_floor: float = 0.001

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.score_floor >= 0:
            raise ValueError(f"score_floor must be non-negative, got {self.score_floor}")


@dataclass(frozen=True)
class NmsConfig:
    """Suppression settings.

    ``soft`` selects Soft-NMS instead of hard NMS; ``lambda_nms`` is then
    unused. ``per_class=False`` runs one class-agnostic pass on each box's
    best class score.
    """

    lambda_nms: float = 0.5
    params: FitnessParams = field(default_factory=FitnessParams)
    soft: Optional[SoftNmsParams] = None
    per_class: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.lambda_nms <= 1.0:
            raise ValueError(f"lambda_nms must lie in (0, 1], got {self.lambda_nms}")


def nms_reference(boxes: Sequence[Box], scores: Sequence[float], lambda_nms: float) -> list[int]:
    """Literal double loop over all pairs; returns kept indices in input order."""
    kept = []
    for i, b_i in enumerate(boxes):
        discard = False
        for j, b_j in enumerate(boxes):
            if iou(b_i, b_j) > lambda_nms:
                if scores[j] > scores[i]:
                    discard = True
        if not discard:
            kept.append(i)
    return kept


def suppressor_overlap(boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """For every box, the largest IoU with any strictly higher-scored box (0 if none)."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if n == 0:
        return np.zeros(0)
    overlaps = iou_matrix(boxes, boxes)
    higher = scores[None, :] > scores[:, None]
    return np.where(higher, overlaps, 0.0).max(axis=1)


def nms_indices(boxes: np.ndarray, scores: np.ndarray, lambda_nms: float) -> np.ndarray:
    """Kept indices in input order; same output as :func:`nms_reference`."""
    return np.flatnonzero(suppressor_overlap(boxes, scores) <= lambda_nms)


def soft_nms_indices(
    boxes: np.ndarray, scores: np.ndarray, sigma: float, score_floor: float
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy Gaussian Soft-NMS.

    Repeatedly selects the highest current score (lowest index on ties) and
    multiplies every remaining score by ``exp(-iou**2 / sigma)`` against it.
    Scores that fall below ``score_floor`` are dropped.

    Returns:
        Selected indices in selection order and their decayed scores.
    """
    current = np.array(scores, dtype=float)
    overlaps = iou_matrix(boxes, boxes)
    alive = current >= score_floor
    order, decayed = [], []
    while alive.any():
        candidates = np.flatnonzero(alive)
        pick = candidates[np.argmax(current[candidates])]
        order.append(pick)
        decayed.append(current[pick])
        alive[pick] = False
        rest = np.flatnonzero(alive)
        current[rest] *= np.exp(-(overlaps[pick, rest] ** 2) / sigma)
        alive[rest] = current[rest] >= score_floor
    return np.array(order, dtype=int), np.array(decayed, dtype=float)


def nms(dets: list[Detection], class_id: int, cfg: NmsConfig) -> list[Detection]:
    """Hard NMS of ``dets`` for one class, preserving input order."""
    if not dets:
        return []
    scores = score_array(dets, class_id, cfg.params)
    keep = nms_indices(boxes_to_array(d.box for d in dets), scores, cfg.lambda_nms)
    return [dets[i] for i in keep]


def soft_nms(dets: list[Detection], class_id: int, cfg: NmsConfig) -> list[tuple[Detection, float]]:
    """Soft-NMS of ``dets`` for one class; pairs come out in selection order."""
    if not dets:
        return []
    soft = cfg.soft or SoftNmsParams()
    scores = score_array(dets, class_id, cfg.params)
    order, decayed = soft_nms_indices(
        boxes_to_array(d.box for d in dets), scores, soft.sigma, soft.score_floor
    )
    return [(dets[i], float(s)) for i, s in zip(order, decayed)]


def suppress_image(
    dets: list[Detection], cfg: NmsConfig, num_classes: Optional[int] = None
) -> list[tuple[int, int, float]]:
    """Run the configured suppression over every class of one image.

    Returns ``(detection_index, class_id, score)`` triples, grouped by class
    and in input order within a class (selection order for Soft-NMS).
    """
    if not dets:
        return []
    if num_classes is None:
        num_classes = dets[0].class_probs.shape[0]
    boxes = boxes_to_array(d.box for d in dets)
    class_scores = np.stack([score_array(dets, c, cfg.params) for c in range(num_classes)], axis=1)

    def run(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if cfg.soft is not None:
            return soft_nms_indices(boxes, scores, cfg.soft.sigma, cfg.soft.score_floor)
        keep = nms_indices(boxes, scores, cfg.lambda_nms)
        return keep, scores[keep]

    out = []
    if cfg.per_class:
        for c in range(num_classes):
            idx, s = run(class_scores[:, c])
            out.extend((int(i), c, float(v)) for i, v in zip(idx, s))
    else:
        best = class_scores.argmax(axis=1)
        idx, s = run(class_scores[np.arange(len(dets)), best])
        out.extend((int(i), int(best[i]), float(v)) for i, v in zip(idx, s))
    return out


def gaussian_decay(overlap: float, sigma: float) -> float:
    return math.exp(-(overlap**2) / sigma)
