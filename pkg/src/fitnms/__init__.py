"""Fitness NMS, Bounded IoU loss, Soft-NMS, RoI clustering and detection evaluation."""

from .fitness import Detection, FitnessParams, ScoreVariant, expected_fitness, fitness_bin, score
from .geometry import Box, iou, iou_bound_w, iou_bound_x, max_iou_over
from .suppression import NmsConfig, SoftNmsParams, nms, soft_nms

__all__ = [
    "Box",
    "Detection",
    "FitnessParams",
    "NmsConfig",
    "ScoreVariant",
    "SoftNmsParams",
    "expected_fitness",
    "fitness_bin",
    "iou",
    "iou_bound_w",
    "iou_bound_x",
    "max_iou_over",
    "nms",
    "score",
    "soft_nms",
]
