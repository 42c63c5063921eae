"""Detection/groundtruth matching, recall, AP and mAP reports.

Matching is greedy in descending score order (input order on ties). Each
detection takes the best-overlapping still-unmatched groundtruth of its
class and is a true positive when that overlap reaches the matching IoU.
AP defaults to 101-point interpolation; an 11-point rule is available.
Area buckets are small (< 32^2), medium (32^2 to 96^2) and large (> 96^2).
There are no crowd or ignore regions.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .geometry import Box, boxes_to_array, iou_matrix

OMEGA_RANGE = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
SMALL_MAX = 32.0**2
MEDIUM_MAX = 96.0**2
AREAS = ("S", "M", "L")
CSV_COLUMNS = ("variant", "omega", "recall", "map", "map_S", "map_M", "map_L", "n_dets")


def area_category(box: Box) -> str:
    a = box.area
    if a < SMALL_MAX:
        return "S"
    if a <= MEDIUM_MAX:
        return "M"
    return "L"


class GroundTruth(NamedTuple):
    class_id: int
    box: Box

    @property
    def area_category(self) -> str:
        return area_category(self.box)


class ScoredDetection(NamedTuple):
    image_id: str
    class_id: int
    box: Box
    score: float


@dataclass
class GroundTruthSet:
    images: dict = field(default_factory=dict)
    num_classes: Optional[int] = None

    def __post_init__(self) -> None:
        if self.num_classes is not None:
            for image_id, inst in self.images.items():
                for g in inst:
                    if not 0 <= g.class_id < self.num_classes:
                        raise ValueError(f"image {image_id!r}: class id {g.class_id} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return sum(len(v) for v in self.images.values())

    def class_ids(self) -> list[int]:
        return sorted({g.class_id for inst in self.images.values() for g in inst})


def match(dets: Sequence[tuple[int, Box, float]], gts: Sequence[GroundTruth], omega: float) -> list[bool]:
    """True-positive flags for the detections of a single image.

    ``dets`` holds ``(class_id, box, score)``; flags come back in input order.
    """
    if not 0.0 < omega <= 1.0:
        raise ValueError(f"omega must lie in (0, 1], got {omega}")
    flags = [False] * len(dets)
    by_class = defaultdict(list)
    for i, (c, _, _) in enumerate(dets):
        by_class[c].append(i)
    for c, idx in by_class.items():
        g_idx = [j for j, g in enumerate(gts) if g.class_id == c]
        if not g_idx:
            continue
        scores = np.array([dets[i][2] for i in idx], dtype=float)
        order = [idx[k] for k in np.argsort(-scores, kind="stable")]
        overlaps = iou_matrix(boxes_to_array(dets[i][1] for i in order), boxes_to_array(gts[j].box for j in g_idx))
        for row, tp in zip(order, _greedy(overlaps, omega)):
            flags[row] = bool(tp)
    return flags


def _greedy(overlaps: np.ndarray, omega: float) -> np.ndarray:
    """Greedy assignment for rows already in descending score order."""
    n_det, n_gt = overlaps.shape
    tp = np.zeros(n_det, dtype=bool)
    if n_gt == 0:
        return tp
    taken = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        cand = np.where(taken, -1.0, overlaps[d])
        j = int(np.argmax(cand))
        if cand[j] >= omega:
            tp[d] = True
            taken[j] = True
    return tp


def interpolated_ap(tp: np.ndarray, n_gt: int, rule: str = "coco") -> float:
    """AP from true-positive flags sorted by descending score."""
    if n_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if rule == "coco":
        points = 101
    elif rule == "voc11":
        points = 11
    else:
        raise ValueError(f"unknown interpolation rule {rule!r}")
    # k / (points - 1) rounds exactly like ctp / n_gt, so equal rationals compare equal
    grid = np.arange(points) / (points - 1)
    pos = np.searchsorted(recall, grid, side="left")
    values = np.where(pos < tp.size, envelope[np.minimum(pos, tp.size - 1)], 0.0)
    return float(values.mean())


class _Prepared:
    """Per-(image, class) overlap tables shared across matching IoUs."""

    def __init__(self, dets: Sequence[ScoredDetection], gts: GroundTruthSet, area: Optional[str] = None):
        det_groups = defaultdict(list)
        for i, d in enumerate(dets):
            if area is None or area_category(d.box) == area:
                det_groups[(d.image_id, d.class_id)].append(i)
        gt_groups = defaultdict(list)
        for image_id, inst in gts.images.items():
            for g in inst:
                if area is None or g.area_category == area:
                    gt_groups[(image_id, g.class_id)].append(g.box)
        self.n_gt = defaultdict(int)
        for (_, c), boxes in gt_groups.items():
            self.n_gt[c] += len(boxes)
        self.n_dets = sum(len(v) for v in det_groups.values())
        self.groups = []
        for key, idx in det_groups.items():
            scores = np.array([dets[i].score for i in idx], dtype=float)
            order = np.argsort(-scores, kind="stable")
            idx = [idx[k] for k in order]
            g = gt_groups.get(key, [])
            overlaps = iou_matrix(boxes_to_array(dets[i].box for i in idx), boxes_to_array(g))
            self.groups.append((key[1], np.array(idx), scores[order], overlaps))

    def classes(self) -> list[int]:
        return sorted(c for c, n in self.n_gt.items() if n > 0)

    def tp_count(self, omega: float) -> int:
        return int(sum(_greedy(ov, omega).sum() for _, _, _, ov in self.groups))

    def ap(self, class_id: int, omega: float, rule: str) -> float:
        idx, scores, flags = [], [], []
        for c, rows, s, ov in self.groups:
            if c != class_id:
                continue
            idx.append(rows)
            scores.append(s)
            flags.append(_greedy(ov, omega))
        if not idx:
            return interpolated_ap(np.zeros(0, dtype=bool), self.n_gt[class_id], rule)
        rows = np.concatenate(idx)
        s = np.concatenate(scores)
        f = np.concatenate(flags)
        # descending score, original input order on ties
        order = np.lexsort((rows, -s))
        return interpolated_ap(f[order], self.n_gt[class_id], rule)

    def mean_ap(self, omega: float, rule: str) -> float:
        aps = [self.ap(c, omega, rule) for c in self.classes()]
        return float(np.mean(aps)) if aps else 0.0


def recall(dets: Sequence[ScoredDetection], gts: GroundTruthSet, omega: float) -> float:
    """Matched groundtruth fraction; 1.0 when there is nothing to find."""
    n = len(gts)
    if n == 0:
        return 1.0
    return _Prepared(dets, gts).tp_count(omega) / n


def average_precision(
    dets: Sequence[ScoredDetection], gts: GroundTruthSet, class_id: int, omega: float, rule: str = "coco"
) -> float:
    """AP of one class; NaN when the class has no groundtruth."""
    return _Prepared(dets, gts).ap(class_id, omega, rule)


@dataclass
class EvalReport:
    recall_at: dict
    ap_at: dict
    map_at: dict
    map_range: float
    map_by_area: dict
    map_by_area_at: dict
    detection_count: int

    def to_dict(self) -> dict:
        return {
            "recall_at": {f"{k:.2f}": v for k, v in self.recall_at.items()},
            "ap_at": {f"{c}@{o:.2f}": v for (c, o), v in sorted(self.ap_at.items())},
            "map_at": {f"{k:.2f}": v for k, v in self.map_at.items()},
            "map_range": self.map_range,
            "map_by_area": dict(self.map_by_area),
            "detection_count": self.detection_count,
        }

    def csv_rows(self, variant: str = "") -> list[dict]:
        rows = []
        for omega in self.map_at:
            area = self.map_by_area_at[omega]
            rows.append(
                {
                    "variant": variant,
                    "omega": f"{omega:.2f}",
                    "recall": self.recall_at[omega],
                    "map": self.map_at[omega],
                    "map_S": area["S"],
                    "map_M": area["M"],
                    "map_L": area["L"],
                    "n_dets": self.detection_count,
                }
            )
        rows.append(
            {
                "variant": variant,
                "omega": "0.50:0.95",
                "recall": float(np.mean(list(self.recall_at.values()))),
                "map": self.map_range,
                "map_S": self.map_by_area["S"],
                "map_M": self.map_by_area["M"],
                "map_L": self.map_by_area["L"],
                "n_dets": self.detection_count,
            }
        )
        return rows


def map_report(
    dets: Sequence[ScoredDetection],
    gts: GroundTruthSet,
    omegas: Iterable[float] = OMEGA_RANGE,
    rule: str = "coco",
) -> EvalReport:
    """AP, mAP and recall over a matching-IoU grid, overall and per area bucket.

    Classes without groundtruth are left out of every mean. A bucket with no
    groundtruth at all reports 0.
    """
    omegas = [float(o) for o in omegas]
    if not omegas:
        raise ValueError("need at least one matching IoU")
    everything = _Prepared(dets, gts)
    by_area = {a: _Prepared(dets, gts, area=a) for a in AREAS}
    n_gt = len(gts)
    recall_at, ap_at, map_at, map_by_area_at = {}, {}, {}, {}
    for omega in omegas:
        recall_at[omega] = everything.tp_count(omega) / n_gt if n_gt else 1.0
        aps = []
        for c in everything.classes():
            ap_at[(c, omega)] = everything.ap(c, omega, rule)
            aps.append(ap_at[(c, omega)])
        map_at[omega] = float(np.mean(aps)) if aps else 0.0
        map_by_area_at[omega] = {a: by_area[a].mean_ap(omega, rule) for a in AREAS}
    return EvalReport(
        recall_at=recall_at,
        ap_at=ap_at,
        map_at=map_at,
        map_range=float(np.mean(list(map_at.values()))),
        map_by_area={a: float(np.mean([map_by_area_at[o][a] for o in omegas])) for a in AREAS},
        map_by_area_at=map_by_area_at,
        detection_count=len(dets),
    )
