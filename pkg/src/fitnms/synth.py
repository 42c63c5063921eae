"""Synthetic scenes and a simulated classifier for NMS experiments.

Groundtruth boxes are scattered over a fixed canvas. Every groundtruth box
spawns jittered candidates (Gaussian center offset proportional to its size,
log-normal size change), and uniform background boxes are added per image.
Candidate scores mimic a classifier trained at matching IoU ``omega_train``:
the class probability is a noisy step at ``rho >= omega_train``, where
``rho`` is the candidate's best groundtruth IoU. Fitness estimates are the
mass a noisy IoU estimate puts into each fitness bin.

Randomness comes from numpy's PCG64 generator. Image ``i`` draws boxes from
``SeedSequence([rng_seed, i, 0])`` and scores from ``SeedSequence([rng_seed,
i, 1])``, so results do not depend on worker count or generation order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .evaluation import GroundTruth, GroundTruthSet, ScoredDetection, _greedy
from .fitness import Detection, FitnessParams, ScoreVariant, fitness_lambdas
from .geometry import Box, boxes_to_array, iou_matrix
from .suppression import NmsConfig, soft_nms_indices, suppressor_overlap

BISECTION_STEPS = 30
BUDGET_TOLERANCE = 0.02
#: Default detection budget, as a multiple of the groundtruth count.
DEFAULT_BUDGET_PER_GT = 3


@dataclass(frozen=True)
class SynthConfig:
    """Scene and score-model knobs.

    ``pos_sd`` is the center jitter as a fraction of groundtruth width/height,
    ``size_sd`` the log-scale size jitter. Each candidate scales both by
    ``exp(jitter_spread * N(0, 1))`` so some land tight and some loose.
    ``fitness_noise`` is the standard
    deviation of the simulated IoU estimate behind the fitness distribution.
    """

    rng_seed: int = 0
    images: int = 1000
    gts_per_image: tuple = (1, 5)
    candidates_per_gt: int = 10
    background_candidates: int = 5
    pos_sd: float = 0.1
    size_sd: float = 0.12
    jitter_spread: float = 0.6
    omega_train: float = 0.5
    score_noise_sd: float = 0.1
    fitness_noise: float = 0.05
    classes: int = 1
    f_count: int = 5
    canvas: tuple = (640.0, 480.0)
    gt_size: tuple = (16.0, 256.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "gts_per_image", tuple(int(v) for v in self.gts_per_image))
        object.__setattr__(self, "canvas", tuple(float(v) for v in self.canvas))
        object.__setattr__(self, "gt_size", tuple(float(v) for v in self.gt_size))
        lo, hi = self.gts_per_image
        if not 0 <= lo <= hi:
            raise ValueError(f"gts_per_image must be an increasing non-negative range, got {self.gts_per_image}")
        for name in ("images", "candidates_per_gt", "background_candidates"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("pos_sd", "size_sd", "jitter_spread", "score_noise_sd", "fitness_noise"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.omega_train < 1.0:
            raise ValueError(f"omega_train must lie in (0, 1), got {self.omega_train}")
        if self.classes < 1 or self.f_count < 1:
            raise ValueError("classes and f_count must be positive")
        if not 0 < self.gt_size[0] <= self.gt_size[1]:
            raise ValueError(f"gt_size must be an increasing positive range, got {self.gt_size}")


class SceneImage(NamedTuple):
    image_id: str
    gts: list
    detections: list


def image_id(index: int) -> str:
    return f"{index:06d}"


def _rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index, stream])))


def _image_boxes(cfg: SynthConfig, index: int) -> tuple[list[GroundTruth], list[Box]]:
    rng = _rng(cfg.rng_seed, index, 0)
    cw, ch = cfg.canvas
    lo, hi = cfg.gts_per_image
    n_gt = int(rng.integers(lo, hi + 1))
    log_lo, log_hi = np.log(cfg.gt_size[0]), np.log(cfg.gt_size[1])
    gts = []
    for _ in range(n_gt):
        w, h = np.exp(rng.uniform(log_lo, log_hi, size=2))
        cx = rng.uniform(w / 2, max(w / 2, cw - w / 2))
        cy = rng.uniform(h / 2, max(h / 2, ch - h / 2))
        gts.append(GroundTruth(int(rng.integers(cfg.classes)), Box(float(cx), float(cy), float(w), float(h))))
    candidates = []
    for g in gts:
        b = g.box
        for _ in range(cfg.candidates_per_gt):
            dx, dy, sw, sh, quality = rng.normal(size=5)
            k = float(np.exp(cfg.jitter_spread * quality))
            pos, size = k * cfg.pos_sd, k * cfg.size_sd
            candidates.append(
                Box(
                    b.cx + pos * b.w * dx,
                    b.cy + pos * b.h * dy,
                    b.w * float(np.exp(size * sw)),
                    b.h * float(np.exp(size * sh)),
                )
            )
    for _ in range(cfg.background_candidates):
        w, h = np.exp(rng.uniform(log_lo, log_hi, size=2))
        candidates.append(Box(float(rng.uniform(0, cw)), float(rng.uniform(0, ch)), float(w), float(h)))
    return gts, candidates


def generate_scene(cfg: SynthConfig) -> tuple[GroundTruthSet, dict]:
    """Groundtruth and raw candidate boxes for every image.

    Candidates per image are ordered groundtruth by groundtruth, then
    background boxes.
    """
    images, candidates = {}, {}
    for i in range(cfg.images):
        gts, cands = _image_boxes(cfg, i)
        images[image_id(i)] = gts
        candidates[image_id(i)] = cands
    return GroundTruthSet(images, num_classes=cfg.classes), candidates


def _folded(rng: np.random.Generator, sd: float, size) -> np.ndarray:
    if sd == 0:
        return np.zeros(size)
    return np.minimum(1.0, np.abs(rng.normal(0.0, sd, size=size)))


def fitness_distribution(rho_estimate: np.ndarray, spread: float, f_count: int) -> np.ndarray:
    """Mass of ``N(rho_estimate, spread^2)`` in each fitness bin.

    Mass below 0.5 is the null class and is left out; the top bin is open
    above. ``spread == 0`` gives a point mass on the estimate's bin.
    """
    rho_estimate = np.atleast_1d(np.asarray(rho_estimate, dtype=float))
    edges = np.append(fitness_lambdas(f_count), np.inf)
    if spread == 0:
        upper = (rho_estimate[:, None] < edges[None, 1:]).astype(float)
        lower = (rho_estimate[:, None] >= edges[None, :-1]).astype(float)
        return upper * lower
    with np.errstate(over="ignore"):
        cdf = ndtr((edges[None, :] - rho_estimate[:, None]) / spread)
    return np.clip(np.diff(cdf, axis=1), 0.0, 1.0)


def simulate_scores(
    candidates: Sequence[Box], gts: Sequence[GroundTruth], cfg: SynthConfig, rng: Optional[np.random.Generator] = None
) -> list[Detection]:
    """Attach simulated class, fitness and joint probabilities to candidates."""
    n = len(candidates)
    if n == 0:
        return []
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    boxes = boxes_to_array(candidates)
    if gts:
        overlaps = iou_matrix(boxes, boxes_to_array(g.box for g in gts))
        rho = overlaps.max(axis=1)
        owner = np.array([gts[j].class_id for j in overlaps.argmax(axis=1)])
    else:
        rho = np.zeros(n)
        owner = np.zeros(n, dtype=int)
    positive = (rho >= 0.5) & (rho >= cfg.omega_train)

    noise = _folded(rng, cfg.score_noise_sd, (n, cfg.classes))
    class_probs = noise.copy()
    rows = np.arange(n)
    class_probs[rows, owner] = np.where(positive, 1.0 - noise[rows, owner], noise[rows, owner])

    sd = cfg.fitness_noise
    estimate = rho + (rng.normal(0.0, sd, size=n) if sd > 0 else 0.0)
    fitness = fitness_distribution(estimate, sd, cfg.f_count)

    joint = class_probs[:, :, None] * fitness[:, None, :]
    joint += _folded(rng, cfg.score_noise_sd / cfg.f_count, joint.shape) * (cfg.score_noise_sd > 0)
    mass = joint.sum(axis=(1, 2))
    joint /= np.maximum(1.0, mass)[:, None, None]
    return [
        Detection(box=candidates[i], class_probs=class_probs[i], fitness_probs=fitness[i], joint_probs=joint[i])
        for i in range(n)
    ]


def _build_image(args) -> SceneImage:
    cfg, index = args
    gts, cands = _image_boxes(cfg, index)
    dets = simulate_scores(cands, gts, cfg, _rng(cfg.rng_seed, index, 1))
    return SceneImage(image_id(index), gts, dets)


def build_suite(cfg: SynthConfig, workers: int = 1) -> list[SceneImage]:
    """Scenes with scored candidates; identical output for any ``workers``."""
    jobs = [(cfg, i) for i in range(cfg.images)]
    if workers <= 1 or cfg.images < 2:
        return [_build_image(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_build_image, jobs, chunksize=max(1, cfg.images // (4 * workers))))


def suite_groundtruth(suite: Sequence[SceneImage], num_classes: Optional[int] = None) -> GroundTruthSet:
    return GroundTruthSet({s.image_id: list(s.gts) for s in suite}, num_classes=num_classes)


def variant_config(variant: str, f_count: int = 5, lambda_nms: float = 0.5, soft=None) -> NmsConfig:
    return NmsConfig(lambda_nms=lambda_nms, params=FitnessParams(f_count, ScoreVariant(variant)), soft=soft)


# ---------------------------------------------------------------------------
# recall sweeps


class _Cell(NamedTuple):
    image_id: str
    class_id: int
    scores: np.ndarray
    suppressor: np.ndarray
    boxes: np.ndarray
    gt_boxes: np.ndarray


class SuppressionTable:
    """Per-(image, class) suppressor overlaps for one score variant.

    Under the all-pairs NMS rule a box survives threshold ``lambda_nms``
    exactly when its suppressor overlap is at most ``lambda_nms``, so any
    threshold can be evaluated without rerunning NMS.
    """

    def __init__(self, suite: Sequence[SceneImage], cfg: NmsConfig, num_classes: int):
        from .fitness import score_array

        self.cells = []
        for scene in suite:
            boxes = boxes_to_array(d.box for d in scene.detections)
            for c in range(num_classes):
                gt_boxes = boxes_to_array(g.box for g in scene.gts if g.class_id == c)
                if not scene.detections:
                    self.cells.append(_Cell(scene.image_id, c, np.zeros(0), np.zeros(0), boxes, gt_boxes))
                    continue
                scores = score_array(scene.detections, c, cfg.params)
                self.cells.append(
                    _Cell(scene.image_id, c, scores, suppressor_overlap(boxes, scores), boxes, gt_boxes)
                )
        self.all_overlaps = np.concatenate([c.suppressor for c in self.cells]) if self.cells else np.zeros(0)
        self.n_gt = sum(len(c.gt_boxes) for c in self.cells)

    @property
    def total(self) -> int:
        return int(self.all_overlaps.size)

    def count(self, lambda_nms: float) -> int:
        return int((self.all_overlaps <= lambda_nms).sum())

    def kept(self, lambda_nms: float) -> list[tuple[_Cell, np.ndarray]]:
        return [(c, np.flatnonzero(c.suppressor <= lambda_nms)) for c in self.cells]

    def recall(self, lambda_nms: float, omega: float) -> float:
        if self.n_gt == 0:
            return 1.0
        tp = 0
        for cell, keep in self.kept(lambda_nms):
            if keep.size == 0 or cell.gt_boxes.shape[0] == 0:
                continue
            order = keep[np.argsort(-cell.scores[keep], kind="stable")]
            tp += int(_greedy(iou_matrix(cell.boxes[order], cell.gt_boxes), omega).sum())
        return tp / self.n_gt

    def detections(self, lambda_nms: float) -> list[ScoredDetection]:
        out = []
        for cell, keep in self.kept(lambda_nms):
            for i in keep:
                out.append(ScoredDetection(cell.image_id, cell.class_id, Box.from_array(cell.boxes[i]), float(cell.scores[i])))
        return out


@dataclass(frozen=True)
class BudgetFit:
    budget: int
    lambda_nms: float
    n_dets: int
    status: str  # "ok", "saturated" or "unattainable"
    iterations: int


def fit_budget(table: SuppressionTable, budget: int, tol: float = BUDGET_TOLERANCE) -> BudgetFit:
    """Bisect the clustering IoU until the kept count is within ``tol`` of ``budget``.

    The kept count is non-decreasing in the threshold. A budget at or above
    the candidate count is met at threshold 1 and reported as saturated.
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    if budget >= table.total:
        return BudgetFit(budget, 1.0, table.total, "saturated", 0)
    lo, hi = 0.0, 1.0
    best = (abs(table.count(hi) - budget), hi)
    for it in range(1, BISECTION_STEPS + 1):
        mid = 0.5 * (lo + hi)
        n = table.count(mid)
        best = min(best, (abs(n - budget), mid))
        if abs(n - budget) <= tol * budget:
            return BudgetFit(budget, mid, n, "ok", it)
        if n > budget:
            hi = mid
        else:
            lo = mid
    lam = best[1]
    return BudgetFit(budget, lam, table.count(lam), "unattainable", BISECTION_STEPS)


class SweepRow(NamedTuple):
    variant: str
    budget: str
    lambda_nms: float
    n_dets: int
    omega: float
    recall: float
    status: str


def sweep_recall(
    suite: Sequence[SceneImage],
    variants: Mapping[str, NmsConfig],
    omegas: Iterable[float],
    budgets: Sequence[int],
    num_classes: int = 1,
) -> list[SweepRow]:
    """Recall at each matching IoU after fitting NMS to each detection budget.

    The first rows are the unsuppressed upper bound, tagged ``without_nms``.
    """
    omegas = [float(o) for o in omegas]
    budgets = [int(b) for b in budgets]
    if any(b <= 0 for b in budgets) or any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError(f"budgets must be positive and increasing, got {budgets}")
    rows = []
    tables = {name: SuppressionTable(suite, cfg, num_classes) for name, cfg in variants.items()}
    if tables:
        any_table = next(iter(tables.values()))
        for omega in omegas:
            rows.append(SweepRow("without_nms", "all", 1.0, any_table.total, omega, any_table.recall(1.0, omega), "ok"))
    for name, table in tables.items():
        for budget in budgets:
            fit = fit_budget(table, budget)
            for omega in omegas:
                rows.append(
                    SweepRow(name, str(budget), fit.lambda_nms, fit.n_dets, omega, table.recall(fit.lambda_nms, omega), fit.status)
                )
    return rows


def soft_nms_detections(
    suite: Sequence[SceneImage], cfg: NmsConfig, num_classes: int = 1, budget: Optional[int] = None
) -> list[ScoredDetection]:
    """Soft-NMS over every image and class, optionally capped to the ``budget`` best scores."""
    from .fitness import score_array

    soft = cfg.soft
    if soft is None:
        raise ValueError("soft_nms_detections needs a Soft-NMS config")
    out = []
    for scene in suite:
        if not scene.detections:
            continue
        boxes = boxes_to_array(d.box for d in scene.detections)
        for c in range(num_classes):
            scores = score_array(scene.detections, c, cfg.params)
            order, decayed = soft_nms_indices(boxes, scores, soft.sigma, soft.score_floor)
            out.extend(
                ScoredDetection(scene.image_id, c, scene.detections[i].box, float(s)) for i, s in zip(order, decayed)
            )
    if budget is not None and len(out) > budget:
        keep = sorted(np.argsort([-d.score for d in out], kind="stable")[:budget])
        out = [out[i] for i in keep]
    return out
