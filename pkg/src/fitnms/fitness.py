"""Fitness discretization and the detection score functions fed to NMS.

A box's fitness is its best IoU with any groundtruth box, binned into ``F``
levels. Bin ``n`` covers IoU in ``[lambda_n, lambda_{n+1})`` where
``lambda_n = 1/2 + n/(2F)`` and the top bin is closed at 1. Boxes below 0.5
IoU belong to the null class and carry no fitness.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Box

NULL_BIN = -1
#: Relative weight of the fitness cross-entropy term used when training the
#: independent variant. Documented only; nothing here trains a model.
FITNESS_COST_WEIGHT = 0.1
_MASS_TOL = 1e-6


class ScoreVariant(str, enum.Enum):
    BASELINE = "baseline"
    INDEPENDENT = "independent"
    JOINT = "joint"


def fitness_lambdas(f_count: int) -> np.ndarray:
    """Lower IoU edge of every fitness bin, ``(F + n) / (2F)`` for ``n < F``."""
    if f_count < 1:
        raise ValueError(f"f_count must be >= 1, got {f_count}")
    n = np.arange(f_count)
    # one rounding step, so F=5 gives exactly 0.5, 0.6, 0.7, 0.8, 0.9
    return (f_count + n) / (2.0 * f_count)


@dataclass(frozen=True)
class FitnessParams:
    f_count: int = 5
    variant: ScoreVariant = ScoreVariant.BASELINE

    def __post_init__(self) -> None:
        if int(self.f_count) != self.f_count or self.f_count < 1:
            raise ValueError(f"f_count must be a positive integer, got {self.f_count!r}")
        object.__setattr__(self, "variant", ScoreVariant(self.variant))

    @property
    def lambdas(self) -> np.ndarray:
        return fitness_lambdas(self.f_count)


def _as_prob_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Detection:
    """A box with per-class probabilities and optional fitness estimates.

    ``class_probs`` excludes the null class. ``fitness_probs`` is the
    class-independent ``Pr(f = n | b)`` used by the independent variant and
    ``joint_probs`` the ``(C, F)`` matrix ``Pr(c, f = n | b)`` used by the
    joint variant. Missing masses belong to the null class.
    """

    box: Box
    class_probs: np.ndarray
    fitness_probs: Optional[np.ndarray] = None
    joint_probs: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_probs", _as_prob_array(self.class_probs, "class_probs", 1))
        if self.fitness_probs is not None:
            fp = _as_prob_array(self.fitness_probs, "fitness_probs", 1)
            if fp.sum() > 1.0 + _MASS_TOL:
                raise ValueError("fitness_probs mass exceeds 1")
            object.__setattr__(self, "fitness_probs", fp)
        if self.joint_probs is not None:
            jp = _as_prob_array(self.joint_probs, "joint_probs", 2)
            if jp.shape[0] != self.class_probs.shape[0]:
                raise ValueError(
                    f"joint_probs has {jp.shape[0]} class rows but class_probs has {self.class_probs.shape[0]}"
                )
            if jp.sum() > 1.0 + _MASS_TOL:
                raise ValueError("joint_probs mass (plus null) exceeds 1")
            object.__setattr__(self, "joint_probs", jp)


def fitness_bin(rho: float, f_count: int) -> int:
    """Fitness level of a box whose best groundtruth IoU is ``rho``.

    Returns ``NULL_BIN`` (-1) below 0.5. ``rho == 1`` falls in the top bin.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if rho < 0.5:
        return NULL_BIN
    lambdas = fitness_lambdas(f_count)
    return int(np.searchsorted(lambdas, rho, side="right")) - 1


def expected_fitness(fitness_probs, params: FitnessParams) -> float:
    """Sum of ``lambda_n * Pr(f = n)``. Null mass contributes nothing."""
    p = np.asarray(fitness_probs, dtype=float)
    if p.shape != (params.f_count,):
        raise ValueError(f"expected {params.f_count} fitness probabilities, got shape {p.shape}")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("fitness probabilities must lie in [0, 1]")
    if p.sum() > 1.0 + _MASS_TOL:
        raise ValueError("fitness probability mass exceeds 1")
    return float(params.lambdas @ p)


def score(det: Detection, class_id: int, params: FitnessParams) -> float:
    """Ranking score of ``det`` for ``class_id`` under the chosen variant."""
    variant = params.variant
    if variant is ScoreVariant.BASELINE:
        return float(det.class_probs[class_id])
    if variant is ScoreVariant.INDEPENDENT:
        if det.fitness_probs is None:
            raise ValueError("independent fitness scoring needs fitness_probs")
        value = det.class_probs[class_id] * expected_fitness(det.fitness_probs, params)
        return float(min(1.0, value))
    if det.joint_probs is None:
        raise ValueError("joint fitness scoring needs joint_probs")
    row = det.joint_probs[class_id]
    if row.shape != (params.f_count,):
        raise ValueError(f"joint_probs rows must have {params.f_count} fitness bins, got {row.shape[0]}")
    return float(min(1.0, params.lambdas @ row))


def score_array(dets: list[Detection], class_id: int, params: FitnessParams) -> np.ndarray:
    return np.array([score(d, class_id, params) for d in dets], dtype=float)
