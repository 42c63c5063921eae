"""Box regression costs and their analytic gradients.

Three sampling/target/estimate boxes enter every cost: the RoI ``b_s``,
the groundtruth target ``b_t`` and the regressed estimate ``beta``.
Gradients are taken with respect to the estimate's ``(cx, cy, w, h)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Box, iou, iou_bound_w, iou_bound_x

#: Regression cost factor used when training with the bounded cost.
#: Recorded for reference; the losses below are unscaled.
BOUNDED_COST_FACTOR = 0.125
ALT_POSITION_SCALE = 15.0
ALT_POSITION_TAU = 0.16
PARAMS = ("x", "y", "w", "h")


def huber(z: float, tau: float = 1.0) -> float:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    az = abs(z)
    if az < tau:
        return 0.5 * z * z
    return tau * az - 0.5 * tau * tau


def huber_grad(z: float, tau: float = 1.0) -> float:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if abs(z) < tau:
        return z
    return math.copysign(tau, z)


@dataclass(frozen=True)
class RegressionTarget:
    """RoI, groundtruth target and current estimate.

    Regression is only meaningful for RoIs with ``iou(roi, target) >= 0.5``;
    pass ``allow_low_overlap=True`` to skip that check.
    """

    roi: Box
    target: Box
    estimate: Box
    allow_low_overlap: bool = False

    def __post_init__(self) -> None:
        if not self.allow_low_overlap and iou(self.roi, self.target) < 0.5:
            raise ValueError("roi overlaps target by less than 0.5 IoU; set allow_low_overlap to override")

    def with_estimate(self, estimate: Box) -> "RegressionTarget":
        return RegressionTarget(self.roi, self.target, estimate, allow_low_overlap=True)


@dataclass(frozen=True)
class LossValue:
    total: float
    components: dict
    gradient: np.ndarray

    @classmethod
    def from_parts(cls, components: dict, gradient) -> "LossValue":
        comps = {k: float(components.get(k, 0.0)) for k in PARAMS}
        return cls(math.fsum(comps.values()), comps, np.asarray(gradient, dtype=float))


def _rcnn_pos(delta: float, roi_extent: float) -> tuple[float, float]:
    z = delta / roi_extent
    return huber(z), huber_grad(z) / roi_extent


def _rcnn_size(size: float, target_size: float) -> tuple[float, float]:
    z = math.log(size / target_size)
    return huber(z), huber_grad(z) / size


def rcnn_cost(t: RegressionTarget) -> LossValue:
    """Smooth-L1 on ``dx / w_s`` and ``ln(w / w_t)``, and the y/h analogues."""
    s, g, e = t.roi, t.target, t.estimate
    cx, gx = _rcnn_pos(e.cx - g.cx, s.w)
    cy, gy = _rcnn_pos(e.cy - g.cy, s.h)
    cw, gw = _rcnn_size(e.w, g.w)
    ch, gh = _rcnn_size(e.h, g.h)
    return LossValue.from_parts({"x": cx, "y": cy, "w": cw, "h": ch}, [gx, gy, gw, gh])


def _bounded_pos(delta: float, target_extent: float) -> tuple[float, float]:
    a = 2.0 * abs(delta)
    u = 1.0 - iou_bound_x(delta, target_extent)
    if a < target_extent:
        # d(1 - (w_t - a)/(w_t + a)) / d(delta); zero at delta == 0
        du = math.copysign(4.0 * target_extent / (target_extent + a) ** 2, delta) if delta else 0.0
    else:
        du = 0.0
    return 2.0 * huber(u), 2.0 * huber_grad(u) * du


def _bounded_size(size: float, target_size: float) -> tuple[float, float]:
    u = 1.0 - iou_bound_w(size, target_size)
    if size < target_size:
        du = -1.0 / target_size
    elif size > target_size:
        du = target_size / (size * size)
    else:
        du = 0.0
    return 2.0 * huber(u), 2.0 * huber_grad(u) * du


def bounded_iou_cost(t: RegressionTarget) -> LossValue:
    """``2 * L1(1 - IoU_B)`` per coordinate.

    Each positional term saturates at 1 once ``|dx| >= w_t / 2``.
    """
    g, e = t.target, t.estimate
    cx, gx = _bounded_pos(e.cx - g.cx, g.w)
    cy, gy = _bounded_pos(e.cy - g.cy, g.h)
    cw, gw = _bounded_size(e.w, g.w)
    ch, gh = _bounded_size(e.h, g.h)
    return LossValue.from_parts({"x": cx, "y": cy, "w": cw, "h": ch}, [gx, gy, gw, gh])


def alt_position_cost(t: RegressionTarget) -> LossValue:
    """Rescaled R-CNN positional cost ``15 * L_0.16(dx / w_s)`` (x and y only)."""
    s, g, e = t.roi, t.target, t.estimate
    zx = (e.cx - g.cx) / s.w
    zy = (e.cy - g.cy) / s.h
    k, tau = ALT_POSITION_SCALE, ALT_POSITION_TAU
    comps = {"x": k * huber(zx, tau), "y": k * huber(zy, tau)}
    grad = [k * huber_grad(zx, tau) / s.w, k * huber_grad(zy, tau) / s.h, 0.0, 0.0]
    return LossValue.from_parts(comps, grad)


def rcnn_cost_alt_position(t: RegressionTarget) -> float:
    """Horizontal term of :func:`alt_position_cost`."""
    return alt_position_cost(t).components["x"]


def direct_iou_cost(t: RegressionTarget) -> float:
    """``2 * L1(1 - IoU(beta, b_t))``, for comparison plots only."""
    return 2.0 * huber(1.0 - iou(t.estimate, t.target))


class NonSmoothPointError(ValueError):
    """Raised when a gradient check lands on a kink of the loss."""


def _shift(box: Box, k: int, h: float) -> Box:
    v = box.as_array()
    v[k] += h
    return Box.from_array(v)


def numeric_gradient(loss_fn: Callable[[RegressionTarget], LossValue], t: RegressionTarget, eps: float):
    """Central, forward and backward differences of ``loss_fn(t).total``."""
    f0 = loss_fn(t).total
    central, forward, backward = np.zeros(4), np.zeros(4), np.zeros(4)
    for k in range(4):
        fp = loss_fn(t.with_estimate(_shift(t.estimate, k, eps))).total
        fm = loss_fn(t.with_estimate(_shift(t.estimate, k, -eps))).total
        central[k] = (fp - fm) / (2.0 * eps)
        forward[k] = (fp - f0) / eps
        backward[k] = (f0 - fm) / eps
    return central, forward, backward


def gradient_check(
    loss_fn: Callable[[RegressionTarget], LossValue],
    t: RegressionTarget,
    eps: float = 1e-6,
) -> float:
    """Largest relative error between the analytic and central-difference gradient.

    Raises:
        NonSmoothPointError: the gap between one-sided differences does not
            shrink with the step, i.e. the point sits on a kink and a
            comparison would be meaningless.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    value = loss_fn(t)
    central, forward, backward = numeric_gradient(loss_fn, t, eps)
    _, forward10, backward10 = numeric_gradient(loss_fn, t, 10.0 * eps)
    gap = np.abs(forward - backward)
    gap10 = np.abs(forward10 - backward10)
    noise = 64.0 * np.finfo(float).eps * max(1.0, abs(value.total)) / eps
    kinked = [PARAMS[k] for k in range(4) if gap[k] > noise and gap[k] > 0.5 * gap10[k]]
    if kinked:
        raise NonSmoothPointError(f"loss is not differentiable in {kinked} at this point")
    return relative_error(value.gradient, central)


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    analytic = np.atleast_1d(np.asarray(analytic, dtype=float))
    numeric = np.atleast_1d(np.asarray(numeric, dtype=float))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def huber_gradient_check(z: float, tau: float = 1.0, eps: float = 1e-6) -> float:
    numeric = (huber(z + eps, tau) - huber(z - eps, tau)) / (2.0 * eps)
    return relative_error(huber_grad(z, tau), numeric)


def descend(
    loss_fn: Callable[[RegressionTarget], LossValue],
    t: RegressionTarget,
    steps: int = 500,
    step_size: float = 0.05,
    stop_iou: float | None = None,
) -> Box:
    """Fixed-step gradient descent on the estimate, starting from ``t.estimate``.

    Steps are taken in target-normalized coordinates (x and w divided by
    ``w_t``, y and h by ``h_t``), so ``step_size`` is scale free.
    """
    g = t.target
    scale = np.array([g.w, g.h, g.w, g.h])
    params = t.estimate.as_array()
    for _ in range(steps):
        current = t.with_estimate(Box.from_array(params))
        if stop_iou is not None and iou(current.estimate, g) > stop_iou:
            break
        params = params - step_size * scale**2 * loss_fn(current).gradient
        params[2:] = np.maximum(params[2:], 1e-9 * scale[2:])
    return Box.from_array(params)


def _unit_target(estimate: Box) -> RegressionTarget:
    unit = Box(0.0, 0.0, 1.0, 1.0)
    return RegressionTarget(unit, unit, estimate, allow_low_overlap=True)


def loss_curve_rows(
    dx_min: float = -0.5, dx_max: float = 0.5, ratio_min: float = 0.01, ratio_max: float = 2.5, steps: int = 201
) -> list[dict]:
    """Cost of both families along ``dx / w_t`` and ``w / w_t`` with ``w_s = w_t``.

    The grids always include the operating-range edges (``+-1/6`` and
    ``1/2, 2``) and the zero-error point when they fall inside the range.
    """
    if not dx_min < dx_max or not 0 < ratio_min < ratio_max:
        raise ValueError("loss curve ranges must be non-empty, with positive size ratios")
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    anchors = [v for v in (-1.0 / 6.0, 0.0, 1.0 / 6.0) if dx_min <= v <= dx_max]
    dxs = np.unique(np.concatenate([np.linspace(dx_min, dx_max, steps), anchors]))
    anchors = [v for v in (0.5, 1.0, 2.0) if ratio_min <= v <= ratio_max]
    ratios = np.unique(np.concatenate([np.linspace(ratio_min, ratio_max, steps), anchors]))
    rows = []
    for dx in dxs:
        t = _unit_target(Box(float(dx), 0.0, 1.0, 1.0))
        rows.append(
            {
                "curve": "position",
                "ratio": float(dx),
                "bounded": bounded_iou_cost(t).components["x"],
                "rcnn": rcnn_cost(t).components["x"],
                "rcnn_alt": rcnn_cost_alt_position(t),
                "direct_iou": direct_iou_cost(t),
            }
        )
    for r in ratios:
        t = _unit_target(Box(0.0, 0.0, float(r), 1.0))
        rows.append(
            {
                "curve": "size",
                "ratio": float(r),
                "bounded": bounded_iou_cost(t).components["w"],
                "rcnn": rcnn_cost(t).components["w"],
                "rcnn_alt": "",
                "direct_iou": direct_iou_cost(t),
            }
        )
    return rows


def sample_regression_target(rng: np.random.Generator, margin: float = 1e-3) -> RegressionTarget:
    """Random RoI/target/estimate triple inside the operating range.

    The estimate keeps clear of the positional saturation kink at
    ``|dx| = w_t / 2`` and of the Huber switch points by ``margin``.
    """
    while True:
        tw, th = np.exp(rng.uniform(np.log(8.0), np.log(256.0), size=2))
        target = Box(float(rng.uniform(-100, 100)), float(rng.uniform(-100, 100)), float(tw), float(th))
        roi = Box(
            target.cx + float(rng.uniform(-1, 1)) * tw / 6,
            target.cy + float(rng.uniform(-1, 1)) * th / 6,
            tw * float(np.exp(rng.uniform(np.log(0.5), np.log(2.0)))),
            th * float(np.exp(rng.uniform(np.log(0.5), np.log(2.0)))),
        )
        if iou(roi, target) < 0.5:
            continue
        est = Box(
            target.cx + float(rng.uniform(-0.45, 0.45)) * tw,
            target.cy + float(rng.uniform(-0.45, 0.45)) * th,
            tw * float(np.exp(rng.uniform(-1.0, 1.0))),
            th * float(np.exp(rng.uniform(-1.0, 1.0))),
        )
        t = RegressionTarget(roi, target, est)
        z = [
            (est.cx - target.cx) / roi.w,
            (est.cy - target.cy) / roi.h,
            math.log(est.w / target.w),
            math.log(est.h / target.h),
        ]
        near = [abs(abs(v) - tau) < margin for v in z for tau in (1.0, ALT_POSITION_TAU)]
        if not any(near):
            return t
