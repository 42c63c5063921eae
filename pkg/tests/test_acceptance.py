"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed by each test and again in the pytest terminal summary.
Oracles here are written independently of the code paths they check.
"""

import csv
import io
import json
import math
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from conftest import record_criterion
from fitnms import cli
from fitnms.bbox_loss import (
    alt_position_cost,
    bounded_iou_cost,
    descend,
    gradient_check,
    huber_gradient_check,
    rcnn_cost,
    sample_regression_target,
)
from fitnms.evaluation import map_report
from fitnms.fitness import Detection, FitnessParams, ScoreVariant, fitness_bin, fitness_lambdas, score
from fitnms.geometry import Box, iou, iou_bound_w, iou_bound_x
from fitnms.roi_cluster import CornerGrid, corner_local_max
from fitnms.suppression import NmsConfig, SoftNmsParams, nms_indices, soft_nms
from fitnms.synth import (
    SuppressionTable,
    SynthConfig,
    build_suite,
    fit_budget,
    soft_nms_detections,
    suite_groundtruth,
    sweep_recall,
    variant_config,
)

SEED = 20240601


# ---------------------------------------------------------------------------
# independent oracles


def corner_iou_matrix(c):
    """Pairwise IoU of (N, 4) corner boxes by direct min/max arithmetic."""
    x0, y0, x1, y1 = (c[:, k] for k in range(4))
    iw = np.clip(np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :]), 0, None)
    ih = np.clip(np.minimum(y1[:, None], y1[None, :]) - np.maximum(y0[:, None], y0[None, :]), 0, None)
    inter = iw * ih
    area = (x1 - x0) * (y1 - y0)
    return inter / (area[:, None] + area[None, :] - inter)


def literal_nms_from_overlaps(overlaps, scores, lambda_nms):
    n = len(scores)
    b_nms = []
    for i in range(n):
        discard = False
        for j in range(n):
            if overlaps[i][j] > lambda_nms and scores[j] > scores[i]:
                discard = True
        if not discard:
            b_nms.append(i)
    return b_nms


def window_scan_maxima(plane, m, lambda_c):
    """Local maxima from explicit (2m+1)^2 windows over a -inf padded plane."""
    h, w = plane.shape
    padded = np.pad(plane, m, constant_values=-np.inf)
    windows = sliding_window_view(padded, (2 * m + 1, 2 * m + 1))
    centre = plane[:, :, None, None]
    k = 2 * m + 1
    flat_pos = np.arange(k * k).reshape(k, k)
    mid = m * k + m
    earlier = flat_pos < mid
    later = flat_pos > mid
    ok = np.all(np.where(earlier, centre > windows, True), axis=(2, 3)) & np.all(
        np.where(later, centre >= windows, True), axis=(2, 3)
    )
    return sorted(map(tuple, np.argwhere(ok & (plane > lambda_c)).tolist()))


def random_pairs(rng, n):
    centres = rng.uniform(0, 100, size=(n, 2, 2))
    sizes = rng.uniform(1, 50, size=(n, 2, 2))
    return centres, sizes


def pair_iou(c, s):
    """IoU of box 0 vs box 1 for arrays shaped (n, 2 boxes, 2 axes)."""
    lo = np.maximum(c[:, 0] - s[:, 0] / 2, c[:, 1] - s[:, 1] / 2)
    hi = np.minimum(c[:, 0] + s[:, 0] / 2, c[:, 1] + s[:, 1] / 2)
    inter = np.prod(np.clip(hi - lo, 0, None), axis=1)
    union = np.prod(s[:, 0], axis=1) + np.prod(s[:, 1], axis=1) - inter
    return inter / union


def closed_form_position(dx, w_t):
    return np.maximum(0.0, (w_t - 2 * np.abs(dx)) / (w_t + 2 * np.abs(dx)))


def closed_form_size(w, w_t):
    return np.minimum(w / w_t, w_t / w)


# ---------------------------------------------------------------------------


class TestAcceptance:
    def test_01_nms_oracle(self):
        rng = np.random.default_rng(SEED)
        mismatches, fast_time = 0, 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 201))
            x0, y0 = rng.uniform(0, 200, (2, n))
            w, h = rng.uniform(5, 60, (2, n))
            corners = np.stack([x0, y0, x0 + w, y0 + h], axis=1)
            scores = np.round(rng.random(n), 2)
            lam = float(rng.uniform(0.1, 0.9))
            centre = np.stack([x0 + w / 2, y0 + h / 2, w, h], axis=1)
            t = time.perf_counter()
            fast = nms_indices(centre, scores, lam).tolist()
            fast_time += time.perf_counter() - t
            expected = literal_nms_from_overlaps(corner_iou_matrix(corners).tolist(), scores.tolist(), lam)
            mismatches += fast != expected
        ok = mismatches == 0 and fast_time < 10.0
        assert record_criterion(1, "NMS matches literal double loop", ok, f"mismatches={mismatches}/1000, fast path {fast_time:.2f}s")

    def test_02_bound_correctness(self):
        rng = np.random.default_rng(SEED + 2)
        n = 100_000
        c, s = random_pairs(rng, n)
        overlap = pair_iou(c, s)
        d = c[:, 0] - c[:, 1]  # estimate minus target
        slack = {
            "x": closed_form_position(d[:, 0], s[:, 1, 0]) - overlap,
            "y": closed_form_position(d[:, 1], s[:, 1, 1]) - overlap,
            "w": closed_form_size(s[:, 0, 0], s[:, 1, 0]) - overlap,
            "h": closed_form_size(s[:, 0, 1], s[:, 1, 1]) - overlap,
        }
        violations = {k: int((v < -1e-9).sum()) for k, v in slack.items()}
        # attainment: only the named coordinate differs from the target
        t = Box(10.0, 20.0, 30.0, 40.0)
        attain = {"x": 0.0, "y": 0.0, "w": 0.0, "h": 0.0}
        for dx in rng.uniform(-20, 20, 2000):
            attain["x"] = max(attain["x"], abs(iou(Box(t.cx + dx, t.cy, t.w, t.h), t) - iou_bound_x(dx, t.w)))
            attain["y"] = max(attain["y"], abs(iou(Box(t.cx, t.cy + dx, t.w, t.h), t) - iou_bound_x(dx, t.h)))
        for r in np.exp(rng.uniform(-1.5, 1.5, 2000)):
            attain["w"] = max(attain["w"], abs(iou(Box(t.cx, t.cy, t.w * r, t.h), t) - iou_bound_w(t.w * r, t.w)))
            attain["h"] = max(attain["h"], abs(iou(Box(t.cx, t.cy, t.w, t.h * r), t) - iou_bound_w(t.h * r, t.h)))
        ok = all(v == 0 for v in violations.values()) and all(v <= 1e-9 for v in attain.values())
        detail = f"bound violations of {n}: {violations}; worst attainment gap: " + ", ".join(
            f"{k}={v:.3g}" for k, v in attain.items()
        )
        assert record_criterion(2, "IoU bounds hold and are attained", ok, detail)

    def test_03_operating_range(self):
        rng = np.random.default_rng(SEED + 3)
        need, pos_bad, size_bad, kept = 100_000, 0, 0, 0
        while kept < need:
            n = 200_000
            wt = rng.uniform(5, 100, (n, 2))
            target_c = rng.uniform(0, 100, (n, 2))
            est_c = target_c + rng.uniform(-0.5, 0.5, (n, 2)) * wt
            est_s = wt * np.exp(rng.uniform(-0.8, 0.8, (n, 2)))
            c = np.stack([est_c, target_c], axis=1)
            s = np.stack([est_s, wt], axis=1)
            sel = np.flatnonzero(pair_iou(c, s) >= 0.5)[: need - kept]
            kept += sel.size
            rel_pos = np.abs(est_c[sel] - target_c[sel]) / wt[sel]
            ratio = est_s[sel] / wt[sel]
            pos_bad += int(np.any(rel_pos > 1 / 6 + 1e-9, axis=1).sum())
            size_bad += int(np.any((ratio < 0.5 - 1e-9) | (ratio > 2 + 1e-9), axis=1).sum())
        ok = pos_bad == 0 and size_bad == 0
        detail = f"{kept} pairs with iou >= 0.5: position violations={pos_bad}, size violations={size_bad}"
        assert record_criterion(3, "operating-range constraints", ok, detail)

    def test_04_gradient_checks(self):
        rng = np.random.default_rng(SEED + 4)
        worst = {}
        zs = rng.uniform(-3, 3, 400)
        zs = zs[np.abs(np.abs(zs) - 1.0) > 1e-3][:100]
        worst["huber"] = max(huber_gradient_check(float(z), 1.0, 1e-6) for z in zs)
        for name, fn in (("rcnn", rcnn_cost), ("bounded", bounded_iou_cost), ("alt_15L0.16", alt_position_cost)):
            worst[name] = max(gradient_check(fn, sample_regression_target(rng), 1e-6) for _ in range(100))
        ok = all(v < 1e-4 for v in worst.values())
        detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items())
        assert record_criterion(4, "analytic gradients vs central differences", ok, detail)

    def test_05_loss_curve_anchors(self, capsys):
        assert cli.main(["loss-curve"]) == 0
        text = capsys.readouterr().out
        rows = list(csv.DictReader(io.StringIO(text)))
        pos = {float(r["ratio"]): r for r in rows if r["curve"] == "position"}
        size = {float(r["ratio"]): r for r in rows if r["curve"] == "size"}
        bx = float(pos[1 / 6]["bounded"])
        bw = float(size[2.0]["bounded"])
        rw = float(size[2.0]["rcnn"])
        inside = [r for k, r in pos.items() if 0 < k <= 1 / 6]
        exceeds = all(float(r["bounded"]) > float(r["rcnn"]) for r in inside)
        ok = abs(bx - 0.25) <= 1e-9 and abs(bw - 0.25) <= 1e-9 and abs(rw - math.log(2) ** 2 / 2) <= 1e-9 and exceeds
        detail = f"bounded x@1/6={bx!r}, bounded w@2={bw!r}, rcnn w@2={rw!r}, bounded>rcnn on {len(inside)} grid points: {exceeds}"
        assert record_criterion(5, "loss-curve anchor values", ok, detail)

    def test_06_fitness_arithmetic(self):
        ladder = tuple(float(v) for v in fitness_lambdas(5))
        ladder_ok = ladder == (0.5, 0.6, 0.7, 0.8, 0.9)
        bad_bins = 0
        for k in range(10_000):
            rho = k / 9999
            exact = Fraction(rho)
            if exact < Fraction(1, 2):
                expected = -1
            else:
                expected = max(n for n in range(5) if Fraction(5 + n, 10) <= exact)
            bad_bins += fitness_bin(rho, 5) != expected
        rng = np.random.default_rng(SEED + 6)
        worst = 0.0
        for _ in range(1000):
            cp = rng.dirichlet(np.ones(4))[:3]
            fp = rng.dirichlet(np.ones(6))[:5]
            det = Detection(Box(0, 0, 1, 1), cp, fitness_probs=fp, joint_probs=np.outer(cp, fp))
            for c in range(3):
                a = score(det, c, FitnessParams(5, ScoreVariant.INDEPENDENT))
                b = score(det, c, FitnessParams(5, ScoreVariant.JOINT))
                worst = max(worst, abs(a - b))
        ok = ladder_ok and bad_bins == 0 and worst <= 1e-12
        detail = f"ladder={ladder}, bin mismatches={bad_bins}/10000, max |joint - independent|={worst:.1e}"
        assert record_criterion(6, "fitness ladder, bins and factorized scores", ok, detail)

    def test_07_recall_delta(self):
        start = time.perf_counter()
        suite = build_suite(SynthConfig(), workers=1)
        n_gt = len(suite_groundtruth(suite))
        variants = {v: variant_config(v) for v in ("baseline", "joint")}
        rows = sweep_recall(suite, variants, [0.5, 0.9], [3 * n_gt])
        elapsed = time.perf_counter() - start
        rec = {(r.variant, r.omega): r.recall for r in rows}
        d90 = 100 * (rec[("joint", 0.9)] - rec[("baseline", 0.9)])
        d50 = 100 * (rec[("joint", 0.5)] - rec[("baseline", 0.5)])
        ok = d90 >= 2.0 and abs(d50) <= 1.0 and elapsed < 60.0
        detail = f"joint - baseline recall: {d90:+.2f} pts @0.9, {d50:+.2f} pts @0.5; {elapsed:.1f}s single-threaded"
        assert record_criterion(7, "fitness NMS recall gain at high matching IoU", ok, detail)

    def test_08_train_test_diagonal(self):
        recall = {}
        for omega_train in (0.5, 0.9):
            suite = build_suite(SynthConfig(omega_train=omega_train))
            n_gt = len(suite_groundtruth(suite))
            rows = sweep_recall(suite, {"baseline": variant_config("baseline")}, [0.5, 0.9], [3 * n_gt])
            for r in rows:
                if r.variant == "baseline":
                    recall[(omega_train, r.omega)] = r.recall
        best = {test: max((0.5, 0.9), key=lambda tr: recall[(tr, test)]) for test in (0.5, 0.9)}
        ok = best == {0.5: 0.5, 0.9: 0.9}
        detail = "recall[train->test]: " + ", ".join(f"{a}->{b}={v:.3f}" for (a, b), v in sorted(recall.items()))
        detail += f"; best train per test: {best}"
        assert record_criterion(8, "matching train/test IoU wins", ok, detail)

    def test_09_soft_nms(self):
        box = Box(0, 0, 10, 10)
        pair = [Detection(box, [0.9]), Detection(box, [0.8])]
        out = soft_nms(pair, 0, NmsConfig(soft=SoftNmsParams(sigma=0.5)))
        factor = out[1][1] / 0.8
        factor_ok = abs(factor - math.exp(-2)) <= 1e-12
        suite = build_suite(SynthConfig())
        gts = suite_groundtruth(suite)
        budget = 3 * len(gts)
        results = {}
        for variant in ("baseline", "joint"):
            table = SuppressionTable(suite, variant_config(variant), 1)
            fit = fit_budget(table, budget)
            hard = map_report(table.detections(fit.lambda_nms), gts).map_range
            soft_dets = soft_nms_detections(suite, variant_config(variant, soft=SoftNmsParams()), 1, budget)
            results[variant] = (hard, map_report(soft_dets, gts).map_range)
        ok = factor_ok and all(s >= h for h, s in results.values())
        detail = f"decay factor={factor:.15f}; map_range hard/soft: " + ", ".join(
            f"{k} {h:.4f}/{s:.4f}" for k, (h, s) in results.items()
        )
        assert record_criterion(9, "Soft-NMS decay and map_range vs hard NMS", ok, detail)

    def test_10_corner_oracle(self):
        rng = np.random.default_rng(SEED + 10)
        mismatches = 0
        for _ in range(1000):
            h, w = (int(v) for v in rng.integers(1, 65, size=2))
            m = int(rng.integers(1, 4))
            probs = rng.integers(0, 9, size=(4, h, w)) / 8.0
            lam = float(rng.choice([0.0, 0.01, 0.3]))
            got = [(c.k, c.y, c.x) for c in corner_local_max(CornerGrid(probs, lam, m))]
            expected = [(k, y, x) for k in range(4) for y, x in window_scan_maxima(probs[k], m, lam)]
            mismatches += got != expected
        ok = mismatches == 0
        assert record_criterion(10, "corner local maxima vs window scan", ok, f"mismatches={mismatches}/1000")

    def test_11_descent(self):
        rng = np.random.default_rng(SEED + 11)
        targets = [sample_regression_target(rng) for _ in range(100)]
        converged = {}
        for name, fn in (("rcnn", rcnn_cost), ("bounded", bounded_iou_cost)):
            hits = 0
            for t in targets:
                start = t.with_estimate(t.roi)
                hits += iou(descend(fn, start, steps=500, stop_iou=0.99), t.target) > 0.99
            converged[name] = hits
        ok = all(v >= 99 for v in converged.values())
        assert record_criterion(11, "gradient descent reaches IoU > 0.99", ok, f"converged of 100: {converged}")

    @pytest.mark.slow
    def test_12_determinism(self, tmp_path):
        grid = tmp_path / "grid.json"
        rng = np.random.default_rng(SEED + 12)
        grid.write_text(json.dumps({"probs": (rng.integers(0, 9, (4, 20, 24)) / 8).tolist()}))

        def run_all(tag, workers):
            d = tmp_path / tag
            d.mkdir()
            base = [sys.executable, "-m", "fitnms", "--workers", str(workers)]
            p = str(d / "s")
            cmds = {
                "synth": ["synth", "--images", "60", "-o", p],
                "nms": ["nms", f"{p}_dets.json", "--variant", "joint", "-o", str(d / "nms.json")],
                "soft-nms": ["soft-nms", f"{p}_dets.json", "-o", str(d / "soft.json")],
                "eval": ["eval", str(d / "nms.json"), f"{p}_gts.json", "-o", str(d / "eval")],
                "sweep": ["sweep", "--images", "60", "-o", str(d / "sweep.csv")],
                "sweep-files": ["sweep", "--detections", f"{p}_dets.json", "--groundtruth", f"{p}_gts.json", "-o", str(d / "sweep2.csv")],
                "loss-curve": ["loss-curve", "-o", str(d / "curve.csv")],
                "grad-check": ["grad-check", "--points", "20", "-o", str(d / "grad.csv")],
                "corner-cluster": ["corner-cluster", str(grid), "--max-rois", "30", "--roi-nms", "0.7", "-o", str(d / "corners.json")],
            }
            codes = {}
            for name, args in cmds.items():
                codes[name] = subprocess.run(base + args, capture_output=True).returncode
            files = {f.name: f.read_bytes() for f in sorted(d.iterdir())}
            return codes, files

        a_codes, a = run_all("a", 1)
        b_codes, b = run_all("b", 1)
        c_codes, c = run_all("c", 8)
        differ = sorted({k for k in a if a[k] != b.get(k) or a[k] != c.get(k)})
        failed = sorted(k for k, v in a_codes.items() if v != 0)
        ok = not differ and not failed and a_codes == b_codes == c_codes and len(a) == len(b) == len(c)
        detail = f"{len(a)} output files compared across runs and workers 1/8; differing={differ}; nonzero exits={failed}"
        assert record_criterion(12, "CLI output byte-identical", ok, detail)
