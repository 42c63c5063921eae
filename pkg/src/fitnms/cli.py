"""Command-line front end.

Exit codes: 0 success, 2 unparsable or schema-invalid input, 3 invalid or
contradictory configuration, 4 inconsistent input files.

The default worker count comes from ``FITNMS_WORKERS`` (1 if unset). Worker
count never changes output, only wall time.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import bbox_loss, evaluation, formats, roi_cluster, synth
from .fitness import FitnessParams, ScoreVariant
from .suppression import NmsConfig, SoftNmsParams, suppress_image

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_DATA = 0, 2, 3, 4
WORKERS_ENV = "FITNMS_WORKERS"
SWEEP_COLUMNS = ("variant", "budget", "lambda_nms", "n_dets", "omega", "recall", "status")
GRAD_COLUMNS = ("loss", "point", "max_rel_error")
CURVE_COLUMNS = ("curve", "ratio", "bounded", "rcnn", "rcnn_alt", "direct_iou")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        return formats.load_json(path, "config")
    except formats.ParseError as exc:
        # a bad config file is a configuration problem, not an input problem
        raise ConfigError(str(exc)) from exc


def _pick(flag, section: dict, key: str, default):
    if flag is not None:
        return flag
    return section.get(key, default)


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def csv_text(rows, columns, digits: Optional[int] = 6) -> str:
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row[c]
            if isinstance(v, (float, np.floating)):
                cells.append(f"{float(v):.{digits}g}" if digits else repr(float(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# nms / soft-nms


def _nms_config(args, cfg: dict, soft: bool) -> NmsConfig:
    section = cfg.get("nms", {})
    file_soft = section.get("soft")
    if not soft and (file_soft is not None or args.sigma is not None or args.score_floor is not None):
        raise ConfigError("hard NMS run configured with Soft-NMS settings; use the soft-nms command")
    if soft and args.lambda_nms is not None:
        raise ConfigError("soft-nms does not take --lambda-nms; only one suppression mode may be active")
    try:
        params = FitnessParams(
            _pick(args.f_count, section, "f_count", 5),
            ScoreVariant(_pick(args.variant, section, "variant", "baseline")),
        )
        soft_params = None
        if soft:
            file_soft = file_soft or {}
            soft_params = SoftNmsParams(
                _pick(args.sigma, file_soft, "sigma", 0.5),
                _pick(args.score_floor, file_soft, "score_floor", 0.001),
            )
        per_class = section.get("per_class", True) if not args.class_agnostic else False
        return NmsConfig(
            lambda_nms=_pick(args.lambda_nms, section, "lambda_nms", 0.5),
            params=params,
            soft=soft_params,
            per_class=per_class,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _suppress_one(job):
    image_id, records, cfg = job
    dets = [r.det for r in records]
    try:
        out = suppress_image(dets, cfg)
    except ValueError as exc:
        return image_id, None, str(exc)
    return image_id, [formats.DetectionRecord(dets[i], c, s) for i, c, s in out], None


def run_suppression(images, cfg: NmsConfig, workers: int = 1):
    jobs = [(image_id, records, cfg) for image_id, records in images]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_suppress_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_suppress_one(j) for j in jobs]
    out = []
    for image_id, kept, err in results:
        if err is not None:
            raise ConfigError(f"image {image_id!r}: {err}")
        out.append((image_id, kept))
    return out


def cmd_nms(args, cfg: dict, soft: bool = False) -> int:
    nms_cfg = _nms_config(args, cfg, soft)
    images = formats.load_detections(args.input)
    kept = run_suppression(images, nms_cfg, args.workers)
    _write(args.output, formats.dump_json(formats.detections_to_json(kept)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _omegas(args, section: dict) -> list[float]:
    omegas = args.omegas if args.omegas is not None else section.get("omegas", list(evaluation.OMEGA_RANGE))
    if not omegas or any(not 0 < o <= 1 for o in omegas):
        raise ConfigError(f"matching IoUs must lie in (0, 1], got {omegas}")
    return [float(o) for o in omegas]


def cmd_eval(args, cfg: dict) -> int:
    section = cfg.get("eval", {})
    omegas = _omegas(args, section)
    rule = _pick(args.interpolation, section, "interpolation", "coco")
    label = _pick(args.variant_label, section, "variant_label", "")
    images = formats.load_detections(args.detections)
    gts = formats.load_groundtruth(args.groundtruth)
    formats.check_same_images([i for i, _ in images], list(gts.images))
    dets = formats.scored_detections(images, str(args.detections))
    report = evaluation.map_report(dets, gts, omegas, rule)
    prefix = args.output
    body = report.to_dict()
    body["variant"] = label
    json_text = json.dumps(body, indent=1) + "\n"
    csv_body = csv_text(report.csv_rows(label), evaluation.CSV_COLUMNS)
    if prefix in (None, "-"):
        sys.stdout.write(json_text)
        sys.stdout.write(csv_body)
    else:
        Path(f"{prefix}.json").write_text(json_text)
        Path(f"{prefix}.csv").write_text(csv_body)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth / sweep


_SYNTH_FLAGS = (
    "rng_seed",
    "images",
    "candidates_per_gt",
    "background_candidates",
    "pos_sd",
    "size_sd",
    "jitter_spread",
    "omega_train",
    "score_noise_sd",
    "fitness_noise",
    "classes",
    "f_count",
)


def _synth_config(args, cfg: dict) -> synth.SynthConfig:
    values = dict(cfg.get("synth", {}))
    for name in _SYNTH_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "gts_per_image", None) is not None:
        values["gts_per_image"] = tuple(args.gts_per_image)
    try:
        return synth.SynthConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def suite_to_files(suite) -> tuple[dict, dict]:
    dets = [(s.image_id, [formats.DetectionRecord(d) for d in s.detections]) for s in suite]
    gts = synth.suite_groundtruth(suite)
    return formats.detections_to_json(dets), formats.groundtruth_to_json(gts)


def cmd_synth(args, cfg: dict) -> int:
    scfg = _synth_config(args, cfg)
    suite = synth.build_suite(scfg, args.workers)
    dets, gts = suite_to_files(suite)
    Path(f"{args.output}_dets.json").write_text(formats.dump_json(dets))
    Path(f"{args.output}_gts.json").write_text(formats.dump_json(gts))
    return EXIT_OK


def _suite_from_files(det_path: str, gt_path: str) -> list[synth.SceneImage]:
    images = formats.load_detections(det_path)
    gts = formats.load_groundtruth(gt_path)
    formats.check_same_images([i for i, _ in images], list(gts.images))
    return [synth.SceneImage(i, gts.images[i], [r.det for r in recs]) for i, recs in images]


def cmd_sweep(args, cfg: dict) -> int:
    section = cfg.get("sweep", {})
    if args.detections or args.groundtruth:
        if not (args.detections and args.groundtruth):
            raise ConfigError("--detections and --groundtruth must be given together")
        suite = _suite_from_files(args.detections, args.groundtruth)
        f_count = args.f_count or 5
    else:
        scfg = _synth_config(args, cfg)
        suite = synth.build_suite(scfg, args.workers)
        f_count = scfg.f_count
    num_classes = max((len(s.detections[0].class_probs) for s in suite if s.detections), default=1)
    n_gt = sum(len(s.gts) for s in suite)
    budgets = args.budgets or section.get("budgets") or [max(1, synth.DEFAULT_BUDGET_PER_GT * n_gt)]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])) or any(b < 1 for b in budgets):
        raise ConfigError(f"budgets must be positive and increasing, got {budgets}")
    omegas = _omegas(args, section) if (args.omegas or "omegas" in section) else [0.5, 0.6, 0.7, 0.8, 0.9]
    names = args.variants or section.get("variants") or ["baseline", "joint"]
    try:
        variants = {n: synth.variant_config(n, f_count) for n in names}
        rows = synth.sweep_recall(suite, variants, omegas, budgets, num_classes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = [r._asdict() for r in rows]
    for r in out:
        r["omega"] = f"{r['omega']:.2f}"
    _write(args.output, csv_text(out, SWEEP_COLUMNS))
    return EXIT_OK


# ---------------------------------------------------------------------------
# loss-curve / grad-check / corner-cluster


def cmd_loss_curve(args, cfg: dict) -> int:
    section = cfg.get("loss_curve", {})
    try:
        rows = bbox_loss.loss_curve_rows(
            _pick(args.dx_min, section, "dx_min", -0.5),
            _pick(args.dx_max, section, "dx_max", 0.5),
            _pick(args.ratio_min, section, "ratio_min", 0.01),
            _pick(args.ratio_max, section, "ratio_max", 2.5),
            _pick(args.steps, section, "steps", 201),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    # full round-trip precision: the curves carry exact anchor values
    _write(args.output, csv_text(rows, CURVE_COLUMNS, digits=None))
    return EXIT_OK


GRAD_LOSSES = {
    "rcnn": bbox_loss.rcnn_cost,
    "bounded": bbox_loss.bounded_iou_cost,
    "alt": bbox_loss.alt_position_cost,
}


def grad_check_rows(losses: Sequence[str], points: int, seed: int, eps: float) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for name in losses:
        for p in range(points):
            if name == "huber":
                z = float(rng.uniform(-3, 3))
                while abs(abs(z) - 1.0) < 1e-3:
                    z = float(rng.uniform(-3, 3))
                err = bbox_loss.huber_gradient_check(z, 1.0, eps)
            else:
                t = bbox_loss.sample_regression_target(rng)
                err = bbox_loss.gradient_check(GRAD_LOSSES[name], t, eps)
            rows.append({"loss": name, "point": p, "max_rel_error": err})
    return rows


def cmd_grad_check(args, cfg: dict) -> int:
    losses = args.loss or ["huber", "rcnn", "bounded", "alt"]
    unknown = [n for n in losses if n != "huber" and n not in GRAD_LOSSES]
    if unknown:
        raise ConfigError(f"unknown loss {unknown}; choose from huber, {', '.join(GRAD_LOSSES)}")
    if args.points < 1 or not 1e-8 <= args.eps <= 1e-3:
        raise ConfigError("need --points >= 1 and --eps in [1e-8, 1e-3]")
    rows = grad_check_rows(losses, args.points, args.seed, args.eps)
    _write(args.output, csv_text(rows, GRAD_COLUMNS, digits=None))
    worst = max(r["max_rel_error"] for r in rows)
    return EXIT_OK if worst < args.tolerance else 1


def cmd_corner_cluster(args, cfg: dict) -> int:
    data = formats.load_json(args.input, "corner_grid")
    lambda_c = args.lambda_c if args.lambda_c is not None else data.get("lambda_c", 0.01)
    m = args.m if args.m is not None else data.get("m", 1)
    probs = data["probs"]
    shapes = {(len(p), len(row)) for p in probs for row in p}
    if len({len(p) for p in probs}) != 1 or len({s[1] for s in shapes}) != 1:
        raise formats.ParseError(f"{args.input}: field /probs: corner planes must share one rectangular shape")
    try:
        grid = roi_cluster.CornerGrid(np.array(probs, dtype=float), lambda_c, m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    corners = roi_cluster.corner_local_max(grid)
    body: dict[str, Any] = {
        "corners": [
            {"type": roi_cluster.CORNER_NAMES[c.k], "k": c.k, "y": c.y, "x": c.x, "prob": c.prob} for c in corners
        ]
    }
    if args.max_rois:
        tl = [c for c in corners if c.k == roi_cluster.TOP_LEFT]
        br = [c for c in corners if c.k == roi_cluster.BOTTOM_RIGHT]
        rois = roi_cluster.corners_to_rois(tl, br, args.max_rois)
        if args.roi_nms is not None:
            keep = roi_cluster.roi_nms_cluster(rois, args.roi_nms)
            rois = [r for r in rois if r[0] in keep]
        body["rois"] = [{"box": [b.cx, b.cy, b.w, b.h], "score": s} for b, s in rois]
    _write(args.output, formats.dump_json(body))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fitnms", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run configuration (flags override it)")
    parser.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def nms_flags(p, soft):
        p.add_argument("input")
        p.add_argument("-o", "--output", default="-")
        p.add_argument("--variant", choices=[v.value for v in ScoreVariant])
        p.add_argument("--f-count", type=int)
        p.add_argument("--class-agnostic", action="store_true")
        p.add_argument("--lambda-nms", type=float)
        p.add_argument("--sigma", type=float)
        p.add_argument("--score-floor", type=float)
        p.set_defaults(soft=soft)

    nms_flags(sub.add_parser("nms", help="hard NMS over a detection file"), False)
    nms_flags(sub.add_parser("soft-nms", help="Gaussian Soft-NMS over a detection file"), True)

    p = sub.add_parser("eval", help="recall / AP / mAP report")
    p.add_argument("detections")
    p.add_argument("groundtruth")
    p.add_argument("-o", "--output", default="-", help="output prefix; writes PREFIX.json and PREFIX.csv")
    p.add_argument("--omegas", type=_floats)
    p.add_argument("--interpolation", choices=["coco", "voc11"])
    p.add_argument("--variant-label")

    def synth_flags(p):
        p.add_argument("--seed", dest="rng_seed", type=int)
        p.add_argument("--images", type=int)
        p.add_argument("--gts-per-image", type=_ints)
        p.add_argument("--candidates-per-gt", type=int)
        p.add_argument("--background-candidates", type=int)
        p.add_argument("--pos-sd", type=float)
        p.add_argument("--size-sd", type=float)
        p.add_argument("--jitter-spread", type=float)
        p.add_argument("--omega-train", type=float)
        p.add_argument("--score-noise-sd", type=float)
        p.add_argument("--fitness-noise", type=float)
        p.add_argument("--classes", type=int)
        p.add_argument("--f-count", type=int)

    p = sub.add_parser("synth", help="write a synthetic detection/groundtruth pair")
    synth_flags(p)
    p.add_argument("-o", "--output", required=True, help="prefix; writes PREFIX_dets.json and PREFIX_gts.json")

    p = sub.add_parser("sweep", help="recall vs detection budget for NMS variants")
    synth_flags(p)
    p.add_argument("--detections")
    p.add_argument("--groundtruth")
    p.add_argument("--budgets", type=_ints)
    p.add_argument("--omegas", type=_floats)
    p.add_argument("--variants", type=_names)
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("loss-curve", help="CSV of both regression cost families")
    p.add_argument("--dx-min", type=float)
    p.add_argument("--dx-max", type=float)
    p.add_argument("--ratio-min", type=float)
    p.add_argument("--ratio-max", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("grad-check", help="finite-difference check of loss gradients")
    p.add_argument("--loss", type=_names)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("corner-cluster", help="local maxima of a corner grid")
    p.add_argument("input")
    p.add_argument("--lambda-c", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--max-rois", type=int, default=0)
    p.add_argument("--roi-nms", type=float)
    p.add_argument("-o", "--output", default="-")
    return parser


COMMANDS = {
    "nms": lambda a, c: cmd_nms(a, c, soft=False),
    "soft-nms": lambda a, c: cmd_nms(a, c, soft=True),
    "eval": cmd_eval,
    "synth": cmd_synth,
    "sweep": cmd_sweep,
    "loss-curve": cmd_loss_curve,
    "grad-check": cmd_grad_check,
    "corner-cluster": cmd_corner_cluster,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.workers is None:
            args.workers = cfg.get("workers") or default_workers()
        if args.workers < 1:
            raise ConfigError(f"--workers must be positive, got {args.workers}")
        return COMMANDS[args.command](args, cfg)
    except formats.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except formats.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
