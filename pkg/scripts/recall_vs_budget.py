"""Recall of each NMS scoring variant at a fixed detection budget.

Builds the synthetic suite, fits the clustering IoU of every variant to the
same budget and prints recall per matching IoU, including the unsuppressed
ceiling. Writes a CSV when ``--out`` is given.

    python scripts/recall_vs_budget.py --images 1000 --budget-per-gt 3
"""

import argparse
from dataclasses import replace

from fitnms.cli import SWEEP_COLUMNS, csv_text
from fitnms.synth import SynthConfig, build_suite, suite_groundtruth, sweep_recall, variant_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--images", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-per-gt", type=float, nargs="+", default=[1, 3, 10])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    args = p.parse_args()

    cfg = replace(SynthConfig(), images=args.images, rng_seed=args.seed)
    suite = build_suite(cfg, args.workers)
    n_gt = len(suite_groundtruth(suite))
    budgets = sorted({max(1, int(round(k * n_gt))) for k in args.budget_per_gt})
    omegas = [0.5, 0.6, 0.7, 0.8, 0.9]
    variants = {v: variant_config(v) for v in ("baseline", "independent", "joint")}
    rows = sweep_recall(suite, variants, omegas, budgets)

    print(f"{cfg.images} images, {n_gt} groundtruth boxes, budgets {budgets}")
    header = "variant      budget  " + "  ".join(f"@{o:.1f}" for o in omegas)
    print(header)
    table = {}
    for r in rows:
        table.setdefault((r.variant, r.budget), {})[r.omega] = r.recall
    for (variant, budget), rec in table.items():
        print(f"{variant:12s} {budget:>6s}  " + "  ".join(f"{100 * rec[o]:4.1f}" for o in omegas))
    if args.out:
        out = [dict(r._asdict(), omega=f"{r.omega:.2f}") for r in rows]
        with open(args.out, "w") as fh:
            fh.write(csv_text(out, SWEEP_COLUMNS))


if __name__ == "__main__":
    main()
