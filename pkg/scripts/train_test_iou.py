"""Recall grid for classifiers simulated at different training matching IoUs.

Each row is a score model whose positives were defined at ``omega_train``;
each column evaluates recall at ``omega_test`` after baseline NMS fitted to
the same detection budget. The best row in each column is starred.
"""

import argparse

from fitnms.synth import SynthConfig, build_suite, suite_groundtruth, sweep_recall, variant_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--images", type=int, default=1000)
    p.add_argument("--train", type=float, nargs="+", default=[0.5, 0.6, 0.7, 0.8, 0.9])
    p.add_argument("--test", type=float, nargs="+", default=[0.5, 0.6, 0.7, 0.8, 0.9])
    p.add_argument("--budget-per-gt", type=float, default=3.0)
    args = p.parse_args()

    grid = {}
    for omega_train in args.train:
        suite = build_suite(SynthConfig(images=args.images, omega_train=omega_train))
        budget = max(1, int(round(args.budget_per_gt * len(suite_groundtruth(suite)))))
        for r in sweep_recall(suite, {"baseline": variant_config("baseline")}, args.test, [budget]):
            if r.variant == "baseline":
                grid[(omega_train, r.omega)] = r.recall

    best = {t: max(args.train, key=lambda tr: grid[(tr, t)]) for t in args.test}
    print("train\\test " + " ".join(f"{t:>7.2f}" for t in args.test))
    for tr in args.train:
        cells = []
        for t in args.test:
            mark = "*" if best[t] == tr else " "
            cells.append(f"{100 * grid[(tr, t)]:6.1f}{mark}")
        print(f"{tr:10.2f} " + " ".join(cells))


if __name__ == "__main__":
    main()
