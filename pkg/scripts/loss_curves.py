"""Plot bounded and smooth-L1 regression costs against position and size error.

Requires matplotlib (not a package dependency). Without ``--png`` the curve
table is printed at a few reference points instead.
"""

import argparse

from fitnms.bbox_loss import loss_curve_rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--png", help="write a two-panel figure here")
    args = p.parse_args()
    rows = loss_curve_rows()
    pos = [r for r in rows if r["curve"] == "position"]
    size = [r for r in rows if r["curve"] == "size"]
    if not args.png:
        for r in pos:
            if r["ratio"] in (0.0, 0.1, 1 / 6, 0.3, 0.5):
                print(f"dx/w_t={r['ratio']:.4f} bounded={r['bounded']:.4f} rcnn={r['rcnn']:.4f} alt={r['rcnn_alt']:.4f}")
        for r in size:
            if r["ratio"] in (0.5, 1.0, 2.0):
                print(f"w/w_t={r['ratio']:.4f} bounded={r['bounded']:.4f} rcnn={r['rcnn']:.4f}")
        return

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    x = [r["ratio"] for r in pos]
    ax1.plot(x, [r["bounded"] for r in pos], label="bounded IoU")
    ax1.plot(x, [r["rcnn"] for r in pos], label="smooth L1")
    ax1.plot(x, [r["rcnn_alt"] for r in pos], "--", label="15 L_0.16")
    for edge in (-1 / 6, 1 / 6):
        ax1.axvline(edge, color="r", ls=":")
    ax1.set_xlabel("dx / w_t")
    ax1.set_ylabel("cost")
    ax1.legend()
    w = [r["ratio"] for r in size]
    ax2.plot(w, [r["bounded"] for r in size], label="bounded IoU")
    ax2.plot(w, [r["rcnn"] for r in size], label="smooth L1")
    for edge in (0.5, 2.0):
        ax2.axvline(edge, color="r", ls=":")
    ax2.set_xlabel("w / w_t")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(args.png, dpi=120)


if __name__ == "__main__":
    main()
