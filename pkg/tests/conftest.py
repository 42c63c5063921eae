"""Independent oracles shared by the test modules.

Nothing here imports the code under test except the ``Box`` value type.
"""

import numpy as np
import pytest
from hypothesis import strategies as st

from fitnms.geometry import Box


def corner_iou(a, b):
    """IoU from corner arithmetic on (x0, y0, x1, y1) tuples."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if inter > 0 else 0.0


def literal_nms(corners, scores, lambda_nms):
    """Direct transcription of the all-pairs suppression double loop."""
    b_nms = []
    for i in range(len(corners)):
        discard = False
        for j in range(len(corners)):
            if corner_iou(corners[i], corners[j]) > lambda_nms:
                if scores[j] > scores[i]:
                    discard = True
        if not discard:
            b_nms.append(i)
    return b_nms


def random_corner_boxes(rng, n, extent=100.0, size=(2.0, 40.0)):
    x0 = rng.uniform(0, extent, n)
    y0 = rng.uniform(0, extent, n)
    w = rng.uniform(*size, n)
    h = rng.uniform(*size, n)
    return [(float(a), float(b), float(a + c), float(b + d)) for a, b, c, d in zip(x0, y0, w, h)]


def to_boxes(corners):
    return [Box.from_corners(*c) for c in corners]


# A/B/C chain: iou(A,B) = iou(B,C) = 0.6, iou(A,C) = 0.2
CHAIN = [(0.0, 0.0, 10.0, 10.0), (0.0, 0.0, 50.0 / 3.0, 10.0), (20.0 / 3.0, 0.0, 50.0 / 3.0, 10.0)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


coords = st.floats(-50, 50, allow_nan=False)
extents = st.floats(0.5, 40, allow_nan=False)
boxes = st.builds(Box, coords, coords, extents, extents)


def brute_local_max(plane, m, lambda_c):
    """Window scan: strict win over raster-earlier neighbours, ties allowed after."""
    h, w = len(plane), len(plane[0])
    out = []
    for y in range(h):
        for x in range(w):
            v = plane[y][x]
            if not v > lambda_c:
                continue
            ok = True
            for yy in range(max(0, y - m), min(h, y + m + 1)):
                for xx in range(max(0, x - m), min(w, x + m + 1)):
                    if (yy, xx) == (y, x):
                        continue
                    u = plane[yy][xx]
                    if (yy, xx) < (y, x) and not v > u:
                        ok = False
                    if (yy, xx) > (y, x) and not v >= u:
                        ok = False
            if ok:
                out.append((y, x))
    return out


def oracle_ap(tp_flags, n_gt, points=101):
    """Interpolated AP from flags already in descending score order."""
    tp = fp = 0
    prec, rec = [], []
    for f in tp_flags:
        tp += f
        fp += not f
        prec.append(tp / (tp + fp))
        rec.append(tp / n_gt)
    total = 0.0
    for k in range(points):
        r = k / (points - 1)
        best = [p for p, q in zip(prec, rec) if q >= r]
        total += max(best) if best else 0.0
    return total / points


# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
