"""Recompute the published per-class tables from the published confusion matrices.

    python scripts/reproduce_metrics.py [--out DIR]
"""

import argparse
from pathlib import Path

from roadcond.metrics import ConfusionMatrix, class_report, emit_report
from roadcond.reference import (BASELINE_MATRIX, CLASS_NAMES, FULL_METHOD_MATRIX, FULL_METHOD_MATRIX_AS_PRINTED,
                                REPORTED_BASELINE, REPORTED_FULL_METHOD, REPORTED_TEST_SUPPORTS)


def compare(title, matrix, reported):
    cm = ConfusionMatrix(matrix, list(CLASS_NAMES))
    report = class_report(cm)
    rows = report.rounded(2)
    print(f"\n{title}  (row sums {matrix.sum(axis=1).tolist()}, expected {list(REPORTED_TEST_SUPPORTS)})")
    print(f"{'class':18s} {'computed P/R/F1':>18s} {'reported':>18s}  max|d|")
    worst = 0.0
    for name, ref in reported.items():
        got = (rows[name]["precision"], rows[name]["recall"], rows[name]["f1"])
        d = max(abs(a - b) for a, b in zip(got, ref))
        worst = max(worst, d)
        fmt = lambda t: "/".join(f"{v:.2f}" for v in t)
        print(f"{name:18s} {fmt(got):>18s} {fmt(ref):>18s}  {d:.2f}")
    print(f"worst deviation {worst:.2f}")
    return report, cm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None, help="write JSON/CSV/SVG reports here")
    args = ap.parse_args()
    compare("full method, as printed", FULL_METHOD_MATRIX_AS_PRINTED, REPORTED_FULL_METHOD)
    results = {
        "full_method": compare("full method, corrected cell (unpaved bad, concrete bad) = 0",
                               FULL_METHOD_MATRIX, REPORTED_FULL_METHOD),
        "baseline": compare("baseline", BASELINE_MATRIX, REPORTED_BASELINE),
    }
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        for name, (report, cm) in results.items():
            for fmt in ("json", "csv", "svg"):
                (args.out / f"{name}.{fmt}").write_bytes(emit_report(report, cm, format=fmt))
        print(f"\nreports written to {args.out}")


if __name__ == "__main__":
    main()
