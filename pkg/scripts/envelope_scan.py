"""Sweep a.b and compare correction envelopes of two constructions.

The polynomial envelope (1 - x^2) keeps every conditional probability in
[0, 1/2] all the way to the endpoints; the square-root envelope
sqrt(1 - x^2) decays too slowly, and its smallest table entry dives below
zero once |a.b| is close enough to 1. Prints a fixed-width table and can
dump the same numbers as CSV.
"""

import argparse
import csv
import sys

import numpy as np

from hvsinglet import builtin_model


def scan(model, xs):
    nodes, w = model.lambda_space.quadrature
    a = np.array([0.0, 0.0, 1.0])
    tangent = np.array([1.0, 0.0, 0.0])
    rows = []
    for x in xs:
        b = x * a + np.sqrt(max(0.0, 1.0 - x * x)) * tangent
        b /= np.linalg.norm(b)
        tables, ok = model.tables_masked(nodes, a, b)
        c = model.c_values(nodes, a, b)
        rows.append((x, float(np.sum(w * np.abs(c))),
                     float(tables[ok].min()), float(tables[ok].max())))
    return rows


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=21)
    ap.add_argument("--csv", metavar="PATH", default=None,
                    help="also write the table as CSV")
    args = ap.parse_args()

    xs = np.linspace(-1.0, 1.0, args.points)
    results = {name: scan(builtin_model(name), xs)
               for name in ("family1", "wrongtrial")}

    print(f"{'a.b':>7s}  {'mean|C| poly':>13s} {'min entry':>10s}   "
          f"{'mean|C| sqrt':>13s} {'min entry':>10s}")
    for (x, c1, lo1, _), (_, c2, lo2, _) in zip(results["family1"],
                                                results["wrongtrial"]):
        flag = "  <- negative probability" if lo2 < 0 else ""
        print(f"{x:+7.3f}  {c1:13.6f} {lo1:10.6f}   {c2:13.6f} {lo2:10.6f}{flag}")

    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["a_dot_b",
                             "family1_mean_abs_c", "family1_min_entry",
                             "wrongtrial_mean_abs_c", "wrongtrial_min_entry"])
            for (x, c1, lo1, _), (_, c2, lo2, _) in zip(results["family1"],
                                                        results["wrongtrial"]):
                writer.writerow([f"{v:.17g}" for v in (x, c1, lo1, c2, lo2)])
        print(f"\nwrote {args.csv}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
