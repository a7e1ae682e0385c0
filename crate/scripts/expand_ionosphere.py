#!/usr/bin/env python3
"""Expand the 34 raw ionosphere radar attributes into 111 covariates.

The raw attributes are 17 complex autocorrelation values stored as
(real, imaginary) pairs: (a1, a2), (a3, a4), ..., (a33, a34). a1 is binary
and a2 is identically zero, so a2 is dropped.

Output columns, in order:
  * 33 linear terms:            a1, a3..a34
  * 32 squares:                 a3^2..a34^2        (a1 is binary, a1^2 == a1)
  * 16 within-pair products:    a3*a4, a5*a6, ..., a33*a34
  * 30 adjacent-pulse products: a_j * a_{j+2} for j = 3..32
                                (real*real and imag*imag of consecutive pulses)
  total 111, followed by the 0/1 label.

Usage: expand_ionosphere.py data/ionosphere.csv data/ionosphere_expanded.csv
"""
import csv
import sys


def expand(row):
    a = {i + 1: float(v) for i, v in enumerate(row[:34])}
    cont = range(3, 35)
    feats = [a[1]] + [a[j] for j in cont]
    names = ["a1"] + [f"a{j}" for j in cont]
    feats += [a[j] ** 2 for j in cont]
    names += [f"a{j}^2" for j in cont]
    feats += [a[j] * a[j + 1] for j in range(3, 35, 2)]
    names += [f"a{j}*a{j + 1}" for j in range(3, 35, 2)]
    feats += [a[j] * a[j + 2] for j in range(3, 33)]
    names += [f"a{j}*a{j + 2}" for j in range(3, 33)]
    return names, feats


def main(src, dst):
    with open(src, newline="") as fin:
        reader = csv.reader(fin)
        next(reader)
        rows = list(reader)
    out = []
    header = None
    for row in rows:
        names, feats = expand(row)
        header = names + ["label"]
        out.append(["%.17g" % v for v in feats] + [row[34]])
    if len(header) - 1 != 111:
        sys.exit(f"expected 111 covariates, got {len(header) - 1}")
    with open(dst, "w", newline="") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(out)
    print(f"wrote {len(out)} rows x {len(header) - 1} covariates to {dst}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
