"""Sod shock tube with shock capturing; writes the density profile next to the exact solution."""

import argparse
import csv

from unstart.verification import sod_run

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--order", type=int, default=5)
    ap.add_argument("--elements", type=int, default=40)
    ap.add_argument("--out", default="sod_profile.csv")
    args = ap.parse_args()

    x, rho, exact, l1 = sod_run(args.order, args.elements)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "rho", "rho_exact"])
        w.writerows(zip(x.ravel(), rho.ravel(), exact.ravel()))
    print(f"L1 density error {l1:.4f}, min density {rho.min():.4f} -> {args.out}")
