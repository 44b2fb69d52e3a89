"""h-convergence of the isentropic vortex; prints the error table and fitted orders."""

import argparse

from unstart.verification import vortex_convergence

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--orders", type=int, nargs="+", default=[3, 4, 5])
    ap.add_argument("--meshes", type=int, nargs="+", default=[16, 32, 64])
    args = ap.parse_args()

    rows, fits = vortex_convergence(tuple(args.orders), tuple(args.meshes))
    for row in rows:
        print(*row)
    for p, k in fits.items():
        print(f"p={p}: fitted order {k:.2f}")
