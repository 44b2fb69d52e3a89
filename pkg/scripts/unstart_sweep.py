"""Throttle sweep on the desk-scale intake: one simulate run per TR, then an onset table.

    python3 scripts/unstart_sweep.py --tr 30 34 38 40 --duration 5e-4 --out runs/sweep
"""

import argparse
import json
from pathlib import Path

from unstart.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(tr, duration, out, config):
    d = out / f"tr{int(tr):03d}"
    rc = main(["simulate", "--config", str(config), "--tr", str(tr),
               "--set", f"simulate.duration={duration}", "--out-dir", str(d)])
    if rc != 0:
        return None, None, rc
    s = json.loads((d / "summary.json").read_text())
    return s["unstart_onset_s"], s["max_jump_ratio"], rc


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--tr", type=float, nargs="+", default=[0, 30, 34, 38, 40])
    ap.add_argument("--duration", type=float, default=5e-4)
    ap.add_argument("--config", default=ROOT / "configs" / "desk_unstart.yaml")
    ap.add_argument("--out", type=Path, default=Path("runs/sweep"))
    args = ap.parse_args()

    rows = [(tr, *run(tr, args.duration, args.out, args.config)) for tr in args.tr]
    print(f"{'TR %':>6} {'onset ms':>10} {'max ratio':>10} {'rc':>3}")
    for tr, onset, ratio, rc in rows:
        o = "-" if onset is None else f"{onset * 1e3:.3f}"
        r = "-" if ratio is None else f"{ratio:.2f}"
        print(f"{tr:6.1f} {o:>10} {r:>10} {rc:3d}")
