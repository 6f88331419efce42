"""Density-chasm demo: stale estimator on the near and far pairs, flow-guided on the far pair.

Usage: python scripts/chasm.py [--out runs/chasm] [--seed 0]
"""
import argparse
import sys
from pathlib import Path

from flowdre.cli import main as flowdre

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "chasm.ini"

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/chasm")
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()
    code = flowdre(["chasm-demo", "--config", str(CONFIG), "--out", args.out, "--seed", args.seed])
    if code == 0:
        print((Path(args.out) / "summary.json").read_text())
    sys.exit(code)
