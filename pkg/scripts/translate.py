"""Translate two-moons draws onto the swiss roll with a fixed empirical source.

Usage: python scripts/translate.py [--out runs/translate]
"""
import argparse
import sys
from pathlib import Path

from flowdre.cli import main as flowdre

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "translate.ini"

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/translate")
    args = ap.parse_args()
    code = flowdre(["translate", "--config", str(CONFIG), "--out", args.out])
    if code == 0:
        print((Path(args.out) / "metrics.json").read_text())
    sys.exit(code)
