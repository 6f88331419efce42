"""Train all four objective/divergence pairings on the swiss roll, then sweep the flow length.

Usage: python scripts/swiss_roll.py [--out runs/swiss] [--pairings lsif kl js logd]
"""
import argparse
import json
import sys
from pathlib import Path

from flowdre.cli import main as flowdre

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/swiss")
    ap.add_argument("--pairings", nargs="+", default=["lsif", "kl", "js", "logd"])
    args = ap.parse_args(argv)
    out = Path(args.out)
    for name in args.pairings:
        cfg = CONFIGS / f"swiss_{name}.ini"
        code = flowdre(["train", "--config", str(cfg), "--out", str(out / name)])
        if code != 0:
            return code
        code = flowdre(["sweep-k", "--ckpt", str(out / name / "checkpoint.json"),
                        "--out", str(out / name / "sweep")])
        if code != 0:
            return code
        ed = json.loads((out / name / "metrics.json").read_text())["energy_distance"]
        print(f"{name:5s} energy distance {ed:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
