"""Regenerate the bundled toy corpora under data/toy/."""

import argparse
import os

from desknmt.toydata import write_toy_corpora

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=os.path.join(ROOT, "data", "toy"))
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    for path in write_toy_corpora(args.out_dir, args.seed):
        print(path)
