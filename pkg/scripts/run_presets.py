"""Run prepare -> tokenizer -> pretrain -> finetune -> translate -> score -> report
for every experiment preset on the bundled toy corpora.

    python scripts/run_presets.py --work runs/desk --pretrain-steps 300 --finetune-steps 300
"""

import argparse
import os
import sys
import time

from desknmt.cli import main as cli

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY = os.path.join(ROOT, "data", "toy")
PRESET_NAMES = ("exp1", "exp2", "exp3", "exp3plus", "exp4")


def run(argv):
    code = cli(argv)
    if code != 0:
        raise RuntimeError(f"desknmt {' '.join(argv)} exited with {code}")


def prepare(work, seed=1, toy=TOY):
    data = os.path.join(work, "data")
    for lang in ("en", "ln", "af", "sw", "zu"):
        run(["prepare", "--mono", os.path.join(toy, f"mono.{lang}.txt"), "--lang", lang,
             "--test-frac", "0.1", "--valid-frac", "0.1", "--seed", str(seed), "--out-dir", data])
    for xx in ("ln", "af", "sw", "zu"):
        run(["prepare", "--tsv", os.path.join(toy, f"para.en-{xx}.tsv"), "--src", "en", "--tgt", xx,
             "--test-count", "50", "--valid-count", "50", "--seed", str(seed), "--out-dir", data])
    tok = os.path.join(work, "tokenizer")
    run(["train-tokenizer", "--inputs", os.path.join(data, "*.train"), os.path.join(data, "*.train.tsv"),
         "--vocab-size", "1000", "--out-dir", tok])
    return data, tok


def run_preset(work, name, data, tok, pretrain_steps, finetune_steps, seed=7, extra=()):
    pre = os.path.join(work, name, "pretrain")
    fine = os.path.join(work, name, "finetune")
    run(["pretrain", "--preset", f"{name}-desk", "--data-dir", data, "--tokenizer", tok,
         "--out-dir", pre, "--seed", str(seed), "--max-steps", str(pretrain_steps), *extra])
    run(["finetune", "--checkpoint", os.path.join(pre, "checkpoint.lmtl"), "--tokenizer", tok,
         "--train", os.path.join(data, "en-ln.train.tsv"), "--valid", os.path.join(data, "en-ln.valid.tsv"),
         "--src", "en", "--tgt", "ln", "--out-dir", fine, "--seed", str(seed),
         "--max-steps", str(finetune_steps), *extra])
    hyp = os.path.join(fine, "test.hyp")
    run(["translate", "--checkpoint", os.path.join(fine, "checkpoint.lmtl"), "--tokenizer", tok,
         "--input", os.path.join(data, "en-ln.test.tsv"), "--output", hyp,
         "--src-lang", "en", "--tgt-lang", "ln", "--max-steps", "60"])
    manifest = os.path.join(fine, "manifest.json")
    run(["score", "--hyp", hyp, "--ref", os.path.join(data, "en-ln.test.tsv"), "--manifest", manifest])
    return manifest


def run_all(work, pretrain_steps=300, finetune_steps=300, presets=PRESET_NAMES, seed=7, extra=()):
    data, tok = prepare(work)
    manifests = []
    for name in presets:
        t = time.time()
        manifests.append(run_preset(work, name, data, tok, pretrain_steps, finetune_steps, seed, extra))
        print(f"{name}: {time.time() - t:.0f}s", file=sys.stderr)
    run(["report", "--manifests", *manifests, "--out", os.path.join(work, "report.txt"),
         "--csv", os.path.join(work, "report.csv")])
    return manifests


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--work", default=os.path.join(ROOT, "runs", "desk"))
    ap.add_argument("--pretrain-steps", type=int, default=300)
    ap.add_argument("--finetune-steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--presets", nargs="+", default=list(PRESET_NAMES))
    args = ap.parse_args()
    run_all(args.work, args.pretrain_steps, args.finetune_steps, args.presets, args.seed)
