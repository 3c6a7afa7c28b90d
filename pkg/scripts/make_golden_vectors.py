"""Generate the 50-pair metric test vectors with independent oracles.

BLEU comes from sacrebleu (tokenize='none' over a regex re-tokenisation,
exp smoothing, effective order); chrF from a brute-force n-gram counter
written here.  Neither path imports desknmt.metrics.
Output: tests/data/golden_pairs.tsv and tests/data/golden_scores.tsv.

Requires the ``oracle`` extra (sacrebleu).
"""

import os
import re
import unicodedata

from sacrebleu.metrics import BLEU

from desknmt.rng import Rng
from desknmt.toydata import Language, sample_meaning

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUT = os.path.join(ROOT, "tests", "data")


def regex_tokenize(text):
    text = unicodedata.normalize("NFC", text)
    # anything that is not a letter/decimal digit/space becomes its own token
    return re.sub(r"([^\w\s]|_)", r" \1 ", text).split()


def oracle_bleu(hyps, refs):
    bleu = BLEU(tokenize="none", smooth_method="exp", effective_order=True, force=True)
    h = [" ".join(regex_tokenize(x)) for x in hyps]
    r = [" ".join(regex_tokenize(x)) for x in refs]
    return bleu.corpus_score(h, [r]).score


def oracle_chrf(hyps, refs, order=6, beta=2.0):
    match = [0] * order
    nh = [0] * order
    nr = [0] * order
    for hyp, ref in zip(hyps, refs):
        hs = re.sub(r"\s+", "", unicodedata.normalize("NFC", hyp))
        rs = re.sub(r"\s+", "", unicodedata.normalize("NFC", ref))
        for n in range(1, order + 1):
            hg = [hs[i:i + n] for i in range(len(hs) - n + 1)]
            rg = [rs[i:i + n] for i in range(len(rs) - n + 1)]
            nh[n - 1] += len(hg)
            nr[n - 1] += len(rg)
            pool = list(rg)
            for g in hg:
                if g in pool:
                    pool.remove(g)
                    match[n - 1] += 1
    fs = []
    for n in range(order):
        if nh[n] == 0 and nr[n] == 0:
            continue
        p = match[n] / nh[n] if nh[n] else 0.0
        r = match[n] / nr[n] if nr[n] else 0.0
        fs.append(0.0 if p + r == 0 else (1 + beta ** 2) * p * r / (beta ** 2 * p + r))
    return 100.0 * sum(fs) / len(fs) if fs else 100.0


def perturb(words, rng):
    words = list(words)
    kind = rng.below(5)
    if kind == 0 and len(words) > 2:
        del words[rng.below(len(words))]
    elif kind == 1 and len(words) > 2:
        i = rng.below(len(words) - 1)
        words[i], words[i + 1] = words[i + 1], words[i]
    elif kind == 2:
        words[rng.below(len(words))] = ["ngai", "yo", "bango", "malamu", "!"][rng.below(5)]
    elif kind == 3:
        words.insert(rng.below(len(words) + 1), ["mpe", "te", ",", "lisusu"][rng.below(4)])
    return words


def make_pairs(n=50, seed=11):
    rng = Rng(seed)
    ln = Language("ln", 2024)
    pairs = [
        ("the cat sat on mat", "the cat sat on the mat"),
        ("ab", "abcd"),
        ("Hello, world!", "Hello, world!"),
        ("", "mbote na bino"),
        ("Mbɔ́tɛ, ndeko na ngai!", "Mbɔ́tɛ ndeko na ngai."),
        ("prix: 12,50 € (TTC)", "prix : 12,50 € TTC"),
    ]
    while len(pairs) < n:
        ref = ln.realise(sample_meaning(rng))
        words = ref.split()
        for _ in range(rng.below(3)):
            words = perturb(words, rng)
        pairs.append((" ".join(words), ref))
    return pairs


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    pairs = make_pairs()
    with open(os.path.join(OUT, "golden_pairs.tsv"), "w", encoding="utf-8", newline="\n") as f:
        for h, r in pairs:
            f.write(f"{h}\t{r}\n")
    with open(os.path.join(OUT, "golden_scores.tsv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("# index\tbleu\tchrf  (index 'corpus' scores all pairs together)\n")
        for i, (h, r) in enumerate(pairs):
            f.write(f"{i}\t{oracle_bleu([h], [r]):.6f}\t{oracle_chrf([h], [r]):.6f}\n")
        hs, rs = zip(*pairs)
        f.write(f"corpus\t{oracle_bleu(hs, rs):.6f}\t{oracle_chrf(hs, rs):.6f}\n")
    print(f"wrote {len(pairs)} pairs to {OUT}")
