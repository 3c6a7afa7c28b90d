"""Corpus-level BLEU and chrF with every rule stated in code.

BLEU: clipped 1-4 gram precisions over the whole corpus, brevity penalty,
and "exp" smoothing (the n-th zero-match order gets 1 / (2**n * total)).
Orders with no hypothesis n-grams at all are left out of the mean.
chrF: whitespace-free character 1-6 grams, beta = 2, per-order F averaged.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import DataError

BLEU_ORDER = 4
CHRF_ORDER = 6
CHRF_BETA = 2.0


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: tuple = ()
    totals: tuple = ()

    def format(self) -> str:
        ps = "/".join(f"{100 * p:.2f}" for p in self.precisions)
        return f"BLEU\t{self.score:.2f}\t{ps}\t{self.brevity_penalty:.2f}"


@dataclass(frozen=True)
class ChrfScore:
    score: float
    f_values: tuple     # None for orders excluded from the average
    beta: float = CHRF_BETA

    def format(self) -> str:
        return f"chrF{self.beta:g}\t{self.score:.2f}"


def _is_word_char(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat[0] == "L" or cat == "Nd"


def tokenize_for_bleu(text: str) -> list:
    """Split off every character that is neither a letter nor a decimal digit."""
    text = unicodedata.normalize("NFC", text)
    out = []
    for ch in text:
        if ch.isspace() or _is_word_char(ch):
            out.append(ch)
        else:
            out.append(f" {ch} ")
    return "".join(out).split()


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_lengths(hyps, refs):
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses vs {len(refs)} references")


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str]) -> BleuScore:
    _check_lengths(hypotheses, references)
    matches = [0] * BLEU_ORDER
    totals = [0] * BLEU_ORDER
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        h, rf = tokenize_for_bleu(hyp), tokenize_for_bleu(ref)
        c += len(h)
        r += len(rf)
        for n in range(1, BLEU_ORDER + 1):
            hn, rn = _ngrams(h, n), _ngrams(rf, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in hn.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    bp = 1.0 if c > r else (math.exp(1.0 - r / c) if c > 0 else 0.0)
    precisions = [0.0] * BLEU_ORDER
    # no hypothesis tokens, or no matches at any order: score 0 by definition
    if c == 0 or not any(matches):
        return BleuScore(0.0, tuple(precisions), bp, c, r, tuple(matches), tuple(totals))
    # orders with no candidate n-grams (every hypothesis too short) drop out
    # of the geometric mean; since totals shrink with n they form a suffix
    order = sum(1 for t in totals if t > 0)
    smooth = 1.0
    for n in range(order):
        if matches[n] == 0:
            smooth *= 2.0
            precisions[n] = 1.0 / (smooth * totals[n])
        else:
            precisions[n] = matches[n] / totals[n]
    score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions[:order]) / order)
    return BleuScore(min(score, 100.0), tuple(precisions), bp, c, r, tuple(matches), tuple(totals))


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i:i + n] for i in range(len(text) - n + 1))


def corpus_chrf(hypotheses: Sequence[str], references: Sequence[str], beta: float = CHRF_BETA,
                order: int = CHRF_ORDER) -> ChrfScore:
    _check_lengths(hypotheses, references)
    match = [0] * order
    hyp_count = [0] * order
    ref_count = [0] * order
    for hyp, ref in zip(hypotheses, references):
        h = "".join(unicodedata.normalize("NFC", hyp).split())
        rf = "".join(unicodedata.normalize("NFC", ref).split())
        for n in range(1, order + 1):
            hn, rn = _char_ngrams(h, n), _char_ngrams(rf, n)
            match[n - 1] += sum(min(k, rn[g]) for g, k in hn.items())
            hyp_count[n - 1] += sum(hn.values())
            ref_count[n - 1] += sum(rn.values())
    b2 = beta * beta
    fs = []
    for n in range(order):
        if hyp_count[n] == 0 and ref_count[n] == 0:
            fs.append(None)
            continue
        p = match[n] / hyp_count[n] if hyp_count[n] else 0.0
        rc = match[n] / ref_count[n] if ref_count[n] else 0.0
        fs.append((1 + b2) * p * rc / (b2 * p + rc) if p + rc > 0 else 0.0)
    included = [f for f in fs if f is not None]
    # nothing to compare on either side means every pair is empty, hence identical
    score = 100.0 * sum(included) / len(included) if included else 100.0
    return ChrfScore(score, tuple(fs), beta)
