"""Seeded corruption for the denoising objectives and training-example layout.

Every function takes an explicit :class:`~desknmt.rng.Rng`; given the same
inputs and generator state the output is bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import DataError, LengthError
from .rng import Rng
from .tokenizer import EOS, MASK, SpecialTokens

TASKS = ("denoise", "translate", "concat_denoise")


@dataclass(frozen=True)
class NoiseConfig:
    mask_ratio: float = 0.35
    delete_ratio: float = 0.0
    permute_sentences: bool = True
    span_infill: bool = True
    span_lambda: float = 3.5
    document_size: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("mask_ratio", "delete_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.mask_ratio + self.delete_ratio > 1.0 + 1e-12:
            raise ValueError("mask_ratio + delete_ratio must not exceed 1")
        if self.span_lambda <= 0:
            raise ValueError("span_lambda must be positive")
        if self.document_size < 1:
            raise ValueError("document_size must be at least 1")


@dataclass
class TrainingExample:
    encoder_input: list
    decoder_input: list
    target: list
    task: str
    src_language: str
    tgt_language: str

    def __post_init__(self):
        if len(self.decoder_input) != len(self.target):
            raise ValueError("decoder_input and target lengths differ")

    def to_line(self) -> str:
        ids = lambda xs: " ".join(map(str, xs))
        return "\t".join([self.task, self.src_language, self.tgt_language,
                          ids(self.encoder_input), ids(self.decoder_input), ids(self.target)])

    @classmethod
    def from_line(cls, line: str) -> "TrainingExample":
        task, src, tgt, enc, dec, tgt_ids = line.rstrip("\n").split("\t")
        ids = lambda s: [int(x) for x in s.split()] if s else []
        return cls(ids(enc), ids(dec), ids(tgt_ids), task, src, tgt)


def budget(ratio: float, n: int) -> int:
    return math.floor(ratio * n + 0.5)


def mask_tokens(ids: Sequence[int], ratio: float, rng: Rng, mask_id: int = MASK,
                eligible: Optional[Sequence[int]] = None) -> list:
    """Replace exactly round(ratio * n) positions with ``mask_id``.

    ``eligible`` restricts the candidate positions (n is then its length).
    """
    out = list(ids)
    pos = list(range(len(out))) if eligible is None else list(eligible)
    for i in rng.sample_indices(len(pos), budget(ratio, len(pos))):
        out[pos[i]] = mask_id
    return out


def delete_tokens(ids: Sequence[int], ratio: float, rng: Rng) -> list:
    drop = set(rng.sample_indices(len(ids), budget(ratio, len(ids))))
    return [t for i, t in enumerate(ids) if i not in drop]


def _feasible_starts(covered, blocked, n, length):
    starts = []
    run = 0
    for i in range(n):
        # a run restarts at a covered token or at a gap holding a lone mask
        if covered[i] or (i in blocked and run):
            run = 0 if covered[i] else 1
        else:
            run += 1
        if run >= length:
            starts.append(i - length + 1)
    return starts


def _longest_run(covered, blocked, n):
    best = run = 0
    for i in range(n):
        if covered[i]:
            run = 0
        elif i in blocked:
            run = 1
        else:
            run += 1
        best = max(best, run)
    return best


def infill_spans(ids: Sequence[int], mask_ratio: float, span_lambda: float, rng: Rng,
                 mask_id: int = MASK) -> list:
    """Text infilling: Poisson-length spans each collapse to one mask token.

    Spans are drawn until round(mask_ratio * n) tokens are covered.  A span's
    length is capped by the remaining budget, then by the longest stretch of
    uncovered tokens; its start is uniform over the feasible starts.  A
    zero-length draw inserts a lone mask at a uniform gap that does not fall
    inside an existing span.
    """
    n = len(ids)
    k = budget(mask_ratio, n)
    covered = [False] * n
    starts: dict = {}       # start index -> span length
    inserts: dict = {}      # gap index -> count of lone masks
    blocked: set = set()    # gaps holding lone masks; spans may not straddle them
    done = 0
    while done < k:
        length = min(rng.poisson(span_lambda), k - done)
        if length == 0:
            gaps = [g for g in range(n + 1)
                    if not (0 < g < n and covered[g - 1] and covered[g] and g not in starts)]
            g = gaps[rng.below(len(gaps))]
            inserts[g] = inserts.get(g, 0) + 1
            blocked.add(g)
            continue
        length = min(length, _longest_run(covered, blocked, n))
        cand = _feasible_starts(covered, blocked, n, length)
        s = cand[rng.below(len(cand))]
        for i in range(s, s + length):
            covered[i] = True
        starts[s] = length
        done += length
    out = []
    for g in range(n + 1):
        out.extend([mask_id] * inserts.get(g, 0))
        if g < n:
            if g in starts:
                out.append(mask_id)
            elif not covered[g]:
                out.append(ids[g])
    return out


def permute_sentences(document: Sequence[Sequence[int]], rng: Rng) -> list:
    if not document:
        raise DataError("cannot permute an empty document")
    return rng.shuffle([list(s) for s in document])


def join_sentences(document: Sequence[Sequence[int]], eos: int = EOS) -> list:
    out: list = []
    for i, s in enumerate(document):
        if i:
            out.append(eos)
        out.extend(s)
    return out


def make_denoise_example(document: Sequence[Sequence[int]], config: NoiseConfig,
                         special: SpecialTokens, language: str, rng: Rng,
                         max_len: int = 1024) -> TrainingExample:
    """Corrupt a pseudo-document: permutation, then infill or masking, then deletion."""
    clean = join_sentences(document, special.eos)
    if len(clean) > max_len - 2:
        raise LengthError(f"document of {len(clean)} tokens exceeds max_len - 2 = {max_len - 2}")
    tag = special.lang(language)
    noisy = join_sentences(permute_sentences(document, rng), special.eos) \
        if config.permute_sentences else list(clean)
    if config.mask_ratio > 0:
        if config.span_infill:
            noisy = infill_spans(noisy, config.mask_ratio, config.span_lambda, rng, special.mask)
        else:
            noisy = mask_tokens(noisy, config.mask_ratio, rng, special.mask)
    if config.delete_ratio > 0:
        noisy = delete_tokens(noisy, config.delete_ratio, rng)
    return TrainingExample(noisy + [special.eos, tag], [tag] + clean, clean + [special.eos],
                           "denoise", language, language)


def make_translate_example(src_ids: Sequence[int], tgt_ids: Sequence[int], src_lang: str,
                           tgt_lang: str, special: SpecialTokens,
                           max_len: int = 1024) -> TrainingExample:
    if not src_ids or not tgt_ids:
        raise DataError("translation examples need non-empty source and target")
    if len(src_ids) > max_len - 2 or len(tgt_ids) > max_len - 2:
        raise LengthError(f"pair ({len(src_ids)}, {len(tgt_ids)}) exceeds max_len - 2 = {max_len - 2}")
    tgt_tag = special.lang(tgt_lang)
    return TrainingExample(list(src_ids) + [special.eos, special.lang(src_lang)],
                           [tgt_tag] + list(tgt_ids), list(tgt_ids) + [special.eos],
                           "translate", src_lang, tgt_lang)


def make_concat_example(src_ids: Sequence[int], tgt_ids: Sequence[int], src_lang: str,
                        tgt_lang: str, config: NoiseConfig, special: SpecialTokens,
                        rng: Rng, max_len: int = 1024) -> TrainingExample:
    """Both sides of a pair in one encoder input, masked across the halves.

    The two language tags are never masked.
    """
    if len(src_ids) + len(tgt_ids) > max_len - 4:
        raise LengthError(f"concatenated pair of {len(src_ids) + len(tgt_ids)} tokens "
                          f"exceeds max_len - 4 = {max_len - 4}")
    src_tag, tgt_tag = special.lang(src_lang), special.lang(tgt_lang)
    clean = [src_tag] + list(src_ids) + [special.eos, tgt_tag] + list(tgt_ids)
    eligible = [i for i in range(len(clean)) if i not in (0, len(src_ids) + 2)]
    noisy = mask_tokens(clean, config.mask_ratio, rng, special.mask, eligible)
    return TrainingExample(noisy + [special.eos], [tgt_tag] + clean[1:],
                           clean[1:] + [special.eos], "concat_denoise", src_lang, tgt_lang)
