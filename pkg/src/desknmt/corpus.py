"""Corpus ingestion: normalisation, deduplication, seeded splits, language weights."""

from __future__ import annotations

import math
import os
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

from .errors import DataError, SizingError
from .rng import Rng

LANGUAGES = ("en", "ln", "af", "sw", "zu")


def normalize_line(text: Union[str, bytes]) -> str:
    """NFC-normalise, drop control characters, collapse whitespace runs to one space."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"invalid UTF-8 at byte offset {exc.start}") from exc
    chars = []
    for ch in text:
        if ch.isspace():
            chars.append(" ")
        elif unicodedata.category(ch) != "Cc":
            chars.append(ch)
    text = unicodedata.normalize("NFC", "".join(chars))
    return " ".join(text.split())


@dataclass(frozen=True)
class Corpus:
    language: str
    lines: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        for i, line in enumerate(self.lines):
            if not line or "\n" in line or "\r" in line:
                raise DataError(f"{self.language} line {i}: empty or contains a line break")

    @classmethod
    def from_raw(cls, language: str, raw: Iterable[Union[str, bytes]]) -> "Corpus":
        lines = (normalize_line(r) for r in raw)
        return cls(language, tuple(l for l in lines if l))

    def __len__(self):
        return len(self.lines)


@dataclass(frozen=True)
class ParallelCorpus:
    src_language: str
    tgt_language: str
    pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((s, t) for s, t in self.pairs))
        for i, (s, t) in enumerate(self.pairs):
            if not s or not t:
                raise DataError(f"{self.src_language}-{self.tgt_language} pair {i}: empty side")

    @classmethod
    def from_raw(cls, src: str, tgt: str, raw_pairs: Iterable[tuple]) -> "ParallelCorpus":
        out = []
        for s, t in raw_pairs:
            s, t = normalize_line(s), normalize_line(t)
            if s and t:
                out.append((s, t))
        return cls(src, tgt, tuple(out))

    def __len__(self):
        return len(self.pairs)

    def side(self, which: int) -> Corpus:
        return Corpus(self.src_language if which == 0 else self.tgt_language,
                      tuple(p[which] for p in self.pairs))


def dedup(corpus):
    """Drop exact duplicates, keeping the first occurrence and the original order.

    For a ParallelCorpus the unit is the (src, tgt) pair.
    """
    seen = set()
    kept = []
    items = corpus.pairs if isinstance(corpus, ParallelCorpus) else corpus.lines
    for item in items:
        if item not in seen:
            seen.add(item)
            kept.append(item)
    if isinstance(corpus, ParallelCorpus):
        return ParallelCorpus(corpus.src_language, corpus.tgt_language, tuple(kept))
    return Corpus(corpus.language, tuple(kept))


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "fraction"  # "fraction" or "count"
    test: float = 0.1
    valid: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fraction", "count"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.test < 0 or self.valid < 0:
            raise ValueError("split sizes must be nonnegative")
        if self.mode == "fraction" and self.test + self.valid >= 1.0:
            raise ValueError(f"test + valid fractions must be < 1, got {self.test + self.valid}")

    def sizes(self, n: int) -> tuple[int, int]:
        if self.mode == "fraction":
            return math.floor(self.test * n + 0.5), math.floor(self.valid * n + 0.5)
        test, valid = int(self.test), int(self.valid)
        if test + valid >= n and test + valid > 0:
            raise SizingError(f"holdout {test}+{valid} does not fit a corpus of {n}")
        return test, valid


def split(corpus, spec: SplitSpec):
    """Seeded shuffle, then take test and valid from the front; the rest is train.

    Returns (train, valid, test) of the same type as ``corpus``.
    """
    items = list(corpus.pairs if isinstance(corpus, ParallelCorpus) else corpus.lines)
    n_test, n_valid = spec.sizes(len(items))
    if n_test + n_valid > len(items):
        raise SizingError(f"holdout {n_test}+{n_valid} exceeds corpus size {len(items)}")
    order = Rng(spec.seed).shuffle(list(range(len(items))))
    picked = [items[i] for i in order]
    test = picked[:n_test]
    valid = picked[n_test:n_test + n_valid]
    train = picked[n_test + n_valid:]
    if isinstance(corpus, ParallelCorpus):
        make = lambda p: ParallelCorpus(corpus.src_language, corpus.tgt_language, tuple(p))
    else:
        make = lambda p: Corpus(corpus.language, tuple(p))
    return make(train), make(valid), make(test)


@dataclass(frozen=True)
class SamplingWeights:
    weights: dict = field(default_factory=dict)
    alpha: float = 0.7

    def __getitem__(self, key):
        return self.weights[key]


def oversample_weights(sizes: Mapping[str, int], alpha: float = 0.7) -> SamplingWeights:
    """Temperature sampling: weight proportional to size**alpha, normalised."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if not sizes:
        raise DataError("no languages to weight")
    for lang, n in sizes.items():
        if n <= 0:
            raise DataError(f"language {lang!r} has no data (size {n})")
    raw = {lang: float(n) ** alpha for lang, n in sizes.items()}
    total = math.fsum(raw.values())
    return SamplingWeights({lang: w / total for lang, w in raw.items()}, alpha)


# -- file formats ----------------------------------------------------------

def _read_lines(path) -> list[bytes]:
    with open(path, "rb") as f:
        data = f.read()
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return lines


def _decode_lines(path, lines: Sequence[bytes]) -> list[str]:
    out = []
    offset = 0
    for line in lines:
        try:
            out.append(line.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: invalid UTF-8 at byte offset {offset + exc.start}") from exc
        offset += len(line) + 1
    return out


def read_mono(path, language: str) -> Corpus:
    if not os.path.exists(path):
        raise DataError(f"missing input file: {path}")
    return Corpus.from_raw(language, _decode_lines(path, _read_lines(path)))


def read_tsv(path, src: str, tgt: str) -> ParallelCorpus:
    if not os.path.exists(path):
        raise DataError(f"missing input file: {path}")
    pairs = []
    for i, line in enumerate(_decode_lines(path, _read_lines(path))):
        cols = line.rstrip("\r").split("\t")
        if len(cols) != 2:
            raise DataError(f"{path}:{i + 1}: expected 2 tab-separated columns, got {len(cols)}")
        pairs.append((cols[0], cols[1]))
    return ParallelCorpus.from_raw(src, tgt, pairs)


def read_aligned(src_path, tgt_path, src: str, tgt: str) -> ParallelCorpus:
    for p in (src_path, tgt_path):
        if not os.path.exists(p):
            raise DataError(f"missing input file: {p}")
    a = _decode_lines(src_path, _read_lines(src_path))
    b = _decode_lines(tgt_path, _read_lines(tgt_path))
    if len(a) != len(b):
        raise DataError(f"aligned files differ in length: {len(a)} vs {len(b)}")
    return ParallelCorpus.from_raw(src, tgt, zip(a, b))


def write_mono(path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in corpus.lines:
            f.write(line + "\n")


def write_tsv(path, corpus: ParallelCorpus) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s, t in corpus.pairs:
            f.write(f"{s}\t{t}\n")
