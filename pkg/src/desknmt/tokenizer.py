"""Byte-fallback BPE with reserved special and language-tag ids.

Words are whitespace-split; each word is prefixed with the boundary symbol
``▁`` which takes part in merges like any other symbol.  Characters outside
the trained inventory (and the boundary character itself, when it appears in
text) are spelled as UTF-8 byte tokens ``<0xNN>``.
"""

from __future__ import annotations

import hashlib
import heapq
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import LANGUAGES, Corpus
from .errors import DataError

MARKER = "▁"
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>", "<mask>")
PAD, UNK, BOS, EOS, MASK = range(5)
N_BYTES = 256


def lang_token(lang: str) -> str:
    return f"[{lang}]"


def byte_token(b: int) -> str:
    return f"<0x{b:02X}>"


@dataclass(frozen=True)
class SpecialTokens:
    pad: int = PAD
    unk: int = UNK
    bos: int = BOS
    eos: int = EOS
    mask: int = MASK
    languages: tuple[str, ...] = LANGUAGES

    def lang(self, code: str) -> int:
        try:
            return len(SPECIALS) + self.languages.index(code)
        except ValueError:
            raise DataError(f"language {code!r} has no tag token") from None

    @property
    def count(self) -> int:
        return len(SPECIALS) + len(self.languages)

    def ids(self) -> frozenset:
        return frozenset(range(self.count))


@dataclass
class Vocab:
    id_to_piece: list[str]
    special: SpecialTokens = field(default_factory=SpecialTokens)
    piece_to_id: dict = field(init=False)

    def __post_init__(self):
        self.piece_to_id = {p: i for i, p in enumerate(self.id_to_piece)}
        if len(self.piece_to_id) != len(self.id_to_piece):
            raise DataError("vocabulary contains duplicate pieces")
        expected = list(SPECIALS) + [lang_token(l) for l in self.special.languages]
        if self.id_to_piece[: len(expected)] != expected:
            raise DataError("special tokens are not in their reserved slots")
        for b in range(N_BYTES):
            if self.id_to_piece[self.special.count + b] != byte_token(b):
                raise DataError(f"byte token {b} missing from its reserved slot")

    @property
    def size(self) -> int:
        return len(self.id_to_piece)

    def __len__(self):
        return len(self.id_to_piece)

    @property
    def byte_offset(self) -> int:
        return self.special.count

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_piece).encode("utf-8")).hexdigest()


def base_pieces(special: SpecialTokens) -> list[str]:
    return (list(SPECIALS) + [lang_token(l) for l in special.languages]
            + [byte_token(b) for b in range(N_BYTES)])


def _spell(word: str, known=None) -> list[str]:
    """Split a word into initial symbols; ``known`` restricts to an inventory."""
    syms = [MARKER]
    for ch in word:
        if ch != MARKER and (known is None or ch in known):
            syms.append(ch)
        else:
            syms.extend(byte_token(b) for b in ch.encode("utf-8"))
    return syms


def _is_byte(sym: str) -> bool:
    return len(sym) == 6 and sym.startswith("<0x") and sym.endswith(">")


def train_bpe(corpora: Sequence[Corpus], vocab_size: int,
              special: SpecialTokens | None = None):
    """Greedy BPE: merge the most frequent adjacent pair until the budget is spent.

    Ties on frequency go to the lexicographically smallest (left, right).
    Training stops early once no pair occurs at least twice.
    Returns (Vocab, merges) where merges is the ordered list of pair rules.
    """
    special = special or SpecialTokens()
    word_freq: Counter = Counter()
    for corpus in corpora:
        for line in corpus.lines:
            word_freq.update(line.split())
    if not word_freq:
        raise DataError("cannot train a tokenizer on empty corpora")

    words = sorted(word_freq)
    freqs = [word_freq[w] for w in words]
    seqs = [_spell(w) for w in words]
    alphabet = sorted({s for seq in seqs for s in seq if not _is_byte(s)})
    pieces = base_pieces(special) + alphabet
    if vocab_size < len(pieces):
        raise DataError(f"vocab_size {vocab_size} is below the base inventory of {len(pieces)}")
    have = set(pieces)
    reserved = set(base_pieces(special))

    counts: dict = defaultdict(int)
    where: dict = defaultdict(set)
    for wi, seq in enumerate(seqs):
        for a, b in zip(seq, seq[1:]):
            if not (_is_byte(a) or _is_byte(b)):
                counts[(a, b)] += freqs[wi]
                where[(a, b)].add(wi)
    heap = [(-c, pair) for pair, c in counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(pieces) < vocab_size and heap:
        negc, pair = heapq.heappop(heap)
        if counts.get(pair, 0) != -negc:
            continue  # stale entry
        if -negc < 2:
            break
        a, b = pair
        new = a + b
        if new in reserved:  # text must never spell a special or byte piece
            counts.pop(pair)
            where.pop(pair, None)
            continue
        merges.append(pair)
        if new not in have:
            have.add(new)
            pieces.append(new)
        touched = defaultdict(int)
        for wi in sorted(where.pop(pair, ())):
            seq = seqs[wi]
            f = freqs[wi]
            for x, y in zip(seq, seq[1:]):
                if not (_is_byte(x) or _is_byte(y)):
                    touched[(x, y)] -= f
            merged = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
                    merged.append(new)
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            seqs[wi] = merged
            for x, y in zip(merged, merged[1:]):
                if not (_is_byte(x) or _is_byte(y)):
                    touched[(x, y)] += f
                    where[(x, y)].add(wi)
        counts.pop(pair, None)
        for p, delta in touched.items():
            if p == pair or delta == 0:
                continue
            c = counts.get(p, 0) + delta
            if c > 0:
                counts[p] = c
                heapq.heappush(heap, (-c, p))
            else:
                counts.pop(p, None)
    return Vocab(pieces, special), merges


class Tokenizer:
    """Encoder/decoder over a trained (Vocab, merges) pair."""

    def __init__(self, vocab: Vocab, merges: Sequence[tuple[str, str]]):
        self.vocab = vocab
        self.merges = [tuple(m) for m in merges]
        self.ranks = {m: r for r, m in enumerate(self.merges)}
        self._known = {p for p in vocab.id_to_piece if len(p) == 1 and p != MARKER}
        self._cache: dict = {}

    @property
    def special(self) -> SpecialTokens:
        return self.vocab.special

    def digest(self) -> str:
        h = hashlib.sha256(self.vocab.digest().encode())
        h.update("\n".join(f"{a} {b}" for a, b in self.merges).encode("utf-8"))
        return h.hexdigest()

    def _encode_word(self, word: str) -> list[int]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        syms = _spell(word, self._known)
        while len(syms) > 1:
            best = None
            for i in range(len(syms) - 1):
                r = self.ranks.get((syms[i], syms[i + 1]))
                if r is not None and (best is None or r < best[0]):
                    best = (r, i)
            if best is None:
                break
            a, b = self.merges[best[0]]
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(a + b)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            syms = out
        p2i = self.vocab.piece_to_id
        ids = [p2i[s] for s in syms]
        self._cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            ids.extend(self._encode_word(word))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        size = self.vocab.size
        n_special = self.special.count
        buf = bytearray()
        for i in ids:
            i = int(i)
            if i < 0 or i >= size:
                raise DataError(f"token id {i} is outside the vocabulary (size {size})")
            if i < n_special:
                continue
            if i < n_special + N_BYTES:
                buf.append(i - n_special)
            else:
                buf.extend(self.vocab.id_to_piece[i].replace(MARKER, " ").encode("utf-8"))
        text = buf.decode("utf-8", errors="replace")
        return text[1:] if text.startswith(" ") else text


# -- file formats ----------------------------------------------------------

def save_vocab(path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in vocab.id_to_piece:
            f.write(p + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8", newline="\n") as f:
        pieces = [l[:-1] if l.endswith("\n") else l for l in f]
    langs = []
    for p in pieces[len(SPECIALS):]:
        if p == byte_token(0):
            break
        langs.append(p[1:-1])
    langs = tuple(langs)
    return Vocab(pieces, SpecialTokens(languages=langs))


def save_merges(path, merges) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for a, b in merges:
            f.write(f"{a} {b}\n")


def load_merges(path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8", newline="\n") as f:
        for line in f:
            a, b = line.rstrip("\n").split(" ")
            out.append((a, b))
    return out


def load_tokenizer(directory) -> Tokenizer:
    return Tokenizer(load_vocab(os.path.join(directory, "vocab.txt")),
                     load_merges(os.path.join(directory, "merges.txt")))


def save_tokenizer(directory, tok: Tokenizer) -> None:
    os.makedirs(directory, exist_ok=True)
    save_vocab(os.path.join(directory, "vocab.txt"), tok.vocab)
    save_merges(os.path.join(directory, "merges.txt"), tok.merges)
