"""Synthetic stand-ins for the En/Ln/Af/Sw/Zu corpora.

Sentences are generated from one shared meaning grammar (subject, verb,
object, tense, optional adjective and location) and realised per language with
its own lexicon and word order.  Ln/Sw/Zu draw on a common pool of roots so
the family shares structure, and Af is derived from English spellings.
Relative corpus sizes follow the proportions of the real data (small Ln and Zu
monolingual sets, large Sw and Af).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .rng import Rng, child_seed

NOUNS = ["dog", "cat", "child", "woman", "man", "teacher", "farmer", "bird", "house", "river",
         "tree", "market", "book", "fish", "school", "village", "doctor", "road", "boat", "goat",
         "friend", "mother", "father", "king", "song", "field", "hill", "door", "table", "garden"]
VERBS = ["walk", "cook", "like", "help", "call", "watch", "clean", "open", "carry", "visit",
         "want", "paint", "push", "pull", "wash", "follow", "answer", "love", "need", "greet"]
ADJS = ["big", "small", "old", "new", "good", "red", "tall", "happy", "quiet", "strong", "green", "poor"]
PLACES = ["market", "village", "school", "garden", "field", "house", "river"]

# mono / parallel sizes, scaled from the real per-language sentence counts
MONO_SIZES = {"en": 2000, "ln": 300, "af": 1600, "sw": 2000, "zu": 420}
PARALLEL_SIZES = {"af": 750, "ln": 400, "sw": 700, "zu": 670}

_BANTU_SYLLABLES = ["ba", "bo", "ka", "ko", "la", "li", "ma", "mi", "na", "ni", "nga", "sa",
                    "ta", "to", "wa", "ya", "zi", "mbo", "ndi", "tu", "pe", "ku", "lu", "si"]
_SOUND_SHIFT = {
    "ln": {"a": "a", "o": "ɔ", "e": "ɛ", "i": "i", "u": "o"},
    "sw": {"a": "a", "o": "o", "e": "e", "i": "i", "u": "u"},
    "zu": {"a": "a", "o": "o", "e": "e", "i": "i", "u": "u", "s": "hl", "t": "th"},
}


@dataclass(frozen=True)
class Meaning:
    subj: str
    subj_adj: str
    plural: bool
    verb: str
    past: bool
    obj: str
    obj_adj: str
    place: str


def sample_meaning(rng: Rng) -> Meaning:
    pick = lambda xs: xs[rng.below(len(xs))]
    return Meaning(
        subj=pick(NOUNS), subj_adj=pick(ADJS) if rng.uniform() < 0.4 else "",
        plural=rng.uniform() < 0.35, verb=pick(VERBS), past=rng.uniform() < 0.5,
        obj=pick(NOUNS), obj_adj=pick(ADJS) if rng.uniform() < 0.3 else "",
        place=pick(PLACES) if rng.uniform() < 0.3 else "")


def _root_pool(seed: int) -> dict:
    """A shared proto-root per concept for the Bantu-like languages."""
    rng = Rng(child_seed(seed, 101))
    pool = {}
    used = set()
    for concept in NOUNS + VERBS + ADJS:
        while True:
            root = "".join(_BANTU_SYLLABLES[rng.below(len(_BANTU_SYLLABLES))]
                           for _ in range(1 + rng.below(2)))
            if root not in used:
                break
        used.add(root)
        pool[concept] = root
    return pool


def _shift(root: str, lang: str) -> str:
    table = _SOUND_SHIFT[lang]
    return "".join(table.get(ch, ch) for ch in root)


def _afrikaans(word: str) -> str:
    for a, b in (("th", "d"), ("ch", "g"), ("w", "w"), ("c", "k"), ("ee", "ie"), ("oo", "oe"),
                 ("ou", "ô"), ("v", "f")):
        word = word.replace(a, b)
    return word + ("e" if len(word) <= 4 else "")


class Language:
    def __init__(self, code: str, seed: int):
        self.code = code
        self.pool = _root_pool(seed)

    def word(self, concept: str) -> str:
        if self.code == "en":
            return concept
        if self.code == "af":
            return _afrikaans(concept)
        return _shift(self.pool[concept], self.code)

    def realise(self, m: Meaning) -> str:
        c = self.code
        w = self.word
        if c == "en":
            subj = " ".join(x for x in ("the", m.subj_adj, m.subj + ("s" if m.plural else "")) if x)
            verb = m.verb + ("ed" if m.past else ("" if m.plural else "s"))
            obj = " ".join(x for x in ("the", m.obj_adj, m.obj) if x)
            tail = f" in the {m.place}" if m.place else ""
            return f"{subj} {verb} {obj}{tail} ."
        if c == "af":
            subj = " ".join(x for x in ("die", w(m.subj_adj) if m.subj_adj else "",
                                        w(m.subj) + ("s" if m.plural else "")) if x)
            obj = " ".join(x for x in ("die", w(m.obj_adj) if m.obj_adj else "", w(m.obj)) if x)
            tail = f" in die {w(m.place)}" if m.place else ""
            if m.past:
                return f"{subj} het {obj}{tail} ge{w(m.verb)} ."
            return f"{subj} {w(m.verb)} {obj}{tail} ."
        prefix = {"ln": ("mo", "ba"), "sw": ("m", "wa"), "zu": ("um", "aba")}[c]
        subj = prefix[1 if m.plural else 0] + w(m.subj)
        if m.subj_adj:
            subj += " " + {"ln": "", "sw": "m", "zu": "o"}[c] + w(m.subj_adj)
        obj = w(m.obj) + (" " + w(m.obj_adj) if m.obj_adj else "")
        tense = {"ln": ("a", "aki"), "sw": ("na", "li"), "zu": ("ya", "a")}[c]
        agree = {"ln": ("a", "ba"), "sw": ("a", "wa"), "zu": ("u", "ba")}[c][1 if m.plural else 0]
        if c == "ln":
            verb = agree + w(m.verb) + ("aki" if m.past else "i")
        else:
            verb = agree + tense[1 if m.past else 0] + w(m.verb)
        loc = {"ln": "na", "sw": "kwenye", "zu": "e"}[c]
        tail = f" {loc} {w(m.place)}" if m.place else ""
        return f"{subj} {verb} {obj}{tail} ."


def _messy(line: str, rng: Rng) -> str:
    """Occasional stray whitespace so normalisation has work to do."""
    u = rng.uniform()
    if u < 0.03:
        return "  " + line.replace(" ", "   ", 1) + " \t"
    return line


def generate(seed: int = 2024, mono_sizes: dict = None, parallel_sizes: dict = None):
    """Returns ({lang: [lines]}, {xx: [(en, xx)]})."""
    mono_sizes = mono_sizes or MONO_SIZES
    parallel_sizes = parallel_sizes or PARALLEL_SIZES
    langs = {c: Language(c, seed) for c in ("en", "ln", "af", "sw", "zu")}
    mono = {}
    for i, (code, n) in enumerate(sorted(mono_sizes.items())):
        rng = Rng(child_seed(seed, 1, i))
        mono[code] = [_messy(langs[code].realise(sample_meaning(rng)), rng) for _ in range(n)]
    parallel = {}
    for i, (code, n) in enumerate(sorted(parallel_sizes.items())):
        rng = Rng(child_seed(seed, 2, i))
        pairs = []
        for _ in range(n):
            m = sample_meaning(rng)
            pairs.append((langs["en"].realise(m), langs[code].realise(m)))
        parallel[code] = pairs
    return mono, parallel


def write_toy_corpora(directory, seed: int = 2024) -> list:
    """Write mono.<lang>.txt and para.en-<xx>.tsv files; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    mono, parallel = generate(seed)
    paths = []
    for code, lines in mono.items():
        p = os.path.join(directory, f"mono.{code}.txt")
        with open(p, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(l + "\n" for l in lines)
        paths.append(p)
    for code, pairs in parallel.items():
        p = os.path.join(directory, f"para.en-{code}.tsv")
        with open(p, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(f"{a}\t{b}\n" for a, b in pairs)
        paths.append(p)
    return sorted(paths)
