from collections import Counter

import pytest
from hypothesis import given, strategies as st

from desknmt.errors import DataError, LengthError
from desknmt.noising import (
    NoiseConfig, TrainingExample, budget, delete_tokens, infill_spans, make_concat_example,
    make_denoise_example, make_translate_example, mask_tokens, permute_sentences,
)
from desknmt.rng import Rng
from desknmt.tokenizer import EOS, MASK, SpecialTokens

SP = SpecialTokens()
EN, LN = SP.lang("en"), SP.lang("ln")
tokens = st.lists(st.integers(300, 999), max_size=80)
ratios = st.floats(0.0, 1.0)
seeds = st.integers(0, 2**64 - 1)
QUIET = NoiseConfig(mask_ratio=0.0, permute_sentences=False)


def test_budget_rounds_half_up():
    assert budget(0.25, 8) == 2
    assert budget(0.35, 20) == 7
    assert budget(0.5, 5) == 3
    assert budget(0.0, 100) == 0


@given(tokens, ratios, seeds)
def test_mask_count_exact(ids, ratio, seed):
    out = mask_tokens(ids, ratio, Rng(seed))
    assert len(out) == len(ids)
    assert out.count(MASK) == budget(ratio, len(ids))
    assert all(o == i for o, i in zip(out, ids) if o != MASK)


@given(tokens, ratios, seeds)
def test_delete_count_and_order(ids, ratio, seed):
    ids = list(range(len(ids)))
    out = delete_tokens(ids, ratio, Rng(seed))
    assert len(out) == len(ids) - budget(ratio, len(ids))
    assert out == sorted(out)


@given(tokens, ratios, st.floats(0.5, 6.0), seeds)
def test_infill_counts(ids, ratio, lam, seed):
    out = infill_spans(ids, ratio, lam, Rng(seed))
    kept = [t for t in out if t != MASK]
    assert len(ids) - len(kept) == budget(ratio, len(ids))
    assert Counter(kept) <= Counter(ids)
    assert out == infill_spans(ids, ratio, lam, Rng(seed))


def test_infill_edge_cases():
    ids = list(range(300, 320))
    assert infill_spans(ids, 0.0, 3.5, Rng(1)) == ids
    assert infill_spans(ids[:3], 1.0, 50.0, Rng(1)) == [MASK]
    out = infill_spans(ids, 0.35, 3.5, Rng(5))
    assert len(out) == 20 - 7 + out.count(MASK)


@given(st.lists(st.lists(st.integers(10, 20), min_size=1, max_size=4), min_size=1, max_size=6), seeds)
def test_permutation_preserves_multiset(doc, seed):
    out = permute_sentences(doc, Rng(seed))
    assert sorted(map(tuple, out)) == sorted(map(tuple, doc))


def test_permutation_examples():
    assert permute_sentences([[1, 2]], Rng(0)) == [[1, 2]]
    assert permute_sentences([[1], [1]], Rng(0)) == [[1], [1]]
    doc = [[1], [2], [3]]
    assert permute_sentences(doc, Rng(42)) == permute_sentences(doc, Rng(42))
    with pytest.raises(DataError):
        permute_sentences([], Rng(0))


def test_denoise_without_noise():
    ex = make_denoise_example([[300, 301], [302]], QUIET, SP, "ln", Rng(0))
    clean = [300, 301, EOS, 302]
    assert ex.encoder_input == clean + [EOS, LN]
    assert ex.decoder_input == [LN] + clean
    assert ex.target == clean + [EOS]


def test_denoise_full_mask():
    cfg = NoiseConfig(mask_ratio=1.0, span_infill=False, permute_sentences=False)
    ex = make_denoise_example([[300, 301, 302]], cfg, SP, "en", Rng(0))
    assert ex.encoder_input == [MASK] * 3 + [EOS, EN]
    assert ex.target == [300, 301, 302, EOS]


def test_denoise_over_length():
    with pytest.raises(LengthError):
        make_denoise_example([list(range(300, 310))], QUIET, SP, "en", Rng(0), max_len=11)


@given(st.lists(st.lists(st.integers(300, 999), min_size=1, max_size=10), min_size=1, max_size=4), seeds)
def test_denoise_layout_invariants(doc, seed):
    ex = make_denoise_example(doc, NoiseConfig(), SP, "sw", Rng(seed))
    assert len(ex.decoder_input) == len(ex.target)
    assert ex.decoder_input[1:] == ex.target[:-1]
    assert ex.decoder_input[0] == SP.lang("sw")
    assert ex.encoder_input[-2:] == [EOS, SP.lang("sw")]
    assert SP.pad not in ex.encoder_input + ex.decoder_input
    again = make_denoise_example(doc, NoiseConfig(), SP, "sw", Rng(seed))
    assert again == ex


def test_translate_layout():
    ex = make_translate_example([400], [500], "en", "ln", SP)
    assert ex.encoder_input == [400, EOS, EN]
    assert ex.decoder_input == [LN, 500]
    assert ex.target == [500, EOS]
    back = make_translate_example([500], [400], "ln", "en", SP)
    assert back.encoder_input == [500, EOS, LN] and back.decoder_input == [EN, 400]
    with pytest.raises(DataError):
        make_translate_example([400], [], "en", "ln", SP)


def test_concat_layout():
    src, tgt = [400, 401], [500, 501, 502]
    clean = [EN, 400, 401, EOS, LN, 500, 501, 502]
    ex = make_concat_example(src, tgt, "en", "ln", NoiseConfig(mask_ratio=0.0), SP, Rng(0))
    assert ex.encoder_input == clean + [EOS]
    assert ex.decoder_input == [LN] + clean[1:]
    assert ex.target == clean[1:] + [EOS]
    full = make_concat_example(src, tgt, "en", "ln", NoiseConfig(mask_ratio=1.0), SP, Rng(0))
    assert full.encoder_input == [EN, MASK, MASK, MASK, LN, MASK, MASK, MASK, EOS]


def test_concat_masks_both_halves():
    src, tgt = list(range(400, 420)), list(range(500, 520))
    ex = make_concat_example(src, tgt, "en", "ln", NoiseConfig(mask_ratio=0.35), SP, Rng(3))
    masked = [i for i, t in enumerate(ex.encoder_input) if t == MASK]
    assert len(masked) == budget(0.35, 41)
    assert min(masked) <= 20 < max(masked)


def test_example_line_round_trip():
    ex = make_translate_example([400, 401], [500], "en", "ln", SP)
    assert TrainingExample.from_line(ex.to_line()) == ex
