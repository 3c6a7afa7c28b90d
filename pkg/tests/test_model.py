import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from desknmt.errors import DataError, LengthError
from desknmt.model import (
    FULL_CONFIG, ModelConfig, Seq2SeqTransformer, beam_decode, beam_search, count_params,
    greedy_decode, greedy_decode_batch, length_penalty, load_checkpoint, model_from_tensors,
    param_shapes, save_checkpoint,
)
from desknmt.nn import log_softmax_np
from desknmt.rng import Rng
from desknmt.tokenizer import EOS, PAD

TINY = ModelConfig(vocab_size=24, d_model=8, d_ff=16, encoder_layers=1, decoder_layers=1,
                   heads=2, max_len=16, dropout=0.0)


def tiny(seed=0, **kw):
    cfg = ModelConfig(**{**TINY.__dict__, **kw})
    return Seq2SeqTransformer.initialize(cfg, seed, np.float64)


def test_count_params_small_example():
    cfg = ModelConfig(vocab_size=10, d_model=4, d_ff=8, encoder_layers=1, decoder_layers=1,
                      heads=1, max_len=8)
    realised = Seq2SeqTransformer.initialize(cfg).num_scalars()
    assert count_params(cfg) == realised == 552


def test_count_params_full_scale():
    assert 158.8e6 <= count_params(FULL_CONFIG) <= 165.2e6


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 60), st.sampled_from([4, 8, 12]), st.integers(1, 20), st.integers(0, 3),
       st.integers(0, 3), st.integers(2, 20), st.booleans(), st.sampled_from(["pre", "post"]))
def test_count_params_matches_allocation(v, d, f, enc, dec, max_len, share, order):
    cfg = ModelConfig(vocab_size=v, d_model=d, d_ff=f, encoder_layers=enc, decoder_layers=dec,
                      heads=2, max_len=max_len, share_embeddings=share, norm_order=order)
    assert count_params(cfg) == sum(int(np.prod(s)) for _, s, _ in param_shapes(cfg))
    assert count_params(cfg) == Seq2SeqTransformer.initialize(cfg).num_scalars()


def test_vocab_linearity():
    doubled = ModelConfig(**{**TINY.__dict__, "vocab_size": 48})
    assert count_params(doubled) - count_params(TINY) == 24 * TINY.d_model


def test_config_text_round_trip():
    cfg = ModelConfig(vocab_size=99, dropout=0.25, share_embeddings=False, norm_order="post")
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    assert ModelConfig.from_text("# comment\nd_model = 32  # trailing\n").d_model == 32


def test_forward_shape_and_errors():
    m = tiny()
    logits = m.forward(np.array([[7, 8, 9], [10, 11, 0]]), np.array([[5, 12], [6, 13]]))
    assert logits.shape == (2, 2, 24)
    with pytest.raises(DataError):
        m.forward(np.array([[99]]), np.array([[5]]))
    with pytest.raises(LengthError):
        m.forward(np.array([[7] * 17]), np.array([[5]]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6))
def test_causality(seed, j):
    rng = Rng(seed)
    m = tiny(seed)
    enc = np.array([[rng.below(14) + 10 for _ in range(5)]])
    dec = np.array([[rng.below(14) + 10 for _ in range(7)]])
    other = dec.copy()
    other[0, j] = 10 + (dec[0, j] - 9) % 14
    a = m.forward(enc, dec).data
    b = m.forward(enc, other).data
    assert np.array_equal(a[:, :j], b[:, :j])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 5))
def test_pad_invariance(seed, extra):
    rng = Rng(seed)
    m = tiny(seed)
    enc = [rng.below(14) + 10 for _ in range(4)]
    dec = np.array([[5, 11, 12]])
    a = m.forward(np.array([enc]), dec).data
    b = m.forward(np.array([enc + [PAD] * extra]), dec).data
    assert np.allclose(a, b, atol=1e-5)


def test_dropout_determinism():
    m = tiny(dropout=0.3)
    enc, dec = np.array([[7, 8, 9]]), np.array([[5, 12]])
    plain = m.forward(enc, dec).data
    assert np.array_equal(plain, m.forward(enc, dec).data)
    d1 = m.forward(enc, dec, rng=Rng(4)).data
    assert np.array_equal(d1, m.forward(enc, dec, rng=Rng(4)).data)
    assert not np.array_equal(d1, plain)


def eos_loving(seed=0):
    m = tiny(seed)
    emb = m.params["embed.tokens"].data
    emb[EOS] = 0.0
    emb[EOS, 0] = 5.0
    m.params["decoder.final_norm.gain"].data[:] = 0.0
    m.params["decoder.final_norm.bias"].data[:] = emb[EOS] * 10
    return m


def test_greedy_stops_on_eos():
    assert greedy_decode(eos_loving(), [7, 8, EOS, 5], 6, 10) == []
    assert beam_decode(eos_loving(), [7, 8, EOS, 5], 6, beam=3, max_steps=10) == []


def test_greedy_batch_matches_single():
    m = tiny(3)
    inputs = [[7, 8, EOS, 5], [9, 10, 11, 12, EOS, 5]]
    batch = greedy_decode_batch(m, inputs, [6, 6], 8)
    assert batch == [greedy_decode(m, x, 6, 8) for x in inputs]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_beam_one_is_greedy(seed):
    m = tiny(seed)
    x = [10 + Rng(seed).below(14) for _ in range(4)] + [EOS, 5]
    assert beam_decode(m, x, 6, beam=1, max_steps=10) == greedy_decode(m, x, 6, 10)


def enumerate_best(table, eos, max_steps, alpha):
    """Brute force over every token sequence the search could return."""
    V = table.shape[-1]
    best = None
    for n in range(1, max_steps + 1):
        for seq in itertools.product(range(V), repeat=n):
            if eos in seq[:-1] or (n < max_steps and seq[-1] != eos):
                continue
            score = sum(table[seq[i - 1] if i else V, seq[i]] for i in range(n))
            key = (-score / length_penalty(n, alpha), seq)
            if best is None or key < best[0]:
                best = (key, seq)
    seq = list(best[1])
    return seq[:-1] if seq[-1] == eos else seq


@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_beam_exhaustive_on_toy_chain(alpha):
    rng = Rng(21)
    V, steps = 3, 4
    # bigram log-probabilities; row V is the start state
    table = log_softmax_np(rng.uniform_array((V + 1, V)) * 4)
    step = lambda prefixes: np.stack([table[p[-1] if len(p) > 1 else V] for p in prefixes])
    got = beam_search(step, -1, 2, beam=V ** steps, max_steps=steps, alpha=alpha)
    assert got == enumerate_best(table, 2, steps, alpha)


def test_length_penalty_neutral_at_zero():
    assert length_penalty(7, 0.0) == 1.0
    assert length_penalty(1, 1.0) == 1.0


def test_checkpoint_round_trip(tmp_path):
    m = tiny(5)
    tensors = {k: p.data for k, p in m.params.items()}
    tensors["opt.m.x"] = np.arange(3, dtype=np.float32)
    save_checkpoint(tmp_path / "c.lmtl", m.config, tensors, {"seed": 5, "note": "a#b=c"})
    cfg, back, manifest = load_checkpoint(tmp_path / "c.lmtl")
    assert cfg == m.config
    assert manifest == {"seed": "5", "note": "a#b=c"}
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)
    again = model_from_tensors(cfg, back)
    enc, dec = np.array([[7, 8]]), np.array([[5, 9]])
    assert np.array_equal(again.forward(enc, dec).data, m.forward(enc, dec).data)


def test_bad_checkpoint(tmp_path):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "x")
