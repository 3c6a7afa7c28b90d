import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from desknmt.errors import DataError, NumericError, VocabMismatchError
from desknmt.model import ModelConfig, Seq2SeqTransformer
from desknmt.noising import NoiseConfig, make_translate_example
from desknmt.nn import Tensor
from desknmt.rng import Rng
from desknmt.tokenizer import SpecialTokens
from desknmt.trainer import (
    AdamState, Checkpoint, Datasets, TaskMixture, TaskSpec, TrainConfig, adam_step, batch_loss,
    clip_grad_norm, collate, finetune, lr_at, make_batch, pretrain, sample_task, scratch_checkpoint,
)

SP = SpecialTokens()
SMALL = ModelConfig(vocab_size=48, d_model=16, d_ff=32, encoder_layers=1, decoder_layers=1,
                    heads=2, max_len=32, dropout=0.1)


def toy_data(seed=0, n_mono=32, n_pairs=24):
    rng = Rng(seed)
    sent = lambda: [20 + rng.below(28) for _ in range(2 + rng.below(5))]
    mono = {"ln": [sent() for _ in range(n_mono)], "sw": [sent() for _ in range(n_mono)]}
    pairs = []
    for _ in range(n_pairs):
        s = sent()
        pairs.append((s, [t + 1 if t < 47 else 20 for t in reversed(s)]))
    return Datasets(mono, {("en", "ln"): pairs})


MIXTURE = TaskMixture((TaskSpec("denoise", ("ln", "sw")), TaskSpec("translate", ("en-ln", "ln-en"))))


def run(config, data=None, **kw):
    return pretrain(data or toy_data(), NoiseConfig(), SMALL, config, MIXTURE, SP, "tok", **kw)


def test_lr_schedule():
    assert lr_at(1, 1.0, 4) == 0.25
    assert lr_at(4, 1.0, 4) == 1.0
    assert math.isclose(lr_at(16, 1.0, 4), 0.5)
    lo = lr_at(99, 1e-3, 100)
    assert abs(lr_at(100, 1e-3, 100) - lo) < 2e-5
    after = [lr_at(s, 1e-3, 100) for s in range(100, 400)]
    assert all(b < a for a, b in zip(after, after[1:]))
    with pytest.raises(ValueError):
        lr_at(0, 1.0, 4)


def scalar(v):
    return {"w": Tensor(np.array([v]), requires_grad=True)}


def test_adam_first_step():
    p = scalar(0.0)
    adam_step(p, {"w": np.array([1.0])}, AdamState(), 1, 0.001, TrainConfig())
    assert math.isclose(p["w"].data[0], -0.001 / (1 + 1e-8), rel_tol=1e-12)


def test_adam_zero_gradient():
    p = scalar(2.0)
    state = AdamState()
    adam_step(p, {"w": np.array([0.0])}, state, 1, 0.01, TrainConfig())
    assert p["w"].data[0] == 2.0
    state.m["w"], state.v["w"] = np.array([0.5]), np.array([0.25])
    adam_step(p, {"w": np.array([0.0])}, state, 2, 0.01, TrainConfig())
    assert state.m["w"][0] == 0.5 * 0.9 and state.v["w"][0] == 0.25 * 0.98


def test_clipping():
    grads = {"a": np.array([6.0]), "b": np.array([8.0])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 10.0
    assert np.allclose(clipped["a"], [0.6]) and np.allclose(clipped["b"], [0.8])
    same, _ = clip_grad_norm({"a": np.array([0.3])}, 1.0)
    assert same["a"][0] == 0.3


def test_non_finite_gradient_named():
    with pytest.raises(NumericError, match="w"):
        adam_step(scalar(0.0), {"w": np.array([np.nan])}, AdamState(), 1, 0.1, TrainConfig())


def test_sample_task():
    single = TaskMixture((TaskSpec("translate", ("en-ln",)),))
    r = Rng(0)
    assert all(sample_task(single, [{"en-ln": 1.0}], r) == ("translate", "en-ln") for _ in range(50))
    mix = TaskMixture((TaskSpec("denoise", ("ln",)), TaskSpec("translate", ("en-ln",))))
    w = [{"ln": 1.0}, {"en-ln": 1.0}]
    r = Rng(1)
    kinds = [sample_task(mix, w, r)[0] for _ in range(10_000)]
    assert abs(kinds.count("denoise") / 10_000 - 0.5) <= 0.02
    zero = TaskMixture((TaskSpec("denoise", ("ln",), 0.0), TaskSpec("translate", ("en-ln",))))
    assert all(sample_task(zero, w, r)[0] == "translate" for _ in range(500))


def ex(n_src, n_tgt):
    return make_translate_example([20] * n_src, [21] * n_tgt, "en", "ln", SP)


def test_make_batch_examples():
    (one,) = make_batch([ex(3, 3)])
    assert one.size == 1 and not one.enc_pad.any() and not one.dec_pad.any()
    (both,) = make_batch([ex(2, 2), ex(4, 4)])
    assert both.dec_ids.shape == (2, 5) and int(both.dec_pad.sum()) == 2
    batches = make_batch([ex(5, 29) for _ in range(10)], batch_tokens=100)
    assert max(b.size for b in batches) <= 3 and sum(b.size for b in batches) == 10
    assert all(b.target_tokens <= 100 for b in batches)
    with pytest.raises(DataError):
        make_batch([ex(3, 200)], batch_tokens=100)


@given(st.lists(st.tuples(st.integers(1, 12), st.integers(1, 12)), min_size=1, max_size=20),
       st.integers(13, 60))
def test_make_batch_budget(shapes, budget):
    examples = [ex(a, b) for a, b in shapes]
    batches = make_batch(examples, batch_tokens=budget)
    assert sum(b.size for b in batches) == len(examples)
    assert all(b.target_tokens <= budget for b in batches)


def test_zero_steps_is_initialisation():
    res = run(TrainConfig(max_steps=0, seed=3, dtype="float64"))
    again = run(TrainConfig(max_steps=0, seed=3, dtype="float64"))
    for k, p in res.checkpoint.model.params.items():
        assert np.array_equal(p.data, again.checkpoint.model.params[k].data)
    assert res.checkpoint.step == 0 and res.losses == []


def test_denoise_training_lowers_loss():
    mix = TaskMixture((TaskSpec("denoise", ("ln",)),))
    cfg = TrainConfig(max_steps=200, batch_sentences=8, lr_max=3e-3, warmup_steps=20, seed=1)
    res = pretrain(toy_data(), NoiseConfig(), SMALL, cfg, mix, SP)
    assert np.mean(res.losses[-10:]) < res.losses[0]


def test_runs_are_bit_reproducible():
    cfg = TrainConfig(max_steps=12, batch_sentences=4, lr_max=1e-3, warmup_steps=4, seed=5,
                      dtype="float64")
    a, b = run(cfg), run(cfg)
    assert a.losses == b.losses
    for k, p in a.checkpoint.model.params.items():
        assert np.array_equal(p.data, b.checkpoint.model.params[k].data)


def test_float32_runs_agree():
    cfg = TrainConfig(max_steps=8, batch_sentences=4, seed=6)
    a, b = run(cfg), run(cfg)
    assert np.allclose(a.losses, b.losses, rtol=1e-6, atol=0)


def test_resume_matches_uninterrupted(tmp_path):
    cfg = TrainConfig(max_steps=10, batch_sentences=4, lr_max=1e-3, warmup_steps=3, seed=9,
                      dtype="float64")
    full = run(cfg)
    half = run(cfg, stop_at=6)
    half.checkpoint.save(tmp_path / "half.lmtl")
    resumed = run(cfg, resume=Checkpoint.load(tmp_path / "half.lmtl"))
    assert half.losses + resumed.losses == full.losses
    for k, p in full.checkpoint.model.params.items():
        assert np.array_equal(p.data, resumed.checkpoint.model.params[k].data)
        assert np.array_equal(full.checkpoint.optimizer.m[k], resumed.checkpoint.optimizer.m[k])


def test_fixed_batch_loss_non_increasing():
    tiny = ModelConfig(vocab_size=40, d_model=16, d_ff=32, encoder_layers=1, decoder_layers=1,
                       heads=2, max_len=16, dropout=0.0)
    good = 0
    trials = 20
    for seed in range(trials):
        rng = Rng(seed)
        sent = lambda: [15 + rng.below(25) for _ in range(1 + rng.below(6))]
        batch = collate([make_translate_example(sent(), sent(), "en", "ln", SP) for _ in range(4)])
        model = Seq2SeqTransformer.initialize(tiny, seed, np.float64)
        state, losses = AdamState(), []
        for step in range(1, 52):
            for p in model.params.values():
                p.zero_grad()
            loss = batch_loss(model, batch, 0.1)
            losses.append(float(loss.data))
            loss.backward()
            adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state, step,
                      1e-3, TrainConfig())
        good += all(b <= a for a, b in zip(losses, losses[1:]))
    assert good >= 0.95 * trials


def test_finetune_zero_steps_and_vocab_check():
    ck = scratch_checkpoint(SMALL, 2, np.float64, "tok")
    cfg = TrainConfig(max_steps=0, dtype="float64")
    res = finetune(ck, toy_data(), cfg, [("en", "ln")], SP, "tok")
    for k, p in ck.model.params.items():
        assert np.array_equal(p.data, res.checkpoint.model.params[k].data)
    with pytest.raises(VocabMismatchError):
        finetune(ck, toy_data(), cfg, [("en", "ln")], SP, "other")


def test_finetune_fresh_optimizer_and_translate_only():
    pre = run(TrainConfig(max_steps=4, batch_sentences=4, seed=1))
    res = finetune(pre.checkpoint, toy_data(), TrainConfig(max_steps=3, batch_sentences=4, directions="forward"),
                   [("en", "ln")], SP, "tok")
    assert all(line.split("\t")[1] == "translate" for line in res.log_lines)
    assert res.checkpoint.manifest["mixture"] == "translate:1.0:en-ln"


def test_missing_source_data():
    mix = TaskMixture((TaskSpec("denoise", ("zu",)),))
    with pytest.raises(DataError, match="zu"):
        pretrain(toy_data(), NoiseConfig(), SMALL, TrainConfig(max_steps=1), mix, SP)
