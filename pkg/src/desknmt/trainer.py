"""Multi-task pretraining and fine-tuning loop.

All randomness is derived from the run seed through child streams keyed by
(source, example index) or (purpose, step), so a run is a pure function of its
inputs and a checkpoint only needs the step counter, data cursors and Adam
moments to resume exactly.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .corpus import oversample_weights
from .errors import DataError, NumericError, VocabMismatchError
from .model import (ModelConfig, Seq2SeqTransformer, coerce, load_checkpoint,
                    model_from_tensors, save_checkpoint)
from .noising import (NoiseConfig, TrainingExample, make_concat_example, make_denoise_example,
                      make_translate_example)
from .rng import Rng, child_seed
from .tokenizer import PAD, SpecialTokens

log = logging.getLogger(__name__)

# stream keys for child seeds
_TASK, _DROPOUT, _EPOCH, _EXAMPLE = 1, 2, 3, 4


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 1000
    batch_sentences: int = 16
    batch_tokens: int = 0  # > 0 switches to token-budget batching
    lr_max: float = 5e-4
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    label_smoothing: float = 0.1
    clip_norm: float = 1.0
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0
    alpha: float = 0.7
    dtype: str = "float32"
    directions: str = "both"  # translation directions: "both" or "forward"

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.directions not in ("both", "forward"):
            raise ValueError(f"directions must be 'both' or 'forward', got {self.directions!r}")
        if self.batch_tokens <= 0 and self.batch_sentences < 1:
            raise ValueError("need batch_sentences >= 1 or batch_tokens > 0")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def replace_from_kv(obj, kv: dict):
    """Copy of a config dataclass with matching keys overridden from strings."""
    names = {f.name for f in fields(obj)}
    updates = {k: coerce(str(v), getattr(obj, k)) for k, v in kv.items() if k in names}
    return type(obj)(**{**asdict(obj), **updates})


def lr_at(step: int, lr_max: float, warmup: int) -> float:
    """Linear warmup to ``lr_max`` then inverse square-root decay."""
    if step < 1:
        raise ValueError("step counts from 1")
    return lr_max * min(step / warmup, math.sqrt(warmup / step))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_grad_norm(grads: dict, clip_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(math.fsum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        grads = {k: g * g.dtype.type(scale) for k, g in grads.items()}
    return grads, norm


def adam_step(params: dict, grads: dict, state: AdamState, step: int, lr: float,
              config: TrainConfig) -> float:
    """In-place bias-corrected Adam after global-norm clipping; returns the pre-clip norm."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
    grads, norm = clip_grad_norm(grads, config.clip_norm)
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        p.data = (p.data - update).astype(p.dtype)
    return norm


# -- data ------------------------------------------------------------------

@dataclass
class Datasets:
    """Encoded training data: mono sentences per language, pairs per language pair."""
    mono: dict = field(default_factory=dict)       # lang -> list[list[int]]
    parallel: dict = field(default_factory=dict)   # (src, tgt) -> list[(ids, ids)]

    def digest(self) -> str:
        h = hashlib.sha256()
        for lang in sorted(self.mono):
            h.update(f"mono {lang}\n".encode())
            for s in self.mono[lang]:
                h.update((" ".join(map(str, s)) + "\n").encode())
        for key in sorted(self.parallel):
            h.update(f"par {key[0]}-{key[1]}\n".encode())
            for a, b in self.parallel[key]:
                h.update((" ".join(map(str, a)) + "\t" + " ".join(map(str, b)) + "\n").encode())
        return h.hexdigest()


def encode_datasets(tokenizer, mono: dict = None, parallel: dict = None) -> Datasets:
    """Encode Corpus / ParallelCorpus objects keyed by language or (src, tgt)."""
    out = Datasets()
    for lang, corpus in (mono or {}).items():
        out.mono[lang] = [tokenizer.encode(l) for l in corpus.lines]
    for key, pc in (parallel or {}).items():
        out.parallel[tuple(key)] = [(tokenizer.encode(s), tokenizer.encode(t)) for s, t in pc.pairs]
    return out


@dataclass(frozen=True)
class TaskSpec:
    kind: str                 # denoise | translate | concat_denoise
    sources: tuple            # mono language codes, or "src-tgt" pair names
    weight: float = 1.0


@dataclass(frozen=True)
class TaskMixture:
    tasks: tuple

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task mixture is empty")
        if any(t.weight < 0 for t in self.tasks):
            raise ValueError("task weights must be nonnegative")
        if not any(t.weight > 0 for t in self.tasks):
            raise ValueError("at least one task weight must be positive")

    def describe(self) -> str:
        return ";".join(f"{t.kind}:{t.weight}:{','.join(t.sources)}" for t in self.tasks)


def sample_task(mixture: TaskMixture, source_weights: Sequence[dict], rng: Rng):
    """Draw a task by mixture weight, then one of its sources by language weight."""
    ti = rng.categorical([t.weight for t in mixture.tasks])
    task = mixture.tasks[ti]
    weights = source_weights[ti]
    si = rng.categorical([weights[s] for s in task.sources])
    return task.kind, task.sources[si]


def _truncate_document(doc, max_tokens):
    """Drop trailing sentences (then tokens) so the eos-joined document fits."""
    doc = [list(s) for s in doc]
    while len(doc) > 1 and sum(map(len, doc)) + len(doc) - 1 > max_tokens:
        doc.pop()
    if sum(map(len, doc)) + len(doc) - 1 > max_tokens:
        doc[0] = doc[0][:max_tokens]
    return doc


class Source:
    """One stream of training units with an epoch-shuffled cursor."""

    def __init__(self, index: int, kind: str, name: str, units: list, seed: int):
        if not units:
            raise DataError(f"{kind} source {name!r} is empty")
        self.index, self.kind, self.name, self.units, self.seed = index, kind, name, units, seed
        self.cursor = 0
        self._epoch = None
        self._order = None

    def next(self):
        n = len(self.units)
        epoch, pos = divmod(self.cursor, n)
        if epoch != self._epoch:
            self._order = Rng(child_seed(self.seed, self.index, _EPOCH, epoch)).shuffle(list(range(n)))
            self._epoch = epoch
        i = self.cursor
        self.cursor += 1
        return i, self.units[self._order[pos]]


class ExampleFactory:
    """Builds training examples from named sources for the given task kinds."""

    def __init__(self, data: Datasets, mixture: TaskMixture, noise: NoiseConfig,
                 special: SpecialTokens, max_len: int, seed: int, alpha: float):
        self.noise, self.special, self.max_len, self.seed = noise, special, max_len, seed
        self.mixture = mixture
        self.sources: dict = {}
        self.weights = []
        names = sorted({(t.kind, s) for t in mixture.tasks for s in t.sources})
        for idx, (kind, name) in enumerate(names):
            self.sources[(kind, name)] = Source(idx, kind, name, self._units(data, kind, name), seed)
        for t in mixture.tasks:
            sizes = {s: len(self.sources[(t.kind, s)].units) for s in t.sources}
            self.weights.append(oversample_weights(sizes, alpha).weights)

    def _units(self, data: Datasets, kind: str, name: str) -> list:
        if kind == "denoise":
            if name not in data.mono:
                raise DataError(f"no monolingual data for {name!r}")
            lines = [s for s in data.mono[name] if s]
            size = self.noise.document_size
            docs = [lines[i:i + size] for i in range(0, len(lines), size)]
            return [_truncate_document(d, self.max_len - 2) for d in docs]
        src, tgt = name.split("-")
        if (src, tgt) in data.parallel:
            pairs = data.parallel[(src, tgt)]
        elif (tgt, src) in data.parallel:
            pairs = [(b, a) for a, b in data.parallel[(tgt, src)]]
        else:
            raise DataError(f"no parallel data for {name!r}")
        limit = self.max_len - 2 if kind == "translate" else (self.max_len - 4) // 2
        return [(a[:limit], b[:limit]) for a, b in pairs if a and b]

    def build(self, kind: str, name: str) -> TrainingExample:
        src = self.sources[(kind, name)]
        i, unit = src.next()
        rng = Rng(child_seed(self.seed, _EXAMPLE, src.index, i))
        if kind == "denoise":
            return make_denoise_example(unit, self.noise, self.special, name, rng, self.max_len)
        a, b = name.split("-")
        if kind == "translate":
            return make_translate_example(unit[0], unit[1], a, b, self.special, self.max_len)
        return make_concat_example(unit[0], unit[1], a, b, self.noise, self.special, rng, self.max_len)

    def cursors(self) -> dict:
        return {f"{k}:{n}": s.cursor for (k, n), s in self.sources.items()}

    def restore(self, cursors: dict):
        for (k, n), s in self.sources.items():
            s.cursor = int(cursors.get(f"{k}:{n}", 0))


# -- batching --------------------------------------------------------------

@dataclass
class Batch:
    enc_ids: np.ndarray
    enc_pad: np.ndarray
    dec_ids: np.ndarray
    dec_pad: np.ndarray
    target: np.ndarray

    @property
    def size(self) -> int:
        return self.enc_ids.shape[0]

    @property
    def target_tokens(self) -> int:
        return int((~self.dec_pad).sum())


def _pad(seqs, pad):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def collate(examples: Sequence[TrainingExample], pad: int = PAD) -> Batch:
    enc = _pad([e.encoder_input for e in examples], pad)
    dec = _pad([e.decoder_input for e in examples], pad)
    tgt = _pad([e.target for e in examples], pad)
    enc_pad = np.zeros(enc.shape, dtype=bool)
    dec_pad = np.zeros(dec.shape, dtype=bool)
    for i, e in enumerate(examples):
        enc_pad[i, len(e.encoder_input):] = True
        dec_pad[i, len(e.decoder_input):] = True
    return Batch(enc, enc_pad, dec, dec_pad, tgt)


def make_batch(examples: Sequence[TrainingExample], batch_tokens: Optional[int] = None,
               pad: int = PAD) -> list:
    """Group examples of similar length into padded batches.

    Examples are ordered by (target length, source length, position) and cut
    greedily so each batch holds at most ``batch_tokens`` target tokens.
    Without a budget all examples form one batch in their original order.
    """
    if not examples:
        return []
    if not batch_tokens:
        return [collate(examples, pad)]
    for e in examples:
        if len(e.target) > batch_tokens:
            raise DataError(f"example with {len(e.target)} target tokens exceeds batch_tokens {batch_tokens}")
    order = sorted(range(len(examples)),
                   key=lambda i: (len(examples[i].target), len(examples[i].encoder_input), i))
    batches, cur, used = [], [], 0
    for i in order:
        n = len(examples[i].target)
        if cur and used + n > batch_tokens:
            batches.append(collate(cur, pad))
            cur, used = [], 0
        cur.append(examples[i])
        used += n
    if cur:
        batches.append(collate(cur, pad))
    return batches


def batch_loss(model: Seq2SeqTransformer, batch: Batch, epsilon: float, rng: Optional[Rng] = None):
    logits = model.forward(batch.enc_ids, batch.dec_ids, batch.enc_pad, batch.dec_pad, rng)
    return nn.cross_entropy_ls(logits, batch.target, epsilon, PAD)


def evaluate_loss(model: Seq2SeqTransformer, examples: Sequence[TrainingExample],
                  batch_sentences: int = 32) -> float:
    """Token-weighted mean negative log-likelihood, no dropout."""
    total, count = 0.0, 0
    with nn.no_grad():
        for i in range(0, len(examples), batch_sentences):
            b = collate(examples[i:i + batch_sentences])
            n = int((b.target != PAD).sum())
            total += float(batch_loss(model, b, 0.0).data) * n
            count += n
    return total / max(count, 1)


# -- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    model: Seq2SeqTransformer
    optimizer: AdamState
    step: int
    manifest: dict = field(default_factory=dict)

    def save(self, path) -> None:
        tensors = {k: p.data for k, p in self.model.params.items()}
        for k in self.model.params:
            if k in self.optimizer.m:
                tensors[f"opt.m.{k}"] = self.optimizer.m[k]
                tensors[f"opt.v.{k}"] = self.optimizer.v[k]
        save_checkpoint(path, self.model.config, tensors, {**self.manifest, "step": self.step})

    @classmethod
    def load(cls, path) -> "Checkpoint":
        config, tensors, manifest = load_checkpoint(path)
        model = model_from_tensors(config, tensors)
        opt = AdamState()
        for k in model.params:
            if f"opt.m.{k}" in tensors:
                opt.m[k] = tensors[f"opt.m.{k}"]
                opt.v[k] = tensors[f"opt.v.{k}"]
        return cls(model, opt, int(manifest.get("step", 0)), manifest)


# -- training loop ---------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list
    log_lines: list
    valid_losses: list


def train_loop(model: Seq2SeqTransformer, factory: ExampleFactory, config: TrainConfig,
               optimizer: Optional[AdamState] = None, start_step: int = 0,
               manifest: Optional[dict] = None, valid: Sequence[TrainingExample] = (),
               on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
               log_sink: Optional[Callable[[str], None]] = None,
               stop_at: Optional[int] = None) -> TrainResult:
    optimizer = optimizer or AdamState()
    manifest = dict(manifest or {})
    losses, lines, valid_losses = [], [], []
    params = model.params
    last = config.max_steps if stop_at is None else min(stop_at, config.max_steps)

    def snapshot(step):
        m = {**manifest, "seed": config.seed, "dtype": config.dtype,
             **{f"cursor.{k}": v for k, v in factory.cursors().items()}}
        return Checkpoint(model, optimizer, step, m)

    for step in range(start_step + 1, last + 1):
        trng = Rng(child_seed(config.seed, _TASK, step))
        kind, name = sample_task(factory.mixture, factory.weights, trng)
        examples = []
        if config.batch_tokens > 0:
            used = 0
            while True:
                ex = factory.build(kind, name)
                if len(ex.target) > config.batch_tokens:
                    raise DataError(f"example with {len(ex.target)} target tokens exceeds batch_tokens")
                if examples and used + len(ex.target) > config.batch_tokens:
                    break  # the drawn example is dropped; the cursor already moved past it
                examples.append(ex)
                used += len(ex.target)
        else:
            examples = [factory.build(kind, name) for _ in range(config.batch_sentences)]
        batch = make_batch(examples, None)[0]
        for p in params.values():
            p.zero_grad()
        drop_rng = Rng(child_seed(config.seed, _DROPOUT, step)) if model.config.dropout > 0 else None
        loss = batch_loss(model, batch, config.label_smoothing, drop_rng)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step} ({kind} {name})")
        loss.backward()
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        lr = lr_at(step, config.lr_max, config.warmup_steps)
        adam_step(params, grads, optimizer, step, lr, config)
        losses.append(value)
        line = f"{step}\t{kind}\t{value:.6f}\t{lr:.6e}"
        lines.append(line)
        if log_sink:
            log_sink(line)
        if config.eval_every and step % config.eval_every == 0:
            log.info("step %d %s %s loss %.4f lr %.2e", step, kind, name, value, lr)
            if valid:
                vl = evaluate_loss(model, valid)
                valid_losses.append((step, vl))
                vline = f"{step}\tvalid\t{vl:.6f}\t{lr:.6e}"
                lines.append(vline)
                if log_sink:
                    log_sink(vline)
        if on_checkpoint and config.checkpoint_every and step % config.checkpoint_every == 0:
            on_checkpoint(snapshot(step))
    final = snapshot(max(last, start_step))
    return TrainResult(final, losses, lines, valid_losses)


def _manifest(kind, config, noise, mixture, data, special, tokenizer_digest, extra):
    m = {"stage": kind, "mixture": mixture.describe(), "data_hash": data.digest(),
         "languages": ",".join(special.languages)}
    if tokenizer_digest:
        m["vocab_hash"] = tokenizer_digest
    m.update({f"train.{k}": v for k, v in asdict(config).items()})
    if noise is not None:
        m.update({f"noise.{k}": v for k, v in asdict(noise).items()})
    m.update(extra or {})
    return m


def pretrain(data: Datasets, noise: NoiseConfig, model_config: ModelConfig, config: TrainConfig,
             mixture: TaskMixture, special: SpecialTokens = SpecialTokens(),
             tokenizer_digest: str = "", resume: Optional[Checkpoint] = None,
             extra_manifest: Optional[dict] = None, **loop_kwargs) -> TrainResult:
    """Multi-task denoise/translate pretraining from a seeded initialisation or a resume point."""
    factory = ExampleFactory(data, mixture, noise, special, model_config.max_len, config.seed, config.alpha)
    manifest = _manifest("pretrain", config, noise, mixture, data, special, tokenizer_digest, extra_manifest)
    if resume is not None:
        model, opt, start = resume.model.astype(config.np_dtype), resume.optimizer, resume.step
        factory.restore({k[len("cursor."):]: v for k, v in resume.manifest.items() if k.startswith("cursor.")})
    else:
        model = Seq2SeqTransformer.initialize(model_config, config.seed, config.np_dtype)
        opt, start = AdamState(), 0
    return train_loop(model, factory, config, opt, start, manifest, **loop_kwargs)


def translation_mixture(pairs: Sequence[tuple], directions: str = "forward") -> TaskMixture:
    names = [f"{s}-{t}" for s, t in pairs]
    if directions == "both":
        names += [f"{t}-{s}" for s, t in pairs]
    return TaskMixture((TaskSpec("translate", tuple(names), 1.0),))


def check_vocab(checkpoint: Checkpoint, tokenizer_digest: str) -> None:
    have = checkpoint.manifest.get("vocab_hash", "")
    if have and tokenizer_digest and have != tokenizer_digest:
        raise VocabMismatchError(f"checkpoint vocab hash {have[:12]} != data vocab hash {tokenizer_digest[:12]}")


def finetune(checkpoint: Checkpoint, data: Datasets, config: TrainConfig,
             pairs: Optional[Sequence[tuple]] = None, special: SpecialTokens = SpecialTokens(),
             tokenizer_digest: str = "", valid: Sequence[TrainingExample] = (),
             extra_manifest: Optional[dict] = None, **loop_kwargs) -> TrainResult:
    """Translation-only training from checkpoint weights with a fresh optimizer."""
    check_vocab(checkpoint, tokenizer_digest)
    pairs = list(pairs or data.parallel.keys())
    mixture = translation_mixture(pairs, config.directions)
    model = checkpoint.model.astype(config.np_dtype)
    factory = ExampleFactory(data, mixture, NoiseConfig(), special, model.config.max_len,
                             config.seed, config.alpha)
    extra = {"init_from": checkpoint.manifest.get("preset", "scratch"), **(extra_manifest or {})}
    manifest = _manifest("finetune", config, None, mixture, data, special, tokenizer_digest, extra)
    return train_loop(model, factory, config, AdamState(), 0, manifest, valid=valid, **loop_kwargs)


def scratch_checkpoint(model_config: ModelConfig, seed: int, dtype=np.float32,
                       tokenizer_digest: str = "") -> Checkpoint:
    model = Seq2SeqTransformer.initialize(model_config, seed, dtype)
    return Checkpoint(model, AdamState(), 0, {"vocab_hash": tokenizer_digest, "preset": "scratch"})
