"""Transformer encoder-decoder, decoding, and the binary checkpoint format."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .errors import DataError, LengthError
from .nn import Tensor
from .rng import Rng
from .tokenizer import EOS, PAD

NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 8000
    d_model: int = 64
    d_ff: int = 256
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    max_len: int = 128
    dropout: float = 0.1
    share_embeddings: bool = True
    norm_order: str = "pre"

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.norm_order not in ("pre", "post"):
            raise ValueError(f"norm_order must be 'pre' or 'post', got {self.norm_order!r}")

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = parse_kv(text)
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: coerce(v, getattr(cls, k)) for k, v in kv.items() if k in known})


FULL_CONFIG = ModelConfig(vocab_size=80000, d_model=768, d_ff=3072, encoder_layers=6,
                           decoder_layers=6, heads=12, max_len=1024, dropout=0.1)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def coerce(text: str, like):
    if isinstance(like, bool):
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text.strip()


def parse_kv(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# -- parameter inventory ---------------------------------------------------

def _attn_shapes(prefix, d):
    out = []
    for proj in ("q", "k", "v", "o"):
        out.append((f"{prefix}.{proj}.weight", (d, d), "xavier"))
        out.append((f"{prefix}.{proj}.bias", (d,), "zeros"))
    return out


def _norm_shapes(prefix, d):
    return [(f"{prefix}.gain", (d,), "ones"), (f"{prefix}.bias", (d,), "zeros")]


def _ffn_shapes(prefix, d, f):
    return [(f"{prefix}.fc1.weight", (d, f), "xavier"), (f"{prefix}.fc1.bias", (f,), "zeros"),
            (f"{prefix}.fc2.weight", (f, d), "xavier"), (f"{prefix}.fc2.bias", (d,), "zeros")]


def param_shapes(cfg: ModelConfig) -> list:
    """(name, shape, init) for every tensor, in allocation order."""
    d, f = cfg.d_model, cfg.d_ff
    out = [("embed.tokens", (cfg.vocab_size, d), "embed"),
           ("encoder.pos", (cfg.max_len, d), "embed"),
           ("decoder.pos", (cfg.max_len, d), "embed")]
    for i in range(cfg.encoder_layers):
        p = f"encoder.layers.{i}"
        out += _attn_shapes(f"{p}.self_attn", d) + _norm_shapes(f"{p}.self_attn_norm", d)
        out += _ffn_shapes(f"{p}.ffn", d, f) + _norm_shapes(f"{p}.ffn_norm", d)
    for i in range(cfg.decoder_layers):
        p = f"decoder.layers.{i}"
        out += _attn_shapes(f"{p}.self_attn", d) + _norm_shapes(f"{p}.self_attn_norm", d)
        out += _attn_shapes(f"{p}.cross_attn", d) + _norm_shapes(f"{p}.cross_attn_norm", d)
        out += _ffn_shapes(f"{p}.ffn", d, f) + _norm_shapes(f"{p}.ffn_norm", d)
    if cfg.norm_order == "pre":
        out += _norm_shapes("encoder.final_norm", d) + _norm_shapes("decoder.final_norm", d)
    if not cfg.share_embeddings:
        out.append(("output.weight", (cfg.vocab_size, d), "embed"))
    return out


def count_params(cfg: ModelConfig) -> int:
    """Closed-form scalar count for ``cfg``."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    attn = 4 * (d * d + d)
    ffn = 2 * d * f + f + d
    norm = 2 * d
    enc = attn + ffn + 2 * norm
    dec = 2 * attn + ffn + 3 * norm
    total = v * d * (1 if cfg.share_embeddings else 2) + 2 * cfg.max_len * d
    total += cfg.encoder_layers * enc + cfg.decoder_layers * dec
    if cfg.norm_order == "pre":
        total += 2 * norm
    return total


# -- the model -------------------------------------------------------------

class Seq2SeqTransformer:
    """Parameters plus config; forward builds a fresh autodiff graph per call."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32):
        rng = Rng(seed)
        params = {}
        for name, shape, init in param_shapes(config):
            if init == "embed":
                data = rng.uniform_array(shape) * 0.2 - 0.1
            elif init == "xavier":
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                data = (rng.uniform_array(shape) * 2.0 - 1.0) * bound
            elif init == "ones":
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
        return cls(config, params)

    @property
    def dtype(self):
        return self.params["embed.tokens"].dtype

    def astype(self, dtype) -> "Seq2SeqTransformer":
        return Seq2SeqTransformer(self.config, {
            k: Tensor(p.data.astype(dtype), requires_grad=True, name=k) for k, p in self.params.items()})

    def copy(self) -> "Seq2SeqTransformer":
        return self.astype(self.dtype)

    def parameters(self) -> list:
        return list(self.params.values())

    def num_scalars(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # building blocks
    def _norm(self, name, x):
        p = self.params
        return nn.layer_norm(x, p[f"{name}.gain"], p[f"{name}.bias"])

    def _attention(self, name, xq, xkv, mask, rng):
        p, cfg = self.params, self.config
        B, T, D = xq.shape
        S = xkv.shape[1]
        H = cfg.heads
        dh = D // H
        q = nn.linear(xq, p[f"{name}.q.weight"], p[f"{name}.q.bias"]) * (1.0 / math.sqrt(dh))
        k = nn.linear(xkv, p[f"{name}.k.weight"], p[f"{name}.k.bias"])
        v = nn.linear(xkv, p[f"{name}.v.weight"], p[f"{name}.v.bias"])
        q = q.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        k = k.reshape(B, S, H, dh).transpose(0, 2, 3, 1)
        v = v.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        att = nn.softmax(nn.matmul(q, k), mask)
        ctx = nn.matmul(att, v).transpose(0, 2, 1, 3).reshape(B, T, D)
        return nn.linear(ctx, p[f"{name}.o.weight"], p[f"{name}.o.bias"])

    def _ffn(self, name, x):
        p = self.params
        h = nn.gelu(nn.linear(x, p[f"{name}.fc1.weight"], p[f"{name}.fc1.bias"]))
        return nn.linear(h, p[f"{name}.fc2.weight"], p[f"{name}.fc2.bias"])

    def _sublayer(self, x, norm_name, fn, rng):
        drop = self.config.dropout if rng is not None else 0.0
        if self.config.norm_order == "pre":
            return x + nn.dropout(fn(self._norm(norm_name, x)), drop, rng)
        return self._norm(norm_name, x + nn.dropout(fn(x), drop, rng))

    def _embed(self, ids, pos_name, rng):
        cfg = self.config
        T = ids.shape[1]
        if T > cfg.max_len:
            raise LengthError(f"sequence of length {T} exceeds max_len {cfg.max_len}")
        x = nn.embedding(self.params["embed.tokens"], ids) * math.sqrt(cfg.d_model)
        x = x + nn.embedding(self.params[pos_name], np.arange(T))
        return nn.dropout(x, cfg.dropout if rng is not None else 0.0, rng)

    def _pad_mask(self, pad):
        return np.where(pad, NEG_INF, 0.0).astype(self.dtype)[:, None, None, :]

    def encode(self, enc_ids, enc_pad=None, rng: Optional[Rng] = None) -> Tensor:
        enc_ids = np.asarray(enc_ids)
        if enc_pad is None:
            enc_pad = enc_ids == PAD
        mask = self._pad_mask(enc_pad)
        x = self._embed(enc_ids, "encoder.pos", rng)
        for i in range(self.config.encoder_layers):
            name = f"encoder.layers.{i}"
            x = self._sublayer(x, f"{name}.self_attn_norm",
                               lambda h: self._attention(f"{name}.self_attn", h, h, mask, rng), rng)
            x = self._sublayer(x, f"{name}.ffn_norm", lambda h: self._ffn(f"{name}.ffn", h), rng)
        if self.config.norm_order == "pre":
            x = self._norm("encoder.final_norm", x)
        return x

    def decode(self, memory: Tensor, enc_pad, dec_ids, dec_pad=None, rng: Optional[Rng] = None) -> Tensor:
        dec_ids = np.asarray(dec_ids)
        T = dec_ids.shape[1]
        if dec_pad is None:
            dec_pad = np.zeros(dec_ids.shape, dtype=bool)
        causal = np.triu(np.full((T, T), NEG_INF), k=1)[None, None]
        self_mask = (causal + self._pad_mask(dec_pad)).astype(self.dtype)
        cross_mask = self._pad_mask(enc_pad)
        x = self._embed(dec_ids, "decoder.pos", rng)
        for i in range(self.config.decoder_layers):
            name = f"decoder.layers.{i}"
            x = self._sublayer(x, f"{name}.self_attn_norm",
                               lambda h: self._attention(f"{name}.self_attn", h, h, self_mask, rng), rng)
            x = self._sublayer(x, f"{name}.cross_attn_norm",
                               lambda h: self._attention(f"{name}.cross_attn", h, memory, cross_mask, rng), rng)
            x = self._sublayer(x, f"{name}.ffn_norm", lambda h: self._ffn(f"{name}.ffn", h), rng)
        if self.config.norm_order == "pre":
            x = self._norm("decoder.final_norm", x)
        out_w = self.params["embed.tokens" if self.config.share_embeddings else "output.weight"]
        return nn.linear(x, out_w.transpose())

    def forward(self, enc_ids, dec_ids, enc_pad=None, dec_pad=None, rng: Optional[Rng] = None) -> Tensor:
        """Logits [batch, tgt_len, vocab]; ``rng`` enables dropout."""
        enc_ids = np.asarray(enc_ids)
        self._check_ids(enc_ids)
        self._check_ids(np.asarray(dec_ids))
        if enc_pad is None:
            enc_pad = enc_ids == PAD
        memory = self.encode(enc_ids, enc_pad, rng)
        return self.decode(memory, enc_pad, dec_ids, dec_pad, rng)

    def _check_ids(self, ids):
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise DataError(f"token id {int(ids.max())} outside vocabulary of {self.config.vocab_size}")


# -- decoding --------------------------------------------------------------

def _pad_batch(seqs: Sequence[Sequence[int]]):
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    return ids, ids == PAD


def greedy_decode_batch(model: Seq2SeqTransformer, encoder_inputs: Sequence[Sequence[int]],
                        tgt_tags: Sequence[int], max_steps: int, eos: int = EOS) -> list:
    """Argmax decoding (ties to the lowest id) for several inputs at once."""
    max_steps = min(max_steps, model.config.max_len - 1)
    enc_ids, enc_pad = _pad_batch(encoder_inputs)
    with nn.no_grad():
        memory = model.encode(enc_ids, enc_pad)
        prefixes = [[t] for t in tgt_tags]
        live = list(range(len(prefixes)))
        for _ in range(max_steps):
            if not live:
                break
            dec = np.array([prefixes[i] for i in live], dtype=np.int64)
            mem = Tensor(memory.data[live])
            logits = model.decode(mem, enc_pad[live], dec).data[:, -1, :]
            nxt = logits.argmax(axis=-1)
            still = []
            for j, i in enumerate(live):
                prefixes[i].append(int(nxt[j]))
                if nxt[j] != eos:
                    still.append(i)
            live = still
    out = []
    for p in prefixes:
        toks = p[1:]
        if toks and toks[-1] == eos:
            toks = toks[:-1]
        out.append(toks)
    return out


def greedy_decode(model, encoder_input, tgt_tag, max_steps, eos: int = EOS) -> list:
    return greedy_decode_batch(model, [encoder_input], [tgt_tag], max_steps, eos)[0]


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def beam_search(step_logprobs: Callable[[list], np.ndarray], start: int, eos: int,
                beam: int = 5, max_steps: int = 64, alpha: float = 1.0) -> list:
    """Generic beam search.

    ``step_logprobs(prefixes)`` maps a list of equal-length prefixes (each
    starting with ``start``) to log-probabilities [len(prefixes), V].  Each
    step keeps the top ``beam`` extensions by cumulative log-probability;
    those ending in ``eos`` are finished.  Search ends once ``beam``
    hypotheses have finished or after ``max_steps`` tokens, when survivors are
    finished as they stand.  Finished hypotheses are ranked by
    logprob / ((5 + len) / 6) ** alpha with len counting generated tokens,
    ties broken by the lexicographically smaller token sequence.
    """
    if beam < 1:
        raise ValueError("beam must be at least 1")
    alive = [((), 0.0)]
    finished = []
    for _ in range(max_steps):
        if not alive or len(finished) >= beam:
            break
        lp = step_logprobs([[start, *toks] for toks, _ in alive])
        cands = []
        for (toks, score), row in zip(alive, lp):
            for tok, l in enumerate(row):
                cands.append((score + float(l), toks + (tok,)))
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, toks in cands[:beam]:
            if toks[-1] == eos:
                finished.append((toks, score))
            else:
                alive.append((toks, score))
    finished.extend(alive if len(finished) < beam else [])
    if not finished:
        return []
    best = min(finished, key=lambda h: (-h[1] / length_penalty(len(h[0]), alpha), h[0]))
    toks = list(best[0])
    return toks[:-1] if toks and toks[-1] == eos else toks


def beam_decode(model: Seq2SeqTransformer, encoder_input, tgt_tag, beam: int = 5,
                max_steps: int = 64, alpha: float = 1.0, eos: int = EOS) -> list:
    max_steps = min(max_steps, model.config.max_len - 1)
    enc_ids, enc_pad = _pad_batch([encoder_input])
    with nn.no_grad():
        memory = model.encode(enc_ids, enc_pad)

        def step(prefixes):
            n = len(prefixes)
            mem = Tensor(np.repeat(memory.data, n, axis=0))
            logits = model.decode(mem, np.repeat(enc_pad, n, axis=0),
                                  np.array(prefixes, dtype=np.int64)).data[:, -1, :]
            return nn.log_softmax_np(logits.astype(np.float64))

        return beam_search(step, tgt_tag, eos, beam, max_steps, alpha)


# -- checkpoint format -----------------------------------------------------

MAGIC = b"LMTL"
FORMAT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 4, np.dtype("<f8"): 8}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _blob(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dump_kv(d: dict) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(d.items()))


def save_checkpoint(path, config: ModelConfig, tensors: dict, manifest: Optional[dict] = None) -> None:
    """Write magic, version, config block, manifest block, then named tensors.

    Tensors keep their float width; each carries a one-byte code (4 or 8).
    The file is written to a temporary name and renamed into place.
    """
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _blob(config.to_text()),
             _blob(dump_kv(manifest or {})), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise ValueError(f"cannot store {name} of dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BI", _DTYPE_CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (ModelConfig, {name: ndarray}, manifest dict of strings)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 8

    def text():
        nonlocal pos
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        s = buf[pos:pos + n].decode("utf-8")
        pos += n
        return s

    config = ModelConfig.from_text(text())
    # manifest values are verbatim: no comment stripping
    manifest = dict(line.split("=", 1) for line in text().splitlines() if line)
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        name = text()
        code, rank = struct.unpack_from("<BI", buf, pos)
        pos += 5
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        dt = _CODE_DTYPES[code]
        n = int(np.prod(shape)) * dt.itemsize
        tensors[name] = np.frombuffer(buf[pos:pos + n], dtype=dt).reshape(shape).copy()
        pos += n
    return config, tensors, manifest


def model_from_tensors(config: ModelConfig, tensors: dict) -> Seq2SeqTransformer:
    params = {}
    for name, _, _ in param_shapes(config):
        if name not in tensors:
            raise DataError(f"checkpoint lacks tensor {name}")
        params[name] = Tensor(tensors[name].copy(), requires_grad=True, name=name)
    return Seq2SeqTransformer(config, params)
