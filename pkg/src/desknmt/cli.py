"""Command-line entry point: prepare, train-tokenizer, pretrain, finetune, translate, score, report.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import hashlib
import io
import json
import logging
import math
import os
import sys

from . import corpus as corpus_mod
from .corpus import Corpus, ParallelCorpus, SplitSpec, dedup, split
from .errors import DataError, NumericError
from .metrics import corpus_bleu, corpus_chrf
from .model import beam_decode, greedy_decode_batch, parse_kv
from .noising import make_translate_example
from .presets import resolve
from .rng import Rng, child_seed
from .tokenizer import Tokenizer, load_tokenizer, save_tokenizer, train_bpe
from .trainer import (Checkpoint, encode_datasets, finetune, pretrain,
                      replace_from_kv, scratch_checkpoint)

log = logging.getLogger("desknmt")


class UsageError(Exception):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


def write_manifest(path, manifest: dict) -> None:
    write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def load_config_file(path) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise DataError(f"missing config file: {path}")
    with open(path, encoding="utf-8") as f:
        return parse_kv(f.read())


def apply_overrides(obj, file_kv: dict, args, names=()):
    """File values first, then any explicitly given flags."""
    kv = dict(file_kv)
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            kv[name] = v
    if getattr(args, "seed", None) is not None and any(f.name == "seed" for f in dataclasses.fields(obj)):
        kv["seed"] = args.seed
    return replace_from_kv(obj, kv)


# -- prepare ---------------------------------------------------------------

def cmd_prepare(args):
    if args.test_count is not None or args.valid_count is not None:
        spec = SplitSpec("count", args.test_count or 0, args.valid_count or 0, args.seed or 0)
    else:
        spec = SplitSpec("fraction", args.test_frac, args.valid_frac, args.seed or 0)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.mono:
        if not args.lang:
            raise UsageError("--mono needs --lang")
        data = dedup(corpus_mod.read_mono(args.mono, args.lang))
        name, ext, writer, source = args.lang, "", corpus_mod.write_mono, [args.mono]
    elif args.tsv or args.src_file:
        if not (args.src and args.tgt):
            raise UsageError("parallel input needs --src and --tgt")
        if args.tsv:
            data = corpus_mod.read_tsv(args.tsv, args.src, args.tgt)
            source = [args.tsv]
        else:
            if not args.tgt_file:
                raise UsageError("--src-file needs --tgt-file")
            data = corpus_mod.read_aligned(args.src_file, args.tgt_file, args.src, args.tgt)
            source = [args.src_file, args.tgt_file]
        data = dedup(data)
        name, ext, writer = f"{args.src}-{args.tgt}", ".tsv", corpus_mod.write_tsv
    else:
        raise UsageError("give --mono FILE or --tsv FILE or --src-file/--tgt-file")
    train, valid, test = split(data, spec)
    lines = [f"# split manifest for {name}", f"source\t{' '.join(source)}",
             f"seed\t{spec.seed}", f"spec\tmode={spec.mode} test={spec.test} valid={spec.valid}",
             f"deduplicated\t{len(data)}"]
    for part, c in (("train", train), ("valid", valid), ("test", test)):
        path = os.path.join(args.out_dir, f"{name}.{part}{ext}")
        writer(path, c)
        lines.append(f"{os.path.basename(path)}\t{len(c)}")
    write_atomic(os.path.join(args.out_dir, f"{name}.split.txt"), "\n".join(lines) + "\n")
    print(f"{name}: train {len(train)} valid {len(valid)} test {len(test)}")


# -- tokenizer -------------------------------------------------------------

def _training_corpora(paths):
    out = []
    for p in paths:
        if p.endswith(".tsv"):
            pc = corpus_mod.read_tsv(p, "en", "en")
            out += [pc.side(0), pc.side(1)]
        else:
            out.append(corpus_mod.read_mono(p, "en"))
    return out


def cmd_train_tokenizer(args):
    paths = []
    for pattern in args.inputs:
        hits = sorted(glob.glob(pattern))
        if not hits:
            raise DataError(f"no files match {pattern}")
        paths += hits
    vocab, merges = train_bpe(_training_corpora(paths), args.vocab_size)
    tok = Tokenizer(vocab, merges)
    save_tokenizer(args.out_dir, tok)
    write_manifest(os.path.join(args.out_dir, "tokenizer.json"), {
        "inputs": {os.path.basename(p): file_sha256(p) for p in paths},
        "vocab_size": vocab.size, "merges": len(merges), "vocab_hash": tok.digest()})
    print(f"vocab {vocab.size} pieces, {len(merges)} merges -> {args.out_dir}")


# -- pretrain / finetune ---------------------------------------------------

def _data_file(data_dir, name, part="train"):
    ext = ".tsv" if "-" in name else ""
    path = os.path.join(data_dir, f"{name}.{part}{ext}")
    if not os.path.exists(path):
        raise DataError(f"missing prepared data file {path} (run prepare first)")
    return path


def load_preset_data(preset, data_dir, seed: int):
    """Bind a preset to prepared files; returns (mono corpora, parallel corpora, file hashes)."""
    mono, parallel, hashes = {}, {}, {}
    for lang in preset.mono:
        p = _data_file(data_dir, lang)
        mono[lang] = corpus_mod.read_mono(p, lang)
        hashes[os.path.basename(p)] = file_sha256(p)
    for a, b in preset.pairs:
        p = _data_file(data_dir, f"{a}-{b}")
        parallel[(a, b)] = corpus_mod.read_tsv(p, a, b)
        hashes[os.path.basename(p)] = file_sha256(p)
    if preset.english_ratio > 0 and "en" not in mono:
        p = _data_file(data_dir, "en")
        full = corpus_mod.read_mono(p, "en")
        hashes[os.path.basename(p)] = file_sha256(p)
        largest = max(len(c) for c in mono.values())
        k = min(len(full), max(1, math.floor(preset.english_ratio * largest + 0.5)))
        picked = sorted(Rng(child_seed(seed, 0xE5)).sample_indices(len(full), k))
        mono["en"] = Corpus("en", tuple(full.lines[i] for i in picked))
    return mono, parallel, hashes


def _configs(args, scale, stage):
    file_kv = load_config_file(args.config)
    model = replace_from_kv(scale.model, file_kv)
    train = scale.pretrain if stage == "pretrain" else scale.finetune
    train = apply_overrides(train, file_kv, args, ("max_steps", "dtype", "batch_sentences", "lr_max",
                                                    "warmup_steps", "directions"))
    noise = apply_overrides(scale.noise, file_kv, args)
    return model, train, noise


def cmd_pretrain(args):
    try:
        preset, scale = resolve(args.preset)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    tok = load_tokenizer(args.tokenizer)
    model_cfg, train_cfg, noise_cfg = _configs(args, scale, "pretrain")
    model_cfg = dataclasses.replace(model_cfg, vocab_size=tok.vocab.size)
    mono, parallel, hashes = load_preset_data(preset, args.data_dir, train_cfg.seed)
    data = encode_datasets(tok, mono, parallel)
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.lmtl")
    log_path = os.path.join(args.out_dir, "train.log")
    resume = Checkpoint.load(args.resume) if args.resume else None
    extra = {"preset": preset.name, "scale": args.preset.partition("-")[2] or "desk"}
    with open(log_path, "a" if resume else "w", encoding="utf-8") as logf:
        sink = lambda line: logf.write(line + "\n")
        on_ckpt = lambda c: c.save(os.path.join(args.out_dir, f"checkpoint.{c.step}.lmtl"))
        result = pretrain(data, noise_cfg, model_cfg, train_cfg, preset.mixture(train_cfg.directions),
                          tok.special, tok.digest(), resume=resume, extra_manifest=extra,
                          log_sink=sink, on_checkpoint=on_ckpt, stop_at=args.stop_at)
    result.checkpoint.save(ckpt_path)
    write_manifest(os.path.join(args.out_dir, "manifest.json"), {
        "stage": "pretrain", "preset": preset.name, "pretrained_data": preset.data_kind,
        "lingala_included": preset.includes_lingala, "seeds": {"run": train_cfg.seed},
        "config_hash": hashlib.sha256((model_cfg.to_text() + repr(train_cfg) + repr(noise_cfg)).encode()).hexdigest(),
        "data_files": hashes, "vocab_hash": tok.digest(), "checkpoint": os.path.abspath(ckpt_path),
        "final_loss": result.losses[-1] if result.losses else None, "steps": result.checkpoint.step})
    print(f"pretrained {preset.name} for {result.checkpoint.step} steps -> {ckpt_path}")


def _valid_examples(tok, pc: ParallelCorpus, max_len):
    out = []
    for s, t in pc.pairs:
        a, b = tok.encode(s)[:max_len - 2], tok.encode(t)[:max_len - 2]
        if a and b:
            out.append(make_translate_example(a, b, pc.src_language, pc.tgt_language, tok.special, max_len))
    return out


def cmd_finetune(args):
    tok = load_tokenizer(args.tokenizer)
    scale = resolve(f"exp1-{args.scale}")[1]
    _, train_cfg, _ = _configs(args, scale, "finetune")
    if args.checkpoint:
        ckpt = Checkpoint.load(args.checkpoint)
        origin = read_manifest(os.path.join(os.path.dirname(args.checkpoint), "manifest.json")) \
            if os.path.exists(os.path.join(os.path.dirname(args.checkpoint), "manifest.json")) else {}
    else:
        model_cfg = dataclasses.replace(replace_from_kv(scale.model, load_config_file(args.config)),
                                        vocab_size=tok.vocab.size)
        ckpt = scratch_checkpoint(model_cfg, train_cfg.seed, train_cfg.np_dtype, tok.digest())
        origin = {"preset": "scratch", "pretrained_data": "None", "lingala_included": False}
    train = corpus_mod.read_tsv(args.train, args.src, args.tgt)
    data = encode_datasets(tok, parallel={(args.src, args.tgt): train})
    valid = _valid_examples(tok, corpus_mod.read_tsv(args.valid, args.src, args.tgt),
                            ckpt.model.config.max_len) if args.valid else []
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.lmtl")
    with open(os.path.join(args.out_dir, "train.log"), "w", encoding="utf-8") as logf:
        result = finetune(ckpt, data, train_cfg, [(args.src, args.tgt)], tok.special, tok.digest(),
                          valid=valid, log_sink=lambda line: logf.write(line + "\n"),
                          extra_manifest={"preset": origin.get("preset", "scratch")})
    result.checkpoint.save(ckpt_path)
    write_manifest(os.path.join(args.out_dir, "manifest.json"), {
        "stage": "finetune", "preset": origin.get("preset", "scratch"),
        "pretrained_data": origin.get("pretrained_data", "None"),
        "lingala_included": origin.get("lingala_included", False),
        "seeds": {"run": train_cfg.seed, **origin.get("seeds", {})},
        "init_checkpoint": os.path.abspath(args.checkpoint) if args.checkpoint else None,
        "data_files": {os.path.basename(args.train): file_sha256(args.train)},
        "vocab_hash": tok.digest(), "checkpoint": os.path.abspath(ckpt_path),
        "valid_losses": result.valid_losses, "steps": result.checkpoint.step,
        "direction": f"{args.src}-{args.tgt}"})
    print(f"finetuned {args.src}->{args.tgt} for {result.checkpoint.step} steps -> {ckpt_path}")


# -- translate / score / report -------------------------------------------

def translate_lines(model, tok, lines, src, tgt, beam=1, max_steps=None, alpha=1.0, batch=32):
    sp = tok.special
    max_len = model.config.max_len
    max_steps = max_steps or max_len - 1
    inputs = [tok.encode(corpus_mod.normalize_line(l))[:max_len - 2] + [sp.eos, sp.lang(src)] for l in lines]
    outputs = []
    if beam <= 1:
        for i in range(0, len(inputs), batch):
            chunk = inputs[i:i + batch]
            outputs += greedy_decode_batch(model, chunk, [sp.lang(tgt)] * len(chunk), max_steps, sp.eos)
    else:
        outputs = [beam_decode(model, x, sp.lang(tgt), beam, max_steps, alpha, sp.eos) for x in inputs]
    return [tok.decode(o) for o in outputs]


def cmd_translate(args):
    tok = load_tokenizer(args.tokenizer)
    ckpt = Checkpoint.load(args.checkpoint)
    have = ckpt.manifest.get("vocab_hash")
    if have and have != tok.digest():
        raise DataError(f"checkpoint vocab hash {have[:12]} != tokenizer hash {tok.digest()[:12]}")
    with open(args.input, encoding="utf-8") as f:
        lines = [l.rstrip("\n") for l in f]
    if args.input.endswith(".tsv"):
        lines = [l.split("\t")[0] for l in lines]
    out = translate_lines(ckpt.model, tok, lines, args.src_lang, args.tgt_lang, args.beam,
                          args.max_steps, args.alpha)
    text = "".join(o + "\n" for o in out)
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)


def _read_side(path, column):
    with open(path, encoding="utf-8") as f:
        lines = [l.rstrip("\n") for l in f]
    if path.endswith(".tsv"):
        lines = [l.split("\t")[column] for l in lines]
    return lines


def cmd_score(args):
    hyps = _read_side(args.hyp, 0)
    refs = _read_side(args.ref, 1)
    bleu = corpus_bleu(hyps, refs)
    chrf = corpus_chrf(hyps, refs)
    print(bleu.format())
    print(chrf.format())
    if args.manifest:
        m = read_manifest(args.manifest) if os.path.exists(args.manifest) else {}
        m["metrics"] = {"bleu": bleu.score, "chrf": chrf.score,
                        "bleu_precisions": list(bleu.precisions), "brevity_penalty": bleu.brevity_penalty}
        write_manifest(args.manifest, m)


REPORT_COLUMNS = ("Model", "BLEU", "chrF", "Pretrained Data", "Lingala included")


def report_rows(manifests):
    rows = []
    for m in manifests:
        metrics = m.get("metrics", {})
        rows.append({"Model": m.get("preset", "?"),
                     "BLEU": round(float(metrics.get("bleu", 0.0)), 2),
                     "chrF": round(float(metrics.get("chrf", 0.0)), 2),
                     "Pretrained Data": m.get("pretrained_data", "?"),
                     "Lingala included": "yes" if m.get("lingala_included") else "no"})
    rows.sort(key=lambda r: (-r["BLEU"], r["Model"]))
    return rows


def format_table(rows) -> str:
    widths = {c: max(len(c), *(len(f"{r[c]:.2f}" if isinstance(r[c], float) else str(r[c])) for r in rows))
              for c in REPORT_COLUMNS}
    cell = lambda v: f"{v:.2f}" if isinstance(v, float) else str(v)
    lines = ["  ".join(c.ljust(widths[c]) for c in REPORT_COLUMNS)]
    lines.append("  ".join("-" * widths[c] for c in REPORT_COLUMNS))
    for r in rows:
        lines.append("  ".join(cell(r[c]).ljust(widths[c]) for c in REPORT_COLUMNS))
    return "\n".join(lines) + "\n"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: (f"{r[c]:.2f}" if isinstance(r[c], float) else r[c]) for c in REPORT_COLUMNS})
    return buf.getvalue()


def cmd_report(args):
    rows = report_rows([read_manifest(p) for p in args.manifests])
    table = format_table(rows)
    sys.stdout.write(table)
    if args.out:
        write_atomic(args.out, table)
    if args.csv:
        write_atomic(args.csv, rows_to_csv(rows))


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="desknmt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config", help="flat key = value file; flags win over it")

    sp = sub.add_parser("prepare", help="normalise, deduplicate and split a corpus")
    common(sp)
    sp.add_argument("--mono")
    sp.add_argument("--lang")
    sp.add_argument("--tsv")
    sp.add_argument("--src-file")
    sp.add_argument("--tgt-file")
    sp.add_argument("--src")
    sp.add_argument("--tgt")
    sp.add_argument("--test-frac", type=float, default=0.1)
    sp.add_argument("--valid-frac", type=float, default=0.1)
    sp.add_argument("--test-count", type=int)
    sp.add_argument("--valid-count", type=int)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train-tokenizer", help="train the shared BPE vocabulary")
    common(sp)
    sp.add_argument("--inputs", nargs="+", required=True, help="files or glob patterns")
    sp.add_argument("--vocab-size", type=int, default=8000)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_train_tokenizer)

    def training(sp):
        common(sp)
        sp.add_argument("--tokenizer", required=True, help="directory with vocab.txt and merges.txt")
        sp.add_argument("--out-dir", required=True)
        sp.add_argument("--max-steps", type=int)
        sp.add_argument("--batch-sentences", type=int)
        sp.add_argument("--lr-max", type=float)
        sp.add_argument("--warmup-steps", type=int)
        sp.add_argument("--dtype", choices=("float32", "float64"))
        sp.add_argument("--directions", choices=("both", "forward"))

    sp = sub.add_parser("pretrain", help="multi-task pretraining from a preset")
    training(sp)
    sp.add_argument("--preset", required=True, help="exp1|exp2|exp3|exp3plus|exp4, optional -desk/-full")
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--stop-at", type=int, help="stop after this step (for staged runs)")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="translation fine-tuning")
    training(sp)
    sp.add_argument("--checkpoint", help="pretrained checkpoint; omit to train from scratch")
    sp.add_argument("--train", required=True, help="TSV of training pairs")
    sp.add_argument("--valid", help="TSV of validation pairs")
    sp.add_argument("--src", default="en")
    sp.add_argument("--tgt", default="ln")
    sp.add_argument("--scale", default="desk", choices=("desk", "full"))
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("translate", help="decode one output line per input line")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    sp.add_argument("--src-lang", default="en")
    sp.add_argument("--tgt-lang", default="ln")
    sp.add_argument("--beam", type=int, default=1)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--max-steps", type=int)
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("score", help="corpus BLEU and chrF")
    common(sp)
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True, help="reference file (TSV: second column)")
    sp.add_argument("--manifest", help="run manifest to record the scores in")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("report", help="comparison table of scored runs")
    common(sp)
    sp.add_argument("--manifests", nargs="+", required=True)
    sp.add_argument("--out")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"desknmt {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"desknmt {args.command}: data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"desknmt {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"desknmt {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
