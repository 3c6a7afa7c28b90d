import csv
import io
import json

import pytest

from desknmt.cli import main, report_rows, rows_to_csv
from desknmt.model import load_checkpoint
from desknmt.presets import PRESETS, resolve
from desknmt.toydata import generate

MONO = {"en": 120, "ln": 100, "af": 100, "sw": 100, "zu": 100}
PARA = {"af": 80, "ln": 100, "sw": 80, "zu": 80}


def ok(argv):
    assert main(argv) == 0, argv


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw, data, tok = root / "raw", root / "data", root / "tok"
    raw.mkdir()
    mono, parallel = generate(5, MONO, PARA)
    for code, lines in mono.items():
        (raw / f"mono.{code}.txt").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    for code, pairs in parallel.items():
        (raw / f"en-{code}.tsv").write_text("".join(f"{a}\t{b}\n" for a, b in pairs), encoding="utf-8")
    for code in MONO:
        ok(["prepare", "--mono", str(raw / f"mono.{code}.txt"), "--lang", code, "--seed", "1",
            "--out-dir", str(data)])
    for code in PARA:
        ok(["prepare", "--tsv", str(raw / f"en-{code}.tsv"), "--src", "en", "--tgt", code,
            "--test-count", "10", "--valid-count", "10", "--seed", "1", "--out-dir", str(data)])
    ok(["train-tokenizer", "--inputs", str(data / "*.train"), str(data / "*.train.tsv"),
        "--vocab-size", "500", "--out-dir", str(tok)])
    return root


def count_lines(path):
    with open(path, encoding="utf-8") as f:
        return sum(1 for _ in f)


def test_prepare_fraction_split(tmp_path):
    src = tmp_path / "m.txt"
    src.write_text("".join(f"sentence {i}\n" for i in range(100)) + "sentence 3\n", encoding="utf-8")
    ok(["prepare", "--mono", str(src), "--lang", "ln", "--test-frac", "0.1", "--valid-frac", "0.1",
        "--seed", "4", "--out-dir", str(tmp_path / "a")])
    sizes = [count_lines(tmp_path / "a" / f"ln.{p}") for p in ("train", "valid", "test")]
    assert sizes == [80, 10, 10]
    ok(["prepare", "--mono", str(src), "--lang", "ln", "--seed", "4", "--out-dir", str(tmp_path / "b")])
    for name in ("ln.train", "ln.valid", "ln.test", "ln.split.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_prepare_errors(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tb\nc\n", encoding="utf-8")
    assert main(["prepare", "--tsv", str(bad), "--src", "en", "--tgt", "ln", "--out-dir", str(tmp_path)]) == 3
    assert main(["prepare", "--mono", str(tmp_path / "none.txt"), "--lang", "ln",
                 "--out-dir", str(tmp_path)]) == 3
    assert main(["prepare", "--out-dir", str(tmp_path)]) == 2
    assert main(["no-such-command"]) == 2


def test_parallel_holdout_counts(work):
    assert count_lines(work / "data" / "en-ln.test.tsv") == 10
    assert count_lines(work / "data" / "en-ln.valid.tsv") == 10
    assert count_lines(work / "data" / "en-ln.train.tsv") == 80


def test_unknown_preset(work):
    assert main(["pretrain", "--preset", "exp9-desk", "--data-dir", str(work / "data"),
                 "--tokenizer", str(work / "tok"), "--out-dir", str(work / "x")]) == 2


def pretrain_args(work, out, *extra):
    return ["pretrain", "--preset", "exp1-desk", "--data-dir", str(work / "data"),
            "--tokenizer", str(work / "tok"), "--out-dir", str(work / out), "--seed", "3",
            "--max-steps", "3", "--batch-sentences", "4", *extra]


def test_pretrain_exp1_is_lingala_denoise_only(work):
    ok(pretrain_args(work, "p1"))
    _, _, manifest = load_checkpoint(work / "p1" / "checkpoint.lmtl")
    assert manifest["mixture"] == "denoise:1.0:ln"
    assert manifest["preset"] == "exp1"
    with open(work / "p1" / "train.log", encoding="utf-8") as f:
        assert all(line.split("\t")[1] == "denoise" for line in f)


def test_pretrain_rerun_is_bit_identical(work):
    ok(pretrain_args(work, "r1", "--dtype", "float64"))
    ok(pretrain_args(work, "r2", "--dtype", "float64"))
    a = (work / "r1" / "checkpoint.lmtl").read_bytes()
    assert a == (work / "r2" / "checkpoint.lmtl").read_bytes()


def test_config_file_and_flag_precedence(work):
    cfg = work / "over.cfg"
    cfg.write_text("# desk override\nmax_steps = 2\nlr_max = 0.01\nd_model = 32\n", encoding="utf-8")
    ok(pretrain_args(work, "c1", "--config", str(cfg)))
    config, _, manifest = load_checkpoint(work / "c1" / "checkpoint.lmtl")
    assert config.d_model == 32
    assert manifest["train.max_steps"] == "3"  # flag beats file
    assert manifest["train.lr_max"] == "0.01"


def test_finetune_translate_score_report(work):
    ok(pretrain_args(work, "p2"))
    data = work / "data"
    ok(["finetune", "--checkpoint", str(work / "p2" / "checkpoint.lmtl"), "--tokenizer", str(work / "tok"),
        "--train", str(data / "en-ln.train.tsv"), "--valid", str(data / "en-ln.valid.tsv"),
        "--out-dir", str(work / "f2"), "--max-steps", "3", "--batch-sentences", "4"])
    hyp = work / "f2" / "test.hyp"
    ok(["translate", "--checkpoint", str(work / "f2" / "checkpoint.lmtl"), "--tokenizer", str(work / "tok"),
        "--input", str(data / "en-ln.test.tsv"), "--output", str(hyp), "--beam", "2", "--max-steps", "6"])
    assert count_lines(hyp) == count_lines(data / "en-ln.test.tsv")
    ok(["score", "--hyp", str(hyp), "--ref", str(data / "en-ln.test.tsv"),
        "--manifest", str(work / "f2" / "manifest.json")])
    manifest = json.loads((work / "f2" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["preset"] == "exp1" and set(manifest["metrics"]) >= {"bleu", "chrf"}
    ok(["report", "--manifests", str(work / "f2" / "manifest.json"), "--out", str(work / "r.txt"),
        "--csv", str(work / "r.csv")])
    assert len((work / "r.txt").read_text(encoding="utf-8").splitlines()) == 3


def test_scratch_finetune_and_vocab_mismatch(work, tmp_path):
    data = work / "data"
    ok(["finetune", "--tokenizer", str(work / "tok"), "--train", str(data / "en-ln.train.tsv"),
        "--out-dir", str(work / "s"), "--max-steps", "1", "--batch-sentences", "2"])
    other = tmp_path / "tok2"
    ok(["train-tokenizer", "--inputs", str(data / "ln.train"), "--vocab-size", "400", "--out-dir", str(other)])
    assert main(["finetune", "--checkpoint", str(work / "s" / "checkpoint.lmtl"), "--tokenizer", str(other),
                 "--train", str(data / "en-ln.train.tsv"), "--out-dir", str(tmp_path / "x"),
                 "--max-steps", "1"]) == 3


def test_score_output(tmp_path, capsys):
    (tmp_path / "h").write_text("the cat sat on mat\n", encoding="utf-8")
    (tmp_path / "r").write_text("the cat sat on the mat\n", encoding="utf-8")
    ok(["score", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")])
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("BLEU\t57.89\t") and out[1].startswith("chrF2\t")


def fake(name, bleu, chrf):
    return {"preset": name, "metrics": {"bleu": bleu, "chrf": chrf},
            "pretrained_data": "Monolingual", "lingala_included": True}


def test_report_rows_sorted_and_csv_round_trip():
    rows = report_rows([fake(f"exp{i}", b, b + 20) for i, b in enumerate([3.5, 12.25, 7.0, 0.0, 9.125])])
    assert [r["BLEU"] for r in rows] == sorted((r["BLEU"] for r in rows), reverse=True)
    assert len(report_rows([fake("exp1", 1.0, 2.0)])) == 1
    back = list(csv.DictReader(io.StringIO(rows_to_csv(rows))))
    assert [float(r["BLEU"]) for r in back] == [r["BLEU"] for r in rows]
    assert [r["Model"] for r in back] == [r["Model"] for r in rows]


def test_presets():
    assert len({resolve(f"{name}-desk")[1] for name in PRESETS}) == 1
    with pytest.raises(KeyError):
        resolve("exp5-desk")
    assert PRESETS["exp1"].mixture().describe() == "denoise:1.0:ln"
    exp2 = PRESETS["exp2"].mixture("forward").describe()
    assert exp2 == "denoise:1.0:af,ln,sw,zu;translate:1.0:en-af,en-ln,en-sw,en-zu"
    assert "en" in PRESETS["exp3"].mixture().tasks[0].sources
    assert PRESETS["exp3plus"].english_ratio > PRESETS["exp3"].english_ratio
    assert PRESETS["exp4"].languages == ("en", "ln")
