import json

import pytest

from main import build_parser, main
from seamdec.bintran import BinTranConfig, Translator, build_source_vocab, build_target_vocab, translation_pairs
from seamdec.constants import EXIT_CONFIG, EXIT_OK, EXIT_STAGE
from seamdec.corpus import load_corpus
from seamdec.errors import LiftError


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SEAM_CC", raising=False)
    return tmp_path


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_gen_corpus_writes_report(workdir):
    code = main(["gen-corpus", "--size", "8", "--output-dir", "runs", "--report", "report.json"])
    assert code == EXIT_OK
    report = json.loads((workdir / "report.json").read_text(encoding="utf-8"))
    assert report["samples"] == 8
    assert report["backend"] == "reference"
    assert report["seconds"] >= 0
    assert (workdir / "runs" / "corpus" / "namer.jsonl").exists()


def test_missing_corpus_is_a_stage_failure():
    assert main(["train-translator", "--corpus", "does-not-exist"]) == EXIT_STAGE


def test_invalid_config_exits_with_config_code(workdir):
    (workdir / "bad.json").write_text(json.dumps({"workers": 0}), encoding="utf-8")
    assert main(["gen-corpus", "--config", "bad.json", "--size", "4"]) == EXIT_CONFIG
    assert main(["gen-corpus", "--workers", "0", "--size", "4"]) == EXIT_CONFIG


def test_oracle_segmentation_of_a_listing(workdir, sample_factory):
    sample = sample_factory("if", 1, 2)
    (workdir / "f.s").write_text(sample.asm, encoding="utf-8")
    assert main(["segment", "f.s", "--oracle", "--report", "seg.json"]) == EXIT_OK
    report = json.loads((workdir / "seg.json").read_text(encoding="utf-8"))
    assert report["segments"] == [list(r) for r in sample.groups()]
    assert [row["boundary"] for row in report["instructions"]] == [bool(b) for b in sample.boundaries]


def test_end_to_end_failures_exit_nonzero_after_reporting(workdir, monkeypatch):
    assert main(["gen-corpus", "--size", "8", "--output-dir", "runs"]) == EXIT_OK
    samples, _ = load_corpus(workdir / "runs" / "corpus")
    pairs = translation_pairs(samples)
    translator = Translator.create(BinTranConfig(d_model=16, heads=2, ffn=32, seed=2),
                                   build_source_vocab([p.insns for p in pairs]),
                                   build_target_vocab([p.target for p in pairs]))
    translator.save(workdir / "t.ckpt")

    def broken(*args, **kwargs):
        raise LiftError("stack underflow")

    monkeypatch.setattr("seamdec.orchestrator.decompile_function", broken)
    code = main(["eval", "--output-dir", "runs", "--checkpoint", "t.ckpt", "--split", "train", "--limit", "3",
                 "--end-to-end", "--report", "eval.json"])
    assert code == EXIT_STAGE
    report = json.loads((workdir / "eval.json").read_text(encoding="utf-8"))
    assert report["end_to_end"]["stage_failures"] == report["end_to_end"]["functions"] == 3
