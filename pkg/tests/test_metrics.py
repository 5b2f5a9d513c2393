import json

import pytest

from seamdec.errors import SeamError
from seamdec.metrics import boundary_f1, compare_tokens, compute_metrics, mask_identifiers, write_report


def test_one_wrong_token():
    report = compute_metrics([["A", "B", "X", "D"]], [["A", "B", "C", "D"]])
    assert report.word_accuracy == 0.75
    assert report.sequence_accuracy == 0.0


def test_single_error_across_four_sequences():
    refs = [[f"t{i}" for i in range(8)] for _ in range(4)]
    preds = [list(r) for r in refs]
    preds[2][5] = "wrong"
    report = compute_metrics(preds, refs)
    assert report.word_accuracy == pytest.approx(31 / 32)
    assert report.sequence_accuracy == 0.75
    assert report.exact == 3
    assert report.failures[0]["id"] == "2"


def test_length_mismatch_counts_against_longer_side():
    matched, total, exact = compare_tokens(["A", "B"], ["A", "B", "C"])
    assert (matched, total, exact) == (2, 3, False)


def test_identifier_renaming_is_not_an_error():
    assert mask_identifiers(["v0", "u3", "l1", "IMM", "vx"]) == ["<ID>", "<ID>", "<ID>", "IMM", "vx"]
    report = compute_metrics([["ASSIGN", "v1", "IMM", "="]], [["ASSIGN", "v0", "IMM", "="]])
    assert report.word_accuracy == 1.0
    assert report.sequence_accuracy == 1.0


def test_empty_token_total_is_perfect():
    report = compute_metrics([[]], [[]])
    assert report.word_accuracy == 1.0
    assert report.sequence_accuracy == 1.0


def test_invalid_inputs():
    with pytest.raises(SeamError):
        compute_metrics([], [])
    with pytest.raises(SeamError):
        compute_metrics([["A"]], [["A"], ["B"]])


def test_breakdown_by_stratum():
    report = compute_metrics(
        [["A"], ["B"], ["C"]], [["A"], ["X"], ["C"]],
        strata=[("while", 1), ("if", 0), ("while", 1)],
    )
    rows = {(r.kind, r.level): r for r in report.breakdown}
    assert [(r.kind, r.level) for r in report.breakdown] == [("if", 0), ("while", 1)]
    assert rows[("while", 1)].sequence_accuracy == 1.0
    assert rows[("if", 0)].word_accuracy == 0.0


def test_boundary_f1():
    assert boundary_f1([[0, 1, 1]], [[0, 1, 1]]) == 1.0
    assert boundary_f1([[0, 0, 0]], [[0, 0, 0]]) == 1.0
    assert boundary_f1([[1, 0, 1]], [[0, 1, 1]]) == pytest.approx(0.5)
    assert boundary_f1([[0, 0]], [[0, 1]]) == 0.0


def test_report_is_byte_stable(tmp_path):
    report = compute_metrics([["A", "B"]], [["A", "C"]])
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    write_report(first, report.to_dict())
    write_report(second, report.to_dict())
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text(encoding="utf-8"))["word_accuracy"] == 0.5
