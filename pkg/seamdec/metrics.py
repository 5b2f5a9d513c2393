"""Word and sequence accuracy over translated lines."""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from seamdec.errors import SeamError
from seamdec.models import BreakdownRow, EvalReport
from seamdec.seamcode import is_var_token

IDENTIFIER_CLASS = "<ID>"
MAX_FAILURE_EXEMPLARS = 20


def mask_identifiers(tokens: Sequence[str]) -> List[str]:
    """Identifier tokens collapse to one class so renamings never count as errors."""
    return [IDENTIFIER_CLASS if is_var_token(t) else t for t in tokens]


def compare_tokens(pred: Sequence[str], ref: Sequence[str]) -> Tuple[int, int, bool]:
    """(matched positions, max(len(pred), len(ref)), exact match)."""
    p, r = mask_identifiers(pred), mask_identifiers(ref)
    matched = sum(1 for a, b in zip(p, r) if a == b)
    return matched, max(len(p), len(r)), p == r


def compute_metrics(predictions: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                    strata: Optional[Sequence[Tuple[str, int]]] = None,
                    ids: Optional[Sequence[str]] = None) -> EvalReport:
    if not references:
        raise SeamError("cannot compute metrics over an empty reference set")
    if len(predictions) != len(references):
        raise SeamError(f"{len(predictions)} predictions for {len(references)} references")
    strata = strata or [("all", -1)] * len(references)
    ids = ids or [str(i) for i in range(len(references))]

    rows: Dict[Tuple[str, int], BreakdownRow] = {}
    failures: List[dict] = []
    matched_total, token_total, exact_total = 0, 0, 0
    for pred, ref, (kind, level), sid in zip(predictions, references, strata, ids):
        matched, total, exact = compare_tokens(pred, ref)
        row = rows.setdefault((kind, level), BreakdownRow(kind, level))
        row.count += 1
        row.matched_tokens += matched
        row.total_tokens += total
        matched_total += matched
        token_total += total
        if exact:
            row.exact += 1
            exact_total += 1
        elif len(failures) < MAX_FAILURE_EXEMPLARS:
            failures.append({"id": sid, "prediction": " ".join(pred), "reference": " ".join(ref)})

    breakdown = [rows[key] for key in sorted(rows, key=lambda k: (k[0], k[1]))]
    word = matched_total / token_total if token_total else 1.0
    seq = exact_total / len(references)
    logging.debug(f"Metrics over {len(references)} sequences: word={word:.4f} seq={seq:.4f}")
    return EvalReport(word, seq, len(references), matched_total, token_total, exact_total, breakdown, failures)


def boundary_f1(predicted: Sequence[Sequence[int]], gold: Sequence[Sequence[int]]) -> float:
    """F1 of the positive (boundary) class over all instructions."""
    tp = fp = fn = 0
    for p_bits, g_bits in zip(predicted, gold):
        for p, g in zip(p_bits, g_bits):
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
    if tp == 0:
        return 0.0 if (fp or fn) else 1.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def write_report(path: Path, payload: dict) -> None:
    """Sorted keys, no timestamps: equal inputs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, sort_keys=True, indent=2, ensure_ascii=False)
        f.write("\n")
