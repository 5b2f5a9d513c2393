import itertools
import random

import pytest

from seamdec.asmtext import (
    NVEC, Backfiller, backfill, canonical_text, canonicalize, concrete_token, has_literal_tokens, parse_asm,
    parse_function, resources, strip_frame, written_argument_registers,
)
from seamdec.errors import AsmParseError
from seamdec.seamcode import Literal

CALLER = """\
\t.intel_syntax noprefix
\t.section\t.rodata
.LC0:
\t.string\t"You Win!"
\t.text
\t.globl\tmain
\t.type\tmain, @function
main:
\tpush\trbp
\tmov\trbp, rsp
\tsub\trsp, 16
.L3:
\tmov\teax, DWORD PTR [rbp-4]
\tcmp\teax, DWORD PTR [rbp-8]
\tjge\t.L2
\tlea\trax, .LC0[rip]
\tmov\trdi, rax
\tmov\teax, 0
\tcall\tprintf@PLT
\tadd\tDWORD PTR [rbp-4], 1
\tjmp\t.L3
.L2:
\tnop
\tleave
\tret
"""


def _canon(text):
    func = parse_function(text)
    return canonicalize(strip_frame(func), func.strings)


def test_operand_tokens(divide_by_three):
    func = parse_function(divide_by_three)
    first = func.instructions[0]
    assert first.mnemonic == "mov"
    assert first.operands == (("eax",), ("DWORD", "PTR", "[", "rbp", "-", "4", "]"))
    assert [i.address for i in func.instructions] == [4 * k for k in range(9)]


def test_divide_by_three_keeps_one_immediate(divide_by_three):
    canon, literals = canonicalize(parse_function(divide_by_three).instructions)
    assert literals == [Literal("IMM", "1431655766")]
    assert canon[0].tokens == ["mov", "eax", ",", "DWORD", "PTR", "[", "rbp-4", "]"]
    assert canon[2].text == "imul rdx , rdx , IMM"
    assert canon[3].tokens == ["shr", "rdx", ",", "SH32"]
    assert canon[4].tokens == ["sar", "eax", ",", "SH31"]
    assert not has_literal_tokens(canon)


def test_branch_direction_call_and_string_placeholders():
    canon, literals = _canon(CALLER)
    texts = [c.text for c in canon]
    assert "jge UP" in texts
    assert "jmp DOWN" in texts
    assert "lea rax , STR" in texts
    assert "call FUNC" in texts
    assert f"mov eax , {NVEC}" in texts
    assert literals == [Literal("STR", "You Win!"), Literal("FUNC", "printf"), Literal("IMM", "1")]


def test_frame_is_stripped_by_shape():
    body = strip_frame(parse_function(CALLER))
    assert body[0].raw.startswith("mov")
    assert body[-1].mnemonic == "nop"


def test_canonical_text_is_idempotent():
    canon, _ = _canon(CALLER)
    text = canonical_text(canon)
    again, literals = canonicalize(parse_function(text).instructions)
    assert canonical_text(again) == text
    assert literals == []


def test_empty_function():
    func = parse_function("\t.text\nf:\n\tpush\trbp\n\tmov\trbp, rsp\n\tpop\trbp\n\tret\n")
    assert func.name == "f"
    assert strip_frame(func) == []
    assert parse_function("").instructions == []


def test_last_function_is_default():
    text = "\t.text\nhelper:\n\tret\nmain:\n\tnop\n\tret\n"
    assert [f.name for f in parse_asm(text)] == ["helper", "main"]
    assert parse_function(text).name == "main"
    assert parse_function(text, "helper").name == "helper"
    with pytest.raises(AsmParseError):
        parse_function(text, "missing")


def test_unknown_mnemonic_and_label_are_errors():
    with pytest.raises(AsmParseError):
        parse_asm("\t.text\nmain:\n\tvfmadd231ps\txmm0, xmm1, xmm2\n")
    with pytest.raises(AsmParseError):
        parse_asm("\t.text\nmain:\n\tjmp\t.L9\n")


def test_loc_lines_are_recorded():
    text = "\t.text\nmain:\n\t.loc 1 3 5\n\tmov\teax, 1\n\t.loc 1 4 5\n\tnop\n"
    func = parse_function(text)
    assert [i.line for i in func.instructions] == [3, 4]


def test_backfill_substitutes_in_order_per_kind():
    literals = [Literal("IMM", "3"), Literal("STR", "done"), Literal("IMM", "7"), Literal("FUNC", "report")]
    result = backfill(["CALL", "STR", "v0", "IMM", "+", "IMM", "FUNC"], literals)
    assert result.tokens == ["CALL", '"done"', "v0", "3", "+", "7", "report"]
    assert result.diagnostics == []


def test_backfill_without_placeholders_is_identity():
    tokens = ["ASSIGN", "v0", "v1", "v2", "*", "="]
    assert backfill(tokens, [Literal("IMM", "9")]).tokens == tokens


def test_backfill_reports_shortage_and_surplus():
    filler = Backfiller([Literal("IMM", "1"), Literal("STR", "x")])
    assert filler.fill(["ASSIGN", "v0", "IMM", "IMM", "+", "="]) == ["ASSIGN", "v0", "1", "IMM", "+", "="]
    assert len(filler.diagnostics) == 1
    assert filler.surplus() == {"STR": 1}


def test_backfill_cursor_spans_lines():
    filler = Backfiller([Literal("IMM", "1"), Literal("IMM", "2")])
    assert filler.fill(["ASSIGN", "v0", "IMM", "="]) == ["ASSIGN", "v0", "1", "="]
    assert filler.fill(["ASSIGN", "v1", "IMM", "="]) == ["ASSIGN", "v1", "2", "="]
    assert filler.surplus() == {}


def test_resources(divide_by_three):
    canon, _ = canonicalize(parse_function(divide_by_three).instructions)
    assert resources(canon[0]) == frozenset({"rax", "slot:rbp-4"})
    assert resources(canon[3]) == frozenset({"rdx"})
    assert resources(canon[8]) == frozenset({"rax", "slot:rbp-8"})


def test_written_argument_registers():
    text = ("\t.text\nmain:\n\tmov\tedi, DWORD PTR [rbp-4]\n\tmov\tesi, 3\n"
            "\tmov\teax, 0\n\tcall\tfoo\n")
    canon, _ = canonicalize(parse_function(text).instructions)
    assert written_argument_registers(canon) == 2


def _aligned_by_enumeration(tokens, literals):
    """The only assignment of literals to placeholders that keeps each kind in harvest order."""
    slots = [k for k, tok in enumerate(tokens) if tok in ("IMM", "STR", "FUNC")]
    found = []
    for order in itertools.permutations(range(len(literals)), len(slots)):
        if any(literals[o].kind != tokens[s] for o, s in zip(order, slots)):
            continue
        by_kind = {}
        for o in order:
            by_kind.setdefault(literals[o].kind, []).append(o)
        if any(seq != sorted(seq) for seq in by_kind.values()):
            continue
        out = list(tokens)
        for o, s in zip(order, slots):
            out[s] = concrete_token(literals[o])
        found.append(out)
    assert len(found) == 1
    return found[0]


@pytest.mark.parametrize("seed", range(200))
def test_backfill_agrees_with_exhaustive_alignment(seed):
    rng = random.Random(seed)
    kinds = [rng.choice(("IMM", "IMM", "STR", "FUNC")) for _ in range(rng.randint(1, 6))]
    literals = [Literal(kind, str(rng.randint(0, 10 ** 6)) if kind == "IMM" else f"{kind.lower()}{k}")
                for k, kind in enumerate(kinds)]
    placeholders = [lit.kind for lit in literals]
    rng.shuffle(placeholders)
    tokens = ["CALL"]
    for tok in placeholders:
        tokens.append(tok)
        if rng.random() < 0.5:
            tokens.append(rng.choice(("v0", "l1", "+", "*")))
    result = backfill(tokens, literals)
    assert result.diagnostics == []
    assert result.tokens == _aligned_by_enumeration(tokens, literals)
