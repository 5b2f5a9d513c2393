import pytest

from seamdec import csubset as cs
from seamdec.csubset import GenSpec, StmtKind
from seamdec.errors import LiftError
from seamdec.seamcode import (
    Literal, SeamLine, code_bearing, lift, lower_ast, lower_source_lines, normalize_identifiers, parse_lines,
)


def _texts(lines):
    return [line.text for line in lines]


def test_postorder_assignment():
    ast = cs.parse_c("int a; int b; int c; int d; int e; a = (a + b) * c + d * e;")
    lines, renaming, literals = lower_ast(ast)
    assert _texts(lines)[-1] == "ASSIGN v0 v0 v1 + v2 * v3 v4 * + ="
    assert renaming.token_of("e") == "v4"
    assert literals == []


def test_variables_are_numbered_per_type():
    ast = cs.parse_c("long total; int i; unsigned mask; int n; total = total + i * n; mask = mask ^ 255;")
    lines, renaming, literals = lower_ast(ast)
    assert _texts(lines) == [
        "DECL T_LONG l0", "DECL T_INT v0", "DECL T_UNS u0", "DECL T_INT v1",
        "ASSIGN l0 l0 v0 v1 * + =",
        "ASSIGN u0 u0 IMM ^ =",
    ]
    assert renaming.original_of("v1") == "n"
    assert literals == [Literal("IMM", "255")]


def test_control_flow_lines():
    ast = cs.parse_c("int i; int n; while (i < n) { if (i == 3) { i = 0; } else { n = -n; } i = i + 1; }")
    lines, _, _ = lower_ast(ast)
    assert _texts(lines) == [
        "DECL T_INT v0", "DECL T_INT v1",
        "WHILE v0 v1 <",
        "IF v0 IMM ==",
        "ASSIGN v0 IMM =",
        "ELSE",
        "ASSIGN v1 v1 NEG =",
        "END",
        "ASSIGN v0 v0 IMM + =",
        "END",
    ]
    # DECLs and the END closing the IF produce no code; the loop's END is its back-jump
    assert code_bearing(lines) == [False, False, True, True, True, True, True, False, True, True]


def test_call_and_return_lines():
    ast = cs.parse_c('int a; printf("value: %d", a + 1); return a;')
    lines, renaming, literals = lower_ast(ast)
    assert _texts(lines)[1:] == ["CALL STR v0 IMM + FUNC", "RET v0"]
    assert renaming.functions == ("printf",)
    assert literals == [Literal("STR", "value: %d"), Literal("IMM", "1")]


def test_lift_restores_original_with_renaming():
    ast = cs.parse_c('int i; long s; while (i < 10) { s = s + i * 0x10; i = i + 1; } printf("%d", i); return i;')
    lines, renaming, literals = lower_ast(ast)
    assert lift(lines, literals, renaming) == ast


def test_lift_without_renaming_yields_normalized_form():
    ast = cs.parse_c("int x; int y; x = x - y;")
    lines, _, _ = lower_ast(ast)
    normalized, _ = normalize_identifiers(ast)
    assert lift(lines) == normalized


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(StmtKind))
@pytest.mark.parametrize("level", [0, 1, 2])
def test_lower_lift_identity_on_generated_programs(kind, level):
    for seed in range(834):
        ast = cs.gen_random_program(GenSpec(kind, level, seed, statements=3, with_return=seed % 3 == 0))
        lines, renaming, literals = lower_ast(ast)
        lifted = lift(lines, literals, renaming)
        assert lifted == ast
        assert _texts(lower_ast(lifted)[0]) == _texts(lines)


def test_lift_adds_missing_declarations_in_type_order():
    lines = parse_lines("ASSIGN u0 l1 v0 + =\n")
    ast = lift(lines)
    assert cs.print_c(ast).splitlines()[:3] == ["int v0;", "long l1;", "unsigned u0;"]


def test_lift_underflow_and_overflow():
    with pytest.raises(LiftError):
        lift([SeamLine(("ASSIGN", "v0", "+", "="))])
    with pytest.raises(LiftError):
        lift([SeamLine(("ASSIGN", "v0", "v1", "v2", "="))])


def test_lift_rejects_unbalanced_blocks():
    with pytest.raises(LiftError):
        lift(parse_lines("IF v0 v1 <\nASSIGN v0 v1 =\n"))
    with pytest.raises(LiftError):
        lift(parse_lines("END\n"))
    with pytest.raises(LiftError):
        lift(parse_lines("WHILE v0 v1 <\nELSE\nEND\n"))


def test_missing_literal_falls_back_to_zero():
    ast = lift(parse_lines("ASSIGN v0 IMM =\n"))
    assert ast.children[-1].children[1] == cs.const(0)


def test_line_must_open_with_structural_token():
    with pytest.raises(LiftError):
        SeamLine.from_text("v0 v1 +")


def test_source_lines_align_with_seamcode_lines():
    ast = cs.parse_c("int a; int b; if (a < b) { foo(a, 7); } else { b = 0; }")
    lines, _, _ = lower_ast(ast)
    src = lower_source_lines(ast)
    assert len(src) == len(lines)
    assert src[3] == ["FUNC", "(", "v0", ",", "IMM", ")", ";"]
