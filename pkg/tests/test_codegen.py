import shutil

import pytest

from seamdec import csubset as cs
from seamdec.asmtext import canonicalize, parse_function, strip_frame
from seamdec.codegen import compile_external, reference_codegen, resolve_compiler, translation_unit
from seamdec.corpus import label_boundaries
from seamdec.errors import CompilerNotFound


def _body(asm):
    func = parse_function(asm)
    return strip_frame(func), func


def test_translation_unit_layout():
    ast = cs.parse_c('int a; foo(a); printf("hello"); foo(a);')
    unit = translation_unit(ast)
    lines = unit.source.splitlines()
    assert lines[:3] == ["int foo();", "int printf(const char *, ...);", "int main(void) {"]
    assert unit.first_body_line == 4
    assert unit.function == "main"
    assert lines[unit.first_body_line - 1] == "    int a;"
    assert lines[-1] == "}"


def test_if_compiles_to_compare_and_inverted_jump():
    ast = cs.parse_c("int a; int b; if (a < b) { a = 0; }")
    asm, labels = reference_codegen(ast)
    body, func = _body(asm)
    assert [i.raw.replace("\t", " ") for i in body] == [
        "mov eax, DWORD PTR [rbp-4]",
        "cmp eax, DWORD PTR [rbp-8]",
        "jge .L2",
        "mov DWORD PTR [rbp-4], 0",
    ]
    assert labels == [0, 0, 1, 1]
    assert label_boundaries(asm) == labels
    canon, literals = canonicalize(body, func.strings)
    assert canon[2].text == "jge UP"
    assert [lit.text for lit in literals] == ["0"]


def test_slots_per_type():
    ast = cs.parse_c("int a; unsigned u; long l; a = 0; u = 1; l = 2;")
    asm, _ = reference_codegen(ast)
    body, _ = _body(asm)
    assert [i.raw.replace("\t", " ") for i in body] == [
        "mov DWORD PTR [rbp-4], 0",
        "mov DWORD PTR [rbp-68], 1",
        "mov QWORD PTR [rbp-136], 2",
    ]


def test_while_loop_tests_at_top_and_jumps_back():
    ast = cs.parse_c("int i; int n; while (i < n) { i = i + 1; }")
    asm, labels = reference_codegen(ast)
    body, _ = _body(asm)
    canon, _ = canonicalize(body)
    texts = [c.text for c in canon]
    assert texts[2] == "jge UP"
    assert texts[-1] == "jmp DOWN"
    # condition, increment, back-jump
    assert sum(labels) == 3
    assert label_boundaries(asm) == labels


def test_call_pushes_arguments_and_clears_eax():
    ast = cs.parse_c('int a; printf("value: %d", a);')
    asm, _ = reference_codegen(ast)
    body, func = _body(asm)
    raws = [i.raw.replace("\t", " ") for i in body]
    assert raws[-2:] == ["xor eax, eax", "call printf"]
    assert "pop rsi" in raws and "pop rdi" in raws
    _, literals = canonicalize(body, func.strings)
    assert [(lit.kind, lit.text) for lit in literals] == [("STR", "value: %d"), ("FUNC", "printf")]


@pytest.mark.parametrize("kind", list(cs.StmtKind))
def test_boundaries_match_loc_lines(kind):
    for level in (0, 1, 2):
        for seed in range(5):
            ast = cs.gen_random_program(cs.GenSpec(kind, level, seed, statements=3, with_return=seed == 0))
            asm, labels = reference_codegen(ast)
            assert label_boundaries(asm) == labels


def test_missing_compiler(monkeypatch):
    monkeypatch.delenv("SEAM_CC", raising=False)
    with pytest.raises(CompilerNotFound):
        resolve_compiler("no-such-compiler-seamdec")


@pytest.mark.skipif(shutil.which("gcc") is None, reason="gcc not installed")
def test_gcc_output_parses_with_loc_lines():
    ast = cs.parse_c("int a; int b; a = a + b;")
    asm = compile_external(ast, "gcc")
    func = parse_function(asm, "main")
    body = strip_frame(func)
    assert body
    assert all(i.line is not None for i in body)
    assert sum(label_boundaries(body)) == 1


def test_seeded_level_two_expression_listing_is_frozen(golden):
    ast = cs.gen_random_program(cs.GenSpec(cs.StmtKind.EXPRESSION, 2, 7))
    asm, labels = reference_codegen(ast)
    assert label_boundaries(asm) == labels
    golden("expression_l2_s7.s", asm)
