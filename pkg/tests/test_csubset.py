import pytest

from seamdec import csubset as cs
from seamdec.csubset import GenSpec, Kind, StmtKind, TypeTag
from seamdec.errors import CSyntaxError, UnsupportedConstruct


def test_parse_declaration_and_assignment():
    ast = cs.parse_c("int a; a = 1 + 2;")
    assert ast.kind == Kind.BLOCK
    decl, stmt = ast.children
    assert decl == cs.decl("a", TypeTag.INT)
    assert stmt == cs.assign(cs.var("a", TypeTag.INT), cs.binop("+", cs.const(1), cs.const(2)))


def test_named_function_wrapper():
    ast = cs.parse_c("int main(void) {\n    int a;\n    a = 0;\n}\n")
    assert ast.name == "main"
    assert cs.print_c(ast) == "int main(void) {\n    int a;\n    a = 0;\n}\n"


def test_hex_constant_keeps_spelling():
    ast = cs.parse_c("long x; x = 0x400400;")
    value = ast.children[1].children[1]
    assert value.value == 0x400400
    assert value.spelling == "0x400400"
    assert "0x400400" in cs.print_c(ast)
    # spelling does not take part in equality
    assert value == cs.const(0x400400)


def test_print_inserts_only_needed_parentheses():
    ast = cs.parse_c("int a; int b; int c; a = (a + b) * c; b = a - (b - c); c = a - b - c;")
    text = cs.print_c(ast)
    assert "a = (a + b) * c;" in text
    assert "b = a - (b - c);" in text
    assert "c = a - b - c;" in text


@pytest.mark.parametrize("source, construct", [
    ("int *p;", "pointer"),
    ("int a; for (a = 0; a < 3; a = a + 1) { }", "for loop"),
    ("int a; long b; b = (long) a;", "cast"),
    ("int a; a++;", "increment"),
    ("int a; a += 1;", "compound assignment"),
    ("int a = 3;", "initializer"),
    ("int a; a = foo();", "call inside expression"),
    ("double d;", "floating point"),
    ("int a; a = 'x';", "character literal"),
])
def test_unsupported_constructs_are_named(source, construct):
    with pytest.raises(UnsupportedConstruct) as info:
        cs.parse_c(source)
    assert info.value.construct == construct


def test_syntax_error_carries_position():
    with pytest.raises(CSyntaxError) as info:
        cs.parse_c("int a;\na = ;")
    assert info.value.line == 2


def test_undeclared_identifier_is_a_syntax_error():
    with pytest.raises(CSyntaxError):
        cs.parse_c("a = 1;")


def test_call_arity_limit():
    with pytest.raises(UnsupportedConstruct):
        cs.parse_c("int a; foo(a, a, a, a, a);")


def test_unsigned_and_long_types():
    ast = cs.parse_c("unsigned u; long l; int i; l = l + i;")
    assert cs.declared_variables(ast) == [("u", TypeTag.UNSIGNED), ("l", TypeTag.LONG), ("i", TypeTag.INT)]
    value = ast.children[3].children[1]
    assert value.type == TypeTag.LONG


def test_if_else_and_while_print_parse_round_trip():
    source = (
        "int i;\nint n;\n"
        "while (i < n) {\n    if (i == 3) {\n        printf(\"%d\", i);\n    } else {\n"
        "        n = n - 1;\n    }\n    i = i + 1;\n}\nreturn n;\n"
    )
    ast = cs.parse_c(source)
    assert cs.print_c(ast) == source
    assert cs.callees(ast) == ["printf"]


# 4 kinds x 3 levels x 834 seeds covers 10,008 programs
@pytest.mark.slow
@pytest.mark.parametrize("kind", list(StmtKind))
@pytest.mark.parametrize("level", [0, 1, 2])
def test_generated_programs_round_trip(kind, level):
    for seed in range(834):
        ast = cs.gen_random_program(GenSpec(kind, level, seed, statements=3, with_return=seed % 2 == 0))
        assert cs.parse_c(cs.print_c(ast)) == ast


def test_generator_is_deterministic():
    spec = GenSpec(StmtKind.IF, 2, 42, statements=3)
    assert cs.gen_random_program(spec) == cs.gen_random_program(spec)
    texts = {cs.print_c(cs.gen_random_program(GenSpec(StmtKind.IF, 2, seed, statements=3))) for seed in range(5)}
    assert len(texts) > 1


def test_generated_expressions_stay_shallow():
    for seed in range(30):
        ast = cs.gen_random_program(GenSpec(StmtKind.EXPRESSION, 2, seed, statements=3))
        for node in ast.walk():
            if node.kind == Kind.ASSIGN:
                assert node.children[1].depth() <= cs.MAX_EXPR_DEPTH


def test_generated_returns_are_trailing():
    ast = cs.gen_random_program(GenSpec(StmtKind.CALL, 1, 5, statements=2, with_return=True))
    assert ast.children[-1].kind == Kind.RETURN
    assert all(node.kind != Kind.RETURN for node in ast.children[:-1])


def test_level_outside_range_is_rejected():
    with pytest.raises(ValueError):
        GenSpec(StmtKind.EXPRESSION, 3, 1)


@pytest.mark.parametrize("kind", list(StmtKind))
@pytest.mark.parametrize("level", [0, 1, 2])
def test_generated_divisors_are_nonzero_constants(kind, level):
    divisions = 0
    for seed in range(60):
        ast = cs.gen_random_program(GenSpec(kind, level, seed, statements=3))
        for node in ast.walk():
            if node.kind == Kind.BINOP and node.op in cs.DIVISION_OPS:
                divisor = node.children[1]
                assert divisor.kind == Kind.CONST_INT, cs.print_c(ast)
                assert divisor.value != 0
                divisions += 1
    if level > 0 and kind in (StmtKind.EXPRESSION, StmtKind.IF):
        assert divisions > 0


def test_level_zero_expressions_are_var_op_var():
    for seed in range(50):
        ast = cs.gen_random_program(GenSpec(StmtKind.EXPRESSION, 0, seed, statements=3))
        for stmt in ast.children:
            if stmt.kind != Kind.ASSIGN:
                continue
            value = stmt.children[1]
            assert value.kind == Kind.BINOP
            assert [c.kind for c in value.children] == [Kind.VARREF, Kind.VARREF]


def test_seeded_level_two_expression_is_frozen(golden):
    ast = cs.gen_random_program(GenSpec(StmtKind.EXPRESSION, 2, 7))
    assert cs.parse_c(cs.print_c(ast)) == ast
    golden("expression_l2_s7.c", cs.print_c(ast))
