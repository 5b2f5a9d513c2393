import pytest

from seamdec import csubset as cs
from seamdec.constants import POSITION_COUNT
from seamdec.positions import (
    IF_CONDITION, LOOP_CONDITION, LOOP_COUNTER, POSITION_NAMES, RETURN_VALUE, PositionTable, count_positions,
    function_table, operator_position,
)


def test_position_layout():
    assert len(POSITION_NAMES) == POSITION_COUNT == 26
    assert operator_position("+", False) == 3
    assert operator_position("+", True) == 4
    assert operator_position("!=", True) == 24
    assert POSITION_NAMES[RETURN_VALUE] == "return"


def test_loop_counter_and_condition():
    ast = cs.parse_c("int i; int n; while (i < n) { i = i + 1; } return n;")
    counts = count_positions(ast)
    assert counts["i"][LOOP_COUNTER] == 1
    assert counts["i"][LOOP_CONDITION] == 1
    assert counts["n"][LOOP_CONDITION] == 1
    assert counts["n"][LOOP_COUNTER] == 0
    assert counts["i"][operator_position("<", False)] == 1
    assert counts["n"][operator_position("<", True)] == 1
    assert counts["i"][operator_position("+", False)] == 1
    assert counts["n"][RETURN_VALUE] == 1


def test_if_condition_and_unused_declaration():
    ast = cs.parse_c("int a; int b; int unused; if (a == b) { a = b * 2; }")
    counts = count_positions(ast)
    assert counts["a"][IF_CONDITION] == 1
    assert counts["b"][IF_CONDITION] == 1
    assert counts["b"][operator_position("*", False)] == 1
    assert counts["unused"] == [0] * POSITION_COUNT


def test_table_accumulates_and_restricts():
    table = PositionTable()
    vec = [0] * POSITION_COUNT
    vec[RETURN_VALUE] = 2
    table.add_counts({"n": vec})
    table.add_counts({"n": vec, "i": [1] * POSITION_COUNT})
    assert table.vector("n")[RETURN_VALUE] == 4
    assert table.vector("missing") == [0] * POSITION_COUNT
    assert set(table.restrict(["n", "zz"]).rows) == {"n"}
    assert PositionTable.from_dict(table.to_dict()).rows == table.rows


def test_malformed_table_is_rejected():
    with pytest.raises(ValueError):
        PositionTable.from_dict({"n": [1, 2, 3]})
    with pytest.raises(ValueError):
        PositionTable.from_dict({"n": [-1] * POSITION_COUNT})


def test_function_table_includes_requested_names():
    ast = cs.parse_c("int a; a = a + 1;")
    table = function_table(ast, ["a", "v9"])
    assert "v9" in table
    assert sum(table.vector("v9")) == 0
