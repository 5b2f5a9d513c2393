"""The 26 syntactic positions an identifier can occupy.

Index 0 is the loop counter, 1 the loop condition, 2 the if condition,
3..24 the left/right operand of each operator in POSITION_OPERATORS,
and 25 the return value. Corpus statistics and name placement both
count through this module so their index spaces cannot drift apart.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from seamdec.constants import POSITION_COUNT
from seamdec.csubset import AstNode, Kind

LOOP_COUNTER = 0
LOOP_CONDITION = 1
IF_CONDITION = 2
RETURN_VALUE = 25
POSITION_OPERATORS = ("+", "-", "*", "/", "%", ">", "<", ">=", "<=", "==", "!=")

POSITION_NAMES: List[str] = ["loop counter", "loop condition", "if condition"]
for _op in POSITION_OPERATORS:
    POSITION_NAMES += [f"before {_op}", f"after {_op}"]
POSITION_NAMES.append("return")
assert len(POSITION_NAMES) == POSITION_COUNT


def operator_position(op: str, right: bool) -> int:
    return 3 + 2 * POSITION_OPERATORS.index(op) + (1 if right else 0)


def _refs(expr: AstNode) -> List[str]:
    return [n.name for n in expr.walk() if n.kind == Kind.VARREF]


def loop_counters(loop: AstNode) -> List[str]:
    """Variables assigned by the last body statement and read in the condition."""
    cond, body = loop.children
    if not body.children or body.children[-1].kind != Kind.ASSIGN:
        return []
    target = body.children[-1].children[0].name
    return [target] if target in _refs(cond) else []


def count_positions(ast: AstNode) -> Dict[str, List[int]]:
    """Per-variable 26-vectors of occurrence counts for one function."""
    counts: Dict[str, List[int]] = {}

    def bump(name: str, index: int) -> None:
        counts.setdefault(name, [0] * POSITION_COUNT)[index] += 1

    for node in ast.walk():
        if node.kind == Kind.DECL:
            counts.setdefault(node.name, [0] * POSITION_COUNT)
        elif node.kind == Kind.WHILE:
            for name in loop_counters(node):
                bump(name, LOOP_COUNTER)
            for name in _refs(node.children[0]):
                bump(name, LOOP_CONDITION)
        elif node.kind == Kind.IF:
            for name in _refs(node.children[0]):
                bump(name, IF_CONDITION)
        elif node.kind == Kind.RETURN and node.children:
            for name in _refs(node.children[0]):
                bump(name, RETURN_VALUE)
        elif node.kind == Kind.BINOP and node.op in POSITION_OPERATORS:
            left, right = node.children
            if left.kind == Kind.VARREF:
                bump(left.name, operator_position(node.op, False))
            if right.kind == Kind.VARREF:
                bump(right.name, operator_position(node.op, True))
    return counts


@dataclass
class PositionTable:
    """Identifier -> 26-vector of occurrence frequencies."""
    rows: Dict[str, List[int]] = field(default_factory=dict)

    def add_counts(self, counts: Dict[str, List[int]]) -> None:
        for name, vec in counts.items():
            row = self.rows.setdefault(name, [0] * POSITION_COUNT)
            for i, v in enumerate(vec):
                row[i] += v

    def vector(self, name: str) -> List[int]:
        return list(self.rows.get(name, [0] * POSITION_COUNT))

    def restrict(self, names: Iterable[str]) -> "PositionTable":
        return PositionTable({n: list(self.rows[n]) for n in names if n in self.rows})

    def __contains__(self, name: str) -> bool:
        return name in self.rows

    def __len__(self) -> int:
        return len(self.rows)

    def to_dict(self) -> dict:
        return {name: list(vec) for name, vec in sorted(self.rows.items())}

    @classmethod
    def from_dict(cls, data: Dict[str, List[int]]) -> "PositionTable":
        for name, vec in data.items():
            if len(vec) != POSITION_COUNT or any(v < 0 for v in vec):
                raise ValueError(f"position vector for '{name}' must have {POSITION_COUNT} non-negative entries")
        return cls({name: list(vec) for name, vec in data.items()})


def function_table(ast: AstNode, names: Optional[Iterable[str]] = None) -> PositionTable:
    table = PositionTable(count_positions(ast))
    if names is not None:
        for name in names:
            table.rows.setdefault(name, [0] * POSITION_COUNT)
    return table
