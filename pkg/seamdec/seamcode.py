"""SeamCode: the serialized intermediate language between assembly and C.

Every high-level statement becomes one SeamLine. Expressions are written in
post-order with fixed operator arities so each line decodes to exactly one tree.
Control statements open with an IF/WHILE header and close with END; an if/else
gets an ELSE line between its two bodies.
"""
import re
import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from seamdec import csubset as cs
from seamdec.csubset import AstNode, Kind, TypeTag
from seamdec.constants import MAX_VARS_PER_TYPE
from seamdec.errors import LiftError, UnsupportedConstruct

# Structural tokens
ASSIGN, DECL, IF, ELSE, WHILE, CALL, RET, END = "ASSIGN", "DECL", "IF", "ELSE", "WHILE", "CALL", "RET", "END"
STRUCTURAL = (ASSIGN, DECL, IF, ELSE, WHILE, CALL, RET, END)

# Placeholders
IMM, STR, FUNC, UP, DOWN = "IMM", "STR", "FUNC", "UP", "DOWN"
PLACEHOLDERS = (IMM, STR, FUNC, UP, DOWN)

NEG = "NEG"
EQUALS = "="
UNARY_TOKENS = {"!": "!", "-": NEG}
UNARY_OPS_BY_TOKEN = {v: k for k, v in UNARY_TOKENS.items()}
OPERATOR_TOKENS = cs.BINARY_OPS + ("!", NEG, EQUALS)

TYPE_TOKENS = {TypeTag.INT: "T_INT", TypeTag.LONG: "T_LONG", TypeTag.UNSIGNED: "T_UNS"}
TYPES_BY_TOKEN = {v: k for k, v in TYPE_TOKENS.items()}
VAR_PREFIX = {TypeTag.INT: "v", TypeTag.LONG: "l", TypeTag.UNSIGNED: "u"}
TYPES_BY_PREFIX = {v: k for k, v in VAR_PREFIX.items()}

VAR_TOKEN_RE = re.compile(r"^([vlu])(\d+)$")
INT_LITERAL_RE = re.compile(r"^(0[xX][0-9a-fA-F]+|\d+)$")

VARIABLE_TOKENS = tuple(
    f"{VAR_PREFIX[t]}{k}" for t in cs.TYPE_ORDER for k in range(MAX_VARS_PER_TYPE)
)
TOKEN_INVENTORY = STRUCTURAL + PLACEHOLDERS + OPERATOR_TOKENS + tuple(TYPE_TOKENS.values()) + VARIABLE_TOKENS


def is_var_token(token: str) -> bool:
    return VAR_TOKEN_RE.match(token) is not None


def var_token_type(token: str) -> TypeTag:
    return TYPES_BY_PREFIX[token[0]]


def var_token_index(token: str) -> int:
    return int(token[1:])


@dataclass(frozen=True)
class SeamLine:
    tokens: Tuple[str, ...]

    @property
    def kind(self) -> str:
        return self.tokens[0]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "SeamLine":
        tokens = tuple(text.split())
        if not tokens or tokens[0] not in STRUCTURAL:
            raise LiftError(f"line does not start with a structural token: {text!r}")
        return cls(tokens)

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class Literal:
    """A constant replaced by a placeholder; `kind` is IMM, STR or FUNC."""
    kind: str
    text: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> "Literal":
        return cls(data["kind"], data["text"])


@dataclass(frozen=True)
class RenamingMap:
    """Original identifier -> normalized token, plus callees in call order."""
    entries: Tuple[Tuple[str, str, TypeTag], ...] = ()
    functions: Tuple[str, ...] = ()

    def token_of(self, name: str) -> Optional[str]:
        for orig, token, _ in self.entries:
            if orig == name:
                return token
        return None

    def original_of(self, token: str) -> Optional[str]:
        for orig, tok, _ in self.entries:
            if tok == token:
                return orig
        return None

    def by_type(self) -> Dict[TypeTag, List[Tuple[str, str]]]:
        groups: Dict[TypeTag, List[Tuple[str, str]]] = {t: [] for t in cs.TYPE_ORDER}
        for orig, token, type_ in self.entries:
            groups[type_].append((orig, token))
        return groups

    def normalized(self) -> "RenamingMap":
        """Identity map over the same tokens; callee names kept."""
        return RenamingMap(tuple((tok, tok, t) for _, tok, t in self.entries), self.functions)

    def to_dict(self) -> dict:
        return {
            "entries": [[o, tok, t.value] for o, tok, t in self.entries],
            "functions": list(self.functions),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RenamingMap":
        return cls(
            tuple((o, tok, TypeTag(t)) for o, tok, t in data.get("entries", [])),
            tuple(data.get("functions", [])),
        )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------
def _rename(ast: AstNode, mapping: Dict[str, str]) -> AstNode:
    if ast.kind in (Kind.DECL, Kind.VARREF):
        return replace(ast, name=mapping.get(ast.name, ast.name))
    if not ast.children:
        return ast
    return replace(ast, children=tuple(_rename(c, mapping) for c in ast.children))


def normalize_identifiers(ast: AstNode) -> Tuple[AstNode, RenamingMap]:
    """Rename variables to v<k>/l<k>/u<k>, k counting first occurrences within each type."""
    counters = {t: 0 for t in cs.TYPE_ORDER}
    mapping: Dict[str, str] = {}
    entries: List[Tuple[str, str, TypeTag]] = []
    for node in ast.walk():
        if node.kind not in (Kind.DECL, Kind.VARREF) or node.name in mapping:
            continue
        type_ = node.type or TypeTag.INT
        if counters[type_] >= MAX_VARS_PER_TYPE:
            raise UnsupportedConstruct(f"more than {MAX_VARS_PER_TYPE} variables of type {type_.value}")
        token = f"{VAR_PREFIX[type_]}{counters[type_]}"
        counters[type_] += 1
        mapping[node.name] = token
        entries.append((node.name, token, type_))
    renaming = RenamingMap(tuple(entries), tuple(cs.callees(ast)))
    return _rename(ast, mapping), renaming


# ---------------------------------------------------------------------------
# Lowering
# ---------------------------------------------------------------------------
def _literal_text(node: AstNode) -> str:
    return node.spelling or str(node.value)


def _postorder(node: AstNode, out: List[str], literals: List[Literal]) -> None:
    kind = node.kind
    if kind == Kind.VARREF:
        out.append(node.name)
    elif kind == Kind.CONST_INT:
        out.append(IMM)
        literals.append(Literal(IMM, _literal_text(node)))
    elif kind == Kind.CONST_STR:
        out.append(STR)
        literals.append(Literal(STR, node.value))
    elif kind == Kind.BINOP:
        _postorder(node.children[0], out, literals)
        _postorder(node.children[1], out, literals)
        out.append(node.op)
    elif kind == Kind.UNOP:
        _postorder(node.children[0], out, literals)
        out.append(UNARY_TOKENS[node.op])
    else:
        raise UnsupportedConstruct(f"{kind.value} inside expression")


def _lower_stmt(node: AstNode, lines: List[SeamLine], literals: List[Literal]) -> None:
    kind = node.kind
    if kind == Kind.BLOCK:
        for stmt in node.children:
            _lower_stmt(stmt, lines, literals)
        return
    tokens: List[str]
    if kind == Kind.DECL:
        tokens = [DECL, TYPE_TOKENS[node.type], node.name]
    elif kind == Kind.ASSIGN:
        target, value = node.children
        tokens = [ASSIGN, target.name]
        _postorder(value, tokens, literals)
        tokens.append(EQUALS)
    elif kind == Kind.CALL:
        tokens = [CALL]
        for arg in node.children:
            _postorder(arg, tokens, literals)
        tokens.append(FUNC)
    elif kind == Kind.RETURN:
        tokens = [RET]
        if node.children:
            _postorder(node.children[0], tokens, literals)
    elif kind in (Kind.IF, Kind.WHILE):
        tokens = [IF if kind == Kind.IF else WHILE]
        _postorder(node.children[0], tokens, literals)
        lines.append(SeamLine(tuple(tokens)))
        _lower_stmt(node.children[1], lines, literals)
        if kind == Kind.IF and len(node.children) == 3:
            lines.append(SeamLine((ELSE,)))
            _lower_stmt(node.children[2], lines, literals)
        lines.append(SeamLine((END,)))
        return
    else:
        raise UnsupportedConstruct(f"{kind.value} as statement")
    lines.append(SeamLine(tuple(tokens)))


def lower_ast(ast: AstNode) -> Tuple[List[SeamLine], RenamingMap, List[Literal]]:
    """AST -> (SeamLines, renaming, IMM/STR literals in emission order)."""
    normalized, renaming = normalize_identifiers(ast)
    lines: List[SeamLine] = []
    literals: List[Literal] = []
    _lower_stmt(normalized, lines, literals)
    return lines, renaming, literals


def lower_source_lines(ast: AstNode) -> List[List[str]]:
    """C token targets aligned with `lower_ast` lines; constants and callees as placeholders."""
    normalized, _ = normalize_identifiers(ast)
    out = []
    for text in cs.print_lines(normalized):
        toks = cs.tokenize(text)[:-1]
        line: List[str] = []
        for i, tok in enumerate(toks):
            if tok.typ == "number":
                line.append(IMM)
            elif tok.typ == "string":
                line.append(STR)
            elif tok.typ == "ident" and i + 1 < len(toks) and toks[i + 1].typ == "(":
                line.append(FUNC)
            else:
                line.append(tok.lexeme)
        out.append(line)
    return out


def code_bearing(lines: Sequence[SeamLine]) -> List[bool]:
    """Lines that compile to instructions: all but DECL and the END closing an IF."""
    flags: List[bool] = []
    open_blocks: List[str] = []
    for line in lines:
        kind = line.kind
        if kind in (IF, WHILE):
            open_blocks.append(kind)
            flags.append(True)
        elif kind == END:
            opener = open_blocks.pop() if open_blocks else IF
            flags.append(opener == WHILE)
        else:
            flags.append(kind != DECL)
    return flags


def code_bearing_lines(lines: Sequence[SeamLine]) -> List[SeamLine]:
    return [line for line, keep in zip(lines, code_bearing(lines)) if keep]


def format_lines(lines: Iterable[SeamLine]) -> str:
    return "\n".join(line.text for line in lines) + "\n"


def parse_lines(text: str) -> List[SeamLine]:
    return [SeamLine.from_text(row) for row in text.splitlines() if row.strip()]


# ---------------------------------------------------------------------------
# Lifting
# ---------------------------------------------------------------------------
class Lifter:
    """Decodes SeamLines back into an AST, filling placeholders from literals."""

    def __init__(self, literals: Sequence[Literal] = (), renaming: Optional[RenamingMap] = None):
        self.renaming = renaming
        self.queues: Dict[str, List[str]] = {IMM: [], STR: [], FUNC: []}
        for lit in literals:
            self.queues.setdefault(lit.kind, []).append(lit.text)
        self.cursor = {kind: 0 for kind in self.queues}
        self.call_index = 0
        self.diagnostics: List[str] = []
        self.used_vars: Dict[str, TypeTag] = {}
        self.declared: Dict[str, TypeTag] = {}

    def _take(self, kind: str) -> Optional[str]:
        pos = self.cursor[kind]
        queue = self.queues[kind]
        if pos < len(queue):
            self.cursor[kind] = pos + 1
            return queue[pos]
        return None

    def _name(self, token: str) -> str:
        if self.renaming is not None:
            orig = self.renaming.original_of(token)
            if orig is not None:
                return orig
        return token

    def _var(self, token: str) -> AstNode:
        type_ = self.declared.get(token, var_token_type(token))
        self.used_vars.setdefault(token, type_)
        return cs.var(self._name(token), type_)

    def _int_const(self, text: str) -> AstNode:
        try:
            return cs.const(cs.int_literal(text), text)
        except ValueError:
            self.diagnostics.append(f"non-integer literal {text!r} for IMM, using 0")
            return cs.const(0)

    def _leaf(self, token: str) -> AstNode:
        if is_var_token(token):
            return self._var(token)
        if token == IMM:
            text = self._take(IMM)
            if text is None:
                self.diagnostics.append("missing IMM literal, using 0")
                return cs.const(0)
            return self._int_const(text)
        if token == STR:
            text = self._take(STR)
            if text is None:
                self.diagnostics.append("missing STR literal, using empty string")
                text = ""
            return cs.string(text)
        if INT_LITERAL_RE.match(token):
            return self._int_const(token)
        if len(token) >= 2 and token[0] == token[-1] == '"':
            return cs.string(token[1:-1])
        raise LiftError(f"unexpected token {token!r} in expression")

    def decode_expressions(self, tokens: Sequence[str]) -> List[AstNode]:
        stack: List[AstNode] = []
        for token in tokens:
            if token in cs.BINARY_OPS:
                if len(stack) < 2:
                    raise LiftError(f"stack underflow at operator {token!r}")
                right = stack.pop()
                left = stack.pop()
                stack.append(cs.binop(token, left, right))
            elif token in UNARY_OPS_BY_TOKEN:
                if not stack:
                    raise LiftError(f"stack underflow at operator {token!r}")
                stack.append(cs.unop(UNARY_OPS_BY_TOKEN[token], stack.pop()))
            else:
                stack.append(self._leaf(token))
        return stack

    def _single(self, tokens: Sequence[str], what: str) -> AstNode:
        items = self.decode_expressions(tokens)
        if len(items) != 1:
            kind = "underflow" if not items else "overflow"
            raise LiftError(f"stack {kind} decoding {what}: {len(items)} values")
        return items[0]

    def _callee(self, token: str) -> str:
        index = self.call_index
        self.call_index += 1
        if token != FUNC:
            return token
        name = self._take(FUNC)
        if name is not None:
            return name
        if self.renaming is not None and index < len(self.renaming.functions):
            return self.renaming.functions[index]
        return f"func{index}"

    def _statement(self, line: SeamLine) -> AstNode:
        toks = line.tokens
        kind = line.kind
        if kind == DECL:
            if len(toks) != 3 or toks[1] not in TYPES_BY_TOKEN or not is_var_token(toks[2]):
                raise LiftError(f"malformed DECL line: {line.text}")
            type_ = TYPES_BY_TOKEN[toks[1]]
            if var_token_type(toks[2]) != type_:
                self.diagnostics.append(f"DECL type {toks[1]} disagrees with token {toks[2]}")
            self.declared[toks[2]] = type_
            return cs.decl(self._name(toks[2]), type_)
        if kind == ASSIGN:
            if len(toks) < 4 or toks[-1] != EQUALS or not is_var_token(toks[1]):
                raise LiftError(f"malformed ASSIGN line: {line.text}")
            target = self._var(toks[1])
            return cs.assign(target, self._single(toks[2:-1], "assignment"))
        if kind == CALL:
            if len(toks) < 2:
                raise LiftError("CALL line without callee")
            args = self.decode_expressions(toks[1:-1])
            if len(args) > 4:
                raise LiftError(f"call with {len(args)} arguments")
            return cs.call(self._callee(toks[-1]), args)
        if kind == RET:
            if len(toks) == 1:
                return cs.ret()
            return cs.ret(self._single(toks[1:], "return value"))
        raise LiftError(f"unexpected {kind} line")

    def lift(self, lines: Sequence[SeamLine]) -> AstNode:
        # frames: [kind, cond, then-stmts, else-stmts or None]
        root: List[AstNode] = []
        frames: List[list] = []

        def current() -> List[AstNode]:
            if not frames:
                return root
            frame = frames[-1]
            return frame[3] if frame[3] is not None else frame[2]

        for line in lines:
            kind = line.kind
            if kind in (IF, WHILE):
                cond = self._single(line.tokens[1:], f"{kind} condition")
                frames.append([kind, cond, [], None])
            elif kind == ELSE:
                if not frames or frames[-1][0] != IF or frames[-1][3] is not None:
                    raise LiftError("ELSE without matching IF")
                frames[-1][3] = []
            elif kind == END:
                if not frames:
                    raise LiftError("END without open IF/WHILE")
                opener, cond, then, orelse = frames.pop()
                if opener == IF:
                    stmt = cs.if_(cond, cs.block(then), cs.block(orelse) if orelse is not None else None)
                else:
                    stmt = cs.while_(cond, cs.block(then))
                current().append(stmt)
            else:
                current().append(self._statement(line))
        if frames:
            raise LiftError(f"{len(frames)} unclosed IF/WHILE block(s)")

        for kind, queue in self.queues.items():
            surplus = len(queue) - self.cursor[kind]
            if surplus > 0:
                self.diagnostics.append(f"{surplus} unused {kind} literal(s)")

        missing = [tok for tok in self.used_vars if tok not in self.declared]
        missing.sort(key=lambda t: (cs.TYPE_ORDER.index(var_token_type(t)), var_token_index(t)))
        decls = [cs.decl(self._name(tok), var_token_type(tok)) for tok in missing]
        for message in self.diagnostics:
            logging.debug(f"Lift diagnostic: {message}")
        return cs.block(decls + root)


def lift(lines: Sequence[SeamLine], literals: Sequence[Literal] = (),
         renaming: Optional[RenamingMap] = None) -> AstNode:
    return Lifter(literals, renaming).lift(lines)
