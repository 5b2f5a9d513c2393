"""C subset: typed AST, parser, printer and seeded random program generator.

Grammar (see docs/grammar.md):

    program   := [ "int" IDENT "(" "void" ")" ] block-body | stmt*
    decl      := type IDENT { "," IDENT } ";"
    stmt      := IDENT "=" expr ";" | IDENT "(" [ arg { "," arg } ] ")" ";"
               | "if" "(" expr ")" body [ "else" body ]
               | "while" "(" expr ")" body | "return" [ expr ] ";"
    body      := "{" { decl | stmt } "}" | stmt
"""
import re
import random
import logging
from enum import Enum
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from seamdec.constants import MAX_EXPR_DEPTH, MAX_VARS_PER_TYPE
from seamdec.errors import CSyntaxError, UnsupportedConstruct


class TypeTag(str, Enum):
    INT = "int"
    LONG = "long"
    UNSIGNED = "unsigned"

    @property
    def rank(self) -> int:
        return _TYPE_RANK[self]


_TYPE_RANK = {TypeTag.INT: 0, TypeTag.UNSIGNED: 1, TypeTag.LONG: 2}
TYPE_ORDER = (TypeTag.INT, TypeTag.LONG, TypeTag.UNSIGNED)


class Kind(str, Enum):
    DECL = "DECL"
    ASSIGN = "ASSIGN"
    BINOP = "BINOP"
    UNOP = "UNOP"
    VARREF = "VARREF"
    CONST_INT = "CONST_INT"
    CONST_STR = "CONST_STR"
    IF = "IF"
    WHILE = "WHILE"
    CALL = "CALL"
    RETURN = "RETURN"
    BLOCK = "BLOCK"


ARITH_OPS = ("+", "-", "*", "/", "%", "<<", ">>", "&", "|", "^")
DIVISION_OPS = ("/", "%")
COMPARE_OPS = ("<", ">", "<=", ">=", "==", "!=")
LOGIC_OPS = ("&&", "||")
BINARY_OPS = ARITH_OPS + COMPARE_OPS + LOGIC_OPS
UNARY_OPS = ("!", "-")

PRECEDENCE: Dict[str, int] = {
    "||": 1, "&&": 2, "|": 3, "^": 4, "&": 5,
    "==": 6, "!=": 6,
    "<": 7, ">": 7, "<=": 7, ">=": 7,
    "<<": 8, ">>": 8,
    "+": 9, "-": 9,
    "*": 10, "/": 10, "%": 10,
}
UNARY_PRECEDENCE = 11
ATOM_PRECEDENCE = 12

INT_MAX = 2 ** 31 - 1
LONG_MAX = 2 ** 63 - 1


@dataclass(frozen=True)
class AstNode:
    """Immutable node of the C subset AST."""
    kind: Kind
    op: Optional[str] = None
    type: Optional[TypeTag] = None
    name: Optional[str] = None
    value: Union[int, str, None] = None
    children: Tuple["AstNode", ...] = ()
    # Source spelling of integer constants ("0x400400"); not part of equality
    spelling: Optional[str] = field(default=None, compare=False)

    def walk(self) -> Iterator["AstNode"]:
        """Pre-order traversal."""
        yield self
        for child in self.children:
            yield from child.walk()

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(c.depth() for c in self.children)

    @property
    def is_expression(self) -> bool:
        return self.kind in (Kind.BINOP, Kind.UNOP, Kind.VARREF, Kind.CONST_INT, Kind.CONST_STR)


# ---------------------------------------------------------------------------
# Node constructors (shared by parser, generator and lifter)
# ---------------------------------------------------------------------------
def arith_result(left: TypeTag, right: TypeTag) -> TypeTag:
    return left if left.rank >= right.rank else right


def var(name: str, type_: TypeTag) -> AstNode:
    return AstNode(Kind.VARREF, type=type_, name=name)


def const(value: int, spelling: Optional[str] = None) -> AstNode:
    if value > LONG_MAX:
        raise UnsupportedConstruct("integer constant wider than 64 bits")
    type_ = TypeTag.INT if value <= INT_MAX else TypeTag.LONG
    if spelling is not None and spelling == str(value):
        spelling = None
    return AstNode(Kind.CONST_INT, type=type_, value=value, spelling=spelling)


def string(text: str) -> AstNode:
    return AstNode(Kind.CONST_STR, value=text)


def binop(op: str, left: AstNode, right: AstNode) -> AstNode:
    if op not in BINARY_OPS:
        raise UnsupportedConstruct(f"operator {op}")
    if op in COMPARE_OPS or op in LOGIC_OPS:
        type_ = TypeTag.INT
    elif op in ("<<", ">>"):
        type_ = left.type or TypeTag.INT
    else:
        type_ = arith_result(left.type or TypeTag.INT, right.type or TypeTag.INT)
    return AstNode(Kind.BINOP, op=op, type=type_, children=(left, right))


def unop(op: str, operand: AstNode) -> AstNode:
    if op not in UNARY_OPS:
        raise UnsupportedConstruct(f"unary operator {op}")
    type_ = TypeTag.INT if op == "!" else (operand.type or TypeTag.INT)
    return AstNode(Kind.UNOP, op=op, type=type_, children=(operand,))


def decl(name: str, type_: TypeTag) -> AstNode:
    return AstNode(Kind.DECL, type=type_, name=name)


def assign(target: AstNode, value: AstNode) -> AstNode:
    return AstNode(Kind.ASSIGN, type=target.type, children=(target, value))


def call(name: str, args: Sequence[AstNode]) -> AstNode:
    return AstNode(Kind.CALL, name=name, children=tuple(args))


def ret(value: Optional[AstNode] = None) -> AstNode:
    return AstNode(Kind.RETURN, children=(value,) if value is not None else ())


def block(stmts: Sequence[AstNode], name: Optional[str] = None) -> AstNode:
    return AstNode(Kind.BLOCK, name=name, children=tuple(stmts))


def if_(cond: AstNode, then: AstNode, orelse: Optional[AstNode] = None) -> AstNode:
    children = (cond, then) if orelse is None else (cond, then, orelse)
    return AstNode(Kind.IF, children=children)


def while_(cond: AstNode, body: AstNode) -> AstNode:
    return AstNode(Kind.WHILE, children=(cond, body))


def declared_variables(ast: AstNode) -> List[Tuple[str, TypeTag]]:
    return [(n.name, n.type) for n in ast.walk() if n.kind == Kind.DECL]


def callees(ast: AstNode) -> List[str]:
    """Callee names in call order."""
    return [n.name for n in ast.walk() if n.kind == Kind.CALL]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Token:
    typ: str
    lexeme: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<char>'(?:[^'\\\n]|\\.)*')
  | (?P<number>0[xX][0-9a-fA-F]+[uUlL]*|[0-9]+[uUlL]*|[0-9]*\.[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\+\+|--|\+=|-=|\*=|/=|%=|&=|\|=|\^=|<<=|>>=|->|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%<>=!&|^~?:;,(){}\[\].\#])
""", re.VERBOSE | re.DOTALL)

TYPE_WORDS = {"int", "long", "unsigned"}
KEYWORDS = TYPE_WORDS | {"if", "else", "while", "return", "void"}

# Lexemes that are valid C but outside the subset, reported by construct name
UNSUPPORTED_WORDS = {
    "for": "for loop", "do": "do-while loop", "switch": "switch statement",
    "case": "switch statement", "default": "switch statement", "goto": "goto",
    "break": "break", "continue": "continue", "struct": "struct", "union": "union",
    "enum": "enum", "typedef": "typedef", "char": "char type", "short": "short type",
    "float": "floating point", "double": "floating point", "signed": "signed qualifier",
    "const": "qualifier", "volatile": "qualifier", "static": "storage class",
    "extern": "storage class", "register": "storage class", "sizeof": "sizeof",
}
UNSUPPORTED_OPS = {
    "++": "increment", "--": "decrement", "+=": "compound assignment",
    "-=": "compound assignment", "*=": "compound assignment", "/=": "compound assignment",
    "%=": "compound assignment", "&=": "compound assignment", "|=": "compound assignment",
    "^=": "compound assignment", "<<=": "compound assignment", ">>=": "compound assignment",
    "->": "pointer member access", ".": "member access", "[": "array", "]": "array",
    "~": "bitwise complement", "?": "conditional expression", ":": "label or conditional",
    "#": "preprocessor directive",
}


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise CSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        lexeme = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "comment":
            newlines = lexeme.count("\n")
            if newlines:
                line += newlines
                line_start = pos + lexeme.rfind("\n") + 1
        elif kind == "ws":
            pass
        elif kind == "char":
            raise UnsupportedConstruct("character literal", line, col)
        elif kind == "number":
            if re.search(r"[uUlL.]", lexeme):
                raise UnsupportedConstruct("suffixed or floating constant", line, col)
            tokens.append(Token("number", lexeme, line, col))
        elif kind == "ident":
            if lexeme in UNSUPPORTED_WORDS:
                raise UnsupportedConstruct(UNSUPPORTED_WORDS[lexeme], line, col)
            typ = lexeme if lexeme in KEYWORDS else "ident"
            tokens.append(Token(typ, lexeme, line, col))
        elif kind == "string":
            tokens.append(Token("string", lexeme[1:-1], line, col))
        else:
            if lexeme in UNSUPPORTED_OPS:
                raise UnsupportedConstruct(UNSUPPORTED_OPS[lexeme], line, col)
            tokens.append(Token(lexeme, lexeme, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
_BINARY_LEVELS: List[Tuple[str, ...]] = [
    ("||",), ("&&",), ("|",), ("^",), ("&",), ("==", "!="),
    ("<", ">", "<=", ">="), ("<<", ">>"), ("+", "-"), ("*", "/", "%"),
]


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.scopes: List[Dict[str, TypeTag]] = []
        self.type_counts: Dict[TypeTag, int] = {t: 0 for t in TypeTag}
        self.declared: set = set()

    # token helpers
    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.typ != "eof":
            self.pos += 1
        return tok

    def expect(self, typ: str) -> Token:
        tok = self.next()
        if tok.typ != typ:
            found = tok.lexeme or "end of input"
            raise CSyntaxError(f"expected '{typ}', found '{found}'", tok.line, tok.col)
        return tok

    def accept(self, typ: str) -> bool:
        if self.peek().typ == typ:
            self.pos += 1
            return True
        return False

    def lookup(self, tok: Token) -> TypeTag:
        for scope in reversed(self.scopes):
            if tok.lexeme in scope:
                return scope[tok.lexeme]
        raise CSyntaxError(f"use of undeclared identifier '{tok.lexeme}'", tok.line, tok.col)

    # program structure
    def parse_program(self) -> AstNode:
        name = None
        if (self.peek().typ == "int" and self.peek(1).typ == "ident"
                and self.peek(2).typ == "("):
            self.next()
            name = self.next().lexeme
            self.expect("(")
            self.accept("void")
            self.expect(")")
            self.expect("{")
            root = self.parse_block_items("}", name)
            self.expect("}")
        else:
            root = self.parse_block_items("eof", None)
        self.expect("eof")
        return root

    def parse_block_items(self, closer: str, name: Optional[str]) -> AstNode:
        self.scopes.append({})
        stmts: List[AstNode] = []
        while self.peek().typ not in (closer, "eof"):
            if self.peek().typ in TYPE_WORDS:
                stmts.extend(self.parse_decl())
            else:
                stmts.append(self.parse_stmt())
        self.scopes.pop()
        return block(stmts, name)

    def parse_type(self) -> TypeTag:
        tok = self.next()
        if tok.typ == "unsigned":
            self.accept("int")
            return TypeTag.UNSIGNED
        if tok.typ == "long":
            if self.peek().typ == "long":
                raise UnsupportedConstruct("long long", tok.line, tok.col)
            self.accept("int")
            return TypeTag.LONG
        if tok.typ == "int":
            return TypeTag.INT
        raise CSyntaxError(f"expected type, found '{tok.lexeme}'", tok.line, tok.col)

    def parse_decl(self) -> List[AstNode]:
        type_ = self.parse_type()
        out = []
        while True:
            if self.peek().typ == "*":
                tok = self.peek()
                raise UnsupportedConstruct("pointer", tok.line, tok.col)
            tok = self.expect("ident")
            if self.peek().typ == "=":
                nxt = self.peek()
                raise UnsupportedConstruct("initializer", nxt.line, nxt.col)
            if self.peek().typ == "(":
                raise UnsupportedConstruct("function declaration", tok.line, tok.col)
            if tok.lexeme in self.declared:
                raise UnsupportedConstruct(f"redeclaration of '{tok.lexeme}'", tok.line, tok.col)
            self.declared.add(tok.lexeme)
            self.type_counts[type_] += 1
            if self.type_counts[type_] > MAX_VARS_PER_TYPE:
                raise UnsupportedConstruct(
                    f"more than {MAX_VARS_PER_TYPE} variables of type {type_.value}", tok.line, tok.col)
            self.scopes[-1][tok.lexeme] = type_
            out.append(decl(tok.lexeme, type_))
            if not self.accept(","):
                break
        self.expect(";")
        return out

    def parse_body(self) -> AstNode:
        if self.accept("{"):
            body = self.parse_block_items("}", None)
            self.expect("}")
            return body
        return block([self.parse_stmt()])

    def parse_stmt(self) -> AstNode:
        tok = self.peek()
        if tok.typ == "if":
            self.next()
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            then = self.parse_body()
            orelse = self.parse_body() if self.accept("else") else None
            return if_(cond, then, orelse)
        if tok.typ == "while":
            self.next()
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            return while_(cond, self.parse_body())
        if tok.typ == "return":
            self.next()
            if self.accept(";"):
                return ret()
            value = self.parse_expr()
            self.expect(";")
            return ret(value)
        if tok.typ == "ident":
            if self.peek(1).typ == "(":
                return self.parse_call()
            self.next()
            target = var(tok.lexeme, self.lookup(tok))
            if self.peek().typ != "=":
                nxt = self.peek()
                raise CSyntaxError(f"expected '=', found '{nxt.lexeme}'", nxt.line, nxt.col)
            self.next()
            value = self.parse_expr()
            self.expect(";")
            return assign(target, value)
        if tok.typ == ";":
            raise UnsupportedConstruct("empty statement", tok.line, tok.col)
        raise CSyntaxError(f"unexpected '{tok.lexeme or 'end of input'}'", tok.line, tok.col)

    def parse_call(self) -> AstNode:
        name_tok = self.next()
        self.expect("(")
        args: List[AstNode] = []
        if self.peek().typ != ")":
            while True:
                if self.peek().typ == "string":
                    args.append(string(self.next().lexeme))
                else:
                    args.append(self.parse_expr())
                if not self.accept(","):
                    break
        self.expect(")")
        self.expect(";")
        if len(args) > 4:
            raise UnsupportedConstruct("call with more than 4 arguments", name_tok.line, name_tok.col)
        return call(name_tok.lexeme, args)

    def parse_expr(self) -> AstNode:
        start = self.peek()
        expr = self.parse_binary(0)
        if expr.depth() > MAX_EXPR_DEPTH:
            raise UnsupportedConstruct(f"expression deeper than {MAX_EXPR_DEPTH}", start.line, start.col)
        return expr

    def parse_binary(self, level: int) -> AstNode:
        if level == len(_BINARY_LEVELS):
            return self.parse_unary()
        left = self.parse_binary(level + 1)
        while self.peek().typ in _BINARY_LEVELS[level]:
            op = self.next().typ
            right = self.parse_binary(level + 1)
            left = binop(op, left, right)
        return left

    def parse_unary(self) -> AstNode:
        tok = self.peek()
        if tok.typ in UNARY_OPS:
            self.next()
            return unop(tok.typ, self.parse_unary())
        if tok.typ in ("&", "*"):
            raise UnsupportedConstruct("pointer", tok.line, tok.col)
        return self.parse_primary()

    def parse_primary(self) -> AstNode:
        tok = self.next()
        if tok.typ == "number":
            return const(int_literal(tok.lexeme), tok.lexeme)
        if tok.typ == "ident":
            if self.peek().typ == "(":
                raise UnsupportedConstruct("call inside expression", tok.line, tok.col)
            return var(tok.lexeme, self.lookup(tok))
        if tok.typ == "(":
            if self.peek().typ in TYPE_WORDS:
                raise UnsupportedConstruct("cast", tok.line, tok.col)
            inner = self.parse_binary(0)
            self.expect(")")
            return inner
        if tok.typ == "string":
            raise UnsupportedConstruct("string outside call argument", tok.line, tok.col)
        raise CSyntaxError(f"unexpected '{tok.lexeme or 'end of input'}' in expression", tok.line, tok.col)


def int_literal(lexeme: str) -> int:
    """Value of a decimal, hex or octal integer literal."""
    if len(lexeme) > 1 and lexeme[0] == "0" and lexeme[1] not in "xX":
        return int(lexeme, 8)
    return int(lexeme, 0)


def parse_c(text: str) -> AstNode:
    """Parse C subset source into a BLOCK node."""
    return _Parser(text).parse_program()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------
def _precedence(node: AstNode) -> int:
    if node.kind == Kind.BINOP:
        return PRECEDENCE[node.op]
    if node.kind == Kind.UNOP:
        return UNARY_PRECEDENCE
    return ATOM_PRECEDENCE


def print_expr(node: AstNode) -> str:
    if node.kind == Kind.VARREF:
        return node.name
    if node.kind == Kind.CONST_INT:
        return node.spelling or str(node.value)
    if node.kind == Kind.CONST_STR:
        return f'"{node.value}"'
    if node.kind == Kind.UNOP:
        operand = node.children[0]
        text = print_expr(operand)
        if operand.kind in (Kind.BINOP, Kind.UNOP):
            text = f"({text})"
        return f"{node.op}{text}"
    if node.kind == Kind.BINOP:
        prec = PRECEDENCE[node.op]
        left, right = node.children
        ltext, rtext = print_expr(left), print_expr(right)
        if _precedence(left) < prec:
            ltext = f"({ltext})"
        if _precedence(right) <= prec:
            rtext = f"({rtext})"
        return f"{ltext} {node.op} {rtext}"
    raise UnsupportedConstruct(f"{node.kind.value} in expression")


def print_lines(ast: AstNode, indent: int = 0) -> List[str]:
    """Render statements one per line; control headers and closers get their own lines."""
    pad = "    " * indent
    kind = ast.kind
    if kind == Kind.BLOCK:
        out: List[str] = []
        for stmt in ast.children:
            out.extend(print_lines(stmt, indent))
        return out
    if kind == Kind.DECL:
        return [f"{pad}{ast.type.value} {ast.name};"]
    if kind == Kind.ASSIGN:
        target, value = ast.children
        return [f"{pad}{target.name} = {print_expr(value)};"]
    if kind == Kind.CALL:
        args = ", ".join(print_expr(a) for a in ast.children)
        return [f"{pad}{ast.name}({args});"]
    if kind == Kind.RETURN:
        if ast.children:
            return [f"{pad}return {print_expr(ast.children[0])};"]
        return [f"{pad}return;"]
    if kind == Kind.IF:
        out = [f"{pad}if ({print_expr(ast.children[0])}) {{"]
        out.extend(print_lines(ast.children[1], indent + 1))
        if len(ast.children) == 3:
            out.append(f"{pad}}} else {{")
            out.extend(print_lines(ast.children[2], indent + 1))
        out.append(f"{pad}}}")
        return out
    if kind == Kind.WHILE:
        out = [f"{pad}while ({print_expr(ast.children[0])}) {{"]
        out.extend(print_lines(ast.children[1], indent + 1))
        out.append(f"{pad}}}")
        return out
    raise UnsupportedConstruct(f"{kind.value} as statement")


def print_c(ast: AstNode) -> str:
    if ast.kind == Kind.BLOCK and ast.name:
        body = print_lines(ast, 1)
        return "\n".join([f"int {ast.name}(void) {{", *body, "}"]) + "\n"
    lines = print_lines(ast)
    return "\n".join(lines) + "\n" if lines else ""


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------
class StmtKind(str, Enum):
    EXPRESSION = "expression"
    IF = "if"
    WHILE = "while"
    CALL = "call"


@dataclass(frozen=True)
class GenSpec:
    kind: StmtKind
    level: int
    seed: int
    statements: int = 1
    with_return: bool = False

    def __post_init__(self):
        if self.level not in (0, 1, 2):
            raise ValueError(f"complexity level must be 0, 1 or 2, got {self.level}")
        if self.statements < 1:
            raise ValueError("statement count must be >= 1")


COUNTER_NAMES = ("i", "j", "k", "idx")
BOUND_NAMES = ("n", "size", "len", "count", "limit")
GENERAL_NAMES = (
    "a", "b", "c", "d", "e", "x", "y", "z", "sum", "tmp", "val", "res", "num1", "num2",
    "total", "prod", "diff", "acc", "m", "p", "q", "r", "s", "t", "w", "key", "mask",
    "flag", "lo", "hi", "mid", "base", "step", "num", "avg", "cur", "prev", "result",
)
FUNCTION_NAMES = ("foo", "bar", "compute", "update", "check", "process", "qpow", "helper", "report")
PRINTF = "printf"
STRINGS = ("You Win!", "done", "value: %d", "%d %d", "error", "result=%d", "hello")


class _Var:
    """Abstract generator variable; named once roles are known."""

    def __init__(self, uid: int, type_: TypeTag):
        self.uid = uid
        self.type = type_
        self.role = "general"
        self.name = ""


class ProgramGenerator:
    """Seeded random program builder for one GenSpec."""

    CONST_PROB = 0.25
    UNARY_PROB = 0.08

    def __init__(self, spec: GenSpec):
        self.spec = spec
        self.rng = random.Random(f"{spec.kind.value}:{spec.level}:{spec.seed}")
        size = self.rng.randint(3, 8)
        self.pool = [_Var(i, self._draw_type()) for i in range(size)]
        self.used: List[_Var] = []

    def _draw_type(self) -> TypeTag:
        return self.rng.choices(TYPE_ORDER, weights=(6, 2, 2))[0]

    # leaves and expressions are built as nested tuples first, nodes later
    def _use(self, v: _Var) -> _Var:
        if v not in self.used:
            self.used.append(v)
        return v

    def _pick_var(self, exclude: Sequence[_Var] = ()) -> _Var:
        choices = [v for v in self.pool if v not in exclude] or self.pool
        return self._use(self.rng.choice(choices))

    def _const_for(self, op: Optional[str], right: bool) -> int:
        if right and op in ("<<", ">>"):
            return self.rng.randint(0, 31)
        if right and op in DIVISION_OPS:
            return self.rng.randint(1, INT_MAX)
        return self.rng.randint(0, INT_MAX)

    def _leaf(self, op: Optional[str] = None, right: bool = False, allow_const: bool = True):
        # divisors are always nonzero constants
        if right and op in DIVISION_OPS:
            return ("const", self._const_for(op, right))
        if allow_const and self.rng.random() < self.CONST_PROB:
            return ("const", self._const_for(op, right))
        leaf = ("var", self._pick_var())
        if self.spec.level > 0 and self.rng.random() < self.UNARY_PROB:
            return ("unop", self.rng.choice(UNARY_OPS), leaf)
        return leaf

    def _small_exp(self):
        inner = self.rng.choice(ARITH_OPS)
        exp = ("binop", inner, self._leaf(), self._leaf(inner, True))
        if self.spec.level == 2 and self.rng.random() < 0.3:
            outer = self.rng.choice(ARITH_OPS)
            exp = ("binop", outer, exp, self._leaf(outer, True))
        return exp

    def _shape(self, op: str):
        level = self.spec.level
        left = self._small_exp() if level == 2 else ("var", self._pick_var())
        if op in DIVISION_OPS:
            right = ("const", self._const_for(op, True))
        elif level == 0:
            right = ("var", self._pick_var())
        else:
            right = self._small_exp()
        return left, right

    def _expression_stmt(self):
        target = self._pick_var()
        # level 0 stays var op var, so it never divides
        ops = ARITH_OPS if self.spec.level > 0 else tuple(o for o in ARITH_OPS if o not in DIVISION_OPS)
        op = self.rng.choice(ops)
        left, right = self._shape(op)
        return ("assign", target, ("binop", op, left, right))

    def _condition(self):
        if self.spec.level == 2 and self.rng.random() < 0.25:
            first, second = (
                ("binop", self.rng.choice(COMPARE_OPS), ("var", self._pick_var()), ("var", self._pick_var()))
                for _ in range(2)
            )
            return ("binop", self.rng.choice(LOGIC_OPS), first, second)
        op = self.rng.choice(COMPARE_OPS)
        left, right = self._shape(op)
        return ("binop", op, left, right)

    def _if_stmt(self):
        cond = self._condition()
        then = [self._simple_assign() for _ in range(self.rng.randint(1, 2))]
        orelse = None
        if self.rng.random() < 0.3:
            orelse = [self._simple_assign() for _ in range(self.rng.randint(1, 2))]
        return ("if", cond, then, orelse)

    def _simple_assign(self):
        target = self._pick_var()
        op = self.rng.choice(ARITH_OPS)
        if self.rng.random() < 0.2:
            return ("assign", target, ("const", self._const_for(None, False)))
        return ("assign", target, ("binop", op, ("var", self._pick_var()), self._leaf(op, True)))

    def _while_stmt(self):
        counter = self._pick_var()
        counter.role = "counter"
        op = self.rng.choice(("<", "<=", "!=", ">", ">="))
        level = self.spec.level
        bound = self._pick_var(exclude=[counter])
        if bound.role == "general":
            bound.role = "bound"
        if level == 0:
            left, right = ("var", counter), ("var", bound)
        elif level == 1:
            arith = self.rng.choice(("+", "-", "*", "/"))
            left, right = ("var", counter), ("binop", arith, ("var", bound), self._leaf(arith, True))
        else:
            arith = self.rng.choice(("+", "-", "*"))
            left = ("binop", arith, ("var", counter), self._leaf(arith, True))
            arith2 = self.rng.choice(("+", "-", "*", "/"))
            right = ("binop", arith2, ("var", bound), self._leaf(arith2, True))
        body = [self._simple_assign() for _ in range(self.rng.randint(0, 2))]
        step = self.rng.choice(("+", "-")) if op in ("!=",) else ("+" if op in ("<", "<=") else "-")
        body.append(("assign", counter, ("binop", step, ("var", counter), ("const", 1))))
        return ("while", ("binop", op, left, right), body)

    def _call_stmt(self):
        level = self.spec.level
        if self.rng.random() < 0.3:
            name = PRINTF
            args = [("str", self.rng.choice(STRINGS))]
            extra = self.rng.randint(0, 3)
        else:
            name = self.rng.choice(FUNCTION_NAMES)
            args = []
            extra = self.rng.randint(0, 4)
        for n in range(extra):
            if level == 0 or (level == 1 and n > 0):
                args.append(self._leaf())
            else:
                args.append(self._small_exp())
        return ("call", name, args)

    def _name_variables(self) -> None:
        taken = set()
        for role, pool in (("counter", COUNTER_NAMES), ("bound", BOUND_NAMES), ("general", GENERAL_NAMES)):
            members = [v for v in self.used if v.role == role]
            options = [n for n in pool if n not in taken]
            if len(options) < len(members):
                options += [n for n in GENERAL_NAMES if n not in taken and n not in options]
            names = self.rng.sample(options, len(members))
            for v, name in zip(members, names):
                v.name = name
                taken.add(name)

    def _node(self, item) -> AstNode:
        tag = item[0]
        if tag == "var":
            return var(item[1].name, item[1].type)
        if tag == "const":
            return const(item[1])
        if tag == "str":
            return string(item[1])
        if tag == "unop":
            return unop(item[1], self._node(item[2]))
        if tag == "binop":
            return binop(item[1], self._node(item[2]), self._node(item[3]))
        if tag == "assign":
            return assign(var(item[1].name, item[1].type), self._node(item[2]))
        if tag == "if":
            then = block([self._node(s) for s in item[2]])
            orelse = block([self._node(s) for s in item[3]]) if item[3] is not None else None
            return if_(self._node(item[1]), then, orelse)
        if tag == "while":
            return while_(self._node(item[1]), block([self._node(s) for s in item[2]]))
        if tag == "call":
            return call(item[1], [self._node(a) for a in item[2]])
        if tag == "return":
            return ret(var(item[1].name, item[1].type))
        raise ValueError(f"unknown generator item {tag}")

    def generate(self) -> AstNode:
        builders = {
            StmtKind.EXPRESSION: self._expression_stmt,
            StmtKind.IF: self._if_stmt,
            StmtKind.WHILE: self._while_stmt,
            StmtKind.CALL: self._call_stmt,
        }
        items = [builders[self.spec.kind]() for _ in range(self.spec.statements)]
        if self.spec.with_return:
            items.append(("return", self._pick_var()))
        self._name_variables()
        decls = []
        for type_ in TYPE_ORDER:
            decls.extend(decl(v.name, v.type) for v in self.used if v.type == type_)
        return block(decls + [self._node(i) for i in items])


def gen_random_program(spec: GenSpec) -> AstNode:
    """Pure function of `spec`: identical specs yield identical programs."""
    program = ProgramGenerator(spec).generate()
    logging.debug(f"Generated {spec.kind.value}/L{spec.level} program for seed {spec.seed}")
    return program
