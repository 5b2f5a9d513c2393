"""Intel-syntax x86-64 assembly: parsing, statement canonicalization and literal back-fill."""
import re
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from seamdec.constants import INSN_SEP
from seamdec.errors import AsmParseError, CanonicalizationError
from seamdec.seamcode import FUNC, IMM, STR, UP, DOWN, Literal

INSTRUCTION_BYTES = 4

MNEMONICS = frozenset("""
    mov movzx movsx movsxd movabs lea add sub imul mul idiv div neg not and or xor
    shl shr sar sal rol ror cmp test cdq cqo cdqe cwde push pop call ret leave nop endbr64
    sete setne setl setg setle setge setb seta setbe setae setz setnz
    setnb setna setnae setnbe setnl setng setnle setnge setc setnc
    jmp je jne jl jg jle jge jb ja jbe jae jz jnz js jns
    jnb jna jnae jnbe jnl jng jnle jnge jc jnc
""".split())
SHIFT_MNEMONICS = frozenset({"shl", "shr", "sar", "sal", "rol", "ror"})
SIZE_WORDS = frozenset({"BYTE", "WORD", "DWORD", "QWORD", "PTR"})

# Canonical atoms accepted on re-parse
NVEC = "NVEC"
SHIFT_TOKEN_RE = re.compile(r"^SH\d+$")
CANONICAL_ATOMS = frozenset({IMM, STR, FUNC, UP, DOWN, NVEC})

IGNORED_DIRECTIVES = frozenset("""
    .text .data .bss .section .globl .global .local .weak .type .size .align .balign .p2align
    .file .ident .intel_syntax .att_syntax .string .ascii .asciz .long .quad .byte .value .short
    .word .zero .comm .lcomm .uleb128 .sleb128 .set .hidden .loc_mark_labels .previous .popsection
    .pushsection .addrsig .addrsig_sym .note
""".split())

_OPERAND_TOKEN_RE = re.compile(r"\[|\]|\+|-|\*|:|0[xX][0-9a-fA-F]+|\d+|[A-Za-z_.$@][\w.$@]*")
_NUMBER_RE = re.compile(r"^-?(0[xX][0-9a-fA-F]+|\d+)$")
_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$@]*):\s*(.*)$")
_STRING_DIRECTIVE_RE = re.compile(r'^\.(?:string|asciz|ascii)\s+"((?:[^"\\]|\\.)*)"')


@dataclass(frozen=True)
class AsmInstruction:
    address: int
    mnemonic: str
    operands: Tuple[Tuple[str, ...], ...]
    raw: str
    line: Optional[int] = None
    target: Optional[int] = None
    symbol: Optional[str] = None

    @property
    def operand_tokens(self) -> List[str]:
        return [tok for op in self.operands for tok in op]

    @property
    def is_branch(self) -> bool:
        return self.mnemonic.startswith("j")

    @property
    def is_call(self) -> bool:
        return self.mnemonic == "call"


@dataclass
class AsmFunction:
    name: str
    instructions: List[AsmInstruction]
    strings: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instructions)


@dataclass(frozen=True)
class CanonicalInstruction:
    address: int
    mnemonic: str
    operands: Tuple[Tuple[str, ...], ...]
    direction: Optional[str] = None
    target: Optional[int] = None
    line: Optional[int] = None

    @property
    def tokens(self) -> List[str]:
        out = [self.mnemonic]
        for i, op in enumerate(self.operands):
            if i:
                out.append(",")
            out.extend(op)
        return out

    @property
    def operand_tokens(self) -> List[str]:
        return [tok for op in self.operands for tok in op]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------
def tokenize_operand(text: str) -> Tuple[str, ...]:
    return tuple(_OPERAND_TOKEN_RE.findall(text))


def _strip_comment(line: str) -> str:
    in_string = False
    escaped = False
    for i, ch in enumerate(line):
        if escaped:
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            return line[:i]
    return line


def _split_operands(text: str) -> List[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return parts


class AsmParser:
    """Line-oriented parser for compiler-emitted `.s` text."""

    def __init__(self, text: str):
        self.text = text
        self.functions: List[AsmFunction] = []
        self.strings: Dict[str, str] = {}
        self.section = "text"
        self.loc_line: Optional[int] = None
        self.last_label: Optional[str] = None
        self.current: Optional[dict] = None
        self.function_symbols: set = set()

    def _start_function(self, name: str) -> None:
        self._finish_function()
        self.current = {"name": name, "insns": [], "labels": {}, "pending": []}

    def _finish_function(self) -> None:
        cur = self.current
        if cur is None:
            return
        end_address = len(cur["insns"]) * INSTRUCTION_BYTES
        for label in cur["pending"]:
            cur["labels"][label] = end_address
        resolved: List[AsmInstruction] = []
        for insn, lineno in cur["insns"]:
            if insn.is_branch and insn.symbol is not None:
                if insn.symbol not in cur["labels"]:
                    raise AsmParseError(f"unresolvable label '{insn.symbol}'", lineno)
                insn = AsmInstruction(insn.address, insn.mnemonic, insn.operands, insn.raw,
                                      insn.line, cur["labels"][insn.symbol], insn.symbol)
            resolved.append(insn)
        self.functions.append(AsmFunction(cur["name"], resolved))
        self.current = None

    def _label(self, name: str) -> None:
        self.last_label = name
        if self.section != "text":
            return
        if not name.startswith(".L") and (name in self.function_symbols or self.current is None
                                         or not name.startswith(".")):
            self._start_function(name)
            return
        if self.current is None:
            self._start_function("<anonymous>")
        self.current["pending"].append(name)

    def _directive(self, body: str, lineno: int) -> None:
        name = body.split(None, 1)[0].rstrip(",")
        rest = body[len(name):].strip()
        if name == ".section":
            target = rest.split(",", 1)[0].strip()
            if target.startswith(".debug"):
                self.section = "debug"
            elif target.startswith(".text"):
                self.section = "text"
            elif target.startswith(".rodata"):
                self.section = "rodata"
            else:
                self.section = "other"
            return
        if name == ".text":
            self.section = "text"
            return
        if name in (".data", ".bss"):
            self.section = "data"
            return
        if name == ".loc":
            parts = rest.split()
            if len(parts) < 2 or not parts[1].isdigit():
                raise AsmParseError(f"malformed .loc directive '{body}'", lineno)
            self.loc_line = int(parts[1])
            return
        if name == ".type" and "function" in rest:
            self.function_symbols.add(rest.split(",", 1)[0].strip())
            return
        m = _STRING_DIRECTIVE_RE.match(body)
        if m and self.last_label is not None and self.section != "text":
            self.strings[self.last_label] = m.group(1)
            return
        if name in IGNORED_DIRECTIVES or name.startswith(".cfi_"):
            return
        raise AsmParseError(f"unknown directive '{name}'", lineno)

    def _instruction(self, body: str, lineno: int) -> None:
        parts = body.split(None, 1)
        mnemonic = parts[0].lower()
        if mnemonic not in MNEMONICS:
            raise AsmParseError(f"unknown mnemonic '{parts[0]}'", lineno)
        operand_text = parts[1] if len(parts) > 1 else ""
        operands = tuple(tokenize_operand(op) for op in _split_operands(operand_text))
        if self.current is None:
            self._start_function("<anonymous>")
        cur = self.current
        address = len(cur["insns"]) * INSTRUCTION_BYTES
        for label in cur["pending"]:
            cur["labels"][label] = address
        cur["pending"] = []
        symbol = None
        if mnemonic.startswith("j") or mnemonic == "call":
            flat = [t for op in operands for t in op]
            if len(flat) == 1 and flat[0] not in CANONICAL_ATOMS:
                symbol = flat[0]
        insn = AsmInstruction(address, mnemonic, operands, body, self.loc_line, None, symbol)
        cur["insns"].append((insn, lineno))

    def parse(self) -> List[AsmFunction]:
        for lineno, raw in enumerate(self.text.splitlines(), start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if self.section == "debug":
                if line.startswith(".section") or line.startswith(".text"):
                    self._directive(line, lineno)
                continue
            m = _LABEL_RE.match(line)
            if m and not line.startswith(".loc"):
                self._label(m.group(1))
                line = m.group(2).strip()
                if not line:
                    continue
            if line.startswith("."):
                self._directive(line, lineno)
            elif self.section == "text":
                self._instruction(line, lineno)
            else:
                raise AsmParseError(f"instruction outside text section: '{line}'", lineno)
        self._finish_function()
        for func in self.functions:
            func.strings = dict(self.strings)
        return self.functions


def parse_asm(text: str) -> List[AsmFunction]:
    """Parse assembly text into functions with resolved branch targets and `.loc` lines."""
    return AsmParser(text).parse()


def parse_function(text: str, name: Optional[str] = None) -> AsmFunction:
    """The named function, or the last parsed one (helpers precede `main`)."""
    functions = [f for f in parse_asm(text) if f.instructions or f.name != "<anonymous>"]
    if not functions:
        return AsmFunction(name or "<anonymous>", [])
    if name is None:
        return functions[-1]
    for func in functions:
        if func.name == name:
            return func
    raise AsmParseError(f"function '{name}' not found")


# ---------------------------------------------------------------------------
# Frame stripping
# ---------------------------------------------------------------------------
def strip_frame(func: AsmFunction) -> List[AsmInstruction]:
    """Drop prologue/epilogue instructions, by `.loc` lines when present."""
    insns = func.instructions
    if not insns:
        return []
    if all(i.line is not None for i in insns):
        header, closing = insns[0].line, insns[-1].line
        if header != closing:
            return [i for i in insns if i.line not in (header, closing)]
    start, end = 0, len(insns)
    if start < end and insns[start].mnemonic == "endbr64":
        start += 1
    if start < end and insns[start].mnemonic == "push" and insns[start].operand_tokens == ["rbp"]:
        start += 1
        if start < end and insns[start].mnemonic == "mov" and insns[start].operand_tokens == ["rbp", "rsp"]:
            start += 1
        if start < end and insns[start].mnemonic == "sub" and insns[start].operand_tokens[:1] == ["rsp"]:
            start += 1
    if end > start and insns[end - 1].mnemonic == "ret":
        end -= 1
        if end > start and (insns[end - 1].mnemonic == "leave"
                            or (insns[end - 1].mnemonic == "pop" and insns[end - 1].operand_tokens == ["rbp"])):
            end -= 1
    return list(insns[start:end])


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------
def _is_immediate(op: Sequence[str]) -> bool:
    return len(op) > 0 and _NUMBER_RE.match("".join(op)) is not None


def _string_symbol(op: Sequence[str]) -> Optional[str]:
    """`.LCk` referenced via OFFSET FLAT:.LCk or .LCk[rip]."""
    for tok in op:
        if tok.startswith(".LC"):
            return tok
    return None


def _canonical_memory(op: Sequence[str]) -> Tuple[str, ...]:
    open_at = op.index("[")
    close_at = len(op) - 1 - list(reversed(op)).index("]")
    prefix = [t for t in op[:open_at] if t in SIZE_WORDS]
    interior = "".join(op[open_at + 1:close_at])
    return tuple(prefix + ["[", interior, "]"])


def canonicalize_instruction(insn: AsmInstruction, strings: Dict[str, str], next_insn: Optional[AsmInstruction],
                             literals: List[Literal]) -> CanonicalInstruction:
    mnemonic = insn.mnemonic
    if insn.is_branch:
        flat = insn.operand_tokens
        if flat in ([UP], [DOWN]):
            return CanonicalInstruction(insn.address, mnemonic, ((flat[0],),), flat[0], insn.target, insn.line)
        if insn.target is None:
            raise CanonicalizationError(f"branch with unresolved target: {insn.raw}")
        direction = UP if insn.address < insn.target else DOWN
        return CanonicalInstruction(insn.address, mnemonic, ((direction,),), direction, insn.target, insn.line)
    if insn.is_call:
        flat = insn.operand_tokens
        if flat != [FUNC]:
            name = "".join(flat)
            if name.endswith("@PLT"):
                name = name[:-4]
            literals.append(Literal(FUNC, name))
        return CanonicalInstruction(insn.address, mnemonic, ((FUNC,),), None, None, insn.line)

    operands: List[Tuple[str, ...]] = []
    for index, op in enumerate(insn.operands):
        joined = "".join(op)
        if len(op) == 1 and (op[0] in CANONICAL_ATOMS or SHIFT_TOKEN_RE.match(op[0])):
            operands.append(op)
            continue
        symbol = _string_symbol(op)
        if symbol is not None:
            literals.append(Literal(STR, strings.get(symbol, symbol)))
            operands.append((STR,))
        elif "[" in op:
            operands.append(_canonical_memory(op))
        elif _is_immediate(op):
            if mnemonic in SHIFT_MNEMONICS:
                operands.append((f"SH{int(joined, 0)}",))
            elif (mnemonic == "mov" and index == 1 and insn.operands[0] == ("eax",)
                  and next_insn is not None and next_insn.is_call):
                operands.append((NVEC,))
            else:
                literals.append(Literal(IMM, joined))
                operands.append((IMM,))
        else:
            operands.append(tuple(op))
    return CanonicalInstruction(insn.address, mnemonic, tuple(operands), None, None, insn.line)


def canonicalize(insns: Sequence[AsmInstruction], strings: Optional[Dict[str, str]] = None
                 ) -> Tuple[List[CanonicalInstruction], List[Literal]]:
    """Replace immediates, strings, call targets and branch targets with placeholders."""
    strings = strings or {}
    literals: List[Literal] = []
    out = []
    for i, insn in enumerate(insns):
        nxt = insns[i + 1] if i + 1 < len(insns) else None
        out.append(canonicalize_instruction(insn, strings, nxt, literals))
    return out, literals


def canonical_text(insns: Iterable[CanonicalInstruction]) -> str:
    """One canonical instruction per line; parse_asm accepts it back."""
    return "\n".join(i.text for i in insns) + "\n"


def token_stream(insns: Iterable[CanonicalInstruction]) -> str:
    return f" {INSN_SEP} ".join(i.text for i in insns)


def has_literal_tokens(insns: Iterable[CanonicalInstruction]) -> bool:
    return any(_NUMBER_RE.match(tok) for i in insns for tok in i.tokens)


# ---------------------------------------------------------------------------
# Back-fill
# ---------------------------------------------------------------------------
@dataclass
class BackfillResult:
    tokens: List[str]
    diagnostics: List[str] = field(default_factory=list)


def concrete_token(literal: Literal) -> str:
    if literal.kind == STR:
        return f'"{literal.text}"'
    return literal.text


class Backfiller:
    """Positional per-kind literal substitution; keeps cursors across lines of one function."""

    def __init__(self, literals: Sequence[Literal]):
        self.queues: Dict[str, List[Literal]] = {IMM: [], STR: [], FUNC: []}
        for lit in literals:
            self.queues.setdefault(lit.kind, []).append(lit)
        self.cursor = {kind: 0 for kind in self.queues}
        self.diagnostics: List[str] = []

    def fill(self, tokens: Sequence[str]) -> List[str]:
        out = []
        for tok in tokens:
            queue = self.queues.get(tok)
            if queue is None:
                out.append(tok)
                continue
            pos = self.cursor[tok]
            if pos < len(queue):
                out.append(concrete_token(queue[pos]))
                self.cursor[tok] = pos + 1
            else:
                self.diagnostics.append(f"no harvested literal left for {tok} #{pos + 1}")
                out.append(tok)
        return out

    def surplus(self) -> Dict[str, int]:
        return {k: len(q) - self.cursor[k] for k, q in self.queues.items() if len(q) > self.cursor[k]}


def backfill(tokens: Sequence[str], literals: Sequence[Literal]) -> BackfillResult:
    filler = Backfiller(literals)
    filled = filler.fill(tokens)
    for message in filler.diagnostics:
        logging.debug(f"Backfill: {message}")
    return BackfillResult(filled, filler.diagnostics)


# ---------------------------------------------------------------------------
# Register and slot resources
# ---------------------------------------------------------------------------
_FAMILIES: Dict[str, str] = {}
for _base, _names in {
    "rax": "rax eax ax al ah", "rbx": "rbx ebx bx bl bh", "rcx": "rcx ecx cx cl ch",
    "rdx": "rdx edx dx dl dh", "rsi": "rsi esi si sil", "rdi": "rdi edi di dil",
}.items():
    for _n in _names.split():
        _FAMILIES[_n] = _base
for _k in range(8, 16):
    for _suffix in ("", "d", "w", "b"):
        _FAMILIES[f"r{_k}{_suffix}"] = f"r{_k}"
FRAME_REGISTERS = frozenset({"rbp", "ebp", "rsp", "esp", "rip"})
ARGUMENT_FAMILIES = ("rdi", "rsi", "rdx", "rcx", "r8", "r9")

IMPLICIT_RESOURCES: Dict[str, FrozenSet[str]] = {
    "cdq": frozenset({"rax", "rdx"}), "cqo": frozenset({"rax", "rdx"}),
    "cdqe": frozenset({"rax"}), "cwde": frozenset({"rax"}),
    "idiv": frozenset({"rax", "rdx"}), "div": frozenset({"rax", "rdx"}),
    "mul": frozenset({"rax", "rdx"}),
    "call": frozenset({"rax", *ARGUMENT_FAMILIES}),
    "ret": frozenset({"rax"}),
    "cmp": frozenset({"flags"}), "test": frozenset({"flags"}),
}


def register_family(token: str) -> Optional[str]:
    return _FAMILIES.get(token)


def resources(insn: CanonicalInstruction) -> FrozenSet[str]:
    """Register families, stack slots and flags an instruction touches."""
    out = set(IMPLICIT_RESOURCES.get(insn.mnemonic, ()))
    if insn.mnemonic.startswith("set") or (insn.mnemonic.startswith("j") and insn.mnemonic != "jmp"):
        out.add("flags")
    for op in insn.operands:
        if "[" in op:
            out.add("slot:" + op[op.index("[") + 1])
            continue
        for tok in op:
            family = register_family(tok)
            if family is not None:
                out.add(family)
    return frozenset(out)


def written_argument_registers(insns: Sequence[CanonicalInstruction]) -> int:
    """Count of leading argument registers written before the final call."""
    written = set()
    for insn in insns:
        if insn.mnemonic == "call":
            break
        if insn.operands and insn.mnemonic in ("mov", "movsx", "movzx", "movsxd", "lea", "pop"):
            dest = insn.operands[0]
            if len(dest) == 1:
                family = register_family(dest[0])
                if family in ARGUMENT_FAMILIES:
                    written.add(family)
    count = 0
    for family in ARGUMENT_FAMILIES:
        if family not in written:
            break
        count += 1
    return count
