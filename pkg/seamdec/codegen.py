"""Assembly backends: the external C compiler and a built-in -O0-style code generator.

Both backends compile the same translation unit layout, so `.loc` line k
after the function header always belongs to SeamLine k of the body.
"""
import os
import shutil
import logging
import subprocess
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from seamdec import csubset as cs
from seamdec.csubset import AstNode, Kind, TypeTag
from seamdec.constants import COMPILER_ENV, GCC_FLAGS
from seamdec.errors import CompilerFailed, CompilerNotFound, UnsupportedConstruct

FRAME_SIZE = 256
SLOT_BASE = {TypeTag.INT: 4, TypeTag.UNSIGNED: 68, TypeTag.LONG: 136}
SLOT_SIZE = {TypeTag.INT: 4, TypeTag.UNSIGNED: 4, TypeTag.LONG: 8}
ARG_REGISTERS = ("rdi", "rsi", "rdx", "rcx")
SOURCE_NAME = "seam.c"

SIGNED_SET = {"<": "l", ">": "g", "<=": "le", ">=": "ge", "==": "e", "!=": "ne"}
UNSIGNED_SET = {"<": "b", ">": "a", "<=": "be", ">=": "ae", "==": "e", "!=": "ne"}
INVERTED = {"<": ">=", ">": "<=", "<=": ">", ">=": "<", "==": "!=", "!=": "=="}
SIMPLE_ARITH = {"+": "add", "-": "sub", "&": "and", "|": "or", "^": "xor"}


@dataclass
class TranslationUnit:
    source: str
    first_body_line: int
    function: str


def translation_unit(ast: AstNode) -> TranslationUnit:
    """Prototypes, then `int NAME(void) {`, one body line per SeamLine, then `}`."""
    header: List[str] = []
    seen = set()
    for name in cs.callees(ast):
        if name in seen:
            continue
        seen.add(name)
        if name == "printf":
            header.append("int printf(const char *, ...);")
        else:
            header.append(f"int {name}();")
    function = ast.name or "main"
    header.append(f"int {function}(void) {{")
    body = cs.print_lines(ast, 1)
    text = "\n".join(header + body + ["}"]) + "\n"
    return TranslationUnit(text, len(header) + 1, function)


# ---------------------------------------------------------------------------
# External compiler
# ---------------------------------------------------------------------------
def resolve_compiler(compiler: Optional[str] = None) -> str:
    candidate = os.environ.get(COMPILER_ENV) or compiler or "gcc"
    path = shutil.which(candidate)
    if path is None:
        raise CompilerNotFound(f"C compiler '{candidate}' not found on PATH")
    return path


def compile_external(ast: AstNode, compiler: Optional[str] = None, timeout: int = 60) -> str:
    """Compile through the system C compiler; returns `.s` text with `.loc` lines."""
    unit = translation_unit(ast)
    cc = resolve_compiler(compiler)
    cmd = [cc, *GCC_FLAGS, "-x", "c", "-", "-o", "-"]
    try:
        proc = subprocess.run(cmd, input=unit.source, capture_output=True, text=True, timeout=timeout)
    except FileNotFoundError as e:
        raise CompilerNotFound(str(e))
    except subprocess.TimeoutExpired:
        raise CompilerFailed(-1, f"timed out after {timeout}s")
    if proc.returncode != 0:
        raise CompilerFailed(proc.returncode, proc.stderr)
    logging.debug(f"Compiled {len(unit.source)} bytes of C with {os.path.basename(cc)}")
    return proc.stdout


def compiler_invocation(compiler: Optional[str] = None) -> List[str]:
    return [compiler or os.environ.get(COMPILER_ENV) or "gcc", *GCC_FLAGS, "-x", "c", "-", "-o", "-"]


# ---------------------------------------------------------------------------
# Reference code generator
# ---------------------------------------------------------------------------
def _wide(type_: Optional[TypeTag]) -> bool:
    return type_ == TypeTag.LONG


def _acc(type_: Optional[TypeTag]) -> str:
    return "rax" if _wide(type_) else "eax"


def _tmp(type_: Optional[TypeTag]) -> str:
    return "rdx" if _wide(type_) else "edx"


def _cnt(type_: Optional[TypeTag]) -> str:
    return "rcx" if _wide(type_) else "ecx"


class ReferenceCodegen:
    """Deterministic -O0-style lowering with exact per-line boundaries."""

    def __init__(self, ast: AstNode):
        self.ast = ast
        self.unit = translation_unit(ast)
        self.slots: Dict[str, Tuple[int, TypeTag]] = {}
        counters = {t: 0 for t in TypeTag}
        for name, type_ in cs.declared_variables(ast):
            k = counters[type_]
            counters[type_] += 1
            self.slots[name] = (SLOT_BASE[type_] + k * SLOT_SIZE[type_], type_)
        self.strings: List[str] = []
        self.items: List[Tuple[str, object]] = []  # ("insn", (line, text)) | ("label", name)
        self.line = 0
        self.label_count = 0
        self.needs_ret_label = False

    # emission helpers
    def emit(self, text: str) -> None:
        self.items.append(("insn", (self.line, text)))

    def label(self, name: str) -> None:
        self.items.append(("label", name))

    def new_label(self) -> str:
        self.label_count += 1
        return f".L{self.label_count + 1}"

    def slot(self, name: str) -> str:
        if name not in self.slots:
            raise UnsupportedConstruct(f"variable '{name}' used without declaration")
        offset, type_ = self.slots[name]
        width = "QWORD" if _wide(type_) else "DWORD"
        return f"{width} PTR [rbp-{offset}]"

    def string_label(self, text: str) -> str:
        self.strings.append(text)
        return f".LC{len(self.strings) - 1}"

    # expressions
    def convert(self, src: Optional[TypeTag], dst: Optional[TypeTag]) -> None:
        if _wide(dst) and not _wide(src):
            self.emit("mov eax, eax" if src == TypeTag.UNSIGNED else "cdqe")

    def direct_operand(self, node: AstNode, type_: Optional[TypeTag]) -> Optional[str]:
        """Memory or immediate operand usable without a temporary register."""
        if node.kind == Kind.VARREF and _wide(node.type) == _wide(type_) and \
                (node.type == type_ or not _wide(type_)):
            return self.slot(node.name)
        if node.kind == Kind.CONST_INT and node.value <= cs.INT_MAX:
            return str(node.value)
        return None

    def gen(self, node: AstNode, want: Optional[TypeTag] = None) -> None:
        """Evaluate `node` into eax/rax, converted to `want` when given."""
        kind = node.kind
        if kind == Kind.VARREF:
            self.emit(f"mov {_acc(node.type)}, {self.slot(node.name)}")
        elif kind == Kind.CONST_INT:
            if node.value > cs.INT_MAX:
                self.emit(f"movabs rax, {node.value}")
            else:
                self.emit(f"mov eax, {node.value}")
        elif kind == Kind.CONST_STR:
            self.emit(f"lea rax, {self.string_label(node.value)}[rip]")
        elif kind == Kind.UNOP:
            self.gen_unop(node)
        elif kind == Kind.BINOP:
            self.gen_binop(node)
        else:
            raise UnsupportedConstruct(f"{kind.value} inside expression")
        if want is not None:
            self.convert(node.type, want)

    def gen_unop(self, node: AstNode) -> None:
        operand = node.children[0]
        if node.op == "-":
            self.gen(operand, node.type)
            self.emit(f"neg {_acc(node.type)}")
        else:
            self.gen(operand)
            reg = _acc(operand.type)
            self.emit(f"test {reg}, {reg}")
            self.emit("sete al")
            self.emit("movzx eax, al")

    def load_operands(self, left: AstNode, right: AstNode, type_: TypeTag, scratch: str) -> str:
        """Left in the accumulator; returns the right operand (direct or scratch register)."""
        self.gen(left, type_)
        direct = self.direct_operand(right, type_)
        if direct is not None:
            return direct
        self.emit("push rax")
        self.gen(right, type_)
        self.emit(f"mov {scratch}, {_acc(type_)}")
        self.emit("pop rax")
        return scratch

    def gen_compare(self, node: AstNode) -> str:
        """Emit the cmp for a comparison; returns the operand type."""
        left, right = node.children
        type_ = cs.arith_result(left.type or TypeTag.INT, right.type or TypeTag.INT)
        operand = self.load_operands(left, right, type_, _tmp(type_))
        self.emit(f"cmp {_acc(type_)}, {operand}")
        return type_

    def gen_binop(self, node: AstNode) -> None:
        op = node.op
        left, right = node.children
        if op in cs.COMPARE_OPS:
            type_ = self.gen_compare(node)
            table = UNSIGNED_SET if type_ == TypeTag.UNSIGNED else SIGNED_SET
            self.emit(f"set{table[op]} al")
            self.emit("movzx eax, al")
            return
        if op in cs.LOGIC_OPS:
            for i, side in enumerate((left, right)):
                self.gen(side)
                reg = _acc(side.type)
                self.emit(f"test {reg}, {reg}")
                self.emit("setne al")
                self.emit("movzx eax, al")
                if i == 0:
                    self.emit("push rax")
            self.emit("mov edx, eax")
            self.emit("pop rax")
            self.emit(f"{'and' if op == '&&' else 'or'} eax, edx")
            return
        type_ = node.type
        acc = _acc(type_)
        if op in ("<<", ">>"):
            self.gen(left, type_)
            if right.kind == Kind.CONST_INT or right.kind == Kind.VARREF and not _wide(right.type):
                src = str(right.value) if right.kind == Kind.CONST_INT else self.slot(right.name)
                self.emit(f"mov ecx, {src}")
            else:
                self.emit("push rax")
                self.gen(right)
                self.emit("mov ecx, eax")
                self.emit("pop rax")
            mnemonic = "sal" if op == "<<" else ("shr" if type_ == TypeTag.UNSIGNED else "sar")
            self.emit(f"{mnemonic} {acc}, cl")
            return
        if op in ("/", "%"):
            operand = self.load_operands(left, right, type_, _cnt(type_))
            if operand != _cnt(type_):
                self.emit(f"mov {_cnt(type_)}, {operand}")
            if type_ == TypeTag.UNSIGNED:
                self.emit("xor edx, edx")
                self.emit("div ecx")
            else:
                self.emit("cqo" if _wide(type_) else "cdq")
                self.emit(f"idiv {_cnt(type_)}")
            if op == "%":
                self.emit(f"mov {acc}, {_tmp(type_)}")
            return
        operand = self.load_operands(left, right, type_, _tmp(type_))
        if op == "*":
            if operand.isdigit():
                self.emit(f"imul {acc}, {acc}, {operand}")
            else:
                self.emit(f"imul {acc}, {operand}")
        else:
            self.emit(f"{SIMPLE_ARITH[op]} {acc}, {operand}")

    def gen_condition(self, cond: AstNode, false_label: str) -> None:
        if cond.kind == Kind.BINOP and cond.op in cs.COMPARE_OPS:
            type_ = self.gen_compare(cond)
            table = UNSIGNED_SET if type_ == TypeTag.UNSIGNED else SIGNED_SET
            self.emit(f"j{table[INVERTED[cond.op]]} {false_label}")
            return
        self.gen(cond)
        reg = _acc(cond.type)
        self.emit(f"test {reg}, {reg}")
        self.emit(f"je {false_label}")

    # statements
    def stmt(self, node: AstNode, final: bool) -> None:
        kind = node.kind
        if kind == Kind.BLOCK:
            count = len(node.children)
            for i, child in enumerate(node.children):
                self.stmt(child, final and i == count - 1)
            return
        if kind == Kind.DECL:
            self.line += 1
            return
        self.line += 1
        if kind == Kind.ASSIGN:
            target, value = node.children
            direct = self.direct_operand(value, target.type)
            if value.kind == Kind.CONST_INT and direct is not None:
                self.emit(f"mov {self.slot(target.name)}, {direct}")
            else:
                self.gen(value, target.type)
                self.emit(f"mov {self.slot(target.name)}, {_acc(target.type)}")
        elif kind == Kind.CALL:
            args = node.children
            for arg in args:
                self.gen(arg)
                self.emit("push rax")
            for reg in reversed(ARG_REGISTERS[:len(args)]):
                self.emit(f"pop {reg}")
            self.emit("xor eax, eax")
            self.emit(f"call {node.name}")
        elif kind == Kind.RETURN:
            if node.children:
                self.gen(node.children[0], TypeTag.INT)
            else:
                self.emit("xor eax, eax")
            if not final:
                self.needs_ret_label = True
                self.emit("jmp .Lret")
        elif kind == Kind.IF:
            cond, then = node.children[0], node.children[1]
            orelse = node.children[2] if len(node.children) == 3 else None
            else_label = self.new_label()
            end_label = self.new_label() if orelse is not None else else_label
            self.gen_condition(cond, else_label)
            self.stmt(then, False)
            if orelse is not None:
                self.line += 1
                self.emit(f"jmp {end_label}")
                self.label(else_label)
                self.stmt(orelse, False)
            self.line += 1
            self.label(end_label)
        elif kind == Kind.WHILE:
            cond, body = node.children
            top = self.new_label()
            end = self.new_label()
            self.label(top)
            self.gen_condition(cond, end)
            self.stmt(body, False)
            self.line += 1
            self.emit(f"jmp {top}")
            self.label(end)
        else:
            raise UnsupportedConstruct(f"{kind.value} as statement")

    def run(self) -> Tuple[str, List[int]]:
        self.line = self.unit.first_body_line - 1
        self.stmt(self.ast, True)
        closing = self.line + 1
        header = self.unit.first_body_line - 1

        body_insns = [payload for tag, payload in self.items if tag == "insn"]
        labels = [1 if i == len(body_insns) - 1 or body_insns[i + 1][0] != line else 0
                  for i, (line, _) in enumerate(body_insns)]

        out = [f'\t.file\t"{SOURCE_NAME}"', "\t.intel_syntax noprefix", "\t.text"]
        if self.strings:
            out.append("\t.section\t.rodata")
            for i, text in enumerate(self.strings):
                out.append(f".LC{i}:")
                out.append(f'\t.string\t"{text}"')
            out.append("\t.text")
        fn = self.unit.function
        out += [f"\t.globl\t{fn}", f"\t.type\t{fn}, @function", f"{fn}:",
                f"\t.loc 1 {header} 1", "\tpush\trbp", "\tmov\trbp, rsp", f"\tsub\trsp, {FRAME_SIZE}"]
        current = None
        for tag, payload in self.items:
            if tag == "label":
                out.append(f"{payload}:")
                continue
            line, text = payload
            if line != current:
                out.append(f"\t.loc 1 {line} 5")
                current = line
            out.append("\t" + text.replace(" ", "\t", 1))
        if self.needs_ret_label:
            out.append(".Lret:")
        out += [f"\t.loc 1 {closing} 1", "\tleave", "\tret", f"\t.size\t{fn}, .-{fn}"]
        return "\n".join(out) + "\n", labels


def reference_codegen(ast: AstNode) -> Tuple[str, List[int]]:
    """Assembly text and per-instruction boundary bits for the function body."""
    return ReferenceCodegen(ast).run()
