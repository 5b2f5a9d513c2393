"""End-to-end decompilation of one function: parse, canonicalize, segment, translate, reassemble, lift."""
import time
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from seamdec import csubset as cs
from seamdec.asmtext import (AsmInstruction, Backfiller, CanonicalInstruction, canonicalize_instruction,
                             parse_function, strip_frame)
from seamdec.bintran import TranslationResult, Translator
from seamdec.binseg import Segmenter, oracle_ranges
from seamdec.corpus import label_boundaries
from seamdec.errors import TranslationError, tag_stage
from seamdec.seamcode import ELSE, END, IF, RET, WHILE, Literal, RenamingMap, SeamLine, lift, var_token_type
from seamdec.semrec import Namer, assign_identifiers, count_function_positions, function_tokens, \
    recover_function_name

Range = Tuple[int, int]


@contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except Exception as e:
        raise tag_stage(name, e) from e


@dataclass
class DecompileOptions:
    oracle_segmentation: bool = False
    with_function_name: bool = False
    function: Optional[str] = None       # symbol to pick from a multi-function listing


@dataclass
class DecompileResult:
    c_text: str
    lines: List[str]
    segments: List[Range]
    translations: List[TranslationResult]
    diagnostics: List[str] = field(default_factory=list)
    identifiers: List[str] = field(default_factory=list)
    names: Dict[str, str] = field(default_factory=dict)
    function_name: Optional[str] = None
    literals_harvested: int = 0
    literals_restored: int = 0
    seconds: float = 0.0

    @property
    def low_confidence(self) -> List[int]:
        return [i for i, t in enumerate(self.translations) if t.low_confidence]

    @property
    def truncated(self) -> List[int]:
        return [i for i, t in enumerate(self.translations) if t.truncated]

    def to_dict(self, with_timing: bool = False) -> dict:
        out = {
            "c": self.c_text,
            "seamcode": self.lines,
            "segments": [list(r) for r in self.segments],
            "translations": [t.to_dict() for t in self.translations],
            "diagnostics": self.diagnostics,
            "identifiers": self.identifiers,
            "names": dict(sorted(self.names.items())),
            "function_name": self.function_name or "FUNC",
            "literals": {"harvested": self.literals_harvested, "restored": self.literals_restored},
        }
        if with_timing:
            out["seconds"] = round(self.seconds, 6)
        return out


# ---------------------------------------------------------------------------
# Canonicalization with per-instruction literals
# ---------------------------------------------------------------------------
def canonicalize_with_literals(body: Sequence[AsmInstruction], strings: Dict[str, str]
                               ) -> Tuple[List[CanonicalInstruction], List[List[Literal]]]:
    canon, per_insn = [], []
    for i, insn in enumerate(body):
        harvested: List[Literal] = []
        nxt = body[i + 1] if i + 1 < len(body) else None
        canon.append(canonicalize_instruction(insn, strings, nxt, harvested))
        per_insn.append(harvested)
    return canon, per_insn


def _is_conditional(insn: CanonicalInstruction) -> bool:
    return insn.mnemonic.startswith("j") and insn.mnemonic != "jmp" and insn.target is not None


def split_else_jumps(canon: Sequence[CanonicalInstruction], ranges: Sequence[Range]) -> List[Range]:
    """Give every jump over an else body its own segment.

    Line tables attribute that jump to the last then-statement; the
    translator expects it on the ELSE line.
    """
    index_of = {insn.address: i for i, insn in enumerate(canon)}
    cut = set()
    for insn in canon:
        if not _is_conditional(insn) or insn.target <= insn.address:
            continue
        p = index_of.get(insn.target - 4)
        if p is None:
            continue
        jump = canon[p]
        if jump.mnemonic == "jmp" and jump.target is not None and jump.target > insn.target:
            cut.add(p)
    out: List[Range] = []
    for start, end in ranges:
        p = end - 1
        if p in cut and end - start > 1:
            out += [(start, p), (p, end)]
        else:
            out.append((start, end))
    return out


# ---------------------------------------------------------------------------
# Block reassembly
# ---------------------------------------------------------------------------
class Reassembler:
    """Rebuilds IF/ELSE/WHILE/END structure from jump directions and retained targets."""

    def __init__(self, canon: Sequence[CanonicalInstruction], ranges: Sequence[Range],
                 translations: Sequence[Sequence[str]]):
        self.canon = canon
        self.ranges = list(ranges)
        self.tokens = [list(t) for t in translations]
        self.n = len(self.ranges)
        self.index_of = {insn.address: i for i, insn in enumerate(canon)}
        self.seg_of: List[int] = [0] * len(canon)
        for g, (start, end) in enumerate(self.ranges):
            for i in range(start, end):
                self.seg_of[i] = g
        self.last_address = canon[-1].address if canon else -1
        self.role: List[Tuple[str, int]] = [("stmt", -1)] * self.n
        self.ends_before: Dict[int, List[int]] = {}
        self.diagnostics: List[str] = []

    def _first(self, g: int) -> CanonicalInstruction:
        return self.canon[self.ranges[g][0]]

    def _insns(self, g: int) -> List[CanonicalInstruction]:
        start, end = self.ranges[g]
        return list(self.canon[start:end])

    def _position(self, target: int) -> int:
        """Segment an END belongs in front of; n means after the last segment."""
        if target > self.last_address:
            return self.n
        i = self.index_of.get(target)
        if i is None:
            i = next(k for k, insn in enumerate(self.canon) if insn.address >= target)
        g = self.seg_of[i]
        if self.ranges[g][0] != i:
            self.diagnostics.append(f"jump target {target} falls inside segment {g}")
        return g

    def _close(self, position: int, opener: int) -> None:
        self.ends_before.setdefault(position, []).append(opener)

    def _bottom_tested_loops(self) -> None:
        for g in range(self.n):
            last = self.canon[self.ranges[g][1] - 1]
            if last.mnemonic != "jmp" or last.target is None or not last.address < last.target <= self.last_address:
                continue
            i = self.index_of.get(last.target)
            if i is None:
                continue
            c = self.seg_of[i]
            resume = last.address + 4
            if c > g and self.ranges[c][0] == i and any(
                    _is_conditional(j) and j.target == resume for j in self._insns(c)):
                self.role[g] = ("loop_entry", c)
                self.role[c] = ("loop_test", g)

    def _headers(self) -> None:
        for g in range(self.n):
            if self.role[g][0] != "stmt":
                continue
            forward = [j for j in self._insns(g) if _is_conditional(j) and j.target > j.address]
            if not forward:
                continue
            t = forward[-1].target
            p = self.index_of.get(t - 4)
            jump = self.canon[p] if p is not None and p >= self.ranges[g][1] else None
            if jump is not None and jump.mnemonic == "jmp" and jump.target == self._first(g).address:
                e = self.seg_of[p]
                self.role[g] = ("while", e)
                self.role[e] = ("loop_end", g)
            elif (jump is not None and jump.mnemonic == "jmp" and jump.target is not None and jump.target > t
                  and self.role[self.seg_of[p]][0] == "stmt" and self.tokens[self.seg_of[p]][:1] != [RET]):
                e = self.seg_of[p]
                self.role[g] = ("if", e)
                self.role[e] = ("else", g)
                self._close(self._position(jump.target), g)
            else:
                position = self._position(t)
                if position <= g:
                    self.diagnostics.append(f"segment {g}: branch target does not leave the segment")
                    continue
                self.role[g] = ("if", -1)
                self._close(position, g)

    def _header_line(self, g: int, kind: str) -> SeamLine:
        toks = self.tokens[g]
        if len(toks) > 1 and toks[0] in (IF, WHILE):
            if toks[0] != kind:
                logging.warning(f"Segment {g} translated as {toks[0]} but its jumps form a {kind}")
                self.diagnostics.append(f"segment {g}: {toks[0]} replaced by {kind}")
            return SeamLine((kind,) + tuple(toks[1:]))
        raise TranslationError(f"segment {g} carries a conditional jump but translated to '{' '.join(toks)}'")

    def _structural(self, g: int, kind: str) -> SeamLine:
        if self.tokens[g][:1] != [kind]:
            self.diagnostics.append(f"segment {g}: '{' '.join(self.tokens[g])}' replaced by {kind}")
        return SeamLine((kind,))

    def run(self) -> List[SeamLine]:
        self._bottom_tested_loops()
        self._headers()
        out: List[SeamLine] = []
        for g in range(self.n + 1):
            for _ in sorted(self.ends_before.get(g, []), reverse=True):
                out.append(SeamLine((END,)))
            if g == self.n:
                break
            role, partner = self.role[g]
            if role == "stmt":
                toks = self.tokens[g]
                if not toks or toks[0] in (IF, WHILE, ELSE, END):
                    self.diagnostics.append(f"segment {g}: structural line '{' '.join(toks)}' "
                                            f"without jump support dropped")
                    continue
                out.append(SeamLine(tuple(toks)))
            elif role == "if":
                out.append(self._header_line(g, IF))
            elif role == "while":
                out.append(self._header_line(g, WHILE))
            elif role == "loop_entry":
                out.append(self._header_line(partner, WHILE))
            elif role == "else":
                out.append(self._structural(g, ELSE))
            elif role == "loop_end":
                out.append(self._structural(g, END))
            else:
                out.append(SeamLine((END,)))
        return out


def reassemble(canon: Sequence[CanonicalInstruction], ranges: Sequence[Range],
               translations: Sequence[Sequence[str]]) -> Tuple[List[SeamLine], List[str]]:
    r = Reassembler(canon, ranges, translations)
    lines = r.run()
    return lines, r.diagnostics


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------
def segment_body(canon: Sequence[CanonicalInstruction], body: Sequence[AsmInstruction],
                 segmenter: Optional[Segmenter], oracle: bool) -> List[Range]:
    if oracle or segmenter is None:
        ranges = oracle_ranges(label_boundaries(body))
    else:
        ranges = segmenter.segment([c.tokens for c in canon])
    return split_else_jumps(canon, ranges)


def _renaming(lines: Sequence[SeamLine], names: Dict[str, str]) -> RenamingMap:
    seen: Dict[str, None] = {}
    for line in lines:
        for tok in line.tokens:
            if tok in names:
                seen.setdefault(tok)
    return RenamingMap(tuple((names[tok], tok, var_token_type(tok)) for tok in seen))


def decompile_function(asm: str, translator: Translator, segmenter: Optional[Segmenter] = None,
                       namer: Optional[Namer] = None, options: Optional[DecompileOptions] = None) -> DecompileResult:
    """Assembly text of one function -> C text; failures carry the stage they happened in."""
    options = options or DecompileOptions()
    started = time.perf_counter()

    with stage("parse"):
        func = parse_function(asm, options.function)
        body = strip_frame(func)
        if not body:
            raise TranslationError(f"function '{func.name}' has an empty body")
    with stage("canonicalize"):
        canon, per_insn = canonicalize_with_literals(body, func.strings)
    with stage("segment"):
        ranges = segment_body(canon, body, segmenter, options.oracle_segmentation)
    with stage("translate"):
        results = translator.translate_many([[c.tokens for c in canon[s:e]] for s, e in ranges])

    diagnostics: List[str] = []
    filled: List[List[str]] = []
    harvested = restored = 0
    with stage("backfill"):
        for g, ((start, end), result) in enumerate(zip(ranges, results)):
            literals = [lit for lits in per_insn[start:end] for lit in lits]
            filler = Backfiller(literals)
            filled.append(filler.fill(result.tokens))
            harvested += len(literals)
            restored += len(literals) - sum(filler.surplus().values())
            diagnostics += [f"segment {g}: {m}" for m in filler.diagnostics]
            for kind, count in sorted(filler.surplus().items()):
                diagnostics.append(f"segment {g}: {count} unused {kind} literal(s)")
            if result.low_confidence:
                diagnostics.append(f"segment {g}: call arity disagrees with argument registers")
            if result.truncated:
                diagnostics.append(f"segment {g}: translation truncated")

    with stage("reassemble"):
        lines, notes = reassemble(canon, ranges, filled)
        diagnostics += notes
    with stage("lift"):
        sketch = lift(lines)

    identifiers: List[str] = []
    names: Dict[str, str] = {}
    function_name = None
    if namer is not None:
        with stage("name"):
            identifiers = namer.predict(function_tokens(c.tokens for c in canon)).tokens
            table = count_function_positions(sketch)
            variables = [name for name, _ in cs.declared_variables(sketch)]
            names = assign_identifiers(identifiers, namer.positions, table, variables)
            function_name = recover_function_name(identifiers, names, namer.positions)
            sketch = lift(lines, (), _renaming(lines, names))

    if options.with_function_name:
        sketch = cs.block(sketch.children, function_name or func.name)
    c_text = cs.print_c(sketch)
    for message in diagnostics:
        logging.debug(f"Decompile {func.name}: {message}")
    return DecompileResult(c_text, [line.text for line in lines], list(ranges), results, diagnostics,
                           identifiers, names, function_name, harvested, restored,
                           time.perf_counter() - started)
