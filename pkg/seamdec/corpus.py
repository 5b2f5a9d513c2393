"""Aligned corpus construction: C program -> SeamCode + canonical assembly + boundary bits."""
import json
import random
import logging
from pathlib import Path
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from seamdec import csubset as cs
from seamdec.asmtext import INSTRUCTION_BYTES, AsmInstruction, canonicalize, parse_function, strip_frame
from seamdec.codegen import (compile_external, compiler_invocation, reference_codegen, resolve_compiler,
                             translation_unit)
from seamdec.config import CorpusSettings
from seamdec.constants import CORPUS_FILE, POSITIONS_FILE, SPLIT_FILE
from seamdec.errors import BoundaryError, CompilerNotFound, CorpusShortfall, SeamError
from seamdec.models import CorpusSplit, CorpusStats, SamplePair, boundary_ranges
from seamdec.positions import PositionTable, count_positions
from seamdec.progress import NullProgressReporter, ProgressReporter
from seamdec.seamcode import ELSE, END, IF, WHILE, SeamLine, code_bearing, lower_ast, lower_source_lines

BACKENDS = ("reference", "gcc")
SEED_STRIDE = 1_000_000
BATCH_SIZE = 64


# ---------------------------------------------------------------------------
# Boundaries and alignment
# ---------------------------------------------------------------------------
def label_boundaries(asm: Union[str, Sequence[AsmInstruction]]) -> List[int]:
    """Bit i is 1 iff instruction i+1 starts a new source line (or i is last).

    Accepts assembly text (the last function, frame stripped) or body instructions.
    """
    insns = strip_frame(parse_function(asm)) if isinstance(asm, str) else list(asm)
    bits = []
    for i, insn in enumerate(insns):
        if insn.line is None:
            raise BoundaryError(f"instruction {i} ({insn.raw}) has no .loc line")
        last = i == len(insns) - 1
        bits.append(1 if last or insns[i + 1].line != insn.line else 0)
    return bits


def _block_partners(lines: Sequence[SeamLine]) -> Tuple[Dict[int, int], Dict[int, int]]:
    """IF index -> ELSE index, and IF/WHILE index -> closing END index."""
    else_of, end_of = {}, {}
    stack: List[int] = []
    for k, line in enumerate(lines):
        if line.kind in (IF, WHILE):
            stack.append(k)
        elif line.kind == ELSE and stack:
            else_of[stack[-1]] = k
        elif line.kind == END and stack:
            end_of[stack.pop()] = k
    return else_of, end_of


def attach_else_jumps(insns: Sequence[AsmInstruction], lines: Sequence[SeamLine],
                      first_body_line: int) -> List[AsmInstruction]:
    """Move the jump over an else body onto the ELSE line.

    GCC attributes that jump to the last statement of the then-body; the
    reference backend already emits it on the ELSE line.
    """
    out = list(insns)
    by_address = {insn.address: i for i, insn in enumerate(out)}
    else_of, _ = _block_partners(lines)
    for k, e in else_of.items():
        header = [i for i in out if i.line == first_body_line + k]
        forward = [i for i in header if i.is_branch and i.mnemonic != "jmp"
                   and i.target is not None and i.target > i.address]
        if not forward:
            continue
        pos = by_address.get(forward[-1].target - INSTRUCTION_BYTES)
        if pos is None:
            continue
        jump = out[pos]
        if jump.mnemonic == "jmp" and jump.line != first_body_line + e:
            out[pos] = replace(jump, line=first_body_line + e)
    return out


def align_groups(insns: Sequence[AsmInstruction], lines: Sequence[SeamLine], first_body_line: int) -> List[int]:
    """SeamLine index for each boundary group; every code-bearing line gets exactly one group."""
    groups = boundary_ranges(label_boundaries(insns))
    bearing = code_bearing(lines)
    _, end_of = _block_partners(lines)

    raw: Dict[int, List[int]] = {}
    for g, (start, _) in enumerate(groups):
        k = insns[start].line - first_body_line
        if not 0 <= k < len(lines):
            raise BoundaryError(f"group {g} maps to line {insns[start].line} outside the function body")
        raw.setdefault(k, []).append(g)

    alignment = [-1] * len(groups)
    for k, members in raw.items():
        if len(members) == 1:
            alignment[members[0]] = k
        elif len(members) == 2 and lines[k].kind == WHILE and k in end_of:
            # bottom-tested loop: entry jump first, condition last
            alignment[members[0]] = end_of[k]
            alignment[members[1]] = k
        else:
            raise BoundaryError(f"line {k} ({lines[k].kind}) is split into {len(members)} groups")

    wanted = {k for k, flag in enumerate(bearing) if flag}
    if len(set(alignment)) != len(alignment) or set(alignment) != wanted:
        raise BoundaryError(f"group count mismatch: {len(groups)} groups for {len(wanted)} code-bearing lines")
    return alignment


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------
def sample_id(kind: str, level: int, seed: int) -> str:
    return f"{kind}-L{level}-{seed}"


def gen_spec_for(kind: cs.StmtKind, level: int, seed: int, settings: CorpusSettings) -> cs.GenSpec:
    shape = random.Random(f"shape:{kind.value}:{level}:{seed}")
    statements = shape.randint(1, settings.max_statements)
    with_return = shape.random() < settings.return_rate
    return cs.GenSpec(kind, level, seed, statements, with_return)


def make_sample(spec: cs.GenSpec, backend: str = "reference", compiler: Optional[str] = None) -> SamplePair:
    """Build one aligned sample; raises SeamError subclasses for rejects."""
    ast = cs.gen_random_program(spec)
    lines, renaming, source_literals = lower_ast(ast)
    unit = translation_unit(ast)
    if backend == "gcc":
        asm = compile_external(ast, compiler)
        provenance = {"backend": "gcc", "invocation": compiler_invocation(compiler), "seed": spec.seed}
    else:
        asm, _ = reference_codegen(ast)
        provenance = {"backend": "reference", "seed": spec.seed}

    func = parse_function(asm, unit.function)
    body = attach_else_jumps(strip_frame(func), lines, unit.first_body_line)
    bits = label_boundaries(body)
    alignment = align_groups(body, lines, unit.first_body_line)
    canon, harvested = canonicalize(body, func.strings)

    identifiers = [orig for orig, _, _ in renaming.entries] + [unit.function]
    return SamplePair(
        id=sample_id(spec.kind.value, spec.level, spec.seed),
        kind=spec.kind.value,
        level=spec.level,
        seed=spec.seed,
        ac=[c.tokens for c in canon],
        sc=[list(line.tokens) for line in lines],
        boundaries=bits,
        alignment=alignment,
        literals=[lit.to_dict() for lit in harvested],
        source_literals=[lit.to_dict() for lit in source_literals],
        renaming=renaming.to_dict(),
        identifiers=identifiers,
        source=cs.print_c(ast),
        asm=asm,
        provenance=provenance,
        src_lines=lower_source_lines(ast),
    )


def _try_sample(job: Tuple[str, int, int, dict, str, Optional[str]]) -> Tuple[int, Optional[dict], str]:
    """Worker entry point: plain dicts cross the process boundary."""
    kind, level, seed, settings_data, backend, compiler = job
    settings = CorpusSettings(**settings_data)
    spec = gen_spec_for(cs.StmtKind(kind), level, seed, settings)
    try:
        return seed, make_sample(spec, backend, compiler).to_dict(), ""
    except CompilerNotFound:
        raise
    except SeamError as e:
        return seed, None, f"{type(e).__name__}: {e}"


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------
def stratum_quotas(total: int, strata: Sequence[Tuple[cs.StmtKind, int]]) -> List[int]:
    """Even allocation; quotas differ by at most one."""
    base, extra = divmod(total, len(strata))
    return [base + (1 if i < extra else 0) for i in range(len(strata))]


def resolve_backend(backend: str, compiler: Optional[str] = None) -> str:
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend '{backend}', expected one of {BACKENDS}")
    if backend == "gcc":
        try:
            resolve_compiler(compiler)
        except CompilerNotFound as e:
            logging.warning(f"{e}; falling back to the reference code generator")
            return "reference"
    return backend


def build_corpus(settings: CorpusSettings, size: Optional[int] = None, seed: int = 1,
                 backend: Optional[str] = None, compiler: Optional[str] = None, workers: int = 1,
                 reporter: Optional[ProgressReporter] = None
                 ) -> Tuple[List[SamplePair], CorpusSplit, CorpusStats]:
    """Generate, dedup and split a corpus; output is independent of the worker count."""
    total = size if size is not None else settings.size
    backend = resolve_backend(backend or settings.backend, compiler)
    reporter = reporter or NullProgressReporter()
    strata = [(kind, level) for kind in settings.kinds for level in settings.levels]
    quotas = stratum_quotas(total, strata)
    settings_data = settings.model_dump(mode="json")

    stats = CorpusStats()
    samples: List[SamplePair] = []
    seen: set = set()
    shortfalls: Dict[str, int] = {}
    task = reporter.add_task(f"Building corpus ({backend})", total=total)

    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for (kind, level), quota in zip(strata, quotas):
            label = f"{kind.value}/L{level}"
            accepted = 0
            limit = quota * settings.attempts_factor
            next_index = 0
            while accepted < quota and next_index < limit:
                count = min(max(BATCH_SIZE, workers * 8), limit - next_index)
                jobs = [(kind.value, level, seed * SEED_STRIDE + next_index + j, settings_data, backend, compiler)
                        for j in range(count)]
                next_index += count
                results = executor.map(_try_sample, jobs) if executor else map(_try_sample, jobs)
                for sample_seed, data, reason in results:
                    if accepted >= quota:
                        break
                    stats.generated += 1
                    sid = sample_id(kind.value, level, sample_seed)
                    if data is None:
                        stats.rejected += 1
                        stats.failures.append((sid, reason))
                        logging.debug(f"Rejected {sid}: {reason}")
                        continue
                    sample = SamplePair.from_dict(data)
                    key = sample.dedup_key
                    if key in seen:
                        stats.duplicates += 1
                        continue
                    seen.add(key)
                    samples.append(sample)
                    accepted += 1
                    stats.accepted += 1
                    reporter.update_task(task, advance=1, status=label)
            stats.per_stratum[label] = accepted
            if accepted < quota:
                shortfalls[label] = quota - accepted
            logging.info(f"Stratum {label}: {accepted}/{quota} accepted")
    finally:
        if executor is not None:
            executor.shutdown()
        reporter.remove_task(task)

    if shortfalls:
        logging.error(f"Corpus shortfall: {shortfalls}")
        raise CorpusShortfall(shortfalls)
    split = split_corpus(samples, settings.split, seed)
    logging.info(f"Corpus built: {stats.accepted} samples, {stats.duplicates} duplicates, {stats.rejected} rejected "
                 f"in {stats.elapsed:.1f}s")
    return samples, split, stats


def split_corpus(samples: Sequence[SamplePair], fractions: Sequence[float] = (0.8, 0.1, 0.1),
                 seed: int = 1) -> CorpusSplit:
    """Stratified by (kind, level), seeded shuffle inside each stratum."""
    by_stratum: Dict[str, List[str]] = {}
    for sample in samples:
        by_stratum.setdefault(sample.stratum, []).append(sample.id)
    split = CorpusSplit()
    for stratum in sorted(by_stratum):
        ids = list(by_stratum[stratum])
        random.Random(f"split:{seed}:{stratum}").shuffle(ids)
        n_train = int(len(ids) * fractions[0])
        n_val = int(len(ids) * fractions[1])
        split.train += ids[:n_train]
        split.validation += ids[n_train:n_train + n_val]
        split.test += ids[n_train + n_val:]
    return split


def select(samples: Iterable[SamplePair], ids: Iterable[str]) -> List[SamplePair]:
    wanted = set(ids)
    return [s for s in samples if s.id in wanted]


def collect_position_stats(samples: Iterable[SamplePair]) -> PositionTable:
    """Accumulate 26-position counts of original identifiers across all sample functions."""
    table = PositionTable()
    for sample in samples:
        table.add_counts(count_positions(cs.parse_c(sample.source)))
    return table


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------
def save_corpus(directory: Path, samples: Sequence[SamplePair], split: CorpusSplit,
                positions: Optional[PositionTable] = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / CORPUS_FILE, 'w', encoding='utf-8') as f:
        for sample in samples:
            f.write(json.dumps(sample.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    with open(directory / SPLIT_FILE, 'w', encoding='utf-8') as f:
        json.dump(split.to_dict(), f, sort_keys=True, indent=2)
    if positions is not None:
        with open(directory / POSITIONS_FILE, 'w', encoding='utf-8') as f:
            json.dump(positions.to_dict(), f, sort_keys=True)
    logging.info(f"Saved {len(samples)} samples to {directory}")


def load_corpus(directory: Path) -> Tuple[List[SamplePair], CorpusSplit]:
    directory = Path(directory)
    samples = []
    with open(directory / CORPUS_FILE, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                samples.append(SamplePair.from_dict(json.loads(line)))
    split_path = directory / SPLIT_FILE
    if split_path.exists():
        with open(split_path, 'r', encoding='utf-8') as f:
            split = CorpusSplit.from_dict(json.load(f))
    else:
        split = CorpusSplit(train=[s.id for s in samples])
    return samples, split


def load_positions(directory: Path) -> PositionTable:
    with open(Path(directory) / POSITIONS_FILE, 'r', encoding='utf-8') as f:
        return PositionTable.from_dict(json.load(f))
