import time
import hashlib
from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field, asdict


def boundary_ranges(bits: Sequence[int]) -> List[Tuple[int, int]]:
    """Instruction ranges [start, end) closed by boundary bits; a trailing open range is kept."""
    out, start = [], 0
    for i, bit in enumerate(bits):
        if bit:
            out.append((start, i + 1))
            start = i + 1
    if start < len(bits):
        out.append((start, len(bits)))
    return out


@dataclass
class SamplePair:
    """One aligned corpus record: canonical assembly, SeamCode and everything needed to undo the regularization."""
    id: str
    kind: str
    level: int
    seed: int
    ac: List[List[str]]               # canonical tokens per body instruction
    sc: List[List[str]]               # every SeamLine, DECL and END included
    boundaries: List[int]             # 1 = last instruction of a source line
    alignment: List[int]              # SeamLine index translated by each instruction group
    literals: List[dict]              # harvested from the assembly, instruction order
    source_literals: List[dict]       # IMM/STR literals of the lowered source
    renaming: dict
    identifiers: List[str]            # original identifiers in first-occurrence order
    source: str
    asm: str
    provenance: dict = field(default_factory=dict)
    src_lines: List[List[str]] = field(default_factory=list)

    @property
    def dedup_key(self) -> str:
        h = hashlib.sha1()
        for insn in self.ac:
            h.update(" ".join(insn).encode("utf-8") + b"\x00")
        h.update(b"\x01")
        for line in self.sc:
            h.update(" ".join(line).encode("utf-8") + b"\x00")
        return h.hexdigest()

    def groups(self) -> List[Tuple[int, int]]:
        return boundary_ranges(self.boundaries)

    def line_pairs(self, target_form: str = "seamcode") -> List[Tuple[List[List[str]], List[str]]]:
        """(instruction group, target line) training pairs."""
        targets = self.sc if target_form == "seamcode" else self.src_lines
        return [(self.ac[s:e], list(targets[k])) for (s, e), k in zip(self.groups(), self.alignment)]

    @property
    def stratum(self) -> str:
        return f"{self.kind}/L{self.level}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SamplePair":
        return cls(**data)


@dataclass
class CorpusSplit:
    train: List[str] = field(default_factory=list)
    validation: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)

    def is_disjoint(self) -> bool:
        a, b, c = set(self.train), set(self.validation), set(self.test)
        return not (a & b or a & c or b & c)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSplit":
        return cls(list(data.get("train", [])), list(data.get("validation", [])), list(data.get("test", [])))


@dataclass
class CorpusStats:
    """Statistics for a corpus build."""
    generated: int = 0
    accepted: int = 0
    duplicates: int = 0
    rejected: int = 0
    start_time: float = field(default_factory=time.time)
    failures: list = field(default_factory=list)  # list of (sample id, reason) tuples
    per_stratum: Dict[str, int] = field(default_factory=dict)

    @property
    def elapsed(self) -> float:
        return time.time() - self.start_time


@dataclass
class BreakdownRow:
    kind: str
    level: int
    count: int = 0
    exact: int = 0
    matched_tokens: int = 0
    total_tokens: int = 0

    @property
    def word_accuracy(self) -> float:
        return self.matched_tokens / self.total_tokens if self.total_tokens else 0.0

    @property
    def sequence_accuracy(self) -> float:
        return self.exact / self.count if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "level": self.level, "count": self.count, "exact": self.exact,
            "matched_tokens": self.matched_tokens, "total_tokens": self.total_tokens,
            "word_accuracy": round(self.word_accuracy, 6),
            "sequence_accuracy": round(self.sequence_accuracy, 6),
        }


@dataclass
class EvalReport:
    word_accuracy: float
    sequence_accuracy: float
    total: int
    matched_tokens: int
    total_tokens: int
    exact: int
    breakdown: List[BreakdownRow] = field(default_factory=list)
    failures: List[dict] = field(default_factory=list)
    runtime: Optional[dict] = None
    extra: Dict[str, float] = field(default_factory=dict)

    def to_dict(self, with_timing: bool = False) -> dict:
        out = {
            "word_accuracy": round(self.word_accuracy, 6),
            "sequence_accuracy": round(self.sequence_accuracy, 6),
            "total": self.total,
            "exact": self.exact,
            "matched_tokens": self.matched_tokens,
            "total_tokens": self.total_tokens,
            "breakdown": [row.to_dict() for row in self.breakdown],
            "failures": self.failures,
        }
        if self.extra:
            out["extra"] = {k: round(v, 6) for k, v in sorted(self.extra.items())}
        if with_timing and self.runtime is not None:
            out["runtime"] = self.runtime
        return out
