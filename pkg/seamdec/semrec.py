"""Identifier recovery.

A function encoder turns a canonical function into a fixed-length vector, a
recurrent decoder emits the identifier sequence S from that vector, and
`assign_identifiers` places the names of S onto the normalized variables of a
translated function using the 26-position frequency tables.
"""
import json
import math
import logging
from pathlib import Path
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import torch
import torch.nn as nn
from torch import Tensor

from seamdec import nnkit
from seamdec.bintran import EOS, PAD, SOS, UNK, TokenVocab
from seamdec.config import NamerSettings
from seamdec.constants import POSITION_COUNT
from seamdec.csubset import AstNode, declared_variables
from seamdec.errors import DivergenceError, NamingError
from seamdec.models import SamplePair
from seamdec.positions import PositionTable, function_table
from seamdec.progress import NullProgressReporter, ProgressReporter


@dataclass
class NamerPair:
    """One (function tokens, identifier sequence) training record."""
    tokens: List[str]
    identifiers: List[str]

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "identifiers": self.identifiers}


@dataclass
class IdentifierSeq:
    tokens: List[str] = field(default_factory=list)
    probabilities: List[float] = field(default_factory=list)
    truncated: bool = False

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "probabilities": [round(p, 6) for p in self.probabilities],
                "truncated": self.truncated}


def function_tokens(insns: Iterable[Sequence[str]]) -> List[str]:
    return [tok for insn in insns for tok in insn if tok != ","]


def namer_pairs(samples: Iterable[SamplePair]) -> List[NamerPair]:
    return [NamerPair(function_tokens(s.ac), list(s.identifiers)) for s in samples]


def read_namer_jsonl(path: Path) -> List[NamerPair]:
    """Mined or generated pairs, one JSON object per line."""
    pairs = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                pairs.append(NamerPair(list(record["tokens"]), list(record["identifiers"])))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise NamingError(f"{path}:{number}: bad namer record ({e})")
    return pairs


def write_namer_jsonl(path: Path, pairs: Iterable[NamerPair]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for pair in pairs:
            f.write(json.dumps(pair.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------
class FunctionEncoder(Protocol):
    """Maps padded function token ids (B, T) and their validity flags to (B, vector_size)."""
    vector_size: int

    def __call__(self, ids: Tensor, valid: Tensor) -> Tensor:
        ...


class MeanEmbeddingEncoder(nn.Module):
    """tanh(W · mean(token embeddings) + b)."""

    def __init__(self, vocab_size: int, embed: int, vector_size: int):
        super().__init__()
        self.vector_size = vector_size
        self.embedding = nn.Embedding(vocab_size, embed)
        self.project = nn.Linear(embed, vector_size)

    def forward(self, ids: Tensor, valid: Tensor) -> Tensor:
        pooled = nnkit.masked_mean(self.embedding(ids), valid, dim=1)
        return torch.tanh(self.project(pooled))


class AttentionPoolEncoder(nn.Module):
    """tanh(W · sum_j a_j e_j + b) with a_j a softmax of learned token scores over the valid tokens."""

    def __init__(self, vocab_size: int, embed: int, vector_size: int):
        super().__init__()
        self.vector_size = vector_size
        self.embedding = nn.Embedding(vocab_size, embed)
        self.score = nn.Linear(embed, 1)
        self.project = nn.Linear(embed, vector_size)

    def forward(self, ids: Tensor, valid: Tensor) -> Tensor:
        x = self.embedding(ids)
        scores = self.score(x).squeeze(-1).masked_fill(~valid, float("-inf"))
        # rows without tokens pool to zero
        weights = torch.nan_to_num(torch.softmax(scores, dim=-1))
        pooled = (weights.unsqueeze(-1) * x).sum(dim=1)
        return torch.tanh(self.project(pooled))


EncoderFactory = Callable[[int, int, int], nn.Module]

FUNCTION_ENCODERS: Dict[str, EncoderFactory] = {
    "mean": MeanEmbeddingEncoder,
    "attention": AttentionPoolEncoder,
}


def register_encoder(name: str, factory: EncoderFactory) -> None:
    """Make `factory(vocab_size, embed, vector_size)` available as NamerConfig(encoder=name)."""
    FUNCTION_ENCODERS[name] = factory


def build_encoder(name: str, vocab_size: int, embed: int, vector_size: int) -> FunctionEncoder:
    factory = FUNCTION_ENCODERS.get(name)
    if factory is None:
        raise NamingError(f"unknown function encoder '{name}' (known: {', '.join(sorted(FUNCTION_ENCODERS))})")
    encoder = factory(vocab_size, embed, vector_size)
    if encoder.vector_size != vector_size:
        raise NamingError(f"encoder '{name}' yields {encoder.vector_size}-vectors, expected {vector_size}")
    return encoder


@dataclass
class NamerConfig:
    embed: int = 64
    vector: int = 256
    hidden: int = 256
    max_len: int = 12
    seed: int = 1
    encoder: str = "mean"

    @classmethod
    def from_settings(cls, settings: NamerSettings, seed: int) -> "NamerConfig":
        return cls(settings.embed, settings.vector, settings.hidden, settings.max_len, seed, settings.encoder)


class NamerModel(nn.Module):
    def __init__(self, cfg: NamerConfig, src_size: int, id_size: int):
        super().__init__()
        self.cfg = cfg
        self.encoder = build_encoder(cfg.encoder, src_size, cfg.embed, cfg.vector)
        self.init_h = nn.Linear(cfg.vector, cfg.hidden)
        self.init_c = nn.Linear(cfg.vector, cfg.hidden)
        self.id_embed = nn.Embedding(id_size, cfg.embed)
        self.cell = nnkit.RecurrentCell(cfg.embed, cfg.hidden)
        self.out = nn.Linear(cfg.hidden, id_size)

    def start(self, vector: Tensor) -> Tuple[Tensor, Tensor]:
        return torch.tanh(self.init_h(vector)), torch.tanh(self.init_c(vector))

    def step(self, token: Tensor, state: Tuple[Tensor, Tensor]) -> Tuple[Tensor, Tuple[Tensor, Tensor]]:
        h, c = self.cell(self.id_embed(token), state)
        return self.out(h), (h, c)

    def forward(self, ids: Tensor, valid: Tensor, tgt_in: Tensor) -> Tensor:
        state = self.start(self.encoder(ids, valid))
        logits = []
        for t in range(tgt_in.shape[1]):
            step_logits, state = self.step(tgt_in[:, t], state)
            logits.append(step_logits)
        return torch.stack(logits, dim=1)


class Namer:
    """Function encoder, identifier decoder and the corpus position table."""

    def __init__(self, model: NamerModel, src_vocab: TokenVocab, id_vocab: TokenVocab,
                 positions: Optional[PositionTable] = None):
        self.model = model
        self.cfg = model.cfg
        self.src_vocab = src_vocab
        self.id_vocab = id_vocab
        self.positions = positions or PositionTable()

    @classmethod
    def create(cls, cfg: NamerConfig, src_vocab: TokenVocab, id_vocab: TokenVocab,
               positions: Optional[PositionTable] = None) -> "Namer":
        model = NamerModel(cfg, len(src_vocab), len(id_vocab))
        nnkit.init_fan_in_uniform(model, cfg.seed)
        return cls(model, src_vocab, id_vocab, positions)

    def save(self, path: Path, extra: Optional[dict] = None) -> None:
        sidecar = {"kind": "namer", "config": asdict(self.cfg), "encoder": self.cfg.encoder,
                   "src_vocab": self.src_vocab.to_list(), "id_vocab": self.id_vocab.to_list(),
                   "positions": self.positions.to_dict()}
        sidecar.update(extra or {})
        nnkit.save_checkpoint(path, nnkit.state_tensors(self.model), sidecar)

    @classmethod
    def load(cls, path: Path) -> "Namer":
        tensors, sidecar = nnkit.load_checkpoint(path)
        if sidecar.get("kind") != "namer":
            raise NamingError(f"{path} is not a namer checkpoint")
        namer = cls.create(NamerConfig(**sidecar["config"]), TokenVocab(sidecar["src_vocab"]),
                           TokenVocab(sidecar["id_vocab"]), PositionTable.from_dict(sidecar["positions"]))
        namer.model.load_state_dict(tensors)
        namer.model.eval()
        return namer

    def _ids(self, token_lists: Sequence[Sequence[str]]) -> Tuple[Tensor, Tensor]:
        unk = self.src_vocab.encode(UNK)
        width = max(1, max(len(t) for t in token_lists))
        ids = torch.full((len(token_lists), width), self.src_vocab.pad_id, dtype=torch.long)
        valid = torch.zeros(len(token_lists), width, dtype=torch.bool)
        for b, tokens in enumerate(token_lists):
            row = [self.src_vocab.ids.get(t, unk) for t in tokens]
            if row:
                ids[b, : len(row)] = torch.tensor(row)
                valid[b, : len(row)] = True
        return ids, valid

    @torch.no_grad()
    def encode_function(self, tokens: Sequence[str]) -> Tensor:
        """FunctionVector of a canonical function (tokens without commas)."""
        if not tokens:
            raise NamingError("cannot encode an empty function")
        self.model.eval()
        ids, valid = self._ids([tokens])
        return nnkit.check_finite(self.model.encoder(ids, valid)[0], "function vector")

    @torch.no_grad()
    def decode_identifiers(self, vector: Tensor) -> IdentifierSeq:
        """Greedy decode from <sos>; repeated identifiers keep their first occurrence."""
        self.model.eval()
        state = self.model.start(vector.unsqueeze(0))
        token = torch.tensor([self.id_vocab.encode(SOS, "identifier")])
        eos = self.id_vocab.encode(EOS, "identifier")
        out = IdentifierSeq(truncated=True)
        for _ in range(self.cfg.max_len):
            logits, state = self.model.step(token, state)
            p, idx = torch.softmax(logits[0], dim=-1).max(dim=-1)
            if int(idx) == eos:
                out.truncated = False
                break
            name = self.id_vocab.decode(int(idx))
            if name not in out.tokens and name not in (PAD, SOS):
                out.tokens.append(name)
                out.probabilities.append(float(p))
            token = idx.view(1)
        return out

    def predict(self, tokens: Sequence[str]) -> IdentifierSeq:
        if not tokens:
            return IdentifierSeq()
        return self.decode_identifiers(self.encode_function(tokens))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------
@dataclass
class NamerTrainResult:
    history: List[Tuple[int, float, float]] = field(default_factory=list)  # (epoch, loss, exact rate)
    best_epoch: int = 0
    best_exact: float = -1.0
    checkpoint: Optional[Path] = None


def _targets(namer: Namer, pairs: Sequence[NamerPair]) -> Tuple[Tensor, Tensor]:
    vocab = namer.id_vocab
    width = max(len(p.identifiers) for p in pairs) + 1
    tgt_in = torch.full((len(pairs), width), vocab.pad_id, dtype=torch.long)
    tgt_out = torch.full((len(pairs), width), vocab.pad_id, dtype=torch.long)
    for b, pair in enumerate(pairs):
        ids = [vocab.encode(n, "identifier") for n in pair.identifiers]
        tgt_in[b, : len(ids) + 1] = torch.tensor([vocab.encode(SOS)] + ids)
        tgt_out[b, : len(ids) + 1] = torch.tensor(ids + [vocab.encode(EOS)])
    return tgt_in, tgt_out


def exact_rate(namer: Namer, pairs: Sequence[NamerPair]) -> float:
    if not pairs:
        return 0.0
    hits = sum(1 for p in pairs if namer.predict(p.tokens).tokens == list(dict.fromkeys(p.identifiers)))
    return hits / len(pairs)


def train_namer(train: Sequence[NamerPair], validation: Sequence[NamerPair], cfg: NamerConfig,
                settings: NamerSettings, checkpoint: Path, positions: Optional[PositionTable] = None,
                deterministic: bool = True, reporter: Optional[ProgressReporter] = None) -> NamerTrainResult:
    nnkit.set_deterministic(cfg.seed, deterministic)
    reporter = reporter or NullProgressReporter()
    train = [p for p in train if p.tokens and len(p.identifiers) < cfg.max_len]
    if not train:
        raise NamingError("no usable namer training pairs")
    src_vocab = TokenVocab.build((p.tokens for p in train), [PAD, UNK])
    id_vocab = TokenVocab.build((p.identifiers for p in train), [PAD, SOS, EOS])
    validation = [p for p in validation if all(n in id_vocab for n in p.identifiers)]
    namer = Namer.create(cfg, src_vocab, id_vocab, positions)
    model = namer.model
    optimizer = nnkit.make_optimizer(model.parameters(), settings.optimizer, settings.lr, settings.momentum)
    scheduler = nnkit.make_scheduler(optimizer, settings.lr_step, settings.lr_gamma)
    gen = torch.Generator().manual_seed(cfg.seed)
    result = NamerTrainResult()
    logging.info(f"Namer: {len(train)} train / {len(validation)} validation functions, "
                 f"{len(id_vocab) - 3} identifiers, {nnkit.count_parameters(model)} parameters")

    task = reporter.add_task("Training namer", total=settings.epochs)
    for epoch in range(1, settings.epochs + 1):
        model.train()
        order = torch.randperm(len(train), generator=gen).tolist()
        running = 0.0
        for step, start in enumerate(range(0, len(order), settings.batch_size)):
            batch = [train[i] for i in order[start:start + settings.batch_size]]
            ids, valid = namer._ids([p.tokens for p in batch])
            tgt_in, tgt_out = _targets(namer, batch)
            loss = nnkit.cross_entropy(model(ids, valid, tgt_in), tgt_out, id_vocab.pad_id)
            value = float(loss)
            if not math.isfinite(value):
                raise DivergenceError(epoch, step, value)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), settings.clip_norm)
            optimizer.step()
            running += value * len(batch)
        scheduler.step()
        exact = exact_rate(namer, validation or train)
        result.history.append((epoch, running / len(train), exact))
        logging.info(f"Namer epoch {epoch}: loss={running / len(train):.4f} exact={exact:.4f}")
        if exact > result.best_exact:
            result.best_exact = exact
            result.best_epoch = epoch
            namer.save(checkpoint, {"best_epoch": epoch})
            result.checkpoint = Path(checkpoint)
        reporter.update_task(task, advance=1, status=f"exact {exact:.3f}")
    reporter.remove_task(task)
    return result


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------
def count_function_positions(sketch: AstNode) -> PositionTable:
    """26-vectors per normalized variable of a lifted sketch, declared-but-unused ones included."""
    return function_table(sketch, [name for name, _ in declared_variables(sketch)])


def fallback_name(index: int) -> str:
    return f"var{index + 1}"


def ranked_positions(vector: Sequence[int]) -> List[int]:
    """Positions with a nonzero count, most frequent first; lower index wins ties."""
    return sorted((i for i in range(POSITION_COUNT) if vector[i] > 0), key=lambda i: (-vector[i], i))


def assign_identifiers(identifiers: Sequence[str], vocab_table: PositionTable, func_table: PositionTable,
                       variables: Optional[Sequence[str]] = None) -> Dict[str, str]:
    """Map every variable of `func_table` to a distinct name from S, or to var<i+1>.

    Variables are visited by descending total count, then by their order.
    Each takes, at its strongest position, the still-unassigned candidate of
    S that is most frequent there in the corpus table (earlier in S on
    ties), moving to weaker positions when none is left.
    """
    variables = list(variables) if variables is not None else list(func_table.rows)
    vb = vocab_table.restrict(dict.fromkeys(identifiers))
    candidates = [name for name in dict.fromkeys(identifiers) if name in vb]
    order = sorted(range(len(variables)), key=lambda i: (-sum(func_table.vector(variables[i])), i))

    mapping: Dict[str, str] = {}
    used = set()
    for i in order:
        var = variables[i]
        chosen = None
        for pos in ranked_positions(func_table.vector(var)):
            best, best_count = None, 0
            for name in candidates:
                count = vb.rows[name][pos]
                if name not in used and count > best_count:
                    best, best_count = name, count
            if best is not None:
                chosen = best
                break
        if chosen is None:
            chosen = fallback_name(i)
            suffix = 1
            while chosen in used:
                chosen = f"{fallback_name(i)}_{suffix}"
                suffix += 1
        used.add(chosen)
        mapping[var] = chosen
    return mapping


def recover_function_name(identifiers: Sequence[str], assigned: Dict[str, str],
                          vocab_table: PositionTable) -> Optional[str]:
    """First identifier of S that went unused and has no position profile in the corpus."""
    taken = set(assigned.values())
    for name in identifiers:
        if name in taken:
            continue
        if name not in vocab_table or not any(vocab_table.vector(name)):
            return name
    return None
