"""Assembly-to-SeamCode translator: two-step instruction embedding, dependency-masked encoder, one decoder layer."""
import math
import time
import logging
from pathlib import Path
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from seamdec import nnkit
from seamdec.asmtext import CanonicalInstruction, resources, written_argument_registers
from seamdec.config import TranslatorSettings
from seamdec.constants import INSN_SEP
from seamdec.errors import ConfigError, DivergenceError, ShapeError, TranslationError, VocabularyError
from seamdec.metrics import compare_tokens
from seamdec.models import SamplePair
from seamdec.progress import NullProgressReporter, ProgressReporter
from seamdec.seamcode import CALL, TOKEN_INVENTORY, UNARY_OPS_BY_TOKEN
from seamdec import csubset as cs

PAD, SOS, EOS, UNK = "<pad>", "<sos>", "<eos>", "<unk>"
MAX_INSN_TOKENS = 16

Instruction = Sequence[str]


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------
class TokenVocab:
    """Frozen bijection between tokens and indices; specials come first."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    @classmethod
    def build(cls, streams: Iterable[Iterable[str]], specials: Sequence[str]) -> "TokenVocab":
        seen = set(specials)
        rest = sorted({tok for stream in streams for tok in stream if tok not in seen})
        return cls(list(specials) + rest)

    def encode(self, token: str, side: str = "source") -> int:
        try:
            return self.ids[token]
        except KeyError:
            raise VocabularyError(token, side)

    def decode(self, index: int) -> str:
        return self.tokens[index]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    def to_list(self) -> List[str]:
        return list(self.tokens)


def instruction_words(tokens: Instruction) -> List[str]:
    """{m, s1..sk}: the mnemonic followed by operand tokens, commas dropped."""
    return [t for t in tokens if t != ","]


def instruction_from_tokens(tokens: Instruction, index: int = 0) -> CanonicalInstruction:
    operands: List[Tuple[str, ...]] = []
    current: List[str] = []
    for tok in tokens[1:]:
        if tok == ",":
            operands.append(tuple(current))
            current = []
        else:
            current.append(tok)
    if current:
        operands.append(tuple(current))
    return CanonicalInstruction(index * 4, tokens[0], tuple(operands))


def build_source_vocab(groups: Iterable[Sequence[Instruction]]) -> TokenVocab:
    return TokenVocab.build((instruction_words(insn) for group in groups for insn in group), [PAD, UNK, INSN_SEP])


def build_target_vocab(targets: Iterable[Sequence[str]], target_form: str = "seamcode") -> TokenVocab:
    specials = [PAD, SOS, EOS]
    if target_form == "seamcode":
        return TokenVocab.build([TOKEN_INVENTORY, *targets], specials)
    return TokenVocab.build(targets, specials)


# ---------------------------------------------------------------------------
# Dependency mask
# ---------------------------------------------------------------------------
def build_dependency_mask(insns: Sequence[Union[CanonicalInstruction, Instruction]]) -> Tensor:
    """m_ij = 1 iff i == j, |i - j| == 1, or the two instructions share a register, slot or flags."""
    canon = [x if isinstance(x, CanonicalInstruction) else instruction_from_tokens(x, i) for i, x in enumerate(insns)]
    touched = [resources(c) for c in canon]
    n = len(canon)
    mask = torch.zeros(n, n)
    for i in range(n):
        for j in range(n):
            if abs(i - j) <= 1 or touched[i] & touched[j]:
                mask[i, j] = 1.0
    return mask


# ---------------------------------------------------------------------------
# Configuration and model
# ---------------------------------------------------------------------------
@dataclass
class BinTranConfig:
    d_model: int = 128
    heads: int = 4
    ffn: int = 256
    max_distance: int = 20
    max_source: int = 64
    max_target: int = 48
    max_insn_tokens: int = MAX_INSN_TOKENS
    position_mode: str = "relative"
    mask_mode: str = "dependency"
    target_form: str = "seamcode"
    beam_width: int = 1
    seed: int = 1

    def __post_init__(self):
        errors = []
        if self.d_model < 2 or self.d_model % 2:
            errors.append(f"d_model must be an even number >= 2, got {self.d_model}")
        if self.heads < 1 or self.d_model % self.heads:
            errors.append(f"d_model ({self.d_model}) must be divisible by heads ({self.heads})")
        if self.max_distance < 1:
            errors.append(f"max_distance must be >= 1, got {self.max_distance}")
        if self.position_mode not in ("relative", "absolute"):
            errors.append(f"unknown position mode '{self.position_mode}'")
        if self.mask_mode not in ("dependency", "none", "literal"):
            errors.append(f"unknown mask mode '{self.mask_mode}'")
        if self.target_form not in ("seamcode", "src"):
            errors.append(f"unknown target form '{self.target_form}'")
        if errors:
            raise ConfigError(errors)

    @classmethod
    def from_settings(cls, settings: TranslatorSettings, seed: int) -> "BinTranConfig":
        return cls(settings.d_model, settings.heads, settings.ffn, settings.max_distance, settings.max_source,
                   settings.max_target, MAX_INSN_TOKENS, settings.position_mode, settings.mask_mode,
                   settings.target_form, settings.beam_width, seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BinTranConfig":
        return cls(**data)


class InstructionEmbedding(nn.Module):
    """x_i = concat(E[m] + p0, mean_j (E[s_j] + p_j)); operand-less instructions use a learned vector."""

    def __init__(self, vocab_size: int, d_model: int, max_tokens: int, pad_id: int):
        super().__init__()
        half = d_model // 2
        self.pad_id = pad_id
        self.token = nn.Embedding(vocab_size, half)
        self.position = nn.Embedding(max_tokens, half)
        self.empty = nn.Parameter(torch.zeros(half))

    def forward(self, ids: Tensor) -> Tensor:
        k = ids.shape[-1]
        x = self.token(ids) + self.position(torch.arange(k))
        head = x[..., 0, :]
        valid = ids[..., 1:] != self.pad_id
        avg = nnkit.masked_mean(x[..., 1:, :], valid, dim=-2)
        has_operands = valid.any(dim=-1, keepdim=True)
        avg = torch.where(has_operands, avg, self.empty.expand_as(avg))
        return torch.cat([head, avg], dim=-1)


class BinTran(nn.Module):
    def __init__(self, cfg: BinTranConfig, src_size: int, tgt_size: int, src_pad: int, tgt_pad: int):
        super().__init__()
        self.cfg = cfg
        self.tgt_pad = tgt_pad
        d = cfg.d_model
        self.embed = InstructionEmbedding(src_size, d, cfg.max_insn_tokens, src_pad)
        relative = cfg.max_distance if cfg.position_mode == "relative" else None
        self.encoder = nnkit.EncoderLayer(d, cfg.heads, cfg.ffn, relative, cfg.mask_mode == "literal")
        self.tgt_embed = nn.Embedding(tgt_size, d)
        self.decoder = nnkit.DecoderLayer(d, cfg.heads, cfg.ffn)
        self.out = nn.Linear(d, tgt_size)
        self.register_buffer("pe", nnkit.sinusoidal_table(max(cfg.max_source, cfg.max_target) + 2, d),
                             persistent=False)

    def encode(self, ids: Tensor, valid: Tensor, mask: Tensor) -> Tuple[Tensor, Tensor]:
        x = self.embed(ids)
        if self.cfg.position_mode == "absolute":
            x = x + self.pe[: x.shape[1]]
        return self.encoder(x, None if self.cfg.mask_mode == "none" else mask, valid)

    def decode(self, tgt_in: Tensor, memory: Tensor, valid: Tensor) -> Tuple[Tensor, Tensor]:
        y = self.tgt_embed(tgt_in) + self.pe[: tgt_in.shape[1]]
        h, cross = self.decoder(y, memory, valid, tgt_in != self.tgt_pad)
        return self.out(h), cross

    def forward(self, ids: Tensor, valid: Tensor, mask: Tensor, tgt_in: Tensor) -> Tensor:
        memory, _ = self.encode(ids, valid, mask)
        logits, _ = self.decode(tgt_in, memory, valid)
        return logits


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------
@dataclass
class TranslationPair:
    insns: List[List[str]]
    target: List[str]
    sample_id: str = ""
    kind: str = ""
    level: int = 0


def translation_pairs(samples: Iterable[SamplePair], target_form: str = "seamcode") -> List[TranslationPair]:
    pairs = []
    for sample in samples:
        for insns, target in sample.line_pairs(target_form):
            pairs.append(TranslationPair([list(i) for i in insns], target, sample.id, sample.kind, sample.level))
    return pairs


def encode_instructions(insns: Sequence[Instruction], vocab: TokenVocab, max_tokens: int) -> List[List[int]]:
    rows = []
    for insn in insns:
        words = instruction_words(insn)
        if len(words) > max_tokens:
            raise ShapeError(f"instruction has {len(words)} tokens, limit {max_tokens}: {' '.join(words)}")
        rows.append([vocab.encode(w, "source") for w in words])
    return rows


def batch_sources(groups: Sequence[Sequence[Instruction]], vocab: TokenVocab, cfg: BinTranConfig
                  ) -> Tuple[Tensor, Tensor, Tensor]:
    """(ids B×N×K, valid B×N, mask B×N×N); padded rows carry a unit diagonal."""
    encoded = [encode_instructions(g, vocab, cfg.max_insn_tokens) for g in groups]
    n = max(len(e) for e in encoded)
    k = cfg.max_insn_tokens
    ids = torch.full((len(groups), n, k), vocab.pad_id, dtype=torch.long)
    valid = torch.zeros(len(groups), n, dtype=torch.bool)
    mask = torch.eye(n).repeat(len(groups), 1, 1)
    for b, (rows, group) in enumerate(zip(encoded, groups)):
        for i, row in enumerate(rows):
            ids[b, i, : len(row)] = torch.tensor(row, dtype=torch.long)
        valid[b, : len(rows)] = True
        if cfg.mask_mode == "none":
            mask[b, : len(rows), : len(rows)] = 1.0
        else:
            mask[b, : len(rows), : len(rows)] = build_dependency_mask(group)
    return ids, valid, mask


def batch_targets(targets: Sequence[Sequence[str]], vocab: TokenVocab) -> Tuple[Tensor, Tensor]:
    """Teacher-forcing input (SOS + y) and output (y + EOS), PAD-filled."""
    t = max(len(x) for x in targets) + 1
    tgt_in = torch.full((len(targets), t), vocab.pad_id, dtype=torch.long)
    tgt_out = torch.full((len(targets), t), vocab.pad_id, dtype=torch.long)
    for b, tokens in enumerate(targets):
        ids = [vocab.encode(tok, "target") for tok in tokens]
        tgt_in[b, : len(ids) + 1] = torch.tensor([vocab.encode(SOS, "target")] + ids)
        tgt_out[b, : len(ids) + 1] = torch.tensor(ids + [vocab.encode(EOS, "target")])
    return tgt_in, tgt_out


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------
@dataclass
class TranslationResult:
    tokens: List[str]
    probabilities: List[float]
    truncated: bool = False
    low_confidence: bool = False
    encoder_attention: Optional[np.ndarray] = None
    cross_attention: Optional[np.ndarray] = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "probabilities": [round(p, 6) for p in self.probabilities],
            "truncated": self.truncated,
            "low_confidence": self.low_confidence,
        }


def expression_count(tokens: Sequence[str]) -> int:
    """Number of complete post-order trees in a token run."""
    depth = 0
    for tok in tokens:
        if tok in cs.BINARY_OPS:
            depth -= 1
        elif tok in UNARY_OPS_BY_TOKEN:
            continue
        else:
            depth += 1
    return depth


def call_arity_disagrees(tokens: Sequence[str], insns: Sequence[Instruction]) -> bool:
    if not tokens or tokens[0] != CALL:
        return False
    predicted = expression_count(tokens[1:-1])
    canon = [instruction_from_tokens(i, k) for k, i in enumerate(insns)]
    return predicted != written_argument_registers(canon)


class Translator:
    """A trained BinTran with its vocabularies."""

    def __init__(self, model: BinTran, src_vocab: TokenVocab, tgt_vocab: TokenVocab):
        self.model = model
        self.cfg = model.cfg
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.sos = tgt_vocab.encode(SOS, "target")
        self.eos = tgt_vocab.encode(EOS, "target")

    @classmethod
    def create(cls, cfg: BinTranConfig, src_vocab: TokenVocab, tgt_vocab: TokenVocab) -> "Translator":
        model = BinTran(cfg, len(src_vocab), len(tgt_vocab), src_vocab.pad_id, tgt_vocab.pad_id)
        nnkit.init_fan_in_uniform(model, cfg.seed)
        return cls(model, src_vocab, tgt_vocab)

    def save(self, path: Path, extra: Optional[dict] = None) -> None:
        sidecar = {"kind": "translator", "config": self.cfg.to_dict(),
                   "src_vocab": self.src_vocab.to_list(), "tgt_vocab": self.tgt_vocab.to_list()}
        sidecar.update(extra or {})
        nnkit.save_checkpoint(path, nnkit.state_tensors(self.model), sidecar)

    @classmethod
    def load(cls, path: Path) -> "Translator":
        tensors, sidecar = nnkit.load_checkpoint(path)
        if sidecar.get("kind") != "translator":
            raise TranslationError(f"{path} is not a translator checkpoint")
        translator = cls.create(BinTranConfig.from_dict(sidecar["config"]),
                                TokenVocab(sidecar["src_vocab"]), TokenVocab(sidecar["tgt_vocab"]))
        translator.model.load_state_dict(tensors)
        translator.model.eval()
        return translator

    def _check_segment(self, insns: Sequence[Instruction]) -> None:
        if not insns:
            raise TranslationError("cannot translate an empty segment")
        if len(insns) > self.cfg.max_source:
            raise TranslationError(f"segment of {len(insns)} instructions exceeds limit {self.cfg.max_source}")

    @torch.no_grad()
    def greedy(self, groups: Sequence[Sequence[Instruction]]) -> List[TranslationResult]:
        for g in groups:
            self._check_segment(g)
        self.model.eval()
        ids, valid, mask = batch_sources(groups, self.src_vocab, self.cfg)
        memory, _ = self.model.encode(ids, valid, mask)
        seq = torch.full((len(groups), 1), self.sos, dtype=torch.long)
        probs: List[List[float]] = [[] for _ in groups]
        done = torch.zeros(len(groups), dtype=torch.bool)
        for _ in range(self.cfg.max_target):
            logits, _ = self.model.decode(seq, memory, valid)
            p, nxt = F.softmax(logits[:, -1], dim=-1).max(dim=-1)
            nxt = torch.where(done, torch.full_like(nxt, self.tgt_vocab.pad_id), nxt)
            for b in range(len(groups)):
                if not done[b]:
                    probs[b].append(float(p[b]))
            seq = torch.cat([seq, nxt.unsqueeze(1)], dim=1)
            done = done | (nxt == self.eos)
            if bool(done.all()):
                break
        results = []
        for b, group in enumerate(groups):
            tokens, finished = [], False
            for idx in seq[b, 1:].tolist():
                if idx == self.eos:
                    finished = True
                    break
                if idx == self.tgt_vocab.pad_id:
                    break
                tokens.append(self.tgt_vocab.decode(idx))
            results.append(TranslationResult(tokens, probs[b][: len(tokens) + (1 if finished else 0)],
                                             truncated=not finished,
                                             low_confidence=call_arity_disagrees(tokens, group)))
        return results

    @torch.no_grad()
    def beam(self, insns: Sequence[Instruction], width: int) -> TranslationResult:
        self._check_segment(insns)
        self.model.eval()
        ids, valid, mask = batch_sources([insns], self.src_vocab, self.cfg)
        memory, _ = self.model.encode(ids, valid, mask)
        beams: List[Tuple[float, List[int], List[float], bool]] = [(0.0, [self.sos], [], False)]
        for _ in range(self.cfg.max_target):
            if all(b[3] for b in beams):
                break
            candidates = []
            for score, seq, probs, finished in beams:
                if finished:
                    candidates.append((score, seq, probs, True))
                    continue
                logits, _ = self.model.decode(torch.tensor([seq]), memory, valid)
                logp = F.log_softmax(logits[0, -1], dim=-1)
                top = torch.topk(logp, width)
                for lp, idx in zip(top.values.tolist(), top.indices.tolist()):
                    candidates.append((score + lp, seq + [idx], probs + [math.exp(lp)], idx == self.eos))
            candidates.sort(key=lambda c: (-c[0], c[1]))
            beams = candidates[:width]
        score, seq, probs, finished = beams[0]
        body = seq[1:-1] if finished else seq[1:]
        tokens = [self.tgt_vocab.decode(i) for i in body]
        return TranslationResult(tokens, probs, truncated=not finished,
                                 low_confidence=call_arity_disagrees(tokens, insns))

    def translate_many(self, groups: Sequence[Sequence[Instruction]], batch_size: int = 64) -> List[TranslationResult]:
        """Segments translated in batches; results follow input order."""
        if self.cfg.beam_width > 1:
            return [self.beam(g, self.cfg.beam_width) for g in groups]
        out: List[TranslationResult] = []
        for start in range(0, len(groups), batch_size):
            out.extend(self.greedy(groups[start:start + batch_size]))
        return out

    def translate(self, insns: Sequence[Instruction], with_attention: bool = False) -> TranslationResult:
        started = time.perf_counter()
        if self.cfg.beam_width > 1:
            result = self.beam(insns, self.cfg.beam_width)
        else:
            result = self.greedy([insns])[0]
        if with_attention:
            self.attach_attention(insns, result)
        result.seconds = time.perf_counter() - started
        return result

    @torch.no_grad()
    def attach_attention(self, insns: Sequence[Instruction], result: TranslationResult) -> None:
        ids, valid, mask = batch_sources([insns], self.src_vocab, self.cfg)
        memory, enc_weights = self.model.encode(ids, valid, mask)
        tgt = [self.sos] + [self.tgt_vocab.encode(t, "target") for t in result.tokens]
        _, cross = self.model.decode(torch.tensor([tgt]), memory, valid)
        result.encoder_attention = enc_weights[0].numpy()
        result.cross_attention = cross[0].numpy()

    @torch.no_grad()
    def token_log_probs(self, insns: Sequence[Instruction], target: Sequence[str]) -> List[float]:
        """Teacher-forced log p(y_t | y_<t, AC) for every target token and EOS."""
        self.model.eval()
        ids, valid, mask = batch_sources([insns], self.src_vocab, self.cfg)
        tgt_in, tgt_out = batch_targets([target], self.tgt_vocab)
        logits = self.model(ids, valid, mask, tgt_in)
        logp = F.log_softmax(logits[0], dim=-1)
        return [float(logp[t, tgt_out[0, t]]) for t in range(tgt_out.shape[1])]

    @torch.no_grad()
    def incremental_log_probs(self, insns: Sequence[Instruction], target: Sequence[str]) -> List[float]:
        """The same quantities computed one prefix at a time, as the decoder sees them at inference."""
        self.model.eval()
        ids, valid, mask = batch_sources([insns], self.src_vocab, self.cfg)
        memory, _ = self.model.encode(ids, valid, mask)
        seq = [self.sos]
        out = []
        for tok in list(target) + [EOS]:
            logits, _ = self.model.decode(torch.tensor([seq]), memory, valid)
            idx = self.tgt_vocab.encode(tok, "target")
            out.append(float(F.log_softmax(logits[0, -1], dim=-1)[idx]))
            seq.append(idx)
        return out

    def sequence_log_likelihood(self, insns: Sequence[Instruction], target: Sequence[str]) -> float:
        return sum(self.token_log_probs(insns, target))


def write_attention_csv(path: Path, insns: Sequence[Instruction], result: TranslationResult) -> List[Path]:
    """Encoder self-attention (N×N) and decoder cross-attention (T×N) as two CSV files."""
    if result.encoder_attention is None or result.cross_attention is None:
        raise TranslationError("translation carries no attention weights")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(" ".join(instruction_words(i)).replace(",", " ") for i in insns)
    enc_path = path.with_name(path.stem + ".encoder.csv")
    cross_path = path.with_name(path.stem + ".cross.csv")
    np.savetxt(enc_path, result.encoder_attention, delimiter=",", fmt="%.6f", header=header, comments="")
    rows = ["<sos>"] + result.tokens
    np.savetxt(cross_path, result.cross_attention, delimiter=",", fmt="%.6f",
               header=header + "\n# rows: " + " ".join(rows), comments="")
    return [enc_path, cross_path]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_loss: float
    val_word_accuracy: float
    val_sequence_accuracy: float
    lr: float


@dataclass
class TrainResult:
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_sequence_accuracy: float = -1.0
    checkpoint: Optional[Path] = None
    skipped: int = 0


def _fits(pair: TranslationPair, cfg: BinTranConfig) -> bool:
    return 0 < len(pair.insns) <= cfg.max_source and len(pair.target) + 1 <= cfg.max_target


def _mean_loss(model: BinTran, pairs: Sequence[TranslationPair], translator: Translator, batch_size: int) -> float:
    if not pairs:
        return 0.0
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start:start + batch_size]
            ids, valid, mask = batch_sources([p.insns for p in batch], translator.src_vocab, translator.cfg)
            tgt_in, tgt_out = batch_targets([p.target for p in batch], translator.tgt_vocab)
            logits = model(ids, valid, mask, tgt_in)
            total += float(nnkit.cross_entropy(logits, tgt_out, translator.tgt_vocab.pad_id)) * len(batch)
    return total / len(pairs)


def evaluate_pairs(translator: Translator, pairs: Sequence[TranslationPair], batch_size: int = 64
                   ) -> Tuple[float, float, List[List[str]]]:
    """(word accuracy, sequence accuracy, predictions) under greedy decoding."""
    if not pairs:
        return 0.0, 0.0, []
    preds = [r.tokens for r in translator.translate_many([p.insns for p in pairs], batch_size)]
    matched = total = exact = 0
    for pred, pair in zip(preds, pairs):
        m, t, e = compare_tokens(pred, pair.target)
        matched += m
        total += t
        exact += int(e)
    return (matched / total if total else 1.0), exact / len(pairs), preds


def train_translator(train: Sequence[SamplePair], validation: Sequence[SamplePair], cfg: BinTranConfig,
                     settings: TranslatorSettings, checkpoint: Path, deterministic: bool = True,
                     reporter: Optional[ProgressReporter] = None) -> TrainResult:
    """Teacher-forced cross-entropy; keeps the best-validation checkpoint."""
    nnkit.set_deterministic(cfg.seed, deterministic)
    reporter = reporter or NullProgressReporter()
    all_train = translation_pairs(train, cfg.target_form)
    train_pairs = [p for p in all_train if _fits(p, cfg)]
    val_pairs = [p for p in translation_pairs(validation, cfg.target_form) if _fits(p, cfg)]
    result = TrainResult(skipped=len(all_train) - len(train_pairs))
    if result.skipped:
        logging.warning(f"Skipped {result.skipped} training pairs over the length limits")
    if not train_pairs:
        raise TranslationError("no training pairs within the configured length limits")

    src_vocab = build_source_vocab([p.insns for p in train_pairs + val_pairs])
    tgt_vocab = build_target_vocab([p.target for p in train_pairs + val_pairs], cfg.target_form)
    translator = Translator.create(cfg, src_vocab, tgt_vocab)
    model = translator.model
    optimizer = nnkit.make_optimizer(model.parameters(), settings.optimizer, settings.lr, settings.momentum)
    scheduler = nnkit.make_scheduler(optimizer, settings.lr_step, settings.lr_gamma)
    gen = torch.Generator().manual_seed(cfg.seed)

    model.eval()
    initial = _mean_loss(model, train_pairs, translator, settings.batch_size)
    result.history.append(EpochRecord(0, initial, _mean_loss(model, val_pairs, translator, settings.batch_size),
                                      0.0, 0.0, settings.lr))
    logging.info(f"Translator: {len(train_pairs)} train / {len(val_pairs)} validation pairs, "
                 f"{nnkit.count_parameters(model)} parameters, initial loss {initial:.4f}")

    task = reporter.add_task("Training translator", total=settings.epochs)
    for epoch in range(1, settings.epochs + 1):
        model.train()
        order = torch.randperm(len(train_pairs), generator=gen).tolist()
        running = 0.0
        for step, start in enumerate(range(0, len(order), settings.batch_size)):
            batch = [train_pairs[i] for i in order[start:start + settings.batch_size]]
            ids, valid, mask = batch_sources([p.insns for p in batch], src_vocab, cfg)
            tgt_in, tgt_out = batch_targets([p.target for p in batch], tgt_vocab)
            loss = nnkit.cross_entropy(model(ids, valid, mask, tgt_in), tgt_out, tgt_vocab.pad_id)
            value = float(loss)
            if not math.isfinite(value):
                logging.error(f"Divergence at epoch {epoch} step {step}: loss {value}")
                raise DivergenceError(epoch, step, value)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), settings.clip_norm)
            optimizer.step()
            running += value * len(batch)
        lr = optimizer.param_groups[0]["lr"]
        scheduler.step()

        model.eval()
        val_loss = _mean_loss(model, val_pairs, translator, settings.batch_size)
        word, seq, _ = evaluate_pairs(translator, val_pairs, settings.batch_size)
        record = EpochRecord(epoch, running / len(train_pairs), val_loss, word, seq, lr)
        result.history.append(record)
        logging.info(f"Epoch {epoch}: loss={record.loss:.4f} val_loss={val_loss:.4f} "
                     f"val_word={word:.4f} val_seq={seq:.4f} lr={lr:.2e}")
        if seq > result.best_sequence_accuracy:
            result.best_sequence_accuracy = seq
            result.best_epoch = epoch
            translator.save(checkpoint, {"best_epoch": epoch})
            result.checkpoint = Path(checkpoint)
        reporter.update_task(task, advance=1, status=f"seq {seq:.3f}")
    reporter.remove_task(task)
    logging.info(f"Best validation sequence accuracy {result.best_sequence_accuracy:.4f} at epoch {result.best_epoch}")
    return result
