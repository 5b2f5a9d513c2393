"""Boundary prediction over canonical instructions: which instruction closes a source line."""
import math
import logging
from pathlib import Path
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from seamdec import nnkit
from seamdec.bintran import (MAX_INSN_TOKENS, PAD, UNK, BinTranConfig, Instruction, InstructionEmbedding,
                             TokenVocab, batch_sources, instruction_words)
from seamdec.config import SegmenterSettings
from seamdec.constants import INSN_SEP
from seamdec.errors import DegenerateLabels, DivergenceError, TranslationError
from seamdec.metrics import boundary_f1
from seamdec.models import SamplePair, boundary_ranges
from seamdec.progress import NullProgressReporter, ProgressReporter


def segment_ranges(probabilities: Sequence[float], threshold: float = 0.5) -> List[Tuple[int, int]]:
    """Ranges closed at every probability >= threshold; the last instruction always closes one."""
    bits = [1 if p >= threshold else 0 for p in probabilities]
    if bits:
        bits[-1] = 1
    return boundary_ranges(bits)


def oracle_ranges(boundaries: Sequence[int]) -> List[Tuple[int, int]]:
    bits = list(boundaries)
    if bits:
        bits[-1] = 1
    return boundary_ranges(bits)


@dataclass
class SegmenterConfig:
    d_model: int = 64
    heads: int = 4
    ffn: int = 128
    max_distance: int = 20
    mask_mode: str = "dependency"
    threshold: float = 0.5
    max_insn_tokens: int = MAX_INSN_TOKENS
    seed: int = 1

    @classmethod
    def from_settings(cls, settings: SegmenterSettings, seed: int) -> "SegmenterConfig":
        return cls(settings.d_model, settings.heads, settings.ffn, settings.max_distance,
                   settings.mask_mode, settings.threshold, MAX_INSN_TOKENS, seed)

    def batching(self) -> BinTranConfig:
        # batch_sources only reads the mask mode and the token limit
        return BinTranConfig(d_model=self.d_model, heads=self.heads, max_distance=self.max_distance,
                             mask_mode=self.mask_mode, max_insn_tokens=self.max_insn_tokens)

    def to_dict(self) -> dict:
        return asdict(self)


class SegModel(nn.Module):
    def __init__(self, cfg: SegmenterConfig, vocab_size: int, pad_id: int):
        super().__init__()
        self.cfg = cfg
        self.embed = InstructionEmbedding(vocab_size, cfg.d_model, cfg.max_insn_tokens, pad_id)
        self.encoder = nnkit.EncoderLayer(cfg.d_model, cfg.heads, cfg.ffn, cfg.max_distance,
                                          cfg.mask_mode == "literal")
        self.head = nn.Linear(cfg.d_model, 1)

    def forward(self, ids: Tensor, valid: Tensor, mask: Tensor) -> Tensor:
        x, _ = self.encoder(self.embed(ids), None if self.cfg.mask_mode == "none" else mask, valid)
        return self.head(x).squeeze(-1)


class Segmenter:
    """A trained boundary classifier and its instruction vocabulary."""

    def __init__(self, model: SegModel, vocab: TokenVocab):
        self.model = model
        self.cfg = model.cfg
        self.vocab = vocab

    @classmethod
    def create(cls, cfg: SegmenterConfig, vocab: TokenVocab) -> "Segmenter":
        model = SegModel(cfg, len(vocab), vocab.pad_id)
        nnkit.init_fan_in_uniform(model, cfg.seed)
        return cls(model, vocab)

    def save(self, path: Path, extra: Optional[dict] = None) -> None:
        sidecar = {"kind": "segmenter", "config": self.cfg.to_dict(), "vocab": self.vocab.to_list()}
        sidecar.update(extra or {})
        nnkit.save_checkpoint(path, nnkit.state_tensors(self.model), sidecar)

    @classmethod
    def load(cls, path: Path) -> "Segmenter":
        tensors, sidecar = nnkit.load_checkpoint(path)
        if sidecar.get("kind") != "segmenter":
            raise TranslationError(f"{path} is not a segmenter checkpoint")
        segmenter = cls.create(SegmenterConfig(**sidecar["config"]), TokenVocab(sidecar["vocab"]))
        segmenter.model.load_state_dict(tensors)
        segmenter.model.eval()
        return segmenter

    def _known(self, insns: Sequence[Instruction]) -> List[List[str]]:
        # unseen operand tokens fall back to UNK rather than failing the whole function
        return [[t if t in self.vocab or t == "," else UNK for t in insn] for insn in insns]

    @torch.no_grad()
    def probabilities(self, insns: Sequence[Instruction]) -> List[float]:
        if not insns:
            return []
        self.model.eval()
        ids, valid, mask = batch_sources([self._known(insns)], self.vocab, self.cfg.batching())
        return torch.sigmoid(self.model(ids, valid, mask))[0].tolist()

    def segment(self, insns: Sequence[Instruction]) -> List[Tuple[int, int]]:
        return segment_ranges(self.probabilities(insns), self.cfg.threshold)


@dataclass
class SegEpoch:
    epoch: int
    loss: float
    val_f1: float


@dataclass
class SegTrainResult:
    history: List[SegEpoch] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = -1.0
    checkpoint: Optional[Path] = None


def _label_check(samples: Sequence[SamplePair]) -> None:
    values = {bit for s in samples for bit in s.boundaries}
    if len(values) == 1:
        raise DegenerateLabels(values.pop())


def evaluate_segmenter(segmenter: Segmenter, samples: Sequence[SamplePair]) -> float:
    predicted, gold = [], []
    for sample in samples:
        probs = segmenter.probabilities(sample.ac)
        bits = [1 if p >= segmenter.cfg.threshold else 0 for p in probs]
        if bits:
            bits[-1] = 1
        predicted.append(bits)
        gold.append(sample.boundaries)
    return boundary_f1(predicted, gold)


def train_segmenter(train: Sequence[SamplePair], validation: Sequence[SamplePair], cfg: SegmenterConfig,
                    settings: SegmenterSettings, checkpoint: Path, deterministic: bool = True,
                    reporter: Optional[ProgressReporter] = None) -> SegTrainResult:
    nnkit.set_deterministic(cfg.seed, deterministic)
    reporter = reporter or NullProgressReporter()
    train = [s for s in train if s.ac]
    _label_check(train)
    vocab = TokenVocab.build((instruction_words(i) for s in list(train) + list(validation) for i in s.ac),
                             [PAD, UNK, INSN_SEP])
    segmenter = Segmenter.create(cfg, vocab)
    model = segmenter.model
    batching = cfg.batching()
    optimizer = nnkit.make_optimizer(model.parameters(), settings.optimizer, settings.lr, settings.momentum)
    scheduler = nnkit.make_scheduler(optimizer, settings.lr_step, settings.lr_gamma)
    gen = torch.Generator().manual_seed(cfg.seed)
    result = SegTrainResult()
    logging.info(f"Segmenter: {len(train)} train / {len(validation)} validation functions, "
                 f"{nnkit.count_parameters(model)} parameters")

    task = reporter.add_task("Training segmenter", total=settings.epochs)
    for epoch in range(1, settings.epochs + 1):
        model.train()
        order = torch.randperm(len(train), generator=gen).tolist()
        running, count = 0.0, 0
        for step, start in enumerate(range(0, len(order), settings.batch_size)):
            batch = [train[i] for i in order[start:start + settings.batch_size]]
            ids, valid, mask = batch_sources([s.ac for s in batch], vocab, batching)
            labels = torch.zeros(valid.shape)
            for b, sample in enumerate(batch):
                labels[b, : len(sample.boundaries)] = torch.tensor(sample.boundaries, dtype=torch.float)
            logits = model(ids, valid, mask)
            loss = F.binary_cross_entropy_with_logits(logits[valid], labels[valid])
            value = float(loss)
            if not math.isfinite(value):
                raise DivergenceError(epoch, step, value)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), settings.clip_norm)
            optimizer.step()
            running += value * int(valid.sum())
            count += int(valid.sum())
        scheduler.step()
        model.eval()
        f1 = evaluate_segmenter(segmenter, validation) if validation else 0.0
        result.history.append(SegEpoch(epoch, running / max(count, 1), f1))
        logging.info(f"Segmenter epoch {epoch}: loss={running / max(count, 1):.4f} val_f1={f1:.4f}")
        if f1 > result.best_f1:
            result.best_f1 = f1
            result.best_epoch = epoch
            segmenter.save(checkpoint, {"best_epoch": epoch})
            result.checkpoint = Path(checkpoint)
        reporter.update_task(task, advance=1, status=f"f1 {f1:.3f}")
    reporter.remove_task(task)
    return result
