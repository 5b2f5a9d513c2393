"""Checked tensor layers shared by the translator, the segmenter and the namer.

Tensors are batch-first `(B, T, D)` unless stated otherwise. Masks hold
{0, 1} entries; 0 removes a key position from a query row entirely.
"""
import json
import math
import struct
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor
from packaging.version import InvalidVersion, Version

from seamdec.constants import APP_VERSION, SIDECAR_SUFFIX
from seamdec.errors import CheckpointError, MaskError, NonFiniteError, ShapeError

CHECKPOINT_MAGIC = b"SEAMTNSR"
CHECKPOINT_FORMAT = 1


# ---------------------------------------------------------------------------
# Checks and determinism
# ---------------------------------------------------------------------------
def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return t


def check_shape(t: Tensor, shape: Sequence[Optional[int]], what: str = "tensor") -> Tensor:
    """`None` entries match any size."""
    if t.dim() != len(shape) or any(s is not None and s != d for s, d in zip(shape, t.shape)):
        raise ShapeError(f"{what} has shape {tuple(t.shape)}, expected {tuple(shape)}")
    return t


def set_deterministic(seed: int, enabled: bool = True) -> None:
    torch.manual_seed(seed)
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def init_fan_in_uniform(module: nn.Module, seed: int) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every parameter; LayerNorm keeps its identity affine."""
    gen = torch.Generator().manual_seed(seed)
    norm_params = {id(p) for m in module.modules() if isinstance(m, nn.LayerNorm) for p in m.parameters()}
    with torch.no_grad():
        for _, param in sorted(module.named_parameters(), key=lambda item: item[0]):
            if id(param) in norm_params:
                continue
            fan_in = param.shape[-1] if param.dim() > 1 else param.shape[0]
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            param.copy_(torch.rand(param.shape, generator=gen, dtype=param.dtype) * 2 * bound - bound)


# ---------------------------------------------------------------------------
# Core ops
# ---------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return check_finite(a @ b, "matmul output")


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    return check_finite(F.softmax(check_finite(x, "softmax input"), dim=dim), "softmax output")


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis, before any affine transform."""
    return check_finite(F.layer_norm(x, x.shape[-1:], eps=eps), "layer norm output")


def cross_entropy(logits: Tensor, targets: Tensor, ignore_index: int = -100, reduction: str = "mean") -> Tensor:
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
                           ignore_index=ignore_index, reduction=reduction)
    return loss


def masked_mean(x: Tensor, valid: Tensor, dim: int) -> Tensor:
    """Mean over `dim` counting only positions where `valid` is true."""
    weights = valid.to(x.dtype).unsqueeze(-1)
    total = (x * weights).sum(dim=dim)
    count = weights.sum(dim=dim).clamp(min=1.0)
    return total / count


def sinusoidal_table(length: int, width: int) -> Tensor:
    table = torch.zeros(length, width)
    position = torch.arange(0, length).unsqueeze(1).float()
    div_term = torch.exp(torch.arange(0, width, 2).float() / width * math.log(1 / 10000))
    table[:, 0::2] = torch.sin(position * div_term)
    table[:, 1::2] = torch.cos(position * div_term[: width // 2])
    return table


def relative_index(n_q: int, n_k: int, max_distance: int) -> Tensor:
    """clip(j - i, d) + d for every (i, j) pair."""
    if max_distance < 1:
        raise ValueError("max relative distance must be >= 1")
    distance = torch.arange(n_k)[None, :] - torch.arange(n_q)[:, None]
    return torch.clamp(distance, -max_distance, max_distance) + max_distance


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[Tensor] = None,
                     rel_table: Optional[Tensor] = None, max_distance: int = 20,
                     literal: bool = False, key_valid: Optional[Tensor] = None,
                     pad_self: bool = False) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product attention with a dependency mask and a key-side relative bias.

    q: (..., Tq, dk), k: (..., Tk, dk), v: (..., Tk, dv); mask broadcasts to (..., Tq, Tk).
    rel_table: (2d+1, dk). key_valid: (B, Tk) padding flags for batched inputs. With
    `pad_self` (self-attention only) padded query rows also attend to themselves,
    so a row that the mask leaves empty still has one key. With `literal` the mask
    multiplies the logits instead of removing positions.
    Returns (output, weights).
    """
    dk = q.shape[-1]
    n_q, n_k = q.shape[-2], k.shape[-2]
    logits = (q @ k.transpose(-2, -1)) / math.sqrt(dk)
    if rel_table is not None:
        r = rel_table[relative_index(n_q, n_k, max_distance)]
        logits = logits + torch.einsum("...qd,qkd->...qk", q, r) / math.sqrt(dk)

    allow = None
    if key_valid is not None:
        kv = key_valid.bool()
        while kv.dim() < logits.dim():
            kv = kv.unsqueeze(-2)
        allow = kv.expand(logits.shape).clone()
        if pad_self:
            if n_q != n_k:
                raise ShapeError(f"pad_self needs square attention, got {n_q}x{n_k}")
            pad_rows = ~key_valid.bool()
            while pad_rows.dim() < logits.dim() - 1:
                pad_rows = pad_rows.unsqueeze(-2)
            eye = torch.eye(n_q, dtype=torch.bool)
            allow = allow | (eye & pad_rows.unsqueeze(-1))
    if mask is not None:
        m = mask.to(logits.dtype)
        empty = (m.reshape(-1, n_q, n_k).sum(-1) == 0).nonzero()
        if len(empty):
            raise MaskError(int(empty[0, 1]))
        if literal:
            logits = logits * m
        else:
            mb = (m != 0).expand(logits.shape)
            allow = mb if allow is None else allow & mb
    if allow is not None:
        empty = (allow.reshape(-1, n_q, n_k).sum(-1) == 0).nonzero()
        if len(empty):
            raise MaskError(int(empty[0, 1]))
        logits = logits.masked_fill(~allow, float("-inf"))

    weights = F.softmax(logits, dim=-1)
    return weights @ v, weights


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------
class MultiHeadAttention(nn.Module):
    """Multi-head masked attention; the relative table is shared across heads."""

    def __init__(self, d_model: int, heads: int, max_distance: Optional[int] = None, literal: bool = False):
        super().__init__()
        if d_model % heads != 0:
            raise ShapeError(f"d_model {d_model} not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        self.max_distance = max_distance
        self.literal = literal
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.rel_table = nn.Parameter(torch.zeros(2 * max_distance + 1, self.head_dim)) if max_distance else None

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, query: Tensor, key: Tensor, value: Tensor, mask: Optional[Tensor] = None,
                key_valid: Optional[Tensor] = None, pad_self: bool = False) -> Tuple[Tensor, Tensor]:
        b, t, _ = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        if mask is not None and mask.dim() == 3:
            mask = mask.unsqueeze(1)
        kv = key_valid.unsqueeze(1) if key_valid is not None else None
        out, weights = masked_attention(q, k, v, mask, self.rel_table, self.max_distance or 1,
                                        self.literal, kv, pad_self)
        out = out.transpose(1, 2).contiguous().view(b, t, self.d_model)
        return self.out_proj(out), weights.mean(dim=1)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int):
        super().__init__()
        self.linear1 = nn.Linear(d_model, hidden)
        self.linear2 = nn.Linear(hidden, d_model)

    def forward(self, x: Tensor) -> Tensor:
        return self.linear2(F.relu(self.linear1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn: int, max_distance: Optional[int] = None,
                 literal: bool = False):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads, max_distance, literal)
        self.ff = FeedForward(d_model, ffn)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x: Tensor, mask: Optional[Tensor] = None,
                key_valid: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        attended, weights = self.self_attn(x, x, x, mask, key_valid, pad_self=True)
        x = self.norm1(x + attended)
        x = self.norm2(x + self.ff(x))
        return x, weights


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads)
        self.cross_attn = MultiHeadAttention(d_model, heads)
        self.ff = FeedForward(d_model, ffn)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)

    def forward(self, tgt: Tensor, memory: Tensor, memory_valid: Optional[Tensor] = None,
                tgt_valid: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        t = tgt.shape[1]
        causal = torch.tril(torch.ones(t, t, dtype=tgt.dtype))
        attended, _ = self.self_attn(tgt, tgt, tgt, causal, tgt_valid, pad_self=True)
        x = self.norm1(tgt + attended)
        crossed, weights = self.cross_attn(x, memory, memory, None, memory_valid)
        x = self.norm2(x + crossed)
        x = self.norm3(x + self.ff(x))
        return x, weights


class RecurrentCell(nn.Module):
    """Forget/input/output-gated recurrent step with finiteness checks."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.cell = nn.LSTMCell(input_size, hidden_size)
        self.hidden_size = hidden_size

    def forward(self, x: Tensor, state: Tuple[Tensor, Tensor]) -> Tuple[Tensor, Tensor]:
        h, c = self.cell(x, state)
        return check_finite(h, "recurrent hidden state"), c


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------
def make_optimizer(params, kind: str = "sgd", lr: float = 0.05, momentum: float = 0.9) -> torch.optim.Optimizer:
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr, momentum=momentum)
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer '{kind}'")


def make_scheduler(optimizer: torch.optim.Optimizer, step: int, gamma: float):
    return torch.optim.lr_scheduler.StepLR(optimizer, step_size=step, gamma=gamma)


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between autograd and central finite differences (use float64 params)."""
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    if loss.dim() != 0:
        raise ShapeError("grad_check needs a scalar loss")
    analytic = torch.autograd.grad(loss, list(params))
    worst = 0.0
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            flat = p.view(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                plus = loss_fn().item()
                flat[i] = original - eps
                minus = loss_fn().item()
                flat[i] = original
                numeric = (plus - minus) / (2 * eps)
                exact = gflat[i].item()
                denom = max(abs(numeric), abs(exact))
                err = abs(numeric - exact) / denom if denom > 1e-8 else abs(numeric - exact)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8"), "int64": np.dtype("<i8")}


def sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def save_checkpoint(path: Path, tensors: Dict[str, Tensor], sidecar: dict) -> None:
    """Magic, little-endian header length, JSON header, little-endian payload; JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        array = tensors[name].detach().cpu().numpy()
        dtype_name = str(array.dtype)
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype_name} for '{name}'")
        payload = np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes()
        entries.append({"name": name, "dtype": dtype_name, "shape": list(array.shape),
                        "offset": offset, "nbytes": len(payload)})
        chunks.append(payload)
        offset += len(payload)
    header = json.dumps({"format": CHECKPOINT_FORMAT, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for chunk in chunks:
            f.write(chunk)
    meta = dict(sidecar)
    meta["app_version"] = APP_VERSION
    with open(sidecar_path(path), 'w', encoding='utf-8') as f:
        json.dump(meta, f, sort_keys=True, indent=2)
    logging.info(f"Checkpoint written: {path} ({len(entries)} tensors, {offset} bytes)")


def _check_version(found: str) -> None:
    try:
        ours, theirs = Version(APP_VERSION), Version(found)
    except InvalidVersion:
        raise CheckpointError(f"unreadable checkpoint version '{found}'")
    if ours.major != theirs.major:
        raise CheckpointError(f"checkpoint written by {found}, incompatible with {APP_VERSION}")


def load_checkpoint(path: Path) -> Tuple[Dict[str, Tensor], dict]:
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            data = f.read()
        with open(sidecar_path(path), 'r', encoding='utf-8') as f:
            sidecar = json.load(f)
    except (IOError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    _check_version(str(sidecar.get("app_version", "0")))
    start = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<Q", data[start:start + 8])
    header = json.loads(data[start + 8:start + 8 + header_len].decode("utf-8"))
    base = start + 8 + header_len
    tensors: Dict[str, Tensor] = {}
    for entry in header["tensors"]:
        lo = base + entry["offset"]
        raw = data[lo:lo + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"truncated payload for '{entry['name']}'")
        array = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(array.astype(array.dtype.newbyteorder("="), copy=True))
    return tensors, sidecar


def state_tensors(module: nn.Module) -> Dict[str, Tensor]:
    return {name: t for name, t in module.state_dict().items()}


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_names(module: nn.Module) -> List[str]:
    return sorted(name for name, _ in module.named_parameters())
