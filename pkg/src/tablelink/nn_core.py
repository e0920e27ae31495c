"""Numeric building blocks for the encoders.

Everything is written against plain tensors so each piece can be
gradient-checked in isolation; torch supplies autograd and the Adam step.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import Callable, Iterable, Sequence

import torch
from torch import Tensor, nn

from .text import tokenize

PAD, UNK, SEP = "[PAD]", "[UNK]", "[SEP]"
PAD_ID, UNK_ID, SEP_ID = 0, 1, 2
CHECKPOINT_FORMAT = "tablelink-checkpoint"
CHECKPOINT_VERSION = 1


class Segment(IntEnum):
    CELL = 0
    HEADER = 1
    CAPTION = 2
    TITLE = 3
    NAME = 4
    DESC = 5
    SEP = 6


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:3]) != [PAD, UNK, SEP]:
            raise ValueError("vocabulary must start with the reserved PAD, UNK, SEP tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        counts = Counter(tok for text in texts for tok in tokenize(text))
        words = sorted(w for w, c in counts.items() if c >= min_count)
        return cls([PAD, UNK, SEP, *words])

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(tok, UNK_ID) for tok in tokenize(text)]


@dataclass
class ModelConfig:
    vocab_size: int
    d: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 0  # 0 means 4 * d
    max_seq_len: int = 64
    max_table_tokens: int = 512
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.ff == 0:
            self.ff = 4 * self.d
        if self.d % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        for name in ("vocab_size", "d", "layers", "heads", "ff", "max_seq_len", "max_table_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)


def _param(gen: torch.Generator, dtype, *shape: int, std: float | None = None) -> nn.Parameter:
    if std is None:
        std = 1.0 / math.sqrt(shape[0])
    return nn.Parameter(torch.randn(*shape, generator=gen, dtype=torch.float64).to(dtype) * std)


def _zeros(dtype, *shape: int) -> nn.Parameter:
    return nn.Parameter(torch.zeros(*shape, dtype=dtype))


def _ones(dtype, *shape: int) -> nn.Parameter:
    return nn.Parameter(torch.ones(*shape, dtype=dtype))


class TransformerLayer(nn.Module):
    def __init__(self, d: int, ff: int, heads: int, gen: torch.Generator, dtype):
        super().__init__()
        self.heads = heads
        self.wq, self.wk, self.wv, self.wo = (_param(gen, dtype, d, d) for _ in range(4))
        self.bq, self.bk, self.bv, self.bo = (_zeros(dtype, d) for _ in range(4))
        self.ln1_g, self.ln1_b = _ones(dtype, d), _zeros(dtype, d)
        self.w1, self.b1 = _param(gen, dtype, d, ff), _zeros(dtype, ff)
        self.w2, self.b2 = _param(gen, dtype, ff, d), _zeros(dtype, d)
        self.ln2_g, self.ln2_b = _ones(dtype, d), _zeros(dtype, d)


class Lstm(nn.Module):
    def __init__(self, d: int, hidden: int, gen: torch.Generator, dtype):
        super().__init__()
        self.hidden = hidden
        self.w_ih = _param(gen, dtype, d, 4 * hidden)
        self.w_hh = _param(gen, dtype, hidden, 4 * hidden)
        self.b = _zeros(dtype, 4 * hidden)


class EncoderModel(nn.Module):
    """All trainable state shared by every encoder variant."""

    def __init__(self, config: ModelConfig, vocab: Vocab | None = None):
        super().__init__()
        if vocab is not None and len(vocab) != config.vocab_size:
            raise ValueError("vocab size does not match config")
        self.config = config
        self.vocab = vocab
        c = config
        dt = c.torch_dtype
        gen = torch.Generator().manual_seed(c.seed)
        self.tok = _param(gen, dt, c.vocab_size, c.d, std=1.0)
        self.pos = _param(gen, dt, max(c.max_seq_len, c.max_table_tokens), c.d, std=0.1)
        self.seg = _param(gen, dt, len(Segment), c.d, std=0.1)
        self.layers = nn.ModuleList(TransformerLayer(c.d, c.ff, c.heads, gen, dt) for _ in range(c.layers))
        self.lstm = Lstm(c.d, c.d, gen, dt)
        self.lin_w, self.lin_b = _param(gen, dt, c.d, c.d), _zeros(dt, c.d)
        self.nil = _param(gen, dt, c.d, std=0.1)

    @property
    def d(self) -> int:
        return self.config.d

    def embed(self, ids: Tensor, segs: Tensor) -> Tensor:
        """Token + position + segment embeddings; ids and segs are [..., L]."""
        length = ids.shape[-1]
        if length > self.pos.shape[0]:
            raise ValueError(f"sequence of {length} tokens exceeds positional table ({self.pos.shape[0]})")
        return self.tok[ids] + self.pos[:length] + self.seg[segs]

    def transformer(self, x: Tensor, mask: Tensor | None) -> Tensor:
        for layer in self.layers:
            x = transformer_layer(x, mask, layer)
        return x

    def state_tensors(self) -> dict[str, Tensor]:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention.

    ``mask[..., i, j]`` is True when query i may attend key j.  A query
    with no visible key returns the zero vector.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"incompatible shapes q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}")
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is None:
        return torch.softmax(scores, dim=-1) @ v
    if mask.shape[-2:] != scores.shape[-2:]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match scores {tuple(scores.shape)}")
    visible = mask.any(dim=-1, keepdim=True)
    scores = scores.masked_fill(~mask, -math.inf).masked_fill(~visible, 0.0)
    weights = torch.softmax(scores, dim=-1) * visible
    return weights @ v


def attention_weights(q: Tensor, k: Tensor, mask: Tensor | None = None) -> Tensor:
    """The weight matrix :func:`attention` applies to V (for inspection)."""
    eye = torch.eye(k.shape[-2], dtype=k.dtype).expand(*k.shape[:-2], k.shape[-2], k.shape[-2])
    return attention(q, k, eye, mask)


def multi_head_attention(x: Tensor, mask: Tensor | None, p: TransformerLayer) -> Tensor:
    *batch, length, d = x.shape
    h = p.heads
    dh = d // h

    def split(t: Tensor) -> Tensor:
        return t.reshape(*batch, length, h, dh).transpose(-2, -3)

    q, k, v = split(x @ p.wq + p.bq), split(x @ p.wk + p.bk), split(x @ p.wv + p.bv)
    m = None if mask is None else mask.unsqueeze(-3)
    out = attention(q, k, v, m).transpose(-2, -3).reshape(*batch, length, d)
    return out @ p.wo + p.bo


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gamma + beta


def transformer_layer(x: Tensor, mask: Tensor | None, p: TransformerLayer) -> Tensor:
    """Post-norm block: masked multi-head attention and a GELU feed-forward."""
    if x.shape[-1] != p.wq.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match layer width {p.wq.shape[0]}")
    x = layer_norm(x + multi_head_attention(x, mask, p), p.ln1_g, p.ln1_b)
    ff = torch.nn.functional.gelu(x @ p.w1 + p.b1) @ p.w2 + p.b2
    return layer_norm(x + ff, p.ln2_g, p.ln2_b)


def lstm_encode(x: Tensor, p: Lstm, lengths: Tensor | None = None) -> Tensor:
    """Run an LSTM over ``x`` ([L, d] or [B, L, d]) and return the last hidden state.

    With ``lengths``, each batch row stops updating after its own length.
    """
    single = x.dim() == 2
    if single:
        x = x.unsqueeze(0)
    batch, length, _ = x.shape
    if length == 0:
        raise ValueError("cannot run an LSTM over an empty sequence")
    h = x.new_zeros(batch, p.hidden)
    c = x.new_zeros(batch, p.hidden)
    xw = x @ p.w_ih + p.b
    for t in range(length):
        gates = xw[:, t] + h @ p.w_hh
        i, f, g, o = gates.chunk(4, dim=-1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        if lengths is None:
            h, c = h_new, c_new
        else:
            live = (lengths > t).unsqueeze(-1)
            h, c = torch.where(live, h_new, h), torch.where(live, c_new, c)
    return h[0] if single else h


def mean_pool(x: Tensor, positions: Sequence[int]) -> Tensor:
    positions = list(positions)
    if not positions:
        raise ValueError("mean_pool needs at least one position")
    if max(positions) >= x.shape[-2] or min(positions) < 0:
        raise IndexError(f"positions {positions} out of range for length {x.shape[-2]}")
    return x[..., positions, :].mean(dim=-2)


def masked_mean(x: Tensor, weights: Tensor) -> Tensor:
    """Batched mean pooling: ``weights`` [B, L] is a 0/1 selection per row."""
    counts = weights.sum(dim=-1, keepdim=True).clamp_min(1)
    return (weights.unsqueeze(-1) * x).sum(dim=-2) / counts


def softmax_xent(logits: Tensor, target: int) -> tuple[Tensor, Tensor]:
    if logits.numel() == 0:
        raise ValueError("softmax over an empty logit vector")
    if not 0 <= target < logits.shape[-1]:
        raise IndexError(f"target {target} out of range for {logits.shape[-1]} classes")
    logp = torch.log_softmax(logits, dim=-1)
    return logp.exp(), -logp[..., target]


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4,
               floor: float = 1e-6) -> float:
    """Max relative error between autograd and central-difference gradients.

    ``fn`` must return a scalar built from ``params`` (which require grad).
    The per-entry error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = list(params)
    analytic = torch.autograd.grad(fn(), params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            a = torch.zeros_like(p) if a is None else a
            flat = p.view(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = fn().item()
                flat[idx] = orig - eps
                down = fn().item()
                flat[idx] = orig
                num = (up - down) / (2 * eps)
                ana = a.view(-1)[idx].item()
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, err)
    return worst


@dataclass
class AdamConfig:
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


def make_optimizer(model: nn.Module, config: AdamConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.lr, betas=config.betas, eps=config.eps)


def optimize_step(model: nn.Module, gradients: Sequence[Tensor | None], optimizer: torch.optim.Optimizer) -> nn.Module:
    """Apply one Adam update with explicitly supplied gradients."""
    params = list(model.parameters())
    if len(gradients) != len(params):
        raise ValueError(f"got {len(gradients)} gradients for {len(params)} parameters")
    for p, g in zip(params, gradients):
        if g is not None and g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        p.grad = None if g is None else g.detach().clone()
    optimizer.step()
    return model


def save_checkpoint(path, model: EncoderModel, extra: dict | None = None) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab.itos if model.vocab is not None else None,
        "state": model.state_tensors(),
        "extra": extra or {},
    }, path)


def load_checkpoint(path) -> tuple[EncoderModel, dict]:
    blob = torch.load(path, weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    vocab = Vocab(blob["vocab"]) if blob["vocab"] is not None else None
    model = EncoderModel(ModelConfig(**blob["config"]), vocab)
    model.load_state_dict(blob["state"])
    return model, blob["extra"]
