from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import NumericError


@dataclass(frozen=True)
class LayerConfig:
    d_model: int
    n_heads: int
    n_layers: int
    d_ff: int

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ff) < 1:
            raise ValueError("layer dimensions must be positive")


def sinusoidal_positions(length: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    inv = 10000.0 ** (-torch.arange(0, d, 2, dtype=torch.float64) / d)
    pe = torch.zeros(length, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * inv)
    pe[:, 1::2] = torch.cos(pos * inv)[:, : d // 2]
    return pe.to(dtype)


def check_finite(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {what}")
    return t


class AdaptableLinear(nn.Linear):
    """``nn.Linear`` with an optional low-rank adapter slot (see :mod:`duoasr.lora`)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__(d_in, d_out, bias=bias)
        self.adapter: nn.Module | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.linear(x, self.weight, self.bias)
        if self.adapter is not None:
            y = y + self.adapter(x)
        return y


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.wq = AdaptableLinear(d_model, d_model)
        self.wk = AdaptableLinear(d_model, d_model)
        self.wv = AdaptableLinear(d_model, d_model)
        self.wo = AdaptableLinear(d_model, d_model)

    def scores(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Attention probabilities, shape (B, heads, T, T)."""
        q, k = self._split(self.wq(x)), self._split(self.wk(x))
        att = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        if mask is not None:
            att = att.masked_fill(~mask, float("-inf"))
        return att.softmax(dim=-1)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, n, d = t.shape
        return t.view(b, n, self.n_heads, d // self.n_heads).transpose(1, 2)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        b, n, d = x.shape
        probs = self.scores(x, mask)
        out = (probs @ self._split(self.wv(x))).transpose(1, 2).reshape(b, n, d)
        return self.wo(out)


class AttentionBlock(nn.Module):
    """Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)) with GELU."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.d_model = d_model
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff1 = AdaptableLinear(d_model, d_ff)
        self.ff2 = AdaptableLinear(d_ff, d_model)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if x.dim() != 3 or x.shape[-1] != self.d_model:
            raise ValueError(f"expected (B, T, {self.d_model}) input, got {tuple(x.shape)}")
        x = x + self.attn(self.ln1(x), mask)
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


def causal_mask(length: int) -> torch.Tensor:
    return torch.ones(length, length, dtype=torch.bool).tril()[None, None]


def key_padding_mask(lengths: torch.Tensor, length: int) -> torch.Tensor:
    return (torch.arange(length)[None, :] < lengths[:, None])[:, None, None, :]


def conv_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    if length + 2 * padding < kernel:
        raise ValueError(f"sequence of length {length} (padding {padding}) is shorter than kernel {kernel}")
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None, stride: int = 1, padding: int = 0):
    """Convolution along time for (B, T, C_in) inputs; weight is (C_out, C_in, k)."""
    t_out = conv_output_length(x.shape[1], weight.shape[-1], stride, padding)
    y = F.conv1d(x.transpose(1, 2), weight, bias, stride=stride, padding=padding).transpose(1, 2)
    assert y.shape[1] == t_out
    return y


class Conv1d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride, self.padding = stride, padding
        bound = 1.0 / math.sqrt(c_in * kernel)
        self.weight = nn.Parameter(torch.empty(c_out, c_in, kernel).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.empty(c_out).uniform_(-bound, bound))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv1d(x, self.weight, self.bias, self.stride, self.padding)
