"""Parallel speech encoder: two transformer stacks over the same features, fused per frame."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn as nn

from .dsp import FeatureSequence
from .errors import DataError
from .nn.layers import AdaptableLinear, AttentionBlock, LayerConfig, check_finite, key_padding_mask, sinusoidal_positions

Branch = Literal["whisper_like", "mhubert_like"]


@dataclass(frozen=True)
class EncoderBranchConfig:
    branch: Branch
    layers: LayerConfig
    adaptation: Literal["lora", "full_finetune"]
    lora_rank: int | None = None
    lora_alpha: float | None = None

    def __post_init__(self):
        expected = {"whisper_like": "lora", "mhubert_like": "full_finetune"}.get(self.branch)
        if expected is None:
            raise ValueError(f"unknown encoder branch {self.branch!r}")
        if self.adaptation != expected:
            raise ValueError(f"{self.branch} branch must use {expected} adaptation, got {self.adaptation}")
        if self.adaptation == "lora" and (self.lora_rank is None or self.lora_alpha is None):
            raise ValueError("lora adaptation needs lora_rank and lora_alpha")


class SpeechEncoder(nn.Module):
    """Input projection + sinusoidal positions, N pre-norm blocks, final layer norm. Stride-free."""

    def __init__(self, n_mels: int, cfg: LayerConfig):
        super().__init__()
        self.cfg = cfg
        self.inp = AdaptableLinear(n_mels, cfg.d_model)
        self.blocks = nn.ModuleList(AttentionBlock(cfg.d_model, cfg.n_heads, cfg.d_ff) for _ in range(cfg.n_layers))
        self.ln = nn.LayerNorm(cfg.d_model)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """(B, T, n_mels) -> (B, T, d_model). Frames at or beyond ``lengths`` are ignored as keys."""
        b, t, n_mels = x.shape
        if n_mels != self.inp.in_features:
            raise ValueError(f"encoder expects {self.inp.in_features} features per frame, got {n_mels}")
        h = self.inp(x) + sinusoidal_positions(t, self.cfg.d_model, x.dtype)
        mask = None if lengths is None else key_padding_mask(lengths, t)
        for block in self.blocks:
            h = block(h, mask)
        return check_finite(self.ln(h), "encoder output")


@dataclass
class EncoderOutput:
    hidden: torch.Tensor  # (T, d)
    branch: str


@dataclass
class FusedFeatures:
    hidden: torch.Tensor  # (T, d1 + d2)
    d1: int
    d2: int


def _as_tensor(x: FeatureSequence | torch.Tensor, like: nn.Module) -> torch.Tensor:
    frames = x.frames if isinstance(x, FeatureSequence) else x
    dtype = next(like.parameters()).dtype
    return torch.as_tensor(frames, dtype=dtype)[None]


def encode_whisper_branch(x: FeatureSequence | torch.Tensor, encoder: SpeechEncoder) -> EncoderOutput:
    return EncoderOutput(encoder(_as_tensor(x, encoder))[0], "whisper_like")


def encode_mhubert_branch(x: FeatureSequence | torch.Tensor, encoder: SpeechEncoder) -> EncoderOutput:
    return EncoderOutput(encoder(_as_tensor(x, encoder))[0], "mhubert_like")


def fuse(hw: EncoderOutput | torch.Tensor, hm: EncoderOutput | torch.Tensor) -> FusedFeatures:
    """Concatenate along features: whisper-like columns first, then mhubert-like."""
    a = hw.hidden if isinstance(hw, EncoderOutput) else hw
    b = hm.hidden if isinstance(hm, EncoderOutput) else hm
    if a.shape[-2] != b.shape[-2]:
        raise DataError(f"cannot fuse encoder outputs of different lengths: {a.shape[-2]} vs {b.shape[-2]}")
    return FusedFeatures(torch.cat([a, b], dim=-1), a.shape[-1], b.shape[-1])
