"""Convolutional projector from fused encoder states to decoder embeddings (x4 time reduction)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DataError
from .nn.layers import AdaptableLinear, Conv1d, check_finite

DOWNSAMPLE = 4


@dataclass(frozen=True)
class ProjectorConfig:
    d_in: int
    d_out: int
    d_hidden: int | None = None
    local_kernel: int = 3
    down_kernel: int = 4
    down_stride: int = DOWNSAMPLE

    def __post_init__(self):
        if self.down_stride != DOWNSAMPLE:
            raise ValueError(f"projector downsampling must be x{DOWNSAMPLE}, got x{self.down_stride}")
        if self.local_kernel % 2 != 1:
            raise ValueError("local kernel must be odd to preserve length")
        if min(self.d_in, self.d_out, self.hidden) < 1:
            raise ValueError("projector dimensions must be positive")

    @property
    def hidden(self) -> int:
        return self.d_hidden if self.d_hidden is not None else self.d_in


@dataclass
class ProjectedSpeech:
    embeddings: torch.Tensor  # (T', d_out)

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def projected_length(t: int) -> int:
    if t < DOWNSAMPLE:
        raise DataError("utterance too short to project")
    return (t - DOWNSAMPLE) // DOWNSAMPLE + 1


class Projector(nn.Module):
    """conv(k=3) -> GELU -> strided conv(k=4, s=4) -> GELU -> linear -> GELU -> linear -> LayerNorm."""

    def __init__(self, cfg: ProjectorConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.local = Conv1d(cfg.d_in, h, cfg.local_kernel, 1, cfg.local_kernel // 2)
        self.down = Conv1d(h, h, cfg.down_kernel, cfg.down_stride, 0)
        self.fc1 = AdaptableLinear(h, h)
        self.fc2 = AdaptableLinear(h, cfg.d_out)
        self.ln = nn.LayerNorm(cfg.d_out)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        """(B, T, d_in) -> (B, floor(T/4), d_out)."""
        if h.shape[-1] != self.cfg.d_in:
            raise ValueError(f"projector expects {self.cfg.d_in} input features, got {h.shape[-1]}")
        projected_length(h.shape[1])
        y = F.gelu(self.local(h))
        y = F.gelu(self.down(y))
        y = self.fc2(F.gelu(self.fc1(y)))
        return check_finite(self.ln(y), "projector output")


def project(fused, projector: Projector) -> ProjectedSpeech:
    hidden = fused.hidden if hasattr(fused, "hidden") else fused
    return ProjectedSpeech(projector(hidden[None])[0])
