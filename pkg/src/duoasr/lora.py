"""Low-rank adapters on attention query/value projections.

The adapted map is ``W x + scale * A (B x)`` with ``A`` of shape (d, r) and ``B`` of
shape (r, d). ``scale`` is ``alpha`` (the default) or ``alpha / r``.
"""

from __future__ import annotations

import fnmatch
import re
from typing import Literal

import torch
import torch.nn as nn

from .nn.layers import AdaptableLinear
from .nn.params import ParamGroup, group_of

ScaleMode = Literal["alpha", "alpha_over_r"]
ADAPTABLE = re.compile(r"(^|.*\.)attn\.w[qv]$")


class LoraAdapter(nn.Module):
    def __init__(self, d: int, r: int, alpha: float, scale_mode: ScaleMode = "alpha", target: str = ""):
        super().__init__()
        if not 1 <= r <= d:
            raise ValueError(f"LoRA rank must satisfy 1 <= r <= d, got r={r}, d={d}")
        if scale_mode not in ("alpha", "alpha_over_r"):
            raise ValueError(f"unknown scale_mode {scale_mode!r}")
        self.rank, self.alpha, self.scale_mode, self.target = r, float(alpha), scale_mode, target
        self.A = nn.Parameter(torch.zeros(d, r))
        self.B = nn.Parameter(torch.zeros(r, d))

    @property
    def scale(self) -> float:
        return self.alpha if self.scale_mode == "alpha" else self.alpha / self.rank

    def delta(self) -> torch.Tensor:
        return self.scale * (self.A @ self.B)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # Row-vector form of scale * A (B x); never materializes the d x d delta.
        if x.shape[-1] != self.B.shape[1]:
            raise ValueError(f"adapter expects inputs of width {self.B.shape[1]}, got {x.shape[-1]}")
        return self.scale * ((x @ self.B.T) @ self.A.T)

    def extra_repr(self) -> str:
        return f"target={self.target!r}, r={self.rank}, alpha={self.alpha}, scale_mode={self.scale_mode}"


def init_adapter(
    d: int, r: int, alpha: float, seed: int, scale_mode: ScaleMode = "alpha", target: str = ""
) -> LoraAdapter:
    """A ~ N(0, 1/r), B = 0, so the initial delta is exactly zero."""
    adapter = LoraAdapter(d, r, alpha, scale_mode, target)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        adapter.A.copy_(torch.randn(d, r, generator=gen) / r**0.5)
    return adapter


def _check_dims(weight: torch.Tensor, adapter: LoraAdapter) -> None:
    d_out, d_in = weight.shape
    if adapter.A.shape[0] != d_out or adapter.B.shape[1] != d_in:
        raise ValueError(
            f"adapter {tuple(adapter.A.shape)}x{tuple(adapter.B.shape)} does not fit weight {tuple(weight.shape)}"
        )


def adapted_matvec(weight: torch.Tensor, adapter: LoraAdapter, x: torch.Tensor) -> torch.Tensor:
    """``W x + scale * A (B x)`` for a vector or a batch of row vectors."""
    _check_dims(weight, adapter)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {tuple(weight.shape)}")
    return x @ weight.T + adapter(x)


def merge(weight: torch.Tensor, adapter: LoraAdapter) -> torch.Tensor:
    _check_dims(weight, adapter)
    return weight.detach() + adapter.delta().detach()


def inject(
    model: nn.Module,
    targets: list[str] | tuple[str, ...],
    r: int,
    alpha: float,
    scale_mode: ScaleMode = "alpha",
    seed: int = 0,
) -> tuple[dict[str, LoraAdapter], ParamGroup]:
    """Attach one adapter to every query/value projection matched by ``targets``.

    Patterns are shell-style globs over module paths (``"llm.*.attn.wq"``).
    The adapters form their own parameter group; base weights keep theirs.
    """
    linears = {name: m for name, m in model.named_modules() if isinstance(m, AdaptableLinear)}
    matched: dict[str, AdaptableLinear] = {}
    for pattern in targets:
        hits = [n for n in linears if fnmatch.fnmatchcase(n, pattern)]
        if not hits:
            raise ValueError(f"LoRA target pattern {pattern!r} matched no parameters")
        bad = [n for n in hits if not ADAPTABLE.match(n)]
        if bad:
            raise ValueError(f"LoRA target pattern {pattern!r} matches non query/value matrices: {bad[:3]}")
        for n in hits:
            matched[n] = linears[n]
    adapters = {}
    group_names = set()
    for i, (name, lin) in enumerate(sorted(matched.items())):
        d_out, d_in = lin.weight.shape
        if d_out != d_in:
            raise ValueError(f"{name} is not square ({d_out}x{d_in})")
        adapter = init_adapter(d_in, r, alpha, seed * 100003 + i, scale_mode, target=name)
        adapter.to(dtype=lin.weight.dtype)
        lin.adapter = adapter
        adapters[name] = adapter
        group_names.add(group_of(name + ".adapter.A"))
    if len(group_names) != 1:
        raise ValueError(f"targets span several model parts: {sorted(group_names)}")
    group = ParamGroup(group_names.pop(), trainable=False)
    for name, adapter in adapters.items():
        group.tensors[f"{name}.adapter.A"] = adapter.A
        group.tensors[f"{name}.adapter.B"] = adapter.B
    return adapters, group
