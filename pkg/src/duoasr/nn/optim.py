"""Adam with decoupled weight decay, warmup + inverse-sqrt schedule, global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import torch

from ..errors import NumericError


def lr_at(step: int, warmup: int, lr_peak: float) -> float:
    """Linear warmup to ``lr_peak`` at ``step == warmup``, then ``lr_peak * sqrt(warmup / step)``."""
    if step < 0 or warmup < 1:
        raise ValueError("need step >= 0 and warmup >= 1")
    if step == 0:
        return 0.0
    return lr_peak * min(step / warmup, math.sqrt(warmup / step))


def global_norm(tensors: Iterable[torch.Tensor]) -> float:
    total = 0.0
    for t in tensors:
        if t is not None:
            total += float(torch.sum(t.detach().double() ** 2))
    return math.sqrt(total)


def clip_global_norm(grads: list[torch.Tensor], max_norm: float) -> tuple[list[torch.Tensor], float]:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the (possibly scaled) gradients and the norm measured before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            if g is not None:
                g.mul_(scale)
    return grads, norm


def backward(loss: torch.Tensor, named_params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Run reverse mode from a scalar loss; return gradients of the given trainable parameters.

    Parameters that receive no gradient map to zeros.
    """
    if loss.numel() != 1:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss).all():
        raise NumericError(f"non-finite loss {float(loss.detach())}")
    for p in named_params.values():
        p.grad = None
    loss.backward()
    grads = {}
    for name, p in named_params.items():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    return grads


@dataclass
class AdamHyper:
    lr_peak: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-6
    weight_decay: float = 0.01


@dataclass
class OptimizerState:
    hyper: AdamHyper = field(default_factory=AdamHyper)
    step_count: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def for_params(cls, named_params: Mapping[str, torch.Tensor], hyper: AdamHyper | None = None):
        state = cls(hyper or AdamHyper())
        for name, p in named_params.items():
            state.exp_avg[name] = torch.zeros_like(p, requires_grad=False)
            state.exp_avg_sq[name] = torch.zeros_like(p, requires_grad=False)
        return state


@torch.no_grad()
def adam_step(
    named_params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
    state: OptimizerState,
    lr: float,
) -> OptimizerState:
    """One bias-corrected Adam update, in place. Weight decay is decoupled: ``p -= lr*wd*p`` first.

    Only parameters present in ``state`` are touched; anything else is treated as frozen.
    """
    h = state.hyper
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - h.beta1**t
    c2 = 1.0 - h.beta2**t
    for name, m in state.exp_avg.items():
        p, g = named_params[name], grads[name]
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch for {name}: param {tuple(p.shape)}, grad {tuple(g.shape)}")
        v = state.exp_avg_sq[name]
        if h.weight_decay:
            p.mul_(1.0 - lr * h.weight_decay)
        m.mul_(h.beta1).add_(g, alpha=1.0 - h.beta1)
        v.mul_(h.beta2).addcmul_(g, g, value=1.0 - h.beta2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + h.eps))
    return state
