"""Named parameter groups.

A parameter's group is derived from its module path: adapter weights living under
``<top>.….adapter.*`` belong to ``<top>.lora``; everything else belongs to ``<top>``
(``whisper``, ``mhubert``, ``projector``, ``llm``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import torch
import torch.nn as nn


def group_of(name: str) -> str:
    top = name.split(".", 1)[0]
    return f"{top}.lora" if ".adapter." in name else top


def canonical_name(name: str) -> str:
    """Checkpoint name: ``whisper.blocks.0.attn.wq.adapter.A`` -> ``whisper.lora.blocks.0.attn.wq.A``."""
    if ".adapter." not in name:
        return name
    top, rest = name.split(".", 1)
    return f"{top}.lora.{rest.replace('.adapter.', '.')}"


@dataclass
class ParamGroup:
    name: str
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    trainable: bool = False

    def numel(self) -> int:
        return sum(t.numel() for t in self.tensors.values())


def param_groups(model: nn.Module) -> dict[str, ParamGroup]:
    groups: dict[str, ParamGroup] = {}
    for name, p in model.named_parameters():
        g = groups.setdefault(group_of(name), ParamGroup(group_of(name)))
        g.tensors[name] = p
    for g in groups.values():
        g.trainable = all(p.requires_grad for p in g.tensors.values())
    return groups


def set_trainable_groups(model: nn.Module, names: Iterable[str]) -> dict[str, torch.Tensor]:
    """Make exactly the named groups trainable; return their parameters by name."""
    names = set(names)
    groups = param_groups(model)
    unknown = names - set(groups)
    if unknown:
        raise KeyError(f"unknown parameter group(s): {', '.join(sorted(unknown))}")
    trainable = {}
    for g in groups.values():
        g.trainable = g.name in names
        for pname, p in g.tensors.items():
            p.requires_grad_(g.trainable)
            if g.trainable:
                trainable[pname] = p
    return trainable
