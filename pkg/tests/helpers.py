"""Small models and synthetic examples shared by the trainer, CLI and acceptance tests."""

from __future__ import annotations

import zlib

import numpy as np
import torch

from duoasr.dsp import byte_templates, render_text
from duoasr.lexicon import sample_texts
from duoasr.model import ModelConfig
from duoasr.nn import LayerConfig
from duoasr.trainer import Example


def tiny_model_config(n_mels: int = 8, d: int = 16, layers: int = 2, seed: int = 0) -> ModelConfig:
    return ModelConfig(
        n_mels=n_mels,
        whisper=LayerConfig(d, 2, layers, 2 * d),
        mhubert=LayerConfig(d, 2, layers, 2 * d),
        decoder=LayerConfig(d, 2, layers, 2 * d),
        whisper_lora_rank=4,
        llm_lora_rank=4,
        embed_std=0.3,
        qk_gain=2.0,
        seed=seed,
    )


def make_examples(langs=("en", "ja"), per_language=4, seed=0, n_mels=8, noise_std=0.01, prefix="utt"):
    templates = byte_templates(seed, n_mels)
    out = []
    counters: dict[str, int] = {}
    for code, text in sample_texts(list(langs), per_language, seed + 1):
        i = counters[code] = counters.get(code, -1) + 1
        uid = f"{prefix}-{code}-{i:05d}"
        rng = np.random.default_rng([seed, zlib.crc32(uid.encode())])
        frames = render_text(text, templates, noise_std, rng)
        out.append(Example(uid, code, torch.from_numpy(frames), text, frames.shape[0] / 100.0))
    return out
