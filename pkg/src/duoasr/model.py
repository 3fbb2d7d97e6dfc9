"""The assembled model: parallel encoders -> projector -> prompted causal decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
import torch.nn as nn

from .errors import DataError
from .encoder import EncoderBranchConfig, SpeechEncoder, fuse
from .llm import Decoder, DecodeResult, LlmInput, assemble_input, greedy_decode, lm_loss_batch, make_prompt, tokenize
from .lora import inject
from .nn.layers import LayerConfig
from .projector import Projector, ProjectorConfig, projected_length

WHISPER_TARGETS = ("whisper.blocks.*.attn.wq", "whisper.blocks.*.attn.wv")
LLM_TARGETS = ("llm.blocks.*.attn.wq", "llm.blocks.*.attn.wv")


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 80
    whisper: LayerConfig = field(default_factory=lambda: LayerConfig(64, 4, 4, 256))
    mhubert: LayerConfig = field(default_factory=lambda: LayerConfig(64, 4, 4, 256))
    decoder: LayerConfig = field(default_factory=lambda: LayerConfig(128, 4, 4, 512))
    whisper_lora_rank: int = 8
    whisper_lora_alpha: float = 16.0
    llm_lora_rank: int = 16
    llm_lora_alpha: float = 8.0
    lora_scale_mode: str = "alpha"
    projector_hidden: int | None = None
    embed_std: float = 1.0
    qk_gain: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.branch_configs()
        self.projector_config()
        if self.lora_scale_mode not in ("alpha", "alpha_over_r"):
            raise ValueError(f"unknown lora_scale_mode {self.lora_scale_mode!r}")
        if not 1 <= self.whisper_lora_rank <= self.whisper.d_model:
            raise ValueError("whisper LoRA rank must be in [1, d_model]")
        if not 1 <= self.llm_lora_rank <= self.decoder.d_model:
            raise ValueError("llm LoRA rank must be in [1, d_model]")

    def branch_configs(self) -> tuple[EncoderBranchConfig, EncoderBranchConfig]:
        return (
            EncoderBranchConfig("whisper_like", self.whisper, "lora", self.whisper_lora_rank, self.whisper_lora_alpha),
            EncoderBranchConfig("mhubert_like", self.mhubert, "full_finetune"),
        )

    def projector_config(self) -> ProjectorConfig:
        return ProjectorConfig(self.whisper.d_model + self.mhubert.d_model, self.decoder.d_model, self.projector_hidden)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        """Full-scale dimensions (public Whisper-large-v3 / mHuBERT-147 / Qwen2.5-7B shapes).

        Only meant for validation; building it needs far more memory than a desk machine has.
        """
        return cls(
            n_mels=128,
            whisper=LayerConfig(1280, 20, 32, 5120),
            mhubert=LayerConfig(768, 12, 12, 3072),
            decoder=LayerConfig(3584, 28, 28, 18944),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("whisper", "mhubert", "decoder"):
            if isinstance(d.get(key), dict):
                d[key] = LayerConfig(**d[key])
        return cls(**d)


class DualEncoderASR(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.whisper = SpeechEncoder(cfg.n_mels, cfg.whisper)
        self.mhubert = SpeechEncoder(cfg.n_mels, cfg.mhubert)
        self.projector = Projector(cfg.projector_config())
        self.llm = Decoder(cfg.decoder, cfg.embed_std, cfg.qk_gain)
        self.whisper_adapters, _ = inject(
            self, WHISPER_TARGETS, cfg.whisper_lora_rank, cfg.whisper_lora_alpha, cfg.lora_scale_mode, seed=cfg.seed * 2 + 1
        )
        self.llm_adapters, _ = inject(
            self, LLM_TARGETS, cfg.llm_lora_rank, cfg.llm_lora_alpha, cfg.lora_scale_mode, seed=cfg.seed * 2 + 2
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.llm.embed.weight.dtype

    def fused_features(self, feats: Sequence[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad a list of (T_i, n_mels) arrays; return fused (B, T, d1+d2) states and lengths.

        Rows past each utterance's length are zeroed so the projector sees the same
        zero padding it would see on the utterance alone.
        """
        for f in feats:
            if f.ndim != 2 or f.shape[1] != self.cfg.n_mels:
                raise DataError(f"expected (T, {self.cfg.n_mels}) features, got {tuple(f.shape)}")
        lengths = torch.tensor([f.shape[0] for f in feats])
        t = int(lengths.max())
        x = torch.zeros(len(feats), t, self.cfg.n_mels, dtype=self.dtype)
        for i, f in enumerate(feats):
            x[i, : f.shape[0]] = torch.as_tensor(f, dtype=self.dtype)
        lens = None if bool((lengths == t).all()) else lengths
        fused = fuse(self.whisper(x, lens), self.mhubert(x, lens)).hidden
        if lens is not None:
            fused = fused * (torch.arange(t)[None, :, None] < lengths[:, None, None]).to(fused.dtype)
        return fused, lengths

    def speech_embeddings(self, feats: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        for f in feats:
            projected_length(f.shape[0])
        fused, lengths = self.fused_features(feats)
        proj = self.projector(fused)
        return [proj[i, : int(lengths[i]) // 4] for i in range(len(feats))]

    def build_inputs(self, languages: Sequence[str], speech: Sequence[torch.Tensor], texts: Sequence[str] | None):
        inputs: list[LlmInput] = []
        targets: list[list[int]] = []
        for i, (lang, s) in enumerate(zip(languages, speech)):
            toks = tokenize(texts[i]) if texts is not None else None
            inputs.append(assemble_input(self.llm, make_prompt(lang), s, toks))
            targets.append(toks or [])
        return inputs, targets

    def loss(self, languages: Sequence[str], feats: Sequence[torch.Tensor], texts: Sequence[str]) -> torch.Tensor:
        inputs, targets = self.build_inputs(languages, self.speech_embeddings(feats), texts)
        return lm_loss_batch(self.llm, inputs, targets)

    @torch.no_grad()
    def transcribe(self, language: str, feats: torch.Tensor, max_len: int = 256) -> DecodeResult:
        speech = self.speech_embeddings([feats])[0]
        return greedy_decode(self.llm, make_prompt(language), speech, max_len)
