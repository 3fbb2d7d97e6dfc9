"""Run configuration: one flat ``key = value`` file covering model, training and decoding.

Two built-in profiles exist. ``paper`` carries the full-scale hyperparameters
(validated but far too large to build on a desk machine); ``toy`` is the
desk-scale profile the tests and the CLI use by default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .nn.layers import LayerConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    profile: str = "toy"
    seed: int = 0
    n_mels: int = 80
    # encoders
    whisper_layers: int = 4
    whisper_d_model: int = 64
    whisper_heads: int = 4
    whisper_d_ff: int = 256
    mhubert_layers: int = 4
    mhubert_d_model: int = 64
    mhubert_heads: int = 4
    mhubert_d_ff: int = 256
    # decoder
    decoder_layers: int = 4
    decoder_d_model: int = 128
    decoder_heads: int = 4
    decoder_d_ff: int = 512
    decoder_embed_std: float = 0.3
    decoder_qk_gain: float = 2.0
    # adapters
    whisper_lora_rank: int = 8
    whisper_lora_alpha: float = 16.0
    llm_lora_rank: int = 16
    llm_lora_alpha: float = 8.0
    lora_scale_mode: str = "alpha"
    # projector: d_in must equal the fused encoder width, d_out the decoder width
    projector_d_in: int = 128
    projector_d_out: int = 128
    projector_hidden: int = 0
    projector_downsample: int = 4
    # optimisation
    lr_peak: float = 3e-3
    warmup: int = 100
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-6
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    batch_cap_s: float = 16.0
    stage1_steps: int = 1000
    stage2_steps: int = 1000
    stage3_steps: int = 2000
    rewarm_per_stage: bool = True
    valid_interval: int = 100
    valid_hours_per_language: float = 0.0
    early_stopping_patience: int = 0
    # decoding and scoring
    max_decode_len: int = 200
    norm_max_ngram: int = 8
    norm_min_repeats: int = 3
    score_normalize_text: bool = True

    def __post_init__(self):
        self.validate()

    @classmethod
    def toy(cls, **overrides) -> "RunConfig":
        # scale alpha makes the tiny adapters overshoot at lr 3e-3 in stage 3
        values = dict(lora_scale_mode="alpha_over_r")
        values.update(overrides)
        return cls(**values)

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        values = dict(
            profile="paper",
            n_mels=128,
            whisper_layers=32, whisper_d_model=1280, whisper_heads=20, whisper_d_ff=5120,
            mhubert_layers=12, mhubert_d_model=768, mhubert_heads=12, mhubert_d_ff=3072,
            decoder_layers=28, decoder_d_model=3584, decoder_heads=28, decoder_d_ff=18944,
            decoder_embed_std=1.0,
            projector_d_in=2048, projector_d_out=3584,
            lr_peak=1e-4, warmup=5000, batch_cap_s=120.0,
            stage1_steps=5000, stage2_steps=5000, stage3_steps=20000,
            valid_hours_per_language=2.0,
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def for_profile(cls, name: str, **overrides) -> "RunConfig":
        if name == "toy":
            return cls.toy(**overrides)
        if name == "paper":
            return cls.paper(**overrides)
        raise ConfigError(f"unknown profile {name!r} (expected 'toy' or 'paper')")

    def validate(self) -> None:
        fused = self.whisper_d_model + self.mhubert_d_model
        if self.projector_d_in != fused:
            raise ConfigError(f"projector_d_in={self.projector_d_in} must equal whisper+mhubert width {fused}")
        if self.projector_d_out != self.decoder_d_model:
            raise ConfigError(f"projector_d_out={self.projector_d_out} must equal decoder_d_model={self.decoder_d_model}")
        if self.projector_downsample != 4:
            raise ConfigError("projector_downsample must be 4")
        if min(self.stage1_steps, self.stage2_steps, self.stage3_steps) < 0:
            raise ConfigError("stage step counts must be >= 0")
        if self.clip_norm <= 0 or self.batch_cap_s <= 0 or self.warmup < 1:
            raise ConfigError("clip_norm and batch_cap_s must be positive, warmup >= 1")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_mels=self.n_mels,
            whisper=LayerConfig(self.whisper_d_model, self.whisper_heads, self.whisper_layers, self.whisper_d_ff),
            mhubert=LayerConfig(self.mhubert_d_model, self.mhubert_heads, self.mhubert_layers, self.mhubert_d_ff),
            decoder=LayerConfig(self.decoder_d_model, self.decoder_heads, self.decoder_layers, self.decoder_d_ff),
            whisper_lora_rank=self.whisper_lora_rank,
            whisper_lora_alpha=self.whisper_lora_alpha,
            llm_lora_rank=self.llm_lora_rank,
            llm_lora_alpha=self.llm_lora_alpha,
            lora_scale_mode=self.lora_scale_mode,
            projector_hidden=self.projector_hidden or None,
            embed_std=self.decoder_embed_std,
            qk_gain=self.decoder_qk_gain or None,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_peak=self.lr_peak,
            warmup=self.warmup,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
            batch_cap_s=self.batch_cap_s,
            stage_steps=(self.stage1_steps, self.stage2_steps, self.stage3_steps),
            rewarm_per_stage=self.rewarm_per_stage,
            valid_interval=self.valid_interval,
            early_stopping_patience=self.early_stopping_patience,
            seed=self.seed,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = [f"# duoasr run configuration ({self.profile} profile)"]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _convert(raw: str, typ, key: str):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for config key {key!r}") from None


def loads_config(text: str) -> RunConfig:
    """Parse a complete config. Every key must be present exactly once."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"config key {key!r} given twice (line {lineno})")
        values[key] = raw
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    for name in known:
        if name not in values:
            raise ConfigError(f"missing config key {name!r}")
    kwargs = {name: _convert(values[name], f.type, name) for name, f in known.items()}
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    return loads_config(Path(path).read_text(encoding="utf-8"))
