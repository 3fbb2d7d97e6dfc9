"""Tri-stage training: per-stage freeze masks, the optimisation loop, validation, checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .corpus import Batch, Manifest, Utterance, make_batches
from .errors import DataError, NumericError
from .model import DualEncoderASR, ModelConfig
from .nn.checkpoint import MODEL_MAGIC, OPTIM_MAGIC, read_tensor_map, write_tensor_map
from .nn.optim import AdamHyper, OptimizerState, adam_step, backward, clip_global_norm, global_norm, lr_at
from .nn.params import canonical_name, param_groups, set_trainable_groups

log = logging.getLogger(__name__)

ALL_GROUPS = ("whisper", "whisper.lora", "mhubert", "projector", "llm", "llm.lora")
BASE_GROUPS = frozenset({"whisper", "llm"})
STAGE_GROUPS: dict[int, frozenset[str]] = {
    1: frozenset({"projector"}),
    2: frozenset({"projector", "whisper.lora", "mhubert"}),
    3: frozenset({"projector", "whisper.lora", "mhubert", "llm.lora"}),
}


@dataclass(frozen=True)
class StagePlan:
    stage: int
    steps: int
    lr_peak: float
    warmup: int
    trainable_groups: frozenset[str] = frozenset()
    override: bool = False

    def __post_init__(self):
        if self.stage not in STAGE_GROUPS:
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        groups = frozenset(self.trainable_groups) or STAGE_GROUPS[self.stage]
        object.__setattr__(self, "trainable_groups", groups)
        unknown = groups - set(ALL_GROUPS)
        if unknown:
            raise KeyError(f"unknown parameter group(s): {', '.join(sorted(unknown))}")
        if groups != STAGE_GROUPS[self.stage] and not self.override:
            raise ValueError(
                f"stage {self.stage} must train exactly {sorted(STAGE_GROUPS[self.stage])}; "
                "pass override=True for a custom mask"
            )
        if self.steps < 0 or self.warmup < 1:
            raise ValueError("need steps >= 0 and warmup >= 1")

    @classmethod
    def joint_unfreeze(cls, steps: int, lr_peak: float, warmup: int, override: bool = False) -> "StagePlan":
        """Encoders, projector and decoder LoRA all trained from the start. Refused without ``override``."""
        if not override:
            raise ValueError("joint unfreezing without the earlier stages requires override=True")
        return cls(3, steps, lr_peak, warmup, STAGE_GROUPS[3], override=True)


@dataclass
class TrainConfig:
    lr_peak: float = 1e-4
    warmup: int = 5000
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-6
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    batch_cap_s: float = 120.0
    stage_steps: tuple[int, int, int] = (1000, 1000, 2000)
    rewarm_per_stage: bool = True
    valid_interval: int = 100
    early_stopping_patience: int = 0
    seed: int = 0

    def plan(self, stage: int) -> StagePlan:
        return StagePlan(stage, self.stage_steps[stage - 1], self.lr_peak, self.warmup)

    def adam(self) -> AdamHyper:
        return AdamHyper(self.lr_peak, self.beta1, self.beta2, self.eps, self.weight_decay)


@dataclass
class Example:
    id: str
    language: str
    feats: torch.Tensor
    text: str
    duration_s: float

    def as_utterance(self) -> Utterance:
        return Utterance(self.id, self.language, "", self.text, self.duration_s)


@dataclass
class TrainState:
    stage: int = 0
    global_step: int = 0
    stage_step: int = 0
    best_valid: float = float("inf")
    best_step: int = -1
    completed_stages: list[int] = field(default_factory=list)
    seed: int = 0


def apply_stage(model: DualEncoderASR, plan: StagePlan) -> dict[str, torch.Tensor]:
    """Set exactly the plan's groups trainable; return those parameters by name."""
    return set_trainable_groups(model, plan.trainable_groups)


def trainable_count(model: DualEncoderASR) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def model_tensors(model: DualEncoderASR) -> dict[str, torch.Tensor]:
    return {canonical_name(n): p for n, p in model.named_parameters()}


def load_model_tensors(model: DualEncoderASR, tensors: dict[str, torch.Tensor]) -> None:
    """Copy checkpoint tensors into ``model``; everything is checked before anything is written."""
    own = model_tensors(model)
    missing = sorted(set(own) - set(tensors))
    extra = sorted(set(tensors) - set(own))
    if missing or extra:
        raise DataError(f"checkpoint does not match model: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in own.items():
        if tuple(tensors[name].shape) != tuple(p.shape):
            raise DataError(
                f"shape mismatch for parameter {name}: checkpoint {tuple(tensors[name].shape)}, model {tuple(p.shape)}"
            )
    with torch.no_grad():
        for name, p in own.items():
            p.copy_(tensors[name])


class Trainer:
    def __init__(
        self,
        model: DualEncoderASR,
        cfg: TrainConfig,
        train: Sequence[Example],
        valid: Sequence[Example] = (),
        out_dir: str | Path | None = None,
        log_path: str | Path | None = None,
        state: TrainState | None = None,
    ):
        self.model, self.cfg = model, cfg
        self.train_data = list(train)
        self.valid_data = list(valid)
        self.by_id = {ex.id: ex for ex in self.train_data}
        self.out_dir = Path(out_dir) if out_dir else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = Path(log_path) if log_path else (self.out_dir / "train_log.jsonl" if self.out_dir else None)
        self.state = state or TrainState(seed=cfg.seed)
        self.opt: OptimizerState | None = None
        self.params: dict[str, torch.Tensor] = {}
        self.plan: StagePlan | None = None
        self.history: list[dict] = []
        self._epochs: list[list[Batch]] = []
        if not self.train_data:
            raise DataError("no training data")

    # data order is a pure function of (seed, global step)
    def batch_for_step(self, step: int) -> Batch:
        utts = [ex.as_utterance() for ex in self.train_data]
        while True:
            total = sum(len(e) for e in self._epochs)
            if step < total:
                break
            self._epochs.append(make_batches(utts, self.cfg.batch_cap_s, shuffle_seed=self.cfg.seed * 7919 + len(self._epochs)))
        for epoch in self._epochs:
            if step < len(epoch):
                return epoch[step]
            step -= len(epoch)
        raise AssertionError("unreachable")

    def start_stage(self, plan: StagePlan) -> None:
        if plan.stage > 1 and plan.stage - 1 not in self.state.completed_stages and not plan.override:
            raise ValueError(f"stage {plan.stage} needs a completed stage {plan.stage - 1} (or override=True)")
        self.plan = plan
        self.params = apply_stage(self.model, plan)
        self.opt = OptimizerState.for_params(self.params, self.cfg.adam())
        self.state.stage = plan.stage
        self.state.stage_step = 0

    def lr_for(self, stage_step: int) -> float:
        step = stage_step if self.cfg.rewarm_per_stage else self.state.global_step
        return lr_at(step, self.plan.warmup, self.plan.lr_peak)

    def batch_loss(self, examples: Sequence[Example]) -> torch.Tensor:
        return self.model.loss([e.language for e in examples], [e.feats for e in examples], [e.text for e in examples])

    def step(self) -> dict:
        batch = self.batch_for_step(self.state.global_step)
        examples = [self.by_id[i] for i in batch.ids]
        try:
            loss = self.batch_loss(examples)
            if not torch.isfinite(loss):
                raise NumericError("non-finite loss")
        except NumericError as exc:
            raise NumericError(f"{exc} at step {self.state.global_step} on batch {batch.ids}") from None
        grads = backward(loss, self.params)
        _, pre = clip_global_norm(list(grads.values()), self.cfg.clip_norm)
        post = global_norm(grads.values())
        self.state.stage_step += 1
        self.state.global_step += 1
        lr = self.lr_for(self.state.stage_step)
        adam_step(self.params, grads, self.opt, lr)
        rec = {
            "step": self.state.global_step,
            "stage": self.plan.stage,
            "stage_step": self.state.stage_step,
            "lr": lr,
            "loss": float(loss.detach()),
            "grad_norm_pre": pre,
            "grad_norm_post": post,
        }
        self.history.append(rec)
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        return rec

    @torch.no_grad()
    def validation_loss(self) -> float | None:
        if not self.valid_data:
            return None
        total, n = 0.0, 0
        utts = [ex.as_utterance() for ex in self.valid_data]
        by_id = {ex.id: ex for ex in self.valid_data}
        for batch in make_batches(utts, self.cfg.batch_cap_s):
            examples = [by_id[i] for i in batch.ids]
            total += float(self.batch_loss(examples)) * len(examples)
            n += len(examples)
        return total / n

    def train_stage(self, plan: StagePlan | None = None, stop_at: int | None = None,
                    callback: Callable[[dict], None] | None = None) -> TrainState:
        """Run the current stage to its end (or until ``stop_at`` stage steps)."""
        if plan is not None:
            self.start_stage(plan)
        if self.plan is None:
            raise RuntimeError("call start_stage() or pass a plan first")
        end = self.plan.steps if stop_at is None else min(stop_at, self.plan.steps)
        bad_evals = 0
        while self.state.stage_step < end:
            rec = self.step()
            if callback:
                callback(rec)
            if self.cfg.valid_interval and self.state.stage_step % self.cfg.valid_interval == 0:
                v = self.validation_loss()
                if v is not None:
                    log.info("stage %d step %d valid loss %.4f", self.plan.stage, self.state.global_step, v)
                    rec["valid_loss"] = v
                    if v < self.state.best_valid:
                        self.state.best_valid, self.state.best_step = v, self.state.global_step
                        bad_evals = 0
                        if self.out_dir:
                            self.save(self.out_dir / "best")
                    else:
                        bad_evals += 1
                        if self.cfg.early_stopping_patience and bad_evals >= self.cfg.early_stopping_patience:
                            log.info("early stopping at step %d", self.state.global_step)
                            break
        if self.state.stage_step >= self.plan.steps or stop_at is None:
            if self.plan.stage not in self.state.completed_stages:
                self.state.completed_stages.append(self.plan.stage)
            if self.out_dir:
                self.save(self.out_dir / f"stage{self.plan.stage}")
        return self.state

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        write_tensor_map(path / "model.ckpt", model_tensors(self.model), MODEL_MAGIC)
        opt = {}
        if self.opt is not None:
            for name in self.opt.exp_avg:
                cname = canonical_name(name)
                opt[f"m/{cname}"] = self.opt.exp_avg[name]
                opt[f"v/{cname}"] = self.opt.exp_avg_sq[name]
        write_tensor_map(path / "optim.opts", opt, OPTIM_MAGIC)
        meta = {
            "format": 1,
            "state": asdict(self.state),
            "optimizer_step_count": self.opt.step_count if self.opt else 0,
            "plan": None if self.plan is None else {**asdict(self.plan), "trainable_groups": sorted(self.plan.trainable_groups)},
            "model_config": self.model.cfg.to_dict(),
            "train_config": {**asdict(self.cfg), "stage_steps": list(self.cfg.stage_steps)},
        }
        (path / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
        return path


def read_checkpoint_meta(path: str | Path) -> dict:
    path = Path(path)
    try:
        meta = json.loads((path / "state.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable checkpoint metadata ({exc})") from None
    if meta.get("format") != 1:
        raise DataError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return meta


def load_model(path: str | Path, model_cfg: ModelConfig | None = None) -> DualEncoderASR:
    """Rebuild a model from a checkpoint directory (weights only)."""
    path = Path(path)
    meta = read_checkpoint_meta(path)
    tensors = read_tensor_map(path / "model.ckpt", MODEL_MAGIC)
    model = DualEncoderASR(model_cfg or ModelConfig.from_dict(meta["model_config"]))
    load_model_tensors(model, tensors)
    return model


def resume(
    path: str | Path,
    train: Sequence[Example],
    valid: Sequence[Example] = (),
    cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    out_dir: str | Path | None = None,
    log_path: str | Path | None = None,
) -> Trainer:
    """Restore model, optimizer moments and counters; the returned trainer continues the same stage."""
    path = Path(path)
    meta = read_checkpoint_meta(path)
    opt_tensors = read_tensor_map(path / "optim.opts", OPTIM_MAGIC)
    model = load_model(path, model_cfg)
    tc = meta["train_config"]
    cfg = cfg or TrainConfig(**{**tc, "stage_steps": tuple(tc["stage_steps"])})
    state = TrainState(**meta["state"])
    trainer = Trainer(model, cfg, train, valid, out_dir, log_path, state)
    if meta["plan"] is not None:
        p = meta["plan"]
        plan = StagePlan(p["stage"], cfg.stage_steps[p["stage"] - 1], cfg.lr_peak, cfg.warmup,
                         frozenset(p["trainable_groups"]), p["override"])
        stage_step = state.stage_step
        trainer.start_stage(plan)
        trainer.state.stage_step = stage_step
        canon = {canonical_name(n): n for n in trainer.params}
        for key, t in opt_tensors.items():
            kind, cname = key.split("/", 1)
            if cname not in canon:
                raise DataError(f"optimizer state for unknown parameter {cname}")
            name = canon[cname]
            target = trainer.opt.exp_avg if kind == "m" else trainer.opt.exp_avg_sq
            if tuple(target[name].shape) != tuple(t.shape):
                raise DataError(f"shape mismatch for optimizer state of {cname}")
            target[name].copy_(t)
        trainer.opt.step_count = meta["optimizer_step_count"]
    return trainer


def examples_from_manifest(manifest: Manifest, base_dir: str | Path) -> list[Example]:
    from .dsp import read_features, resolve_feature_path

    out = []
    for utt in manifest:
        feats = read_features(resolve_feature_path(utt, base_dir))
        out.append(Example(utt.id, utt.language.code, torch.from_numpy(feats.frames), utt.text, utt.duration_s))
    return out
