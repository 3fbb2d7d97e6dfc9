"""scikit-learn style front-ends: a log-mel featurizer and the trainable recognizer."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_list, check_languages, check_texts
from .config import RunConfig
from .dsp import log_mel
from .llm import normalize_repetitions
from .model import DualEncoderASR
from .scoring import aggregate, score_pair
from .trainer import Example, Trainer


class LogMelFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless waveform -> (frames, n_mels) log-mel transformer."""

    def __init__(self, sample_rate=16000, n_mels=80, frame_len_ms=25.0, hop_ms=10.0, pre_emphasis=None):
        self.sample_rate = sample_rate
        self.n_mels = n_mels
        self.frame_len_ms = frame_len_ms
        self.hop_ms = hop_ms
        self.pre_emphasis = pre_emphasis

    def fit(self, X, y=None):
        self.n_features_out_ = self.n_mels
        return self

    def transform(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 1:
            X = [X]
        return [
            log_mel(w, self.sample_rate, self.n_mels, self.frame_len_ms, self.hop_ms, self.pre_emphasis).frames
            for w in X
        ]


class ParallelEncoderASR(BaseEstimator):
    """Tri-stage trained dual-encoder recognizer.

    ``X`` is a list of (frames, n_mels) arrays, ``y`` a list of transcripts, and
    ``languages`` one language code per utterance (used for the decoder prompt).
    Hyperparameters not exposed here come from ``config`` (a :class:`RunConfig`,
    default: the toy profile).
    """

    def __init__(
        self,
        config=None,
        stage1_steps=None,
        stage2_steps=None,
        stage3_steps=None,
        lr_peak=None,
        seed=0,
        normalize_output=True,
        max_decode_len=None,
        verbose=0,
    ):
        self.config = config
        self.stage1_steps = stage1_steps
        self.stage2_steps = stage2_steps
        self.stage3_steps = stage3_steps
        self.lr_peak = lr_peak
        self.seed = seed
        self.normalize_output = normalize_output
        self.max_decode_len = max_decode_len
        self.verbose = verbose

    def _resolved_config(self) -> RunConfig:
        cfg = self.config if self.config is not None else RunConfig.toy()
        overrides = {"seed": self.seed}
        for key in ("stage1_steps", "stage2_steps", "stage3_steps", "lr_peak", "max_decode_len"):
            if getattr(self, key) is not None:
                overrides[key] = getattr(self, key)
        return cfg.replace(**overrides)

    def fit(self, X, y, languages=None):
        cfg = self._resolved_config()
        feats = check_feature_list(X, cfg.n_mels)
        languages = check_languages(languages, len(feats))
        y = check_texts(y, len(feats))
        examples = [
            Example(f"fit-{i:05d}", lang, torch.from_numpy(f), text, f.shape[0] / 100.0)
            for i, (f, lang, text) in enumerate(zip(feats, languages, y))
        ]
        self.config_ = cfg
        self.model_ = DualEncoderASR(cfg.model_config())
        trainer = Trainer(self.model_, cfg.train_config(), examples)
        callback = None
        if self.verbose:
            def callback(rec):
                if rec["stage_step"] % max(1, int(self.verbose)) == 0:
                    print(f"stage {rec['stage']} step {rec['stage_step']} loss {rec['loss']:.4f}")
        for stage in (1, 2, 3):
            trainer.train_stage(cfg.train_config().plan(stage), callback=callback)
        self.history_ = trainer.history
        self.n_features_in_ = cfg.n_mels
        return self

    def predict(self, X, languages=None, normalize=None):
        check_is_fitted(self, "model_")
        feats = check_feature_list(X, self.n_features_in_)
        languages = check_languages(languages, len(feats))
        normalize = self.normalize_output if normalize is None else normalize
        cfg = self.config_
        out = []
        for f, lang in zip(feats, languages):
            text = self.model_.transcribe(lang, torch.from_numpy(f), cfg.max_decode_len).text
            if normalize:
                text = normalize_repetitions(text, cfg.norm_max_ngram, cfg.norm_min_repeats)
            out.append(text)
        return out

    def error_report(self, X, y, languages=None):
        hyps = self.predict(X, languages)
        languages = check_languages(languages, len(hyps))
        y = check_texts(y, len(hyps))
        pairs = [score_pair(r, h, lang) for r, h, lang in zip(y, hyps, languages)]
        return aggregate(pairs)

    def score(self, X, y, languages=None):
        """``1 - macro CER/WER`` so that larger is better, as scikit-learn expects."""
        return 1.0 - self.error_report(X, y, languages).macro
