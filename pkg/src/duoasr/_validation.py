"""Input checks shared by the estimator front-end."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import LANGUAGES


def check_feature_list(X, n_mels: int | None = None, min_frames: int = 4) -> list[np.ndarray]:
    """Return ``X`` as a list of finite float32 arrays of shape (T_i, n_mels)."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    try:
        items = [np.asarray(x, dtype=np.float32) for x in X]
    except (TypeError, ValueError) as exc:
        raise ValueError(f"X must be a sequence of 2-D feature arrays: {exc}") from None
    if not items:
        raise ValueError("X is empty")
    for i, x in enumerate(items):
        if x.ndim != 2:
            raise ValueError(f"X[{i}] has shape {x.shape}; expected (frames, n_mels)")
        if n_mels is not None and x.shape[1] != n_mels:
            raise ValueError(f"X[{i}] has {x.shape[1]} features per frame, expected {n_mels}")
        if x.shape[0] < min_frames:
            raise ValueError(f"X[{i}] has {x.shape[0]} frames; at least {min_frames} are needed")
        if not np.isfinite(x).all():
            raise ValueError(f"X[{i}] contains NaN or Inf")
    return items


def check_languages(languages, n: int) -> list[str]:
    if languages is None:
        raise ValueError("languages is required (one code per utterance)")
    if isinstance(languages, str):
        languages = [languages] * n
    languages = list(languages)
    if len(languages) != n:
        raise ValueError(f"got {len(languages)} languages for {n} utterances")
    bad = sorted({c for c in languages if c not in LANGUAGES})
    if bad:
        raise ValueError(f"unknown language code(s) {bad}; valid: {sorted(LANGUAGES)}")
    return languages


def check_texts(y: Sequence[str], n: int) -> list[str]:
    y = list(y)
    if len(y) != n:
        raise ValueError(f"got {len(y)} transcripts for {n} utterances")
    for i, t in enumerate(y):
        if not isinstance(t, str) or not t.strip():
            raise ValueError(f"y[{i}] must be a non-empty string")
    return y
