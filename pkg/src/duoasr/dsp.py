"""Log-mel frontend, binary feature files, and the synthetic byte-template corpus."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import LanguageTag, Manifest, Utterance, save_manifest
from .errors import DataError

LOG_FLOOR = 1e-10
FRAMES_PER_BYTE = 8
FEAT_MAGIC = b"FEAT"
_FEAT_HEADER = struct.Struct("<4sIIf")


@dataclass
class FeatureSequence:
    frames: np.ndarray  # (T, n_mels) float32
    frame_rate_hz: float = 100.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError(f"feature sequence must be T x n_mels with T >= 1, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise DataError("feature sequence contains non-finite values")

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.frame_rate_hz


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate: float) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter, HTK mel scale from 0 to Nyquist."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: float) -> np.ndarray:
    """Triangular filters of shape (n_mels, n_fft // 2 + 1)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (center - lo)
    falling = (hi - freqs[None, :]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel(
    waveform,
    sample_rate: int = 16000,
    n_mels: int = 80,
    frame_len_ms: float = 25.0,
    hop_ms: float = 10.0,
    pre_emphasis: float | None = None,
) -> FeatureSequence:
    """Hann-windowed power spectrum -> mel filterbank -> natural log (floored at 1e-10)."""
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    x = np.asarray(waveform, dtype=np.float64).ravel()
    frame_len = int(round(sample_rate * frame_len_ms / 1000.0))
    hop = int(round(sample_rate * hop_ms / 1000.0))
    if x.size < frame_len:
        raise DataError(f"waveform of {x.size} samples is shorter than one frame ({frame_len})")
    if pre_emphasis:
        x = np.append(x[0], x[1:] - pre_emphasis * x[:-1])
    n_frames = 1 + (x.size - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame_len) / frame_len)  # periodic Hann
    frames = x[idx] * window
    power = np.abs(np.fft.rfft(frames, n=frame_len, axis=1)) ** 2
    energies = power @ mel_filterbank(n_mels, frame_len, sample_rate).T
    return FeatureSequence(np.log(np.maximum(energies, LOG_FLOOR)), sample_rate / hop)


def write_features(path: str | Path, feats: FeatureSequence) -> None:
    frames = np.ascontiguousarray(feats.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEAT_MAGIC, frames.shape[0], frames.shape[1], feats.frame_rate_hz))
        fh.write(frames.tobytes())


def read_features(path: str | Path) -> FeatureSequence:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc.strerror}") from None
    if len(raw) < _FEAT_HEADER.size:
        raise DataError(f"{path}: truncated feature header")
    magic, n_frames, n_mels, rate = _FEAT_HEADER.unpack_from(raw)
    if magic != FEAT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    expected = _FEAT_HEADER.size + 4 * n_frames * n_mels
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    payload = np.frombuffer(raw, dtype="<f4", offset=_FEAT_HEADER.size).reshape(n_frames, n_mels)
    return FeatureSequence(payload.astype(np.float32), float(rate))


def byte_templates(seed: int, n_mels: int = 80) -> np.ndarray:
    """One fixed (8, n_mels) pattern per byte value, shape (256, 8, n_mels)."""
    rng = np.random.default_rng([seed, 0x7E])
    return rng.standard_normal((256, FRAMES_PER_BYTE, n_mels)).astype(np.float32)


def render_text(
    text: str,
    templates: np.ndarray,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    data = np.frombuffer(text.encode("utf-8"), dtype=np.uint8)
    frames = templates[data].reshape(-1, templates.shape[-1])
    if noise_std > 0:
        frames = frames + noise_std * rng.standard_normal(frames.shape).astype(np.float32)
    return frames.astype(np.float32)


def synth_corpus(
    texts: Sequence[tuple[LanguageTag | str, str]],
    seed: int,
    noise_std: float,
    out_dir: str | Path,
    n_mels: int = 80,
    frame_rate_hz: float = 100.0,
    id_prefix: str = "utt",
) -> Manifest:
    """Render each transcript as concatenated byte templates and write features + manifest.

    Feature paths in the manifest are relative to ``out_dir``. The noise stream of
    each utterance is keyed on its id, so the same id and text always give the same file.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    templates = byte_templates(seed, n_mels)
    entries = []
    for i, (lang, text) in enumerate(texts):
        lang = lang if isinstance(lang, LanguageTag) else LanguageTag(lang)
        utt_id = f"{id_prefix}-{lang.code}-{i:05d}"
        rng = np.random.default_rng([seed, zlib.crc32(utt_id.encode())])
        feats = FeatureSequence(render_text(text, templates, noise_std, rng), frame_rate_hz)
        rel = f"feats/{utt_id}.feat"
        write_features(out / rel, feats)
        entries.append(Utterance(utt_id, lang, rel, text, feats.duration_s))
    manifest = Manifest(entries)
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest


def resolve_feature_path(utt: Utterance, base_dir: str | Path) -> Path:
    p = Path(utt.feature_path)
    return p if p.is_absolute() else Path(base_dir) / p
