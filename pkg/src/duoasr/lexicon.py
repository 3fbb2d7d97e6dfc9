"""Small per-language lexicons for generating synthetic transcripts."""

from __future__ import annotations

import numpy as np

from .corpus import CER_LANGUAGES, LANGUAGES

LEXICON: dict[str, tuple[str, ...]] = {
    "en": ("the", "cat", "dog", "sat", "on", "mat", "red", "big", "run", "sun", "hot", "day"),
    "fr": ("le", "chat", "chien", "est", "sur", "un", "rouge", "grand", "jour", "nuit", "mer", "bon"),
    "de": ("der", "hund", "katze", "ist", "auf", "rot", "gross", "und", "tag", "haus", "see", "gut"),
    "it": ("il", "gatto", "cane", "sole", "mare", "rosso", "casa", "buono", "notte", "vino", "pane", "e"),
    "pt": ("o", "gato", "cão", "sol", "mar", "casa", "bom", "dia", "noite", "pão", "rio", "céu"),
    "es": ("el", "gato", "perro", "sol", "mar", "casa", "rojo", "día", "noche", "pan", "río", "luz"),
    "ru": ("кот", "дом", "мир", "день", "ночь", "море", "хлеб", "сад", "лес", "река", "да", "нет"),
    "vi": ("mèo", "chó", "nhà", "biển", "ngày", "đêm", "cơm", "nước", "sông", "tốt", "đỏ", "mới"),
    "ja": tuple("あいうえおかきくけこさしすせそ"),
    "ko": tuple("가나다라마바사아자차카타파하"),
    "th": tuple("กขคงจฉชซญดตถทนบป"),
}
assert set(LEXICON) == set(LANGUAGES)


def sample_text(code: str, rng: np.random.Generator, min_units: int = 2, max_units: int = 4) -> str:
    """Words joined by spaces; for CER languages, characters joined without spaces."""
    words = LEXICON[code]
    n = int(rng.integers(min_units, max_units + 1))
    picks = [words[i] for i in rng.integers(0, len(words), size=n)]
    return "".join(picks) if code in CER_LANGUAGES else " ".join(picks)


def sample_texts(codes, per_language: int, seed: int, min_units: int = 2, max_units: int = 4):
    """``[(code, text), ...]`` grouped by language, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return [(c, sample_text(c, rng, min_units, max_units)) for c in codes for _ in range(per_language)]
