"""Utterance data model, manifest I/O, validation carving and duration batching."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError

LANGUAGES: dict[str, str] = {
    "en": "English",
    "fr": "French",
    "de": "German",
    "it": "Italian",
    "pt": "Portuguese",
    "es": "Spanish",
    "ja": "Japanese",
    "ko": "Korean",
    "ru": "Russian",
    "th": "Thai",
    "vi": "Vietnamese",
}
CER_LANGUAGES = frozenset({"ja", "ko", "th"})
MAX_UTTERANCE_S = 120.0
MANIFEST_KEYS = ("id", "language", "feature_path", "text", "duration_s")


@dataclass(frozen=True)
class LanguageTag:
    code: str

    def __post_init__(self):
        if self.code not in LANGUAGES:
            raise DataError(f"unknown language {self.code!r}")

    @property
    def display_name(self) -> str:
        return LANGUAGES[self.code]

    @property
    def metric_kind(self) -> str:
        return metric_kind(self.code)

    def __str__(self) -> str:
        return self.code


def metric_kind(code: str) -> str:
    """Return ``"CER"`` for Japanese, Korean and Thai, ``"WER"`` for the rest."""
    if code not in LANGUAGES:
        raise DataError(f"unknown language {code!r}")
    return "CER" if code in CER_LANGUAGES else "WER"


@dataclass(frozen=True)
class Utterance:
    id: str
    language: LanguageTag
    feature_path: str
    text: str
    duration_s: float

    def __post_init__(self):
        if isinstance(self.language, str):
            object.__setattr__(self, "language", LanguageTag(self.language))
        if not self.id:
            raise DataError("utterance id must be non-empty")
        if not self.text.strip():
            raise DataError(f"utterance {self.id!r} has an empty transcript")
        if not (0.0 < self.duration_s <= MAX_UTTERANCE_S):
            raise DataError(
                f"utterance {self.id!r} duration {self.duration_s} outside (0, {MAX_UTTERANCE_S}]"
            )

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["language"] = self.language.code
        return rec


@dataclass
class Manifest:
    entries: list[Utterance] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        for utt in self.entries:
            if utt.id in seen:
                raise DataError(f"duplicate utterance id {utt.id!r}")
            seen.add(utt.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.entries]

    def language_counts(self) -> Counter:
        return Counter(u.language.code for u in self.entries)

    def languages(self) -> list[str]:
        """Language codes in order of first appearance."""
        return list(dict.fromkeys(u.language.code for u in self.entries))

    def by_id(self) -> dict[str, Utterance]:
        return {u.id: u for u in self.entries}


@dataclass(frozen=True)
class Batch:
    utterances: tuple[Utterance, ...]

    @property
    def total_duration_s(self) -> float:
        return float(sum(u.duration_s for u in self.utterances))

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.utterances]

    def __len__(self) -> int:
        return len(self.utterances)


def parse_record(line: str, lineno: int) -> Utterance:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed record at line {lineno}: {exc.msg}") from None
    if not isinstance(rec, dict) or set(rec) != set(MANIFEST_KEYS):
        raise DataError(
            f"malformed record at line {lineno}: expected exactly the keys {sorted(MANIFEST_KEYS)}"
        )
    code = rec["language"]
    if code not in LANGUAGES:
        raise DataError(f"unknown language {code!r} at line {lineno}")
    dur = rec["duration_s"]
    if isinstance(dur, bool) or not isinstance(dur, (int, float)):
        raise DataError(f"malformed record at line {lineno}: duration_s must be a number")
    if not all(isinstance(rec[k], str) for k in ("id", "feature_path", "text")):
        raise DataError(f"malformed record at line {lineno}: id/feature_path/text must be strings")
    try:
        return Utterance(rec["id"], LanguageTag(code), rec["feature_path"], rec["text"], float(dur))
    except DataError as exc:
        raise DataError(f"{exc} (line {lineno})") from None


def load_manifest(path: str | Path) -> Manifest:
    """Read a JSON-lines manifest. Blank lines are not allowed."""
    entries: list[Utterance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                raise DataError(f"malformed record at line {lineno}: blank line")
            utt = parse_record(line, lineno)
            if utt.id in seen:
                raise DataError(f"duplicate utterance id {utt.id!r} at line {lineno}")
            seen.add(utt.id)
            entries.append(utt)
    return Manifest(entries)


def save_manifest(manifest: Manifest | Iterable[Utterance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in manifest:
            fh.write(json.dumps(utt.to_record(), ensure_ascii=False) + "\n")


def carve_validation(
    manifest: Manifest, hours_per_language: float, seed: int
) -> tuple[Manifest, Manifest]:
    """Hold out roughly ``hours_per_language`` of audio per language.

    Utterances are drawn in a seeded random order until the per-language budget
    is first reached, so the held-out set may overshoot by up to one clip.
    Both returned manifests keep the input order.
    """
    if hours_per_language < 0:
        raise ValueError("hours_per_language must be >= 0")
    budget = hours_per_language * 3600.0
    chosen: set[str] = set()
    for lang_index, code in enumerate(sorted(manifest.languages())):
        pool = [u for u in manifest if u.language.code == code]
        rng = np.random.default_rng([seed, lang_index])
        total = 0.0
        for i in rng.permutation(len(pool)):
            if total >= budget:
                break
            chosen.add(pool[i].id)
            total += pool[i].duration_s
    train = [u for u in manifest if u.id not in chosen]
    valid = [u for u in manifest if u.id in chosen]
    return Manifest(train), Manifest(valid)


def make_batches(
    manifest: Manifest | Sequence[Utterance], cap_s: float, shuffle_seed: int | None = None
) -> list[Batch]:
    """Greedy first-fit packing of utterances into batches of at most ``cap_s`` seconds."""
    items = list(manifest)
    for utt in items:
        if utt.duration_s > cap_s:
            raise DataError(f"utterance {utt.id!r} ({utt.duration_s}s) exceeds batch cap {cap_s}s")
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(items))
        items = [items[i] for i in order]
    batches: list[Batch] = []
    current: list[Utterance] = []
    total = 0.0
    for utt in items:
        if current and total + utt.duration_s > cap_s:
            batches.append(Batch(tuple(current)))
            current, total = [], 0.0
        current.append(utt)
        total += utt.duration_s
    if current:
        batches.append(Batch(tuple(current)))
    return batches
