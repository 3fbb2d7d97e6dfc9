"""Script-aware CER/WER scoring.

Japanese, Korean and Thai are scored on characters (whitespace removed), every
other language on whitespace-delimited words.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import metric_kind


@dataclass(frozen=True)
class EditCounts:
    distance: int
    sub: int
    ins: int
    dele: int

    def __iter__(self):
        return iter((self.distance, self.sub, self.ins, self.dele))


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost Levenshtein distance with sub/ins/del counts.

    Among minimum-cost alignments the backtrace prefers substitution (or match),
    then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row, prev = d[i], d[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    sub = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            sub += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(d[n][m], sub, ins, dele)


def normalize_text(text: str) -> str:
    """Lowercase and drop Unicode punctuation."""
    text = unicodedata.normalize("NFC", text).lower()
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def units(text: str, language: str, normalize: bool = True) -> list[str]:
    if normalize:
        text = normalize_text(text)
    if metric_kind(language) == "CER":
        return [ch for ch in text if not ch.isspace()]
    return text.split()


@dataclass(frozen=True)
class ScoredPair:
    id: str
    language: str
    reference: str
    hypothesis: str
    sub: int
    ins: int
    dele: int
    ref_units: int

    @property
    def errors(self) -> int:
        return self.sub + self.ins + self.dele

    @property
    def error_rate(self) -> float:
        return self.errors / max(1, self.ref_units)

    @property
    def metric(self) -> str:
        return metric_kind(self.language)


def score_pair(ref: str, hyp: str, language: str, id: str = "", normalize: bool = True) -> ScoredPair:
    r = units(ref, language, normalize)
    h = units(hyp, language, normalize)
    counts = edit_distance(r, h)
    return ScoredPair(id, language, ref, hyp, counts.sub, counts.ins, counts.dele, len(r))


@dataclass
class LanguageScore:
    language: str
    metric: str
    n_utts: int = 0
    errors: int = 0
    ref_units: int = 0
    sub: int = 0
    ins: int = 0
    dele: int = 0

    @property
    def rate(self) -> float:
        return self.errors / max(1, self.ref_units)


@dataclass
class ScoreReport:
    per_language: dict[str, LanguageScore] = field(default_factory=dict)
    normalized: bool = True

    @property
    def macro(self) -> float | None:
        """Unweighted mean of the per-language rates; ``None`` for an empty report."""
        if not self.per_language:
            return None
        return sum(s.rate for s in self.per_language.values()) / len(self.per_language)

    @property
    def pooled(self) -> float | None:
        if not self.per_language:
            return None
        errors = sum(s.errors for s in self.per_language.values())
        total = sum(s.ref_units for s in self.per_language.values())
        return errors / max(1, total)

    def to_table(self) -> str:
        lines = [f"{'lang':<6}{'metric':<8}{'utts':>6}{'units':>8}{'sub':>6}{'ins':>6}{'del':>6}{'rate%':>9}"]
        for code in sorted(self.per_language):
            s = self.per_language[code]
            lines.append(
                f"{code:<6}{s.metric:<8}{s.n_utts:>6}{s.ref_units:>8}{s.sub:>6}{s.ins:>6}{s.dele:>6}"
                f"{100 * s.rate:>9.2f}"
            )
        if self.per_language:
            lines.append(f"macro CER/WER: {100 * self.macro:.2f}%  pooled: {100 * self.pooled:.2f}%")
        else:
            lines.append("macro CER/WER: n/a (no utterances)")
        lines.append(f"text normalization: {'on' if self.normalized else 'off'}")
        return "\n".join(lines) + "\n"

    def to_flat(self) -> str:
        """Tab-separated rows keyed by language, plus ``_macro`` and ``_pooled`` rows."""
        lines = ["language\tmetric\tutts\tref_units\terrors\tsub\tins\tdel\trate"]
        for code in sorted(self.per_language):
            s = self.per_language[code]
            lines.append(
                f"{code}\t{s.metric}\t{s.n_utts}\t{s.ref_units}\t{s.errors}\t{s.sub}\t{s.ins}\t{s.dele}\t{s.rate:.6f}"
            )
        if self.per_language:
            lines.append(f"_macro\t-\t-\t-\t-\t-\t-\t-\t{self.macro:.6f}")
            lines.append(f"_pooled\t-\t-\t-\t-\t-\t-\t-\t{self.pooled:.6f}")
        lines.append(f"_normalization\t{'on' if self.normalized else 'off'}")
        return "\n".join(lines) + "\n"


def aggregate(pairs: Iterable[ScoredPair], normalized: bool = True) -> ScoreReport:
    report = ScoreReport(normalized=normalized)
    for p in pairs:
        s = report.per_language.setdefault(p.language, LanguageScore(p.language, p.metric))
        s.n_utts += 1
        s.errors += p.errors
        s.ref_units += p.ref_units
        s.sub += p.sub
        s.ins += p.ins
        s.dele += p.dele
    return report
