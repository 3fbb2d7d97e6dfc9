import random
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duoasr.corpus import LANGUAGES
from duoasr.scoring import aggregate, edit_distance, normalize_text, score_pair, units


def brute_distance(a, b):
    """Plain recursive Levenshtein (memoized), independent of the DP table."""

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(
            rec(i + 1, j + 1) + (a[i] != b[j]),
            rec(i + 1, j) + 1,
            rec(i, j + 1) + 1,
        )

    return rec(0, 0)


def test_identical():
    assert tuple(edit_distance("abc", "abc")) == (0, 0, 0, 0)


def test_word_substitution():
    d = edit_distance("a b c".split(), "a x c".split())
    assert d.distance == 1 and d.sub == 1 and d.ins == 0 and d.dele == 0


def test_empty_hypothesis_is_all_deletions():
    assert tuple(edit_distance("abc", "")) == (3, 0, 0, 3)


def test_empty_reference_is_all_insertions():
    assert tuple(edit_distance("", "ab")) == (2, 0, 2, 0)


def test_tie_break_prefers_substitution():
    # "ab" -> "ba": two substitutions and del+ins both cost 2; substitution wins.
    assert tuple(edit_distance("ab", "ba")) == (2, 2, 0, 0)


def test_matches_brute_force_oracle():
    rng = random.Random(1234)
    for _ in range(200):
        a = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
        b = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
        d = edit_distance(a, b)
        assert d.distance == brute_distance(tuple(a), tuple(b))
        assert d.sub + d.ins + d.dele == d.distance
        assert len(a) - d.dele + d.ins == len(b)


seqs = st.lists(st.sampled_from("abc"), max_size=8)


@settings(max_examples=300, deadline=None)
@given(a=seqs, b=seqs, c=seqs)
def test_triangle_and_symmetry(a, b, c):
    ab = edit_distance(a, b).distance
    assert ab == edit_distance(b, a).distance
    assert edit_distance(a, c).distance <= ab + edit_distance(b, c).distance


def test_wer_example():
    p = score_pair("hello world", "hello word", "en")
    assert p.metric == "WER" and p.error_rate == 0.5


def test_cer_identical_japanese():
    p = score_pair("こんにちは", "こんにちは", "ja")
    assert p.metric == "CER" and p.ref_units == 5 and p.error_rate == 0.0


def test_cer_ignores_whitespace():
    assert units("ab c", "th") == ["a", "b", "c"]


def test_empty_reference_guard():
    p = score_pair("", "one two three", "en")
    assert p.ref_units == 0 and p.error_rate == 3.0


def test_normalization_lowercases_and_strips_punctuation():
    assert normalize_text("Hello, World!") == "hello world"
    assert score_pair("Hello, world.", "hello world", "en").error_rate == 0.0
    assert score_pair("Hello, world.", "hello world", "en", normalize=False).error_rate == 1.0


@settings(max_examples=200, deadline=None)
@given(text=st.text(max_size=30), lang=st.sampled_from(sorted(LANGUAGES)))
def test_self_score_is_zero(text, lang):
    assert score_pair(text, text, lang).error_rate == 0.0


def test_metric_selection_all_languages():
    for code in LANGUAGES:
        expected = "CER" if code in {"ja", "ko", "th"} else "WER"
        assert score_pair("a b", "a b", code).metric == expected


def test_aggregate_single_language():
    r = aggregate([score_pair("a b c d", "a b c x", "en"), score_pair("a b", "a b", "en")])
    assert r.per_language["en"].rate == pytest.approx(1 / 6)
    assert r.macro == r.per_language["en"].rate


def test_aggregate_macro_is_unweighted_mean():
    pairs = [score_pair(" ".join("abcdefghij"), " ".join("abcdefghix"), "en")]  # 0.10
    pairs += [score_pair("abcdefghij", "abcdefgxyz", "ja")]  # 0.30
    r = aggregate(pairs)
    assert r.per_language["en"].rate == pytest.approx(0.10)
    assert r.per_language["ja"].rate == pytest.approx(0.30)
    assert r.macro == pytest.approx(0.20)
    assert r.pooled == pytest.approx(4 / 20)


def test_aggregate_empty():
    r = aggregate([])
    assert r.per_language == {} and r.macro is None and r.pooled is None
    assert "n/a" in r.to_table()


def test_flat_report_keyed_by_language():
    r = aggregate([score_pair("a b", "a c", "en"), score_pair("ab", "ab", "ko")])
    rows = {line.split("\t")[0]: line.split("\t") for line in r.to_flat().splitlines()[1:]}
    assert rows["en"][1] == "WER" and float(rows["en"][-1]) == 0.5
    assert rows["ko"][1] == "CER" and float(rows["ko"][-1]) == 0.0
    assert float(rows["_macro"][-1]) == 0.25
