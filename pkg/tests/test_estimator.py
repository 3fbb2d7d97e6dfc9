import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from duoasr.config import RunConfig
from duoasr.estimator import LogMelFeaturizer, ParallelEncoderASR
from duoasr.scoring import score_pair

from helpers import make_examples

TINY = RunConfig.toy(
    n_mels=8,
    whisper_layers=1, whisper_d_model=16, whisper_heads=2, whisper_d_ff=32,
    mhubert_layers=1, mhubert_d_model=16, mhubert_heads=2, mhubert_d_ff=32,
    decoder_layers=1, decoder_d_model=16, decoder_heads=2, decoder_d_ff=32,
    whisper_lora_rank=4, llm_lora_rank=4, projector_d_in=32, projector_d_out=16,
    warmup=5, batch_cap_s=2.0, valid_interval=0, max_decode_len=10,
)


def _data():
    ex = make_examples(per_language=2)
    return [e.feats.numpy() for e in ex], [e.text for e in ex], [e.language for e in ex]


def test_featurizer_shapes():
    wave = np.random.default_rng(0).normal(size=16000).astype(np.float32)
    feats = LogMelFeaturizer(n_mels=40).fit_transform([wave, wave[:8000]])
    assert feats[0].shape == (98, 40) and feats[1].shape == (48, 40)
    assert LogMelFeaturizer().fit(None).n_features_out_ == 80


def test_params_and_clone():
    est = ParallelEncoderASR(config=TINY, stage1_steps=3, seed=7)
    params = est.get_params()
    assert params["stage1_steps"] == 3 and params["seed"] == 7 and params["config"] is TINY
    twin = clone(est).set_params(seed=8)
    assert twin.seed == 8 and est.seed == 7


def test_fit_predict_score():
    X, y, langs = _data()
    est = ParallelEncoderASR(config=TINY, stage1_steps=3, stage2_steps=3, stage3_steps=3)
    assert est.fit(X, y, languages=langs) is est
    assert len(est.history_) == 9
    hyps = est.predict(X, languages=langs)
    assert len(hyps) == len(X) and all(isinstance(h, str) for h in hyps)
    report = est.error_report(X, y, languages=langs)
    assert est.score(X, y, languages=langs) == pytest.approx(1 - report.macro)
    pairs = [score_pair(r, h, l) for r, h, l in zip(y, hyps, langs)]
    assert sum(s.errors for s in report.per_language.values()) == sum(p.errors for p in pairs)
    assert sum(s.n_utts for s in report.per_language.values()) == len(pairs)


def test_deterministic_fit():
    X, y, langs = _data()
    kw = dict(config=TINY, stage1_steps=2, stage2_steps=2, stage3_steps=2)
    a = ParallelEncoderASR(**kw).fit(X, y, langs)
    b = ParallelEncoderASR(**kw).fit(X, y, langs)
    assert [r["loss"] for r in a.history_] == [r["loss"] for r in b.history_]


def test_predict_before_fit():
    X, _, langs = _data()
    with pytest.raises(NotFittedError):
        ParallelEncoderASR(config=TINY).predict(X, langs)


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda X, y, l: ([], y, l), "empty"),
        (lambda X, y, l: ([x[:, :5] for x in X], y, l), "features per frame"),
        (lambda X, y, l: ([x[:2] for x in X], y, l), "at least 4"),
        (lambda X, y, l: (X, y[:-1], l), "transcripts"),
        (lambda X, y, l: (X, y, ["xx"] * len(l)), "unknown language"),
        (lambda X, y, l: (X, y, None), "languages is required"),
        (lambda X, y, l: (X, [""] * len(y), l), "non-empty"),
        (lambda X, y, l: ([np.full_like(X[0], np.nan)] + X[1:], y, l), "NaN"),
        (lambda X, y, l: ([x[0] for x in X], y, l), "expected"),
    ],
)
def test_input_validation(mutate, match):
    X, y, langs = mutate(*_data())
    with pytest.raises(ValueError, match=match):
        ParallelEncoderASR(config=TINY, stage1_steps=1, stage2_steps=0, stage3_steps=0).fit(X, y, languages=langs)
