import numpy as np
import pytest
import torch

from duoasr.dsp import FeatureSequence
from duoasr.encoder import EncoderBranchConfig, SpeechEncoder, encode_mhubert_branch, encode_whisper_branch, fuse
from duoasr.errors import DataError
from duoasr.lora import inject
from duoasr.model import ModelConfig
from duoasr.nn import LayerConfig, sinusoidal_positions
from duoasr.projector import Projector, ProjectorConfig, project, projected_length

from fd import REL_TOL, check_gradients


def _encoder(n_layers=2, d=16, seed=0, n_mels=6):
    torch.manual_seed(seed)
    return SpeechEncoder(n_mels, LayerConfig(d, 2, n_layers, 2 * d))


def test_branch_config_contract():
    EncoderBranchConfig("whisper_like", LayerConfig(8, 2, 1, 8), "lora", 2, 4.0)
    with pytest.raises(ValueError):
        EncoderBranchConfig("whisper_like", LayerConfig(8, 2, 1, 8), "full_finetune")
    with pytest.raises(ValueError):
        EncoderBranchConfig("mhubert_like", LayerConfig(8, 2, 1, 8), "lora", 2, 4.0)


def test_residual_identity_before_final_norm():
    enc = _encoder(n_layers=1)
    with torch.no_grad():
        for lin in (enc.blocks[0].attn.wo, enc.blocks[0].ff2):
            lin.weight.zero_()
            lin.bias.zero_()
    x = torch.randn(1, 7, 6)
    expected = enc.ln(enc.inp(x) + sinusoidal_positions(7, 16))
    assert torch.equal(enc(x), expected)


def test_stride_free():
    enc = _encoder()
    feats = FeatureSequence(np.random.default_rng(0).normal(size=(40, 6)).astype(np.float32), 100.0)
    assert encode_whisper_branch(feats, enc).hidden.shape == (40, 16)
    assert encode_mhubert_branch(feats, _encoder(seed=1)).hidden.shape == (40, 16)


def test_fresh_adapters_are_transparent():
    enc = _encoder()
    x = torch.randn(1, 9, 6)
    before = enc(x)
    holder = torch.nn.Module()
    holder.whisper = enc
    inject(holder, ["whisper.blocks.*.attn.wq", "whisper.blocks.*.attn.wv"], r=8, alpha=16)
    assert torch.equal(enc(x), before)


def test_padding_mask_matches_unpadded():
    enc = _encoder().double()
    x = torch.randn(1, 5, 6, dtype=torch.float64)
    padded = torch.cat([x, torch.randn(1, 3, 6, dtype=torch.float64)], dim=1)
    out = enc(padded, torch.tensor([5]))[:, :5]
    assert (out - enc(x)).abs().max() < 1e-12


def test_fuse_concatenates():
    hw, hm = torch.randn(4, 2), torch.randn(4, 3)
    f = fuse(hw, hm)
    assert f.hidden.shape == (4, 5)
    assert torch.equal(f.hidden[:, :2], hw) and torch.equal(f.hidden[:, 2:], hm)


def test_fuse_mismatch_names_lengths():
    with pytest.raises(DataError, match="40 vs 39"):
        fuse(torch.zeros(40, 2), torch.zeros(39, 2))


def test_fused_widths():
    assert ModelConfig().projector_config().d_in == 128
    full = ModelConfig.full_scale()
    assert full.projector_config().d_in == 2048
    assert full.projector_config().d_out == 3584


def test_branch_independence():
    w, m = _encoder(seed=0), _encoder(seed=1)
    x = torch.randn(1, 8, 6)
    before = fuse(w(x), m(x)).hidden
    with torch.no_grad():
        for p in m.parameters():
            p.add_(torch.randn_like(p))
    after = fuse(w(x), m(x)).hidden
    assert torch.equal(before[..., :16], after[..., :16])
    assert not torch.equal(before[..., 16:], after[..., 16:])


# --- projector ------------------------------------------------------------------------

def _projector(d_in=4, d_out=6, seed=0, double=False):
    torch.manual_seed(seed)
    p = Projector(ProjectorConfig(d_in, d_out))
    return p.double() if double else p


@pytest.mark.parametrize("t, expected", [(4, 1), (7, 1), (16, 4), (17, 4)])
def test_projected_length_examples(t, expected):
    assert projected_length(t) == expected
    assert _projector()(torch.randn(1, t, 4)).shape == (1, expected, 6)


def test_length_law_full_range():
    assert all(projected_length(t) == t // 4 for t in range(4, 4097))
    proj = _projector(2, 2)
    with torch.no_grad():
        for t in range(4, 4097, 37):
            assert proj(torch.zeros(1, t, 2)).shape[1] == t // 4


@pytest.mark.parametrize("t", [0, 1, 3])
def test_too_short(t):
    with pytest.raises(DataError, match="utterance too short to project"):
        _projector()(torch.randn(1, t, 4))


def test_stride_must_be_four():
    with pytest.raises(ValueError):
        ProjectorConfig(4, 4, down_stride=2)


def test_full_scale_dims_accepted():
    cfg = ProjectorConfig(2048, 3584)
    assert cfg.hidden == 2048 and cfg.d_out == 3584


def test_rows_are_layer_normalized():
    y = _projector(d_out=32)(torch.randn(1, 40, 4))[0]
    assert torch.allclose(y.mean(-1), torch.zeros(10), atol=1e-5)
    assert torch.allclose(y.var(-1, unbiased=False), torch.ones(10), atol=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_locality_window(seed):
    proj = _projector(double=True, seed=seed)
    t = 29
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(1, t, 4, generator=gen, dtype=torch.float64)
    base = proj(x)[0]
    for j in range(t // 4):
        lo, hi = max(0, 4 * j - 1), min(t - 1, 4 * j + 4)
        y = x.clone()
        outside = [i for i in range(t) if i < lo or i > hi]
        y[0, outside] += torch.randn(len(outside), 4, generator=gen, dtype=torch.float64)
        assert (proj(y)[0, j] - base[j]).abs().max() <= 1e-12
        # and the window edges really are inside the receptive field
        for edge in (lo, hi):
            z = x.clone()
            z[0, edge] += 1.0
            assert (proj(z)[0, j] - base[j]).abs().max() > 0


def test_project_wrapper():
    proj = _projector()
    out = project(fuse(torch.randn(18, 2), torch.randn(18, 2)), proj)
    assert len(out) == 4 and out.embeddings.shape == (4, 6)


@pytest.mark.parametrize("seed", range(20))
def test_projector_gradcheck(seed):
    proj = _projector(3, 4, seed=seed, double=True)
    x = torch.randn(1, 10, 3, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 2, 4, dtype=torch.float64)
    errs = check_gradients(lambda: (proj(x) * w).sum(), dict(proj.named_parameters()) | {"x": x}, seed)
    assert max(errs.values()) <= REL_TOL, errs


@pytest.mark.parametrize("seed", range(20))
def test_encoder_gradcheck(seed):
    enc = _encoder(n_layers=1, d=8, seed=seed, n_mels=3).double()
    x = torch.randn(1, 4, 3, dtype=torch.float64)
    w = torch.randn(1, 4, 8, dtype=torch.float64)
    errs = check_gradients(lambda: (enc(x) * w).sum(), dict(enc.named_parameters()), seed)
    assert max(errs.values()) <= REL_TOL, errs
