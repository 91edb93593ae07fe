import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from viseme_decode.decoder import (ChannelAttention, KANLayer, ModelConfig, TrainConfig, VisemeDecoder,
                                   apply_model, check_gradients, grad_check, make_schedule, softmax)
from viseme_decode.errors import ConfigError, ValidationError

TINY = dict(widths=(4, 8, 8), enc_widths=(4, 8, 8), kernel=3, groups=2, temb_dim=8, attn_reduction=2)


def tiny_model(c=2, L=16, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return VisemeDecoder(ModelConfig(in_channels=c, length=L, **TINY)).to(dtype)


def test_output_shapes_and_softmax():
    torch.manual_seed(0)
    model = VisemeDecoder(ModelConfig(in_channels=5, length=64))
    x0 = torch.randn(3, 5, 64)
    eps = torch.randn(3, 5, 64)
    ddpm_out, recon, latent, logits = apply_model(model, x0, 10, eps, make_schedule(100))
    assert ddpm_out.shape == recon.shape == (3, 5, 64)
    assert latent.shape == (3, 64)
    assert logits.shape == (3, 15)
    p = softmax(logits.detach().numpy())
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)


def test_apply_model_is_deterministic():
    model = tiny_model()
    x0 = torch.randn(2, 2, 16, dtype=torch.float64)
    eps = torch.randn_like(x0)
    s = make_schedule(100)
    a = apply_model(model, x0, [3, 70], eps, s)
    b = apply_model(model, x0, [3, 70], eps, s)
    for u, v in zip(a, b):
        assert torch.equal(u, v)


def test_bad_shapes_and_configs():
    model = tiny_model()
    with pytest.raises(ValidationError):
        model.classify(torch.zeros(1, 3, 16, dtype=torch.float64))
    with pytest.raises(ValidationError):
        model(torch.zeros(1, 2, 16, dtype=torch.float64), torch.zeros(1, 2, 8, dtype=torch.float64),
              torch.ones(1, dtype=torch.long))
    with pytest.raises(ConfigError):
        ModelConfig(in_channels=2, length=60)
    with pytest.raises(ConfigError):
        ModelConfig(in_channels=0, length=64)
    with pytest.raises(ConfigError):
        ModelConfig(in_channels=2, length=64, kernel=4)


def test_wiring_decoder_maps_condition_the_denoiser():
    # the denoiser sees x0 only through the autoencoder-decoder maps
    model = tiny_model()
    x0 = torch.randn(1, 2, 16, dtype=torch.float64)
    x_t = torch.randn_like(x0)
    t = torch.tensor([5])
    out_a = model(x0, x_t, t)
    out_b = model(x0 + 1.0, x_t, t)
    assert not torch.allclose(out_a[0], out_b[0])
    feats, _ = model.encoder(x0)
    d = model.decoder.features(feats)
    assert torch.equal(model.ddpm(x_t, t, d), out_a[0])
    # zeroing the conditioning projections removes the dependence on x0
    with torch.no_grad():
        for conv in (model.ddpm.cond0, model.ddpm.cond1, model.ddpm.cond2):
            conv.weight.zero_()
            conv.bias.zero_()
    assert torch.equal(model(x0, x_t, t)[0], model(x0 + 1.0, x_t, t)[0])


def test_wiring_decoder_head_reads_x0_and_denoiser_output():
    model = tiny_model()
    x0 = torch.randn(1, 2, 16, dtype=torch.float64)
    x_t = torch.randn_like(x0)
    t = torch.tensor([5])
    ddpm_out, recon, _, _ = model(x0, x_t, t)
    feats, _ = model.encoder(x0)
    d0, _, _ = model.decoder.features(feats)
    assert torch.equal(model.decoder.head(d0, x0, ddpm_out), recon)
    assert model.decoder.penultimate[0].in_channels == TINY["widths"][0] + 2 * 2
    # recon moves when only the noised input moves, through ddpm_out
    assert not torch.allclose(model(x0, x_t + 1.0, t)[1], recon)


def test_classifier_ignores_noised_input():
    model = tiny_model()
    x0 = torch.randn(2, 2, 16, dtype=torch.float64)
    logits, latent = model.classify(x0)
    _, _, latent2, logits2 = model(x0, torch.randn_like(x0), torch.tensor([1, 99]))
    assert torch.equal(logits, logits2) and torch.equal(latent, latent2)


# --- channel attention ---------------------------------------------------------

def test_equal_statistics_give_equal_weights():
    torch.manual_seed(0)
    att = ChannelAttention(8, 4).double()
    row = torch.randn(32, dtype=torch.float64)
    x = row.repeat(2, 8, 1)
    w = att.weights(x)
    assert torch.allclose(w, w[:, :1].expand_as(w), rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.integers(2, 12))
def test_attention_weights_bounded_and_equivariant(seed, c):
    g = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    att = ChannelAttention(c, 4).double()
    x = torch.randn(3, c, 20, generator=g, dtype=torch.float64) * 3
    w = att.weights(x)
    assert torch.all((w > 0) & (w < 1))
    perm = torch.randperm(c, generator=g)
    assert torch.allclose(att.weights(x[:, perm]), w[:, perm], rtol=0, atol=1e-12)
    assert torch.allclose(att(x[:, perm]), att(x)[:, perm], rtol=0, atol=1e-12)


def _projection_loss(module, x, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        proj = torch.randn(module(x).shape, generator=g, dtype=torch.float64)
    return lambda: (module(x) * proj).sum()


def test_grad_check_channel_attention():
    torch.manual_seed(1)
    att = ChannelAttention(16, 4).double()
    x = torch.randn(4, 16, 24, dtype=torch.float64)
    report = check_gradients(_projection_loss(att, x), att.parameters(), fraction=0.01)
    assert report["n_checked"] >= 20
    assert report["max_rel_err"] < 1e-4


def test_grad_check_kan_layer():
    torch.manual_seed(2)
    kan = KANLayer(12, 15).double()
    x = torch.randn(8, 12, dtype=torch.float64) * 2
    report = check_gradients(_projection_loss(kan, x), kan.parameters(), fraction=0.01)
    assert report["max_rel_err"] < 1e-4


def test_grad_check_full_tiny_model():
    model = tiny_model(seed=3)
    rng = np.random.default_rng(3)
    batch = (rng.standard_normal((3, 2, 16)), np.array([0, 4, 14]))
    cfg = TrainConfig(T=20, arch=TINY)
    report = grad_check(model, batch, cfg=cfg, fraction=0.05)
    assert report["n_checked"] >= 20
    assert report["max_rel_err"] < 1e-3


def test_grad_check_rejects_float32():
    att = ChannelAttention(4)
    with pytest.raises(ValidationError):
        check_gradients(lambda: att.weights(torch.randn(1, 4, 8)).sum(), att.parameters())


# --- KAN layer -----------------------------------------------------------------

def bspline_reference(knots, order, i, u):
    """Cox-de Boor recursion written per basis function."""
    if order == 0:
        return 1.0 if knots[i] <= u < knots[i + 1] else 0.0
    a = (u - knots[i]) / (knots[i + order] - knots[i]) * bspline_reference(knots, order - 1, i, u)
    b = (knots[i + order + 1] - u) / (knots[i + order + 1] - knots[i + 1]) * \
        bspline_reference(knots, order - 1, i + 1, u)
    return a + b


def test_kan_bases_match_recursion_and_partition_unity():
    kan = KANLayer(1, 1, grid=5, grid_range=2.0, order=3).double()
    knots = kan.knots.tolist()
    assert kan.n_basis == 7
    us = np.linspace(-1.999, 1.999, 57)
    got = kan.bases(torch.tensor(us)[:, None]).squeeze(1).numpy()
    ref = np.array([[bspline_reference(knots, 3, k, u) for k in range(7)] for u in us])
    assert np.allclose(got, ref, atol=1e-12)
    assert np.allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_kan_squash_stays_in_grid():
    kan = KANLayer(3, 2).double()
    u = kan.squash(torch.tensor([-1e6, -3.0, 0.0, 3.0, 1e6], dtype=torch.float64))
    assert torch.all(u.abs() <= 2.0)
    assert u[2] == 0 and torch.all(torch.diff(u) >= 0)
    out = kan(torch.tensor([[1e6, -1e6, 0.0]], dtype=torch.float64))
    assert torch.all(torch.isfinite(out))


def test_kan_reduces_to_linear_without_splines():
    kan = KANLayer(4, 3).double()
    with torch.no_grad():
        kan.spline_weight.zero_()
    x = torch.randn(5, 4, dtype=torch.float64)
    expected = kan.squash(x) @ kan.base_weight.T + kan.bias
    assert torch.allclose(kan(x), expected, atol=1e-14)
    assert math.isclose(float(kan.grid_range), 2.0)
