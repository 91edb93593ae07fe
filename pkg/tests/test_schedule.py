import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings, strategies as st

from viseme_decode.decoder import forward_diffuse, make_schedule
from viseme_decode.errors import ConfigError, ValidationError


def product_alpha_bar(T, lo, hi):
    """Running product written out term by term."""
    out, acc = [], 1.0
    for t in range(T):
        beta = lo + (hi - lo) * t / (T - 1) if T > 1 else lo
        acc *= 1.0 - beta
        out.append(acc)
    return np.array(out)


def test_single_step():
    s = make_schedule(1, 0.1, 0.1)
    assert s.T == 1
    assert np.allclose(s.alpha_bar, [0.9], rtol=0, atol=1e-15)


def test_default_thousand_steps():
    s = make_schedule(1000, 1e-4, 0.02)
    ab = s.alpha_bar
    assert 0 < ab[-1] < 0.01
    assert np.all(np.diff(ab) < 0)
    assert np.allclose(ab, product_alpha_bar(1000, 1e-4, 0.02), rtol=1e-12)
    assert s.betas.dtype == np.float64
    assert np.all(np.diff(s.betas) > 0)


@settings(max_examples=200, deadline=None)
@given(T=st.integers(2, 500), lo=st.floats(1e-6, 0.5), span=st.floats(1e-6, 0.49))
def test_alpha_bar_strictly_decreasing(T, lo, span):
    # beyond this the float64 running product underflows to exactly 0
    assume(T * -np.log1p(-(lo + span)) < 700)
    s = make_schedule(T, lo, lo + span)
    ab = s.alpha_bar
    assert np.all((ab > 0) & (ab < 1))
    assert np.all(np.diff(ab) < 0)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.02, 0.01), (10, 1e-4, 1.0),
                                  (10, 1e-4, 1.5), (2.5, 1e-4, 0.02)])
def test_schedule_domain_errors(args):
    with pytest.raises(ConfigError):
        make_schedule(*args)


def test_forward_diffuse_zero_noise_and_zero_signal():
    s = make_schedule(100)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((3, 4, 16))
    eps = rng.standard_normal(x0.shape)
    for t in (1, 50, 100):
        ab = s.alpha_bar[t - 1]
        assert np.array_equal(forward_diffuse(x0, t, np.zeros_like(x0), s), np.sqrt(ab) * x0)
        assert np.array_equal(forward_diffuse(np.zeros_like(x0), t, eps, s), np.sqrt(1 - ab) * eps)


def test_forward_diffuse_per_item_steps_numpy_and_torch_agree():
    s = make_schedule(100)
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((3, 2, 8))
    eps = rng.standard_normal(x0.shape)
    t = np.array([1, 40, 100])
    ref = np.stack([np.sqrt(s.alpha_bar[k - 1]) * x0[i] + np.sqrt(1 - s.alpha_bar[k - 1]) * eps[i]
                    for i, k in enumerate(t)])
    assert np.allclose(forward_diffuse(x0, t, eps, s), ref, rtol=1e-15, atol=0)
    out = forward_diffuse(torch.from_numpy(x0), torch.from_numpy(t), torch.from_numpy(eps), s)
    assert np.allclose(out.numpy(), ref, rtol=1e-15, atol=0)


def test_forward_diffuse_monte_carlo():
    s = make_schedule(100)
    t = s.T // 2
    ab = s.alpha_bar[t - 1]
    x0 = np.linspace(-2, 2, 12)
    n = 10_000
    eps = np.random.default_rng(7).standard_normal((n, x0.size))
    xt = forward_diffuse(np.broadcast_to(x0, eps.shape), t, eps, s)
    var = 1 - ab
    se_mean = np.sqrt(var / n)
    se_var = var * np.sqrt(2 / (n - 1))
    assert np.all(np.abs(xt.mean(0) - np.sqrt(ab) * x0) < 4 * se_mean)
    assert np.all(np.abs(xt.var(0, ddof=1) - var) < 4 * se_var)


def test_forward_diffuse_errors():
    s = make_schedule(10)
    x = np.zeros((2, 3))
    with pytest.raises(ValidationError):
        forward_diffuse(x, 0, x, s)
    with pytest.raises(ValidationError):
        forward_diffuse(x, 11, x, s)
    with pytest.raises(ValidationError):
        forward_diffuse(x, 1, np.zeros((2, 4)), s)
    with pytest.raises(ValidationError):
        forward_diffuse(torch.zeros(2, 3), torch.tensor([1, 12]), torch.zeros(2, 3), s)
