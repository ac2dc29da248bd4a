import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from csifeedback import tensor as T
from csifeedback.channel import SystemConfig, sample_channel, transmit_pilots
from csifeedback.errors import ConfigError
from csifeedback.feedback import (
    PROB_FLOOR,
    SCALE_FLOOR,
    EntropyModel,
    FeatureEncoder,
    bin_probability,
    estimate_overhead,
    pseudo_quantize,
    quantize,
)
from csifeedback.gradcheck import check_op
from csifeedback.layers import ParameterSet
from csifeedback.tensor import Tensor


def _encoder(**kw):
    cfg = SystemConfig(**kw)
    return FeatureEncoder(ParameterSet(), cfg, np.random.default_rng(0)), cfg


def test_encoder_output_width_full_nb():
    enc, cfg = _encoder(N_b=16, encoder_hidden=(32, 32))
    assert enc(np.zeros((4, 2 * cfg.L)), train=True).shape == (4, 16)


def test_encoder_zero_input_finite():
    enc, cfg = _encoder()
    enc.net.out.bias.data[:] = 0.0
    out = enc(np.zeros((3, 2 * cfg.L)), train=False).data
    assert np.all(np.isfinite(out))


def test_encoder_eval_deterministic():
    enc, cfg = _encoder()
    x = np.random.default_rng(1).standard_normal((2, 2 * cfg.L))
    rows = np.vstack([x[:1], x[:1]])
    out = enc(rows, train=False).data
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(enc(x, train=False).data, enc(x, train=False).data)


def test_encoder_wrong_width():
    enc, cfg = _encoder()
    with pytest.raises(ConfigError):
        enc(np.zeros((3, 2 * cfg.L + 1)), train=False)


def test_encoder_shared_across_users():
    enc, cfg = _encoder()
    rng = np.random.default_rng(2)
    H = sample_channel(cfg, rng, batch=5).H
    rx = transmit_pilots(H, np.eye(cfg.N_t, cfg.L) + 0j, cfg.noise_variance, rng)
    rows = rx.encoder_rows().data
    joint = enc(rows, train=False).data.reshape(5, cfg.K, cfg.N_b)
    user2 = np.concatenate([rx.y_re.data[:, 1], rx.y_im.data[:, 1]], axis=-1)
    alone = enc(user2, train=False).data
    np.testing.assert_array_equal(joint[:, 1], alone)


def test_pseudo_quantize_direct_sum():
    class Fixed:
        def uniform(self, lo, hi, size):
            return np.full(size, 0.2)
    out, u = pseudo_quantize(np.array([0.3]), Fixed())
    np.testing.assert_allclose(out.data, [0.5])


def test_pseudo_quantize_noise_moments():
    t = np.zeros(1_000_000)
    out, u = pseudo_quantize(t, np.random.default_rng(3))
    d = out.data - t
    np.testing.assert_array_equal(d, u)
    assert np.all(np.abs(u) <= 0.5)
    assert abs(d.mean()) <= 0.002
    assert abs(d.var() / (1 / 12) - 1.0) <= 0.02


def test_pseudo_quantize_passes_gradient():
    t = Tensor(np.ones(4), requires_grad=True)
    out, _ = pseudo_quantize(t, np.random.default_rng(0))
    out.sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones(4))


def test_quantize_examples():
    np.testing.assert_array_equal(quantize(np.array([1.4, -0.5, 2.5, 0.5, -2.5, -1.6])),
                                  [1, -1, 3, 1, -3, -2])
    assert quantize(np.array([1.4])).dtype == np.int64


@settings(max_examples=200)
@given(arrays(np.float64, 16, elements=st.floats(-1e6, 1e6)))
def test_quantize_within_half(t):
    assert np.all(np.abs(quantize(t) - t) <= 0.5)


def test_bin_probability_oracles():
    assert abs(bin_probability(np.array([0.0]), np.array([1.0]))[0]
               - (2 * norm.cdf(0.5) - 1)) < 1e-15
    assert abs(bin_probability(np.array(0.0), np.array(1.0)) - 0.38292) < 1e-5
    assert abs(bin_probability(np.array(0.0), np.array(0.5)) - 0.68269) < 1e-5


def test_bin_probability_wide_scale_asymptote():
    for sigma in (1e2, 1e3, 1e4):
        p = bin_probability(np.array(0.0), np.array(sigma))
        approx = 1.0 / (sigma * math.sqrt(2 * math.pi))
        assert abs(p / approx - 1.0) < 1.0 / (24 * sigma ** 2) + 1e-12


@settings(max_examples=200)
@given(st.floats(-50, 50), st.floats(1e-3, 1e3))
def test_bin_probability_matches_direct_formula(x, sigma):
    direct = norm.cdf((x + 0.5) / sigma) - norm.cdf((x - 0.5) / sigma)
    p = float(bin_probability(np.array(x), np.array(sigma)))
    assert 0.0 < p <= 1.0
    if direct > 1e-12:
        assert abs(p - direct) <= 1e-9 * direct + 1e-15
    else:
        assert p >= PROB_FLOOR


def test_bin_probability_floor():
    assert bin_probability(np.array(1e6), np.array(1.0)) == PROB_FLOOR


def test_overhead_examples():
    assert abs(estimate_overhead(np.zeros((1, 16)), np.ones(16)) - 16 * 1.3849) < 16e-4
    assert abs(estimate_overhead(np.zeros((1, 16)), np.ones(16)) - 22.16) < 5e-3
    assert abs(estimate_overhead(np.zeros((1, 1)), np.full(1, 0.5)) - 0.5510) < 1e-3


def test_overhead_grows_into_tail():
    sigma = np.ones(4)
    base = np.array([[0.3, -0.2, 1.0, 0.0]])
    values = [estimate_overhead(base * s, sigma) for s in (1, 3, 10, 30)]
    assert all(b > a for a, b in zip(values, values[1:]))


@settings(max_examples=100)
@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20)),
       arrays(np.float64, 4, elements=st.floats(0.01, 50)))
def test_overhead_non_negative(x, sigma):
    assert estimate_overhead(x, sigma) >= 0.0


def test_overhead_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = rng.standard_normal((3, 4)) * 2
        sigma = rng.uniform(0.3, 3.0, size=4)

        def op(x_, s_):
            return estimate_overhead(x_, s_)
        assert check_op(op, [x, sigma], rng) <= 1e-4


def test_entropy_model_initial_scale_and_floor():
    params = ParameterSet()
    model = EntropyModel(params, 6)
    np.testing.assert_allclose(model.scale_values(), 1.0, rtol=1e-12)
    np.testing.assert_allclose(model.scales().data, 1.0, rtol=1e-12)
    model.rho.data[:] = -1e4
    assert np.all(model.scale_values() >= SCALE_FLOOR)
    assert np.all(model.scales().data >= SCALE_FLOOR)


def test_entropy_model_gradient_through_rho():
    params = ParameterSet()
    model = EntropyModel(params, 3)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((5, 3))

    def op(rho):
        return estimate_overhead(x, T.softplus(rho) + SCALE_FLOOR)
    assert check_op(op, [model.rho.data.copy()], rng) <= 1e-4


def test_fitted_scale_is_local_minimum():
    # crude fit of one scale by Adam on the bin-probability loss
    from csifeedback.optim import Adam
    rng = np.random.default_rng(6)
    x = rng.normal(0, 3.0, size=(4096, 1))
    params = ParameterSet()
    model = EntropyModel(params, 1)
    opt = Adam(params, lr=0.05)
    for _ in range(400):
        model.overhead(x).backward()
        opt.step()
    sigma = model.scale_values()
    best = estimate_overhead(x, sigma)
    assert estimate_overhead(x, 2 * sigma) >= best
    assert estimate_overhead(x, 0.5 * sigma) >= best
