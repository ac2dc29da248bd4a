import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csifeedback import objectives as ob
from csifeedback.channel import SystemConfig
from csifeedback.errors import ConfigError, NumericalError, RankDeficiencyError
from csifeedback.tensor import Tensor
from csifeedback.trainer import evaluate_baseline


def scalar_sum_rate(H, V, sigma2):
    """Loop-level re-evaluation of the sum of per-user rates."""
    n_t, k = H.shape
    total = 0.0
    for u in range(k):
        gains = []
        for j in range(k):
            acc = 0j
            for n in range(n_t):
                acc += H[n, u].conjugate() * V[n, j]
            gains.append(acc.real ** 2 + acc.imag ** 2)
        interference = sum(g for j, g in enumerate(gains) if j != u)
        total += math.log2(1.0 + gains[u] / (interference + sigma2))
    return total


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


# ---------------------------------------------------------------- rates

def test_user_rate_examples():
    assert ob.user_rate(np.array([1.0]), np.array([[1.0]]), 1.0, 0) == 1.0
    I = np.eye(2)
    assert ob.user_rate(I[:, 0], I, 1.0, 0) == 1.0
    assert ob.user_rate(I[:, 1], I, 1.0, 1) == 1.0
    V = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert ob.user_rate(np.array([1.0, 0.0]), V, 1.0, 0) == 0.0


def test_sum_rate_examples():
    assert ob.sum_rate(np.eye(2), np.eye(2), 1.0) == 2.0
    assert ob.sum_rate(np.eye(2), np.zeros((2, 2)), 1.0) == 0.0


def test_sum_rate_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        H, V = crandn(rng, 6, 3), crandn(rng, 6, 3)
        assert abs(ob.sum_rate(H, V, 0.3) - scalar_sum_rate(H, V, 0.3)) <= 1e-12


def test_sum_rate_batch_mean_and_additivity():
    rng = np.random.default_rng(1)
    H, V = crandn(rng, 10, 4, 2), crandn(rng, 10, 4, 2)
    per = ob.sum_rate(H, V, 0.1, per_sample=True)
    np.testing.assert_allclose(per, [scalar_sum_rate(h, v, 0.1) for h, v in zip(H, V)],
                               atol=1e-12)
    assert abs(ob.sum_rate(H, V, 0.1) - per.mean()) <= 1e-12
    rates = ob.user_rates(H, V, 0.1)
    assert np.all(rates >= 0)
    np.testing.assert_allclose(rates.sum(axis=-1), per, atol=1e-12)
    for b in range(3):
        for k in range(2):
            assert abs(rates[b, k] - ob.user_rate(H[b, :, k], V[b], 0.1, k)) <= 1e-12


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 10.0))
def test_rates_non_negative(seed, sigma2):
    rng = np.random.default_rng(seed)
    assert np.all(ob.user_rates(crandn(rng, 4, 3), crandn(rng, 4, 3), sigma2) >= 0.0)


def test_rate_tensor_gradient_matches_finite_differences():
    from csifeedback.gradcheck import check_op
    rng = np.random.default_rng(2)
    H = crandn(rng, 3, 4, 2)
    for _ in range(100):
        v_re, v_im = rng.standard_normal((3, 4, 2)), rng.standard_normal((3, 4, 2))

        def op(a, b):
            return ob.user_rates_tensor(H.real, H.imag, a, b, 0.1)
        assert check_op(op, [v_re, v_im], rng) <= 1e-4


# ----------------------------------------------------------- distortion

def test_mse_examples():
    rng = np.random.default_rng(3)
    H = crandn(rng, 8, 4, 2)
    assert ob.mse_distortion(H, H) == 0.0
    H_hat = H.copy()
    H_hat[3, 1, 0] += 1.0
    assert abs(ob.mse_distortion(H, H_hat) - 1 / 8) < 1e-15
    G = crandn(rng, 8, 4, 2)
    assert ob.mse_distortion(H, G) == ob.mse_distortion(G, H)
    t = ob.mse_distortion_tensor(Tensor(H.real), Tensor(H.imag), G.real, G.imag)
    assert abs(t.item() - ob.mse_distortion(H, G)) < 1e-12
    with pytest.raises(ConfigError):
        ob.mse_distortion(H, H[:, :2])


# ------------------------------------------------------------------ loss

def test_total_loss():
    assert ob.total_loss(20.0, 5.0, 0.0, 2.0, 0.0) == 10.0
    assert ob.total_loss(20.0, 5.0, 3.0, 0.0, 2.0) == 26.0
    assert ob.total_loss(20.0, 5.0, 3.0, 1.5, 0.0) == 12.5
    with pytest.raises(ConfigError):
        ob.total_loss(1.0, 1.0, 1.0, -1.0, 0.0)
    with pytest.raises(ConfigError):
        ob.total_loss(1.0, 1.0, 1.0, 0.0, -0.1)


# ------------------------------------------------------------ baselines

def test_mrt_example():
    v = ob.mrt_precoder(np.array([[3.0], [4.0]]), 1.0)
    np.testing.assert_allclose(v, [[0.6], [0.8]], atol=1e-15)
    assert abs(ob.sum_rate(np.array([[3.0], [4.0]]), v, 1.0) - math.log2(26)) < 1e-12
    assert abs(math.log2(26) - 4.700) < 1e-3


def test_mrt_zero_channel():
    with pytest.raises(NumericalError):
        ob.mrt_precoder(np.zeros((4, 2)), 1.0)


def test_power_constraint_random_channels():
    rng = np.random.default_rng(4)
    H = crandn(rng, 1000, 64, 2)
    for V in (ob.mrt_precoder(H, 3.0), ob.zf_precoder(H, 3.0)):
        np.testing.assert_allclose((np.abs(V) ** 2).sum(axis=(-2, -1)), 3.0, atol=1e-10)


def test_zf_interference_nulling_1e4_channels():
    rng = np.random.default_rng(5)
    H = crandn(rng, 10_000, 64, 2)
    V = ob.zf_precoder(H, 1.0)
    G = np.conj(np.swapaxes(H, -1, -2)) @ V
    off = np.abs(G[:, [0, 1], [1, 0]])
    assert off.max() <= 1e-10


def test_zf_orthonormal_matches_mrt():
    rng = np.random.default_rng(6)
    Q, _ = np.linalg.qr(crandn(rng, 8, 3))
    np.testing.assert_allclose(ob.zf_precoder(Q, 1.0), ob.mrt_precoder(Q, 1.0), atol=1e-12)


def test_zf_single_user_equals_mrt():
    rng = np.random.default_rng(7)
    for _ in range(100):
        h = crandn(rng, 16, 1)
        assert np.max(np.abs(ob.zf_precoder(h, 1.0) - ob.mrt_precoder(h, 1.0))) <= 1e-12


def test_zf_rank_deficient():
    h = crandn(np.random.default_rng(8), 4, 1)
    H = np.hstack([h, 2 * h])
    with pytest.raises(RankDeficiencyError):
        ob.zf_precoder(H, 1.0)
    V = ob.zf_precoder(H, 1.0, strict=False)
    assert np.all(np.isfinite(V))
    np.testing.assert_allclose((np.abs(V) ** 2).sum(), 1.0)
    V0 = ob.zf_precoder(np.zeros((4, 2)), 1.0, strict=False)
    np.testing.assert_allclose((np.abs(V0) ** 2).sum(), 1.0)


def test_random_precoder_power():
    V = ob.random_precoder(np.random.default_rng(9), 8, 2, 2.0, batch=5)
    assert V.shape == (5, 8, 2)
    np.testing.assert_allclose((np.abs(V) ** 2).sum(axis=(-2, -1)), 2.0)


def test_csit_ordering_at_default_noise():
    cfg = SystemConfig()
    assert math.isclose(cfg.noise_variance, cfg.P / 10)
    rates = {m: evaluate_baseline(cfg, m, testset_seed=1234) for m in ("mrt", "zf", "random")}
    assert rates["zf"] >= rates["mrt"] > rates["random"]
