"""Loss terms, achievable-rate evaluation and the MRT / ZF / random baselines.

Channels and precoders use the column convention: ``H`` is ``(N_t, K)``
with ``h_k = H[:, k]`` and ``V`` is ``(N_t, K)`` with ``v_k = V[:, k]``.
With this convention MRT is ``V ∝ H`` and ZF is ``V ∝ H (H^H H)^-1``.
All numpy functions accept a leading batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericalError, RankDeficiencyError
from .tensor import Tensor

MAX_GRAM_CONDITION = 1e12


@dataclass
class LossBreakdown:
    overhead: float       # bits, summed over users
    rate: float           # bits/s/Hz, sum rate (0 when the precoder head is unused)
    distortion: float     # squared error
    total: float
    lam: float
    gamma: float


def user_rates_tensor(h_re, h_im, v_re, v_im, noise_variance: float) -> Tensor:
    """Per-user achievable rates, shape ``(..., K)``, as a differentiable tensor.

    Computes G = H^H V with ``G[k, j] = h_k^H v_j`` from real and imaginary
    parts, then log2(1 + |G_kk|^2 / (sum_{j!=k} |G_kj|^2 + noise)).
    """
    h_re, h_im = T.as_tensor(h_re), T.as_tensor(h_im)
    hr_t = h_re.transpose(*_swap_last(h_re.ndim))
    hi_t = h_im.transpose(*_swap_last(h_im.ndim))
    g_re = hr_t @ v_re + hi_t @ v_im
    g_im = hr_t @ v_im - hi_t @ v_re
    power = T.square(g_re) + T.square(g_im)
    k = power.shape[-1]
    signal = (power * np.eye(k)).sum(axis=-1)
    interference = power.sum(axis=-1) - signal
    return T.log2(1.0 + signal / (interference + noise_variance))


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def user_rates(H: np.ndarray, V: np.ndarray, noise_variance: float) -> np.ndarray:
    H, V = np.asarray(H), np.asarray(V)
    if H.shape[-2:] != V.shape[-2:]:
        raise ConfigError(f"H {H.shape} and V {V.shape} do not conform")
    return user_rates_tensor(H.real, H.imag, Tensor(V.real), Tensor(V.imag), noise_variance).data


def user_rate(h: np.ndarray, V: np.ndarray, noise_variance: float, k: int) -> float:
    """Rate of user ``k`` whose channel is ``h`` under precoder matrix ``V``."""
    V = np.asarray(V, dtype=np.complex128)
    gains = np.abs(np.conj(np.asarray(h)) @ V) ** 2
    interference = gains.sum() - gains[k]
    return float(np.log2(1.0 + gains[k] / (interference + noise_variance)))


def sum_rate(H: np.ndarray, V: np.ndarray, noise_variance: float, per_sample: bool = False):
    """Sum of the users' rates; batches are averaged unless ``per_sample``."""
    total = user_rates(H, V, noise_variance).sum(axis=-1)
    if per_sample or total.ndim == 0:
        return total if per_sample else float(total)
    return float(total.mean())


def mse_distortion(H: np.ndarray, H_hat: np.ndarray) -> float:
    """Squared Frobenius error, averaged over the batch axis if present."""
    H, H_hat = np.asarray(H), np.asarray(H_hat)
    if H.shape != H_hat.shape:
        raise ConfigError(f"shape mismatch {H.shape} vs {H_hat.shape}")
    err = np.abs(H - H_hat) ** 2
    err = err.sum(axis=(-2, -1))
    return float(np.mean(err))


def mse_distortion_tensor(h_re, h_im, est_re, est_im) -> Tensor:
    err = T.square(est_re - h_re) + T.square(est_im - h_im)
    err = err.sum(axis=(-2, -1))
    return err.mean() if err.ndim else err


def total_loss(overhead, rate, distortion, lam: float, gamma: float):
    if lam < 0 or gamma < 0:
        raise ConfigError(f"tradeoff weights must be non-negative, got lam={lam}, gamma={gamma}")
    return overhead - lam * rate + gamma * distortion


def _power_scale(W: np.ndarray, power: float) -> np.ndarray:
    sq = (np.abs(W) ** 2).sum(axis=(-2, -1), keepdims=True)
    if np.any(sq <= 0.0):
        raise NumericalError("precoder direction is zero")
    return W * np.sqrt(power / sq)


def mrt_precoder(H: np.ndarray, power: float) -> np.ndarray:
    """Maximal-ratio transmission, ``V = alpha * H`` with ``Tr(V V^H) = power``."""
    H = np.asarray(H, dtype=np.complex128)
    return _power_scale(H, power)


def zf_precoder(H: np.ndarray, power: float, strict: bool = True) -> np.ndarray:
    """Zero-forcing, ``V = alpha * H (H^H H)^-1`` with ``Tr(V V^H) = power``.

    The pseudo-inverse direction is computed from a thin QR factorization,
    ``H (H^H H)^-1 = Q R^-H``. A Gram condition number above
    ``MAX_GRAM_CONDITION`` raises ``RankDeficiencyError``; with
    ``strict=False`` such samples fall back to the SVD pseudo-inverse.
    """
    H = np.asarray(H, dtype=np.complex128)
    batched = H.ndim == 3
    Hb = H if batched else H[None]
    Q, R = np.linalg.qr(Hb)
    s = np.linalg.svd(R, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        gram_cond = (s[:, 0] / s[:, -1]) ** 2
    bad = ~(gram_cond <= MAX_GRAM_CONDITION)
    if np.any(bad) and strict:
        raise RankDeficiencyError(
            f"user Gram matrix condition number {np.nanmax(gram_cond):.3g} exceeds "
            f"{MAX_GRAM_CONDITION:.0e}")
    W = np.empty_like(Hb)
    good = ~bad
    if np.any(good):
        # W^H = R^-1 Q^H
        WH = np.linalg.solve(R[good], np.conj(np.swapaxes(Q[good], -1, -2)))
        W[good] = np.conj(np.swapaxes(WH, -1, -2))
    if np.any(bad):
        W[bad] = np.conj(np.swapaxes(np.linalg.pinv(Hb[bad]), -1, -2))
        zero = (np.abs(W[bad]) ** 2).sum(axis=(-2, -1)) == 0
        if np.any(zero):
            idx = np.flatnonzero(bad)[zero]
            W[idx] = 1.0
    V = _power_scale(W, power)
    return V if batched else V[0]


def random_precoder(rng: np.random.Generator, n_t: int, k: int, power: float,
                    batch: int | None = None) -> np.ndarray:
    """I.i.d. complex Gaussian precoder scaled to total power ``power``."""
    shape = (n_t, k) if batch is None else (batch, n_t, k)
    W = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    return _power_scale(W, power)
