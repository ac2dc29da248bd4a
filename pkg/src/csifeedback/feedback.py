"""User-side feedback scheme: feature network, quantization and the learned
factorized Gaussian entropy model that estimates the feedback overhead."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .channel import SystemConfig
from .errors import ConfigError
from .layers import MLP, ParameterSet
from .tensor import Tensor

SCALE_FLOOR = 1e-6
PROB_FLOOR = 2.0 ** -64


class FeatureEncoder:
    """Shared per-user network mapping 2L received-pilot reals to N_b latents."""

    def __init__(self, params: ParameterSet, config: SystemConfig, rng: np.random.Generator):
        self.n_in = 2 * config.L
        self.n_b = config.N_b
        self.net = MLP(params, "encoder", self.n_in, list(config.encoder_hidden), config.N_b, rng)

    def __call__(self, rows: Tensor, train: bool) -> Tensor:
        rows = T.as_tensor(rows)
        if rows.ndim != 2 or rows.shape[1] != self.n_in:
            raise ConfigError(f"encoder expects rows of length {self.n_in}, got shape {rows.shape}")
        return self.net(rows, train)


def pseudo_quantize(t: Tensor, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """Additive uniform noise on [-0.5, 0.5], the training stand-in for rounding.

    Returns the noisy latents and the realized noise.
    """
    t = T.as_tensor(t)
    u = rng.uniform(-0.5, 0.5, size=t.shape)
    return t + u, u


def quantize(t) -> np.ndarray:
    """Nearest integer, ties rounded away from zero."""
    t = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
    return (np.sign(t) * np.floor(np.abs(t) + 0.5)).astype(np.int64)


def bin_probability(x, sigma):
    """Mass of the unit-width bin centred at ``x`` under N(0, sigma^2).

    Evaluated on the lower tail (``-|x|``) to avoid cancellation for large
    ``|x|``, and clamped below at 2**-64. Returns a ``Tensor`` if either
    input is one, otherwise an ndarray.
    """
    as_array = not (isinstance(x, Tensor) or isinstance(sigma, Tensor))
    x, sigma = T.as_tensor(x), T.as_tensor(sigma)
    m = x * (-np.sign(x.data))
    upper = T.normal_cdf((m + 0.5) / sigma)
    lower = T.normal_cdf((m - 0.5) / sigma)
    p = T.clamp_min(upper - lower, PROB_FLOOR)
    return p.data if as_array else p


def estimate_overhead(x, sigma):
    """Mean over rows of the summed ``-log2`` bin probabilities (bits per row).

    ``x`` is ``(n, N_b)`` pseudo-quantized or quantized latents, ``sigma``
    the ``(N_b,)`` scales. Tensor in, Tensor out; arrays give a float.
    """
    as_array = not (isinstance(x, Tensor) or isinstance(sigma, Tensor))
    p = bin_probability(T.as_tensor(x), T.as_tensor(sigma))
    bits = (-T.log2(p)).sum(axis=-1)
    if bits.ndim:
        bits = bits.mean()
    return bits.item() if as_array else bits


class EntropyModel:
    """Factorized zero-mean Gaussian prior with learned per-dimension scales.

    Scale i is ``softplus(rho_i) + SCALE_FLOOR``; rho starts where the scale
    equals one.
    """

    def __init__(self, params: ParameterSet, n_b: int, name: str = "entropy.rho"):
        rho0 = math.log(math.expm1(1.0 - SCALE_FLOOR))
        self.rho = params.add(name, np.full(n_b, rho0))
        self.n_b = n_b

    def scales(self) -> Tensor:
        return T.softplus(self.rho) + SCALE_FLOOR

    def scale_values(self) -> np.ndarray:
        return np.logaddexp(0.0, self.rho.data) + SCALE_FLOOR

    def overhead(self, x) -> Tensor:
        return estimate_overhead(T.as_tensor(x), self.scales())
