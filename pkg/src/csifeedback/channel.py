"""Multipath ULA channel model, learned pilot matrix and noisy pilot reception.

Complex quantities cross module boundaries as numpy ``complex128`` arrays
when they are data (channels, noise) and as (real, imag) ``Tensor`` pairs
when they take part in gradient computation (pilots, received pilots).

Batched channels have shape ``(B, N_t, K)``; column ``k`` is user k's
channel vector ``h_k``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericalError
from .layers import ParameterSet
from .tensor import Tensor

DESK_ENCODER_HIDDEN = (256, 512, 128)
DESK_DECODER_HIDDEN = (256, 128, 128, 64)
FULL_ENCODER_HIDDEN = (1024, 2048, 256)
FULL_DECODER_HIDDEN = (1024, 512, 512, 256)


@dataclass
class SystemConfig:
    """Physical system and network dimensions.

    Powers are linear, angles in radians, SNR in dB. ``noise_variance`` is
    derived from ``pilot_snr_db`` (SNR = P / noise_variance) when omitted.
    The same noise variance is used for the pilots and for rate evaluation.
    """

    N_t: int = 16
    K: int = 2
    L: int = 8
    L_p: int = 2
    P: float = 1.0
    noise_variance: float | None = None
    pilot_snr_db: float = 10.0
    spacing_ratio: float = 0.5
    N_b: int = 8
    rng_seed: int = 0
    aod_limit: float = math.pi / 3
    encoder_hidden: tuple = DESK_ENCODER_HIDDEN
    decoder_hidden: tuple = DESK_DECODER_HIDDEN

    def __post_init__(self):
        self.encoder_hidden = tuple(int(w) for w in self.encoder_hidden)
        self.decoder_hidden = tuple(int(w) for w in self.decoder_hidden)
        snr_var = self.P / 10.0 ** (self.pilot_snr_db / 10.0)
        if self.noise_variance is None:
            self.noise_variance = snr_var
        elif not math.isclose(self.noise_variance, snr_var, rel_tol=1e-9):
            raise ConfigError(
                f"noise_variance={self.noise_variance} inconsistent with "
                f"pilot_snr_db={self.pilot_snr_db} at P={self.P} (expected {snr_var})")
        self.validate()

    def validate(self):
        if not (self.N_t >= self.K >= 1):
            raise ConfigError(f"need N_t >= K >= 1, got N_t={self.N_t}, K={self.K}")
        if self.L < 1 or self.L_p < 1 or self.N_b < 1:
            raise ConfigError("L, L_p and N_b must be positive")
        if not (self.P > 0 and self.noise_variance > 0):
            raise ConfigError("P and noise_variance must be positive")

    @classmethod
    def full_scale(cls, **overrides) -> "SystemConfig":
        base = dict(N_t=64, K=2, L=8, L_p=2, N_b=16,
                    encoder_hidden=FULL_ENCODER_HIDDEN, decoder_hidden=FULL_DECODER_HIDDEN)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown SystemConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SystemConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ChannelRealization:
    H: np.ndarray          # (B, N_t, K) or (N_t, K) complex
    alphas: np.ndarray     # (..., L_p, K) complex path gains
    betas: np.ndarray      # (..., L_p, K) angles of departure


@dataclass
class ReceivedPilots:
    y_re: Tensor           # (B, K, L)
    y_im: Tensor
    noise: np.ndarray      # (B, K, L) complex

    @property
    def y(self) -> np.ndarray:
        return self.y_re.data + 1j * self.y_im.data

    def encoder_rows(self) -> Tensor:
        """Stack users along the batch axis: ``(B*K, 2L)`` rows [Re y, Im y]."""
        b, k, l = self.y_re.shape
        return T.concat([self.y_re, self.y_im], axis=-1).reshape(b * k, 2 * l)


def array_response(beta, n_t: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """ULA steering vector(s); broadcasts over ``beta`` and appends an N_t axis."""
    if n_t < 1:
        raise ConfigError("n_t must be >= 1")
    beta = np.asarray(beta, dtype=np.float64)
    n = np.arange(n_t)
    phase = 2.0 * math.pi * spacing_ratio * np.sin(beta)[..., None] * n
    return np.exp(1j * phase)


def channel_from_paths(alphas: np.ndarray, betas: np.ndarray, n_t: int,
                       spacing_ratio: float = 0.5) -> np.ndarray:
    """Sum the ``L_p`` paths; inputs ``(..., L_p, K)``, output ``(..., N_t, K)``."""
    n_paths = alphas.shape[-2]
    a = array_response(betas, n_t, spacing_ratio)            # (..., L_p, K, N_t)
    h = (alphas[..., None] * a).sum(axis=-3) / math.sqrt(n_paths)  # (..., K, N_t)
    return np.swapaxes(h, -1, -2)


def sample_channel(config: SystemConfig, rng: np.random.Generator,
                   batch: int | None = None) -> ChannelRealization:
    """Draw independent channels: unit-variance complex Gaussian gains,
    AoDs uniform on [-aod_limit, aod_limit]."""
    lead = () if batch is None else (batch,)
    shape = lead + (config.L_p, config.K)
    alphas = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    betas = rng.uniform(-config.aod_limit, config.aod_limit, size=shape)
    H = channel_from_paths(alphas, betas, config.N_t, config.spacing_ratio)
    return ChannelRealization(H=H, alphas=alphas, betas=betas)


def normalize_pilot_columns(raw_re, raw_im, power: float) -> tuple[Tensor, Tensor]:
    """Scale every column of the complex matrix to squared norm ``power``."""
    raw_re, raw_im = T.as_tensor(raw_re), T.as_tensor(raw_im)
    sq = (T.square(raw_re) + T.square(raw_im)).sum(axis=0, keepdims=True)
    if np.any(sq.data <= 0.0):
        raise NumericalError("pilot column with zero norm cannot be normalized")
    scale = math.sqrt(power) / T.sqrt(sq)
    return raw_re * scale, raw_im * scale


class PilotMatrix:
    """Trainable pilots: a linear layer without bias, reparameterized so that
    each column always carries power ``P`` exactly."""

    def __init__(self, params: ParameterSet, config: SystemConfig, rng: np.random.Generator):
        shape = (config.N_t, config.L)
        self.raw_re = params.add("pilots.re", rng.standard_normal(shape) / math.sqrt(2.0))
        self.raw_im = params.add("pilots.im", rng.standard_normal(shape) / math.sqrt(2.0))
        self.power = config.P

    def normalized(self) -> tuple[Tensor, Tensor]:
        return normalize_pilot_columns(self.raw_re, self.raw_im, self.power)

    def matrix(self) -> np.ndarray:
        re, im = self.normalized()
        return re.data + 1j * im.data


def transmit_pilots(H: np.ndarray, X, noise_variance: float,
                    rng: np.random.Generator | None) -> ReceivedPilots:
    """Received pilots ``y_k = h_k^H X + z_k`` for every user.

    ``X`` is either a complex ``(N_t, L)`` array or a (real, imag) tensor
    pair. ``rng=None`` transmits without noise.
    """
    if isinstance(X, tuple):
        x_re, x_im = X
    else:
        X = np.asarray(X)
        x_re, x_im = Tensor(X.real), Tensor(X.imag)
    H = np.asarray(H)
    if H.ndim == 2:
        H = H[None]
    if H.shape[-2] != x_re.shape[0]:
        raise ConfigError(f"channel has {H.shape[-2]} antennas, pilots {x_re.shape[0]}")
    hr = Tensor(np.swapaxes(H.real, -1, -2))  # (B, K, N_t)
    hi = Tensor(np.swapaxes(H.imag, -1, -2))
    y_re = hr @ x_re + hi @ x_im
    y_im = hr @ x_im - hi @ x_re
    if rng is None:
        noise = np.zeros(y_re.shape, dtype=np.complex128)
    else:
        std = math.sqrt(noise_variance / 2.0)
        noise = std * (rng.standard_normal(y_re.shape) + 1j * rng.standard_normal(y_re.shape))
        y_re = y_re + noise.real
        y_im = y_im + noise.imag
    return ReceivedPilots(y_re=y_re, y_im=y_im, noise=noise)


def snr_db_to_noise_variance(snr_db: float, power: float = 1.0) -> float:
    return power / 10.0 ** (snr_db / 10.0)
