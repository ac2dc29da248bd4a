"""Base-station network: feedback of all users -> precoders and/or channel estimates."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .channel import SystemConfig
from .errors import ConfigError, NumericalError
from .layers import MLP, Dense, ParameterSet
from .tensor import Tensor


def normalize_power(w_re, w_im, power: float) -> tuple[Tensor, Tensor]:
    """Scale each matrix (last two axes) to total power ``Tr(W W^H) = power``."""
    w_re, w_im = T.as_tensor(w_re), T.as_tensor(w_im)
    sq = (T.square(w_re) + T.square(w_im)).sum(axis=(-2, -1), keepdims=True)
    if np.any(sq.data <= 0.0):
        raise NumericalError("cannot normalize an all-zero precoder")
    scale = math.sqrt(power) / T.sqrt(sq)
    return w_re * scale, w_im * scale


class BSDecoder:
    """Shared trunk with a precoder head and a channel-reconstruction head.

    Input rows are the K users' latents concatenated, ``(B, K*N_b)``. Each
    head emits ``2*N_t*K`` reals read as ``(B, 2, N_t, K)`` real/imag planes.
    """

    HEADS = ("precoder", "channel")

    def __init__(self, params: ParameterSet, config: SystemConfig, rng: np.random.Generator):
        self.n_in = config.K * config.N_b
        self.n_t, self.k, self.power = config.N_t, config.K, config.P
        self.trunk = MLP(params, "decoder", self.n_in, list(config.decoder_hidden), None, rng)
        n_out = 2 * config.N_t * config.K
        self.precoder_head = Dense(params, "decoder.precoder", self.trunk.width, n_out, rng)
        self.channel_head = Dense(params, "decoder.channel", self.trunk.width, n_out, rng)

    def _planes(self, raw: Tensor) -> tuple[Tensor, Tensor]:
        b = raw.shape[0]
        planes = raw.reshape(b, 2, self.n_t, self.k)
        return planes[:, 0], planes[:, 1]

    def forward(self, feedback, train: bool, heads=HEADS) -> dict:
        """Run the trunk once and the requested heads.

        Returns a dict with ``"precoder"`` -> power-normalized (V_re, V_im)
        and/or ``"channel"`` -> (H_re, H_im).
        """
        feedback = T.as_tensor(feedback)
        if feedback.ndim != 2 or feedback.shape[1] != self.n_in:
            raise ConfigError(f"BS input must be (B, {self.n_in}), got {feedback.shape}")
        z = self.trunk(feedback, train)
        out = {}
        if "precoder" in heads:
            out["precoder"] = normalize_power(*self._planes(self.precoder_head(z)), self.power)
        if "channel" in heads:
            out["channel"] = self._planes(self.channel_head(z))
        return out

    def decode_precoders(self, feedback, train: bool = False) -> tuple[Tensor, Tensor]:
        return self.forward(feedback, train, ("precoder",))["precoder"]

    def decode_channel(self, feedback, train: bool = False) -> tuple[Tensor, Tensor]:
        return self.forward(feedback, train, ("channel",))["channel"]


def to_complex(pair) -> np.ndarray:
    re, im = pair
    return re.data + 1j * im.data
