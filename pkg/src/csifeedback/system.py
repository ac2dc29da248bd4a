"""End-to-end assembly: pilots -> user encoder -> entropy model -> BS network."""

from __future__ import annotations

import numpy as np

from . import objectives as ob
from .bs import BSDecoder
from .channel import PilotMatrix, SystemConfig, transmit_pilots
from .feedback import EntropyModel, FeatureEncoder, pseudo_quantize
from .layers import ParameterSet
from .objectives import LossBreakdown


def active_heads(lam: float, gamma: float) -> tuple:
    """Which BS outputs a (lam, gamma) objective needs.

    ``gamma == 0`` is precoding-oriented; ``lam == 0 < gamma`` is
    reconstruction-oriented; both positive trains both heads.
    """
    heads = []
    if lam > 0 or gamma == 0:
        heads.append("precoder")
    if gamma > 0:
        heads.append("channel")
    return tuple(heads)


def mode_name(lam: float, gamma: float) -> str:
    heads = active_heads(lam, gamma)
    if heads == ("precoder",):
        return "precoding"
    if heads == ("channel",):
        return "reconstruction"
    return "joint"


class FeedbackSystem:
    """All trainable blocks sharing one ``ParameterSet``.

    Initialization is fully determined by ``config.rng_seed``.
    """

    def __init__(self, config: SystemConfig):
        self.config = config
        self.params = ParameterSet()
        rng = np.random.default_rng(config.rng_seed)
        self.pilots = PilotMatrix(self.params, config, rng)
        self.encoder = FeatureEncoder(self.params, config, rng)
        self.entropy = EntropyModel(self.params, config.N_b)
        self.bs = BSDecoder(self.params, config, rng)

    def forward(self, H: np.ndarray, rng: np.random.Generator, lam: float, gamma: float,
                train: bool = True):
        """Training-style pass over a batch of channels ``(B, N_t, K)``.

        Uses pseudo-quantized feedback. Returns the loss tensor and its
        breakdown; ``rng`` supplies pilot noise and the uniform noise.
        """
        cfg = self.config
        b = H.shape[0]
        rx = transmit_pilots(H, self.pilots.normalized(), cfg.noise_variance, rng)
        t = self.encoder(rx.encoder_rows(), train)
        t_tilde, _ = pseudo_quantize(t, rng)
        overhead = self.entropy.overhead(t_tilde) * cfg.K
        out = self.bs.forward(t_tilde.reshape(b, cfg.K * cfg.N_b), train,
                              active_heads(lam, gamma))
        rate = distortion = 0.0
        if "precoder" in out:
            rate = ob.user_rates_tensor(H.real, H.imag, *out["precoder"],
                                        cfg.noise_variance).sum(axis=-1).mean()
        if "channel" in out:
            distortion = ob.mse_distortion_tensor(H.real, H.imag, *out["channel"])
        loss = ob.total_loss(overhead, rate, distortion, lam, gamma)
        breakdown = LossBreakdown(
            overhead=overhead.item(), rate=float(getattr(rate, "data", rate)),
            distortion=float(getattr(distortion, "data", distortion)),
            total=loss.item(), lam=lam, gamma=gamma)
        return loss, breakdown
