"""Training loop, evaluation on a seeded test set, and training configuration."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec
from . import objectives as ob
from .bs import to_complex
from .channel import SystemConfig, sample_channel, transmit_pilots
from .errors import ConfigError, DecodeError, NumericalError
from .feedback import estimate_overhead, quantize
from .objectives import LossBreakdown
from .optim import Adam, clip_grad_norm
from .system import FeedbackSystem, active_heads, mode_name

TEST_SET_SIZE = 10_000


@dataclass
class TrainingConfig:
    lam: float = 1.0
    gamma: float = 0.0
    batch_size: int = 256
    total_batches: int = 20_000
    learning_rate: float = 1e-3
    eval_interval: int = 500
    checkpoint_path: str | None = None
    rng_seed: int = 0
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("lam and gamma must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch normalization)")
        if self.total_batches < 1:
            raise ConfigError("total_batches must be at least 1")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be at least 1")

    @property
    def mode(self) -> str:
        return mode_name(self.lam, self.gamma)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown TrainingConfig fields: {sorted(unknown)}")
        return cls(**d)


def train_step(system: FeedbackSystem, optimizer: Adam, H: np.ndarray,
               rng: np.random.Generator, lam: float, gamma: float,
               grad_clip: float | None = 10.0) -> LossBreakdown:
    """One forward pass, backward pass and Adam update on a channel batch."""
    system.params.zero_grad()
    loss, breakdown = system.forward(H, rng, lam, gamma, train=True)
    if not math.isfinite(breakdown.total):
        raise NumericalError(f"non-finite loss at optimizer step {optimizer.step_count + 1}: "
                             f"{breakdown}")
    loss.backward()
    if grad_clip is not None:
        clip_grad_norm(system.params, grad_clip)
    optimizer.step()
    return breakdown


class Trainer:
    """Owns the system, optimizer and the training-data RNG stream.

    Fresh channels are drawn for every batch.
    """

    def __init__(self, system: FeedbackSystem, config: TrainingConfig):
        self.system = system
        self.config = config
        self.optimizer = Adam(system.params, lr=config.learning_rate)
        self.rng = np.random.default_rng(config.rng_seed)
        self.step = 0
        self.history: list[LossBreakdown] = []

    def train_step(self) -> LossBreakdown:
        cfg = self.config
        H = sample_channel(self.system.config, self.rng, batch=cfg.batch_size).H
        breakdown = train_step(self.system, self.optimizer, H, self.rng, cfg.lam, cfg.gamma,
                               cfg.grad_clip)
        self.step += 1
        self.history.append(breakdown)
        return breakdown

    def run(self, n_steps: int | None = None, log_path=None, progress=None) -> list[LossBreakdown]:
        """Train until ``total_batches`` (or ``n_steps`` more steps).

        Every ``eval_interval`` steps the interval-averaged loss terms are
        appended to the CSV at ``log_path`` and passed to ``progress``.
        """
        end = self.config.total_batches if n_steps is None else self.step + n_steps
        log_file = writer = None
        if log_path is not None:
            log_path = Path(log_path)
            new = not log_path.exists() or self.step == 0
            log_file = open(log_path, "w" if new else "a", newline="")
            writer = csv.writer(log_file, lineterminator="\n")
            if new:
                writer.writerow(["step", "overhead", "rate", "distortion", "loss"])
        window: list[LossBreakdown] = []
        try:
            while self.step < end:
                window.append(self.train_step())
                if self.step % self.config.eval_interval == 0 or self.step == end:
                    row = _window_mean(window)
                    if writer is not None:
                        writer.writerow([self.step] + [f"{v:.17g}" for v in row])
                        log_file.flush()
                    if progress is not None:
                        progress(self.step, row)
                    window = []
        finally:
            if log_file is not None:
                log_file.close()
        return self.history

    def loss_trajectory(self) -> np.ndarray:
        return np.array([b.total for b in self.history])


def _window_mean(window: list[LossBreakdown]) -> tuple:
    n = len(window)
    return (sum(b.overhead for b in window) / n, sum(b.rate for b in window) / n,
            sum(b.distortion for b in window) / n, sum(b.total for b in window) / n)


@dataclass
class EvalMetrics:
    estimated_bits: float             # per user, -log2 p at pseudo-quantized latents
    entropy_bits: float               # per user, -log2 p at the quantized latents
    realized_bits: float              # per user, mean coded payload length
    header_bits: float                # per user, fixed stream header size
    sum_rate: float | None            # precoder head fed decoded quantized feedback
    sum_rate_pseudo: float | None     # precoder head fed pseudo-quantized feedback
    mse: float | None
    sum_rate_mrt_hat: float | None    # MRT on the reconstructed channel
    sum_rate_zf_hat: float | None     # ZF on the reconstructed channel
    zf_fallbacks: int = 0
    n_test: int = 0


def make_test_set(config: SystemConfig, testset_seed: int, n: int = TEST_SET_SIZE):
    """Test channels and the noise realizations that go with them."""
    rng = np.random.default_rng(testset_seed)
    H = sample_channel(config, rng, batch=n).H
    return H, rng


def eval_latents(system: FeedbackSystem, testset_seed: int = 1234, n_test: int = TEST_SET_SIZE,
                 chunk: int = 1000):
    """Test channels with eval-mode latents ``t`` and pseudo-quantized ``t + u``.

    Latents are ``(n_test * K, N_b)``, users of one channel adjacent.
    """
    cfg = system.config
    H, rng = make_test_set(cfg, testset_seed, n_test)
    rx = transmit_pilots(H, system.pilots.matrix(), cfg.noise_variance, rng)
    rows = rx.encoder_rows().data
    t = np.concatenate([system.encoder(rows[i:i + chunk], train=False).data
                        for i in range(0, len(rows), chunk)])
    return H, t, t + rng.uniform(-0.5, 0.5, size=t.shape)


def evaluate(system: FeedbackSystem, testset_seed: int = 1234, n_test: int = TEST_SET_SIZE,
             heads=("precoder", "channel"), chunk: int = 1000) -> EvalMetrics:
    """Test-mode metrics: true quantization, real entropy coding, running BN stats.

    Every feedback vector is range coded and decoded; the BS networks consume
    the decoded symbols.
    """
    cfg = system.config
    H, t, t_tilde = eval_latents(system, testset_seed, n_test, chunk)
    t_bar = quantize(t)
    scales = system.entropy.scale_values()

    table = codec.build_symbol_table(scales)
    decoded = np.empty_like(t_bar)
    bits = 0
    header_bits = 0
    for i, row in enumerate(t_bar):
        stream = codec.range_encode(row, table)
        decoded[i] = codec.range_decode(stream.to_bytes(), table)
        bits += stream.bit_length
        header_bits = stream.header_bits
    if not np.array_equal(decoded, t_bar):
        raise DecodeError("entropy codec round trip failed")

    K, nb = cfg.K, cfg.N_b
    fb_bar = decoded.astype(np.float64).reshape(n_test, K * nb)
    fb_tilde = t_tilde.reshape(n_test, K * nb)

    def run_head(fb, head):
        parts = [system.bs.forward(fb[i:i + chunk], False, (head,))[head]
                 for i in range(0, n_test, chunk)]
        return np.concatenate([to_complex(p) for p in parts])

    metrics = EvalMetrics(
        estimated_bits=estimate_overhead(t_tilde, scales),
        entropy_bits=estimate_overhead(t_bar.astype(np.float64), scales),
        realized_bits=bits / len(t_bar), header_bits=float(header_bits),
        sum_rate=None, sum_rate_pseudo=None, mse=None,
        sum_rate_mrt_hat=None, sum_rate_zf_hat=None, n_test=n_test)
    if "precoder" in heads:
        metrics.sum_rate = ob.sum_rate(H, run_head(fb_bar, "precoder"), cfg.noise_variance)
        metrics.sum_rate_pseudo = ob.sum_rate(H, run_head(fb_tilde, "precoder"),
                                              cfg.noise_variance)
    if "channel" in heads:
        H_hat = run_head(fb_bar, "channel")
        metrics.mse = ob.mse_distortion(H, H_hat)
        metrics.sum_rate_mrt_hat = ob.sum_rate(H, ob.mrt_precoder(H_hat, cfg.P),
                                               cfg.noise_variance)
        V_zf, fallbacks = _zf_counting(H_hat, cfg.P)
        metrics.sum_rate_zf_hat = ob.sum_rate(H, V_zf, cfg.noise_variance)
        metrics.zf_fallbacks = fallbacks
    return metrics


def _zf_counting(H_hat: np.ndarray, power: float):
    s = np.linalg.svd(H_hat, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = (s[:, 0] / s[:, -1]) ** 2
    fallbacks = int(np.sum(~(cond <= ob.MAX_GRAM_CONDITION)))
    return ob.zf_precoder(H_hat, power, strict=False), fallbacks


def evaluate_baseline(config: SystemConfig, method: str, testset_seed: int = 1234,
                      n_test: int = TEST_SET_SIZE) -> float:
    """CSIT sum rate of a closed-form precoder on the true test channels."""
    H, rng = make_test_set(config, testset_seed, n_test)
    if method == "mrt":
        V = ob.mrt_precoder(H, config.P)
    elif method == "zf":
        V = ob.zf_precoder(H, config.P, strict=False)
    elif method == "random":
        V = ob.random_precoder(rng, config.N_t, config.K, config.P, batch=n_test)
    else:
        raise ConfigError(f"unknown baseline method {method!r}")
    return ob.sum_rate(H, V, config.noise_variance)


def heads_for(config: TrainingConfig) -> tuple:
    return active_heads(config.lam, config.gamma)
