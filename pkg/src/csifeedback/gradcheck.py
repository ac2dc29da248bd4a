"""Central finite-difference checks for the differentiation engine."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .layers import ParameterSet
from .tensor import Tensor

FD_STEP = 1e-5


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. each entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def check_op(op: Callable[..., Tensor], inputs: list[np.ndarray], rng: np.random.Generator,
             eps: float = FD_STEP) -> float:
    """Worst relative error over ``inputs`` for ``sum(w * op(*inputs))`` with random ``w``."""
    leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = op(*leaves)
    weights = rng.standard_normal(out.shape)
    (out * weights).sum().backward()

    worst = 0.0
    for i, leaf in enumerate(leaves):
        values = [x.copy() for x in inputs]

        def f():
            return float((op(*[Tensor(v) for v in values]).data * weights).sum())
        numeric = numerical_gradient(f, values[i], eps)
        worst = max(worst, relative_error(leaf.grad, numeric))
    return worst


def directional_check(loss_fn: Callable[[], Tensor], params: ParameterSet,
                      direction: np.ndarray, eps: float = FD_STEP) -> tuple[float, float]:
    """Analytic vs central-difference derivative of ``loss_fn`` along ``direction``.

    ``loss_fn`` must be deterministic (fixed noise) for the comparison to mean anything.
    """
    params.zero_grad()
    loss_fn().backward()
    analytic = float(params.flat_grads() @ direction)
    base = params.flat_values()
    params.set_flat_values(base + eps * direction)
    up = loss_fn().item()
    params.set_flat_values(base - eps * direction)
    down = loss_fn().item()
    params.set_flat_values(base)
    params.zero_grad()
    return analytic, (up - down) / (2.0 * eps)


def tiny_config(seed: int = 0):
    from .channel import SystemConfig
    return SystemConfig(N_t=4, K=2, L=2, L_p=2, N_b=4, rng_seed=seed,
                        encoder_hidden=(8, 8), decoder_hidden=(8, 8))


def end_to_end_errors(n_points: int = 100, lam: float = 1.0, gamma: float = 1.0,
                      batch: int = 4, seed: int = 0, eps: float = FD_STEP) -> list[float]:
    """Directional-derivative relative errors of the full training loss.

    Each point is a tiny system at its initialization plus Gaussian jitter,
    a fresh channel batch and a random unit direction over every parameter
    (pilots, encoder, entropy model, decoder). Pilot and quantization noise are replayed from
    a fixed seed so the loss is a deterministic function of the parameters.
    """
    from .channel import sample_channel
    from .system import FeedbackSystem

    root = np.random.default_rng(seed)
    errors = []
    for i in range(n_points):
        system = FeedbackSystem(tiny_config(seed=int(root.integers(2**31))))
        values = system.params.flat_values()
        system.params.set_flat_values(values + 0.1 * root.standard_normal(values.size))
        H = sample_channel(system.config, root, batch=batch).H
        noise_seed = int(root.integers(2**31))

        def loss_fn():
            return system.forward(H, np.random.default_rng(noise_seed), lam, gamma, train=True)[0]
        direction = root.standard_normal(system.params.num_values())
        direction /= np.linalg.norm(direction)
        analytic, numeric = directional_check(loss_fn, system.params, direction, eps)
        errors.append(relative_error(analytic, numeric))
    return errors
