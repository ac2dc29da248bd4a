"""Parameter container and the dense / batch-norm building blocks."""

from __future__ import annotations

import math
from collections.abc import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ParameterSet:
    """Named trainable tensors plus named non-trainable buffers.

    Buffers hold state such as batch-norm running statistics; they are
    checkpointed with the parameters but never touched by the optimizer.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        param = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = param
        return param

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self.buffers:
            raise ConfigError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.array(value, dtype=np.float64)
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.grad.fill(0.0)

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self._params.values()))

    def flat_values(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self._params.values()])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for p in self._params.values()])

    def set_flat_values(self, flat: np.ndarray):
        offset = 0
        for p in self._params.values():
            n = p.data.size
            p.data[...] = flat[offset:offset + n].reshape(p.shape)
            offset += n
        if offset != flat.size:
            raise ConfigError(f"expected {offset} values, got {flat.size}")


class Dense:
    def __init__(self, params: ParameterSet, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.weight = params.add(f"{name}.weight", rng.uniform(-limit, limit, size=(n_in, n_out)))
        # small random biases: with zero biases an all-zero input maps to an exactly zero output
        bound = 1.0 / math.sqrt(n_in)
        self.bias = params.add(f"{name}.bias", rng.uniform(-bound, bound, size=n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor, activation: str | None = None) -> Tensor:
        return T.dense(x, self.weight, self.bias, activation)


class BatchNorm:
    """Batch normalization over the batch axis with running statistics.

    In training mode the batch moments normalize the input and update the
    running mean / unbiased running variance by exponential averaging with
    ``momentum``. Evaluation mode uses the running statistics.
    """

    def __init__(self, params: ParameterSet, name: str, n: int,
                 momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.scale = params.add(f"{name}.scale", np.ones(n))
        self.shift = params.add(f"{name}.shift", np.zeros(n))
        self.running_mean = params.add_buffer(f"{name}.running_mean", np.zeros(n))
        self.running_var = params.add_buffer(f"{name}.running_var", np.ones(n))
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if not train:
            return T.batch_norm(x, self.running_mean, self.running_var, self.scale,
                                self.shift, self.eps, batch_stats=False)
        n = x.shape[0]
        if n < 2:
            raise ConfigError("batch norm in training mode needs a batch of at least 2")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = self.momentum
        # in-place so buffers stay shared with the owning ParameterSet
        self.running_mean *= 1.0 - m
        self.running_mean += m * mu
        self.running_var *= 1.0 - m
        self.running_var += m * var * n / (n - 1)
        return T.batch_norm(x, mu, var, self.scale, self.shift, self.eps, batch_stats=True)


class MLP:
    """Fully-connected stack: each hidden layer is BN -> dense -> ReLU.

    The optional output layer is a plain linear dense layer. With
    ``n_out=None`` the stack ends after the last hidden layer (a trunk).
    """

    def __init__(self, params: ParameterSet, name: str, n_in: int, hidden: list[int],
                 n_out: int | None, rng: np.random.Generator):
        self.norms, self.layers = [], []
        width = n_in
        for i, h in enumerate(hidden):
            self.norms.append(BatchNorm(params, f"{name}.bn{i}", width))
            self.layers.append(Dense(params, f"{name}.fc{i}", width, h, rng))
            width = h
        self.out = Dense(params, f"{name}.out", width, n_out, rng) if n_out is not None else None
        self.n_in = n_in
        self.width = width if n_out is None else n_out

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ConfigError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        for norm, layer in zip(self.norms, self.layers):
            x = layer(norm(x, train), activation="relu")
        if self.out is not None:
            x = self.out(x)
        return x
