"""Trainable layers and the optimizer.

Weight matrices are initialized uniformly in +-sqrt(6/(in+out)) and
biases at zero; all randomness comes from the generator handed in, so a
seed fully determines the parameters.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, zero_grads
from .errors import ConfigError, NumericError, ShapeError

__all__ = ["Affine", "Adam", "glorot_uniform", "zero_grads"]


def glorot_uniform(rng, out_dim, in_dim):
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


class Affine:
    """Fully connected layer y = W x + b.

    ``weight`` has shape (out_dim, in_dim) and ``bias`` shape (out_dim,).
    Accepts a single vector (in_dim,) or a batch (n, in_dim).
    """

    def __init__(self, in_dim, out_dim, rng, name="affine"):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"affine dims must be positive, got {in_dim}->{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.name = name
        self.weight = Tensor(
            glorot_uniform(rng, out_dim, in_dim), requires_grad=True, name=f"{name}.weight"
        )
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        got = x.shape[-1] if x.ndim > 0 else None
        if x.ndim not in (1, 2) or got != self.in_dim:
            raise ShapeError(
                f"affine '{self.name}' expects input dim {self.in_dim}, "
                f"got shape {x.shape}"
            )
        if x.ndim == 1:
            y = x.reshape((1, self.in_dim)) @ self.weight.T + self.bias
            return y.reshape((self.out_dim,))
        return x @ self.weight.T + self.bias

    def parameters(self):
        return [self.weight, self.bias]


class Adam:
    """Adam with bias correction.

    Defaults (lr 1e-4, decays 0.9/0.999, eps 1e-8) are recorded here and
    echoed into run configs; training configs may override lr.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError(f"optimizer parameters need unique names, got {names}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(
                    f"non-finite gradient in parameter '{p.name}' at step {t}"
                )
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        zero_grads(self.params)
