"""Parameter-update rules: Adam (with optional learning-rate decay) and RMSProp.

Optimizers read gradients off the parameter tensors (populated by
Tensor.backward) and mutate parameter data in place. Non-trainable
parameters are never touched, even when a gradient is present.
"""

import numpy as np

from .errors import ConfigError, MissingGradientError


def _iter_trainable(params):
    for p in params:
        if p.trainable:
            for t in p.tensors():
                yield t


class Adam:
    """Adam with bias correction; effective lr = lr / (1 + decay * t)."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-7, decay=0.0):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.decay = float(decay)
        self.t = 0
        self._slots = {}  # id(tensor) -> (tensor, m, v)

    def step(self, params):
        self.t += 1
        lr = self.lr
        if self.decay > 0:
            lr = lr / (1.0 + self.decay * self.t)
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for t in _iter_trainable(params):
            if t.grad is None:
                raise MissingGradientError(
                    f"trainable parameter of shape {t.shape} has no gradient"
                )
            key = id(t)
            if key not in self._slots:
                self._slots[key] = (t, np.zeros_like(t.data), np.zeros_like(t.data))
            _, m, v = self._slots[key]
            g = t.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)).astype(
                t.data.dtype, copy=False
            )


class RMSProp:
    """RMSProp: acc = rho*acc + (1-rho)*g^2; p -= lr * g / (sqrt(acc) + eps)."""

    def __init__(self, lr=0.001, rho=0.9, epsilon=1e-7):
        self.lr = float(lr)
        self.rho = float(rho)
        self.epsilon = float(epsilon)
        self.t = 0
        self._slots = {}  # id(tensor) -> (tensor, acc)

    def step(self, params):
        self.t += 1
        for t in _iter_trainable(params):
            if t.grad is None:
                raise MissingGradientError(
                    f"trainable parameter of shape {t.shape} has no gradient"
                )
            key = id(t)
            if key not in self._slots:
                self._slots[key] = (t, np.zeros_like(t.data))
            _, acc = self._slots[key]
            g = t.grad
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            t.data -= (self.lr * g / (np.sqrt(acc) + self.epsilon)).astype(
                t.data.dtype, copy=False
            )


def make_optimizer(name, **kwargs):
    """Build an optimizer from a config name ("adam" or "rmsprop")."""
    name = name.lower()
    if name == "adam":
        return Adam(**kwargs)
    if name == "rmsprop":
        return RMSProp(**kwargs)
    raise ConfigError(f"unknown optimizer: {name!r}")
