"""Euclidean optimizers over a flat dict of parameter arrays."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteError


def _check_finite(grads: dict) -> None:
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteError(f"non-finite gradients for {', '.join(sorted(bad))}; step rejected")


class Adam:
    """Adam with classic L2 weight decay (added to the gradient)."""

    kind = "adam"

    def __init__(self, lr=1e-3, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.state: dict[str, np.ndarray] = {}

    def hyper(self) -> dict:
        return dict(lr=self.lr, weight_decay=self.weight_decay, beta1=self.beta1,
                    beta2=self.beta2, eps=self.eps)

    def step(self, params: dict, grads: dict) -> None:
        _check_finite(grads)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name] + self.weight_decay * p
            m = self.state.get(f"m.{name}")
            v = self.state.get(f"v.{name}")
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.state[f"m.{name}"], self.state[f"v.{name}"] = m, v
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            params[name] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay."""

    kind = "sgd"

    def __init__(self, lr=1e-3, weight_decay=0.0, momentum=0.9):
        self.lr, self.weight_decay, self.momentum = lr, weight_decay, momentum
        self.step_count = 0
        self.state: dict[str, np.ndarray] = {}

    def hyper(self) -> dict:
        return dict(lr=self.lr, weight_decay=self.weight_decay, momentum=self.momentum)

    def step(self, params: dict, grads: dict) -> None:
        _check_finite(grads)
        self.step_count += 1
        for name, p in params.items():
            g = grads[name] + self.weight_decay * p
            buf = self.state.get(f"buf.{name}")
            buf = g if buf is None else self.momentum * buf + g
            self.state[f"buf.{name}"] = buf
            params[name] = p - self.lr * buf


def make_optimizer(kind: str, lr: float, weight_decay: float, momentum: float = 0.9):
    if kind == "adam":
        return Adam(lr, weight_decay)
    if kind == "sgd":
        return SGD(lr, weight_decay, momentum)
    raise ValueError(f"unknown optimizer {kind!r}")
