"""Classical momentum (generator) and Adam (discriminator)."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import ShapeError, Tensor


def momentum_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
                  lr: float, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """v' = mu * v + g;  theta' = theta - lr * v'."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ShapeError(f"momentum_step: shapes differ {param.shape}, {grad.shape}, {velocity.shape}")
    v = mu * velocity + grad
    return param - lr * v, v


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (param, m, v)."""
    if t < 1:
        raise ValueError(f"Adam step counter must be >= 1, got {t}")
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ShapeError(f"adam_step: shapes differ {param.shape}, {grad.shape}, {m.shape}, {v.shape}")
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Momentum:
    def __init__(self, params: "OrderedDict[str, Tensor]", lr: float, mu: float = 0.9):
        self.params = params
        self.lr, self.mu = lr, mu
        self.velocity = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())

    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad.astype(p.dtype, copy=False)
            new, self.velocity[k] = momentum_step(p.data, g, self.velocity[k], self.lr, self.mu)
            p.data = new.astype(p.dtype, copy=False)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((f"velocity.{k}", v) for k, v in self.velocity.items())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.velocity:
            self.velocity[k] = state[f"velocity.{k}"].copy()


class Adam:
    def __init__(self, params: "OrderedDict[str, Tensor]", lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad.astype(p.dtype, copy=False)
            new, self.m[k], self.v[k] = adam_step(p.data, g, self.m[k], self.v[k], self.t,
                                                  self.lr, self.beta1, self.beta2, self.eps)
            p.data = new.astype(p.dtype, copy=False)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        out["t"] = np.array([self.t], dtype=np.float32)
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for k in self.m:
            self.m[k] = state[f"m.{k}"].copy()
            self.v[k] = state[f"v.{k}"].copy()
