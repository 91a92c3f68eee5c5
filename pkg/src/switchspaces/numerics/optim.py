from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from ..errors import ContractViolation
from .params import ParamStore


class Adam:
    """Bias-corrected Adam; moments and step counts live in the ParamStore."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ContractViolation("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params: ParamStore, grads: Mapping[str, np.ndarray]) -> ParamStore:
        for name, g in grads.items():
            p = params[name]
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise ContractViolation(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            t = params.t[name] + 1
            m = params.m[name]
            v = params.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            params.t[name] = t
        return params


def adam_step(params: ParamStore, grads, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> ParamStore:
    return Adam(lr, beta1, beta2, eps).step(params, grads)
