"""
cria/optim.py — Adam над именованными тензорами
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class Adam:
    """Моменты хранятся по имени параметра, чтобы их можно было сохранить в чекпоинт."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg) -> 'Adam':
        return cls(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)

    def step(self, params: dict[str, Tensor]):
        """Один шаг по всем параметрам с накопленным grad; параметры без grad не трогаются."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1.0 - self.beta1) * g if m is None else self.beta1 * m + (1.0 - self.beta1) * g
            v = (1.0 - self.beta2) * g * g if v is None else self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            if self.lr == 0:
                continue
            p.assign(p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))

    def state(self) -> dict:
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps, 't': self.t}
