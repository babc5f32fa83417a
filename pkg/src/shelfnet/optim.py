"""SGD with momentum and decoupled-from-nothing classic weight decay.

Update rule:  v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v.
"""

from __future__ import annotations

from typing import Dict, Iterable, List

import numpy as np

from .autograd import Parameter
from .errors import ConfigError, ShapeError


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
             lr: float, momentum: float, weight_decay: float):
    """One in-place update on raw arrays; returns (param, velocity)."""
    if param.shape != grad.shape:
        raise ShapeError(f"sgd_step: param shape {param.shape} != grad shape {grad.shape}")
    velocity *= momentum
    velocity += grad + weight_decay * param
    param -= lr * velocity
    return param, velocity


class SGD:
    def __init__(self, params: Iterable[Parameter], momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.params: List[Parameter] = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names handed to SGD")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {
            p.name: np.zeros_like(p.data) for p in self.params
        }

    def step(self, lr: float):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            sgd_step(p.data, g, self.velocity[p.name], lr, self.momentum, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for name, v in state.items():
            if name not in self.velocity:
                raise ConfigError(f"optimizer state for unknown parameter {name!r}")
            if v.shape != self.velocity[name].shape:
                raise ShapeError(f"optimizer state shape mismatch for {name!r}")
            self.velocity[name] = v.copy()
