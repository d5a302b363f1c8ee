"""SGD+momentum, Adam, and AdamW over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingDivergence(RuntimeError):
    """Raised when a gradient or loss goes non-finite; carries the culprit."""

    def __init__(self, name: str, detail: str = "non-finite gradient"):
        super().__init__(f"{detail} for parameter '{name}'")
        self.name = name


class Optimizer:
    kind = "base"

    def __init__(self, learning_rate: float, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.step_count = 0
        self._state: dict[str, dict] = {}

    def step(self, params: dict[str, Tensor]):
        self.step_count += 1
        for name, p in params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise TrainingDivergence(name)
            self._update(name, p, p.grad)

    def zero_grad(self, params: dict[str, Tensor]):
        for p in params.values():
            p.grad = None

    def _update(self, name, p, g):
        raise NotImplementedError


class SGDMomentum(Optimizer):
    kind = "sgd_momentum"

    def __init__(self, learning_rate: float, momentum: float = 0.9, weight_decay: float = 0.0):
        super().__init__(learning_rate, weight_decay)
        self.momentum = momentum

    def _update(self, name, p, g):
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        buf = self._state.setdefault(name, {"v": np.zeros_like(p.data)})["v"]
        buf *= self.momentum
        buf += g
        p.data -= self.learning_rate * buf


class Adam(Optimizer):
    kind = "adam"

    def __init__(
        self,
        learning_rate: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(learning_rate, weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    decoupled = False

    def _update(self, name, p, g):
        if self.weight_decay and not self.decoupled:
            g = g + self.weight_decay * p.data
        st = self._state.setdefault(
            name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
        )
        st["t"] += 1
        st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * g
        st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * g * g
        mhat = st["m"] / (1 - self.beta1 ** st["t"])
        vhat = st["v"] / (1 - self.beta2 ** st["t"])
        if self.decoupled and self.weight_decay:
            p.data -= self.learning_rate * self.weight_decay * p.data
        p.data -= self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)


class AdamW(Adam):
    kind = "adamw"
    decoupled = True


def make_optimizer(kind: str, learning_rate: float, weight_decay: float = 0.0, momentum: float = 0.9) -> Optimizer:
    kind = kind.lower()
    if kind in ("sgd", "sgd_momentum"):
        return SGDMomentum(learning_rate, momentum=momentum, weight_decay=weight_decay)
    if kind == "adam":
        return Adam(learning_rate, weight_decay=weight_decay)
    if kind == "adamw":
        return AdamW(learning_rate, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer kind: {kind}")
