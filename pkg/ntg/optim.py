"""ADAM with bias correction, updating plain numpy parameter arrays in place."""

from typing import Dict, Hashable, Mapping, Optional

import numpy as np


class Adam:
    def __init__(self, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[Hashable, np.ndarray] = {}
        self._v: Dict[Hashable, np.ndarray] = {}

    def step(
        self,
        params: Mapping[Hashable, np.ndarray],
        grads: Mapping[Hashable, np.ndarray],
        lr: Optional[float] = None,
    ) -> None:
        """One update of every parameter that has a gradient.

        ``params`` values are modified in place.  With a learning rate of
        zero the moments still advance but the parameters stay bitwise equal.
        """
        lr = self.lr if lr is None else lr
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for key, param in params.items():
            grad = grads.get(key)
            if grad is None:
                continue
            m = self._m.get(key)
            if m is None:
                m = self._m[key] = np.zeros_like(param)
                self._v[key] = np.zeros_like(param)
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            if lr == 0.0:
                continue
            param -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

