from __future__ import annotations

import numpy as np

from .core import NonFiniteError


class Adam:
    """Adaptive-moment optimizer with bias correction.

    State (moments and step count) lives on the instance so it can be
    checkpointed and resumed exactly.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)

    def state_arrays(self):
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays, step_count):
        for k in self.m:
            self.m[k] = np.array(arrays[f"adam.m.{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(arrays[f"adam.v.{k}"], dtype=self.v[k].dtype)
        self.step_count = int(step_count)
