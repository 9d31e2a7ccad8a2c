"""Adam with standard bias correction."""

from __future__ import annotations

import numpy as np


class Adam:
    """theta -= lr * m_hat / (sqrt(v_hat) + eps), with m/v bias-corrected by step count."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError(f"Adam: lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        bc1 = np.float32(1.0 - self.beta1 ** self.t)
        bc2 = np.float32(1.0 - self.beta2 ** self.t)
        lr = np.float32(self.lr)
        eps = np.float32(self.eps)
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"Adam: grad shape {g.shape} != param shape {p.data.shape}")
            m = self.m[i]
            v = self.v[i]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    def state_dict(self):
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state):
        if len(state["m"]) != len(self.params):
            raise ValueError("Adam: state has wrong number of moment arrays")
        self.t = int(state["t"])
        self.m = [np.asarray(m, dtype=np.float32).copy() for m in state["m"]]
        self.v = [np.asarray(v, dtype=np.float32).copy() for v in state["v"]]
        for p, m, v in zip(self.params, self.m, self.v):
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ValueError("Adam: state shapes do not match parameters")
