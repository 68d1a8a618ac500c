"""Adam with bias correction and a global gradient-norm clip."""

import numpy as np


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.val) for p in self.params]
        self.v = [np.zeros_like(p.val) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.val -= (self.lr / b1t) * m / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0

    def state_arrays(self):
        """Moment buffers keyed for checkpointing."""
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[p.name + ".m"] = m
            out[p.name + ".v"] = v
        return out

    def load_state(self, arrays, t):
        self.t = t
        for i, p in enumerate(self.params):
            self.m[i][...] = arrays[p.name + ".m"]
            self.v[i][...] = arrays[p.name + ".v"]


def clip_grad_norm(params, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if max_norm is not None and norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm
