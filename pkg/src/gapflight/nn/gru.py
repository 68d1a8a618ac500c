"""Single-layer GRU with full backpropagation through time."""

import numpy as np

from .layers import Module, Param


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class GRU(Module):
    """Gate order (r, z, n); update h' = (1 - z) * n + z * h."""

    def __init__(self, d_in, d_hidden, rng, dtype=np.float32, name="gru"):
        self.d_in, self.d_h = d_in, d_hidden
        si = 1.0 / np.sqrt(d_in)
        sh = 1.0 / np.sqrt(d_hidden)
        self.Wi = Param(rng.normal(0.0, si, (d_in, 3 * d_hidden)).astype(dtype), name + ".Wi")
        self.Wh = Param(rng.normal(0.0, sh, (d_hidden, 3 * d_hidden)).astype(dtype), name + ".Wh")
        self.bi = Param(np.zeros(3 * d_hidden, dtype=dtype), name + ".bi")
        self.bh = Param(np.zeros(3 * d_hidden, dtype=dtype), name + ".bh")

    def params(self):
        return [self.Wi, self.Wh, self.bi, self.bh]

    def init_hidden(self, batch, dtype=None):
        return np.zeros((batch, self.d_h), dtype=dtype or self.Wi.val.dtype)

    def _step(self, x, h):
        H = self.d_h
        gi = x @ self.Wi.val + self.bi.val
        gh = h @ self.Wh.val + self.bh.val
        r = _sigmoid(gi[:, :H] + gh[:, :H])
        z = _sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
        hn = gh[:, 2 * H:]
        n = np.tanh(gi[:, 2 * H:] + r * hn)
        h_new = (1.0 - z) * n + z * h
        cache = (x, h, r, z, n, hn)
        return h_new, cache

    def step(self, x, h):
        """Inference step without keeping the cache."""
        return self._step(x, h)[0]

    def forward_seq(self, xs, h0):
        """xs (T, B, d_in), h0 (B, d_h) -> hidden states (T, B, d_h)."""
        t_len, b, _ = xs.shape
        hs = np.empty((t_len, b, self.d_h), dtype=xs.dtype)
        self._caches = []
        h = h0
        for t in range(t_len):
            h, cache = self._step(xs[t], h)
            self._caches.append(cache)
            hs[t] = h
        return hs

    def backward_step(self, dh_new, cache):
        """Gradient of one step: returns (dx, dh) and accumulates params."""
        x, h, r, z, n, hn = cache
        dz = dh_new * (h - n) * z * (1.0 - z)
        dn_pre = dh_new * (1.0 - z) * (1.0 - n * n)
        dr = dn_pre * hn * r * (1.0 - r)
        dgi = np.concatenate([dr, dz, dn_pre], axis=1)
        dgh = np.concatenate([dr, dz, dn_pre * r], axis=1)
        self.Wi.grad += x.T @ dgi
        self.Wh.grad += h.T @ dgh
        self.bi.grad += dgi.sum(axis=0)
        self.bh.grad += dgh.sum(axis=0)
        dx = dgi @ self.Wi.val.T
        dh = dgh @ self.Wh.val.T + dh_new * z
        return dx, dh

    def backward_seq(self, dhs):
        """dhs (T, B, d_h) per-step output grads -> (dxs, dh0)."""
        t_len = len(self._caches)
        dxs = np.empty((t_len,) + dhs.shape[1:][:1] + (self.d_in,), dtype=dhs.dtype)
        dh = np.zeros_like(dhs[0])
        for t in range(t_len - 1, -1, -1):
            dx, dh = self.backward_step(dhs[t] + dh, self._caches[t])
            dxs[t] = dx
        return dxs, dh
