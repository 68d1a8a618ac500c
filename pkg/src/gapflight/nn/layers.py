"""Dense layers with explicit forward caches and hand-written backward
passes. Training runs in float32; gradient tests run the same code in
float64 against central finite differences.
"""

import numpy as np


class Param:
    __slots__ = ("name", "val", "grad")

    def __init__(self, val, name=""):
        self.val = val
        self.grad = np.zeros_like(val)
        self.name = name

    @property
    def shape(self):
        return self.val.shape


class Module:
    def params(self):
        return []

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float32, scale=None, name="linear"):
        scale = (1.0 / np.sqrt(n_in)) if scale is None else scale
        self.W = Param(rng.normal(0.0, scale, (n_in, n_out)).astype(dtype), name + ".W")
        self.b = Param(np.zeros(n_out, dtype=dtype), name + ".b")
        self._x = None

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        self._x = x
        return x @ self.W.val + self.b.val

    def backward(self, g):
        self.W.grad += self._x.T @ g
        self.b.grad += g.sum(axis=0)
        return g @ self.W.val.T


class Relu(Module):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class Tanh(Module):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, g):
        return g * (1.0 - self._y * self._y)


class MLP(Module):
    """Linear/ReLU stack; the final layer is linear unless told otherwise."""

    def __init__(self, sizes, rng, dtype=np.float32, final_tanh=False,
                 final_relu=False, final_scale=None, name="mlp"):
        self.layers = []
        for li, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = li == len(sizes) - 2
            scale = final_scale if (last and final_scale is not None) else None
            self.layers.append(Linear(a, b, rng, dtype, scale, f"{name}.{li}"))
            if not last or final_relu:
                self.layers.append(Relu())
            elif final_tanh:
                self.layers.append(Tanh())

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def forward(self, x):
        for l in self.layers:
            x = l.forward(x)
        return x

    def backward(self, g):
        for l in reversed(self.layers):
            g = l.backward(g)
        return g


class PointEncoder(Module):
    """Shared per-point MLP followed by a global max pool.

    The pooled feature is invariant to any permutation of the input points
    (max is symmetric); gradients route to the argmax points.
    """

    def __init__(self, widths=(3, 64, 128), rng=None, dtype=np.float32, name="points"):
        self.mlp = MLP(list(widths), rng, dtype, name=name)
        self.out_dim = widths[-1]

    def params(self):
        return self.mlp.params()

    def forward(self, pts):
        """pts (B, M, d) -> (B, out_dim)."""
        b, m, d = pts.shape
        h = self.mlp.forward(pts.reshape(b * m, d)).reshape(b, m, self.out_dim)
        self._argmax = np.argmax(h, axis=1)
        self._bm = (b, m)
        return np.take_along_axis(h, self._argmax[:, None, :], axis=1)[:, 0, :]

    def backward(self, g):
        b, m = self._bm
        gh = np.zeros((b, m, self.out_dim), dtype=g.dtype)
        np.put_along_axis(gh, self._argmax[:, None, :], g[:, None, :], axis=1)
        return self.mlp.backward(gh.reshape(b * m, self.out_dim)).reshape(b, m, -1)


class Conv2d(Module):
    """3x3 convolution, stride 2, padding 1, via im2col."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32, k=3, stride=2, pad=1,
                 name="conv"):
        self.k, self.stride, self.pad = k, stride, pad
        self.c_in, self.c_out = c_in, c_out
        scale = 1.0 / np.sqrt(c_in * k * k)
        self.W = Param(rng.normal(0.0, scale, (c_in * k * k, c_out)).astype(dtype), name + ".W")
        self.b = Param(np.zeros(c_out, dtype=dtype), name + ".b")

    def params(self):
        return [self.W, self.b]

    def _out_hw(self, h, w):
        k, s, p = self.k, self.stride, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        """x (B, C, H, W) -> (B, c_out, OH, OW)."""
        b, c, h, w = x.shape
        oh, ow = self._out_hw(h, w)
        k, s, p = self.k, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = np.empty((b, c, k, k, oh, ow), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
        cols = cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * k * k)
        self._cols = cols
        self._shape = (b, c, h, w, oh, ow)
        out = cols @ self.W.val + self.b.val
        return out.reshape(b, oh, ow, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, g):
        b, c, h, w, oh, ow = self._shape
        k, s, p = self.k, self.stride, self.pad
        gflat = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, self.c_out)
        self.W.grad += self._cols.T @ gflat
        self.b.grad += gflat.sum(axis=0)
        gcols = (gflat @ self.W.val.T).reshape(b, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=g.dtype)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += gcols[:, :, ki, kj]
        return gxp[:, :, p:p + h, p:p + w]


class ConvEncoder(Module):
    """Small strided conv stack + flatten + linear, for 2-channel images."""

    def __init__(self, in_hw, channels=(2, 8, 16, 32), out_dim=128, rng=None,
                 dtype=np.float32, name="pixels"):
        self.convs = []
        h, w = in_hw
        for li, (a, b) in enumerate(zip(channels[:-1], channels[1:])):
            self.convs.append(Conv2d(a, b, rng, dtype, name=f"{name}.conv{li}"))
            h, w = self.convs[-1]._out_hw(h, w)
        self.flat_dim = channels[-1] * h * w
        self.fc = Linear(self.flat_dim, out_dim, rng, dtype, name=f"{name}.fc")
        self.relu = [Relu() for _ in range(len(self.convs) + 1)]
        self.out_dim = out_dim

    def params(self):
        out = [p for c in self.convs for p in c.params()]
        return out + self.fc.params()

    def forward(self, x):
        for conv, act in zip(self.convs, self.relu):
            x = act.forward(conv.forward(x))
        self._pre_flat = x.shape
        return self.relu[-1].forward(self.fc.forward(x.reshape(x.shape[0], -1)))

    def backward(self, g):
        g = self.fc.backward(self.relu[-1].backward(g)).reshape(self._pre_flat)
        for conv, act in zip(reversed(self.convs), reversed(self.relu[:-1])):
            g = conv.backward(act.backward(g))
        return g
