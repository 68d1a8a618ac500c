"""Policy output heads: tanh-squashed diagonal Gaussian and a value head."""

import math

import numpy as np

from .layers import Linear, Module, Param

LOG_2PI = math.log(2.0 * math.pi)


def _log1m_tanh_sq(z):
    """log(1 - tanh(z)^2), computed stably as 2(log2 - z - softplus(-2z))."""
    return 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))


class GaussianHead(Module):
    """Pre-squash Gaussian with state-independent log std; actions are
    tanh(z) of samples z, so the reported mean tanh(mu) lies in [-1, 1]."""

    def __init__(self, n_feat, n_act, rng, dtype=np.float32, log_std_init=-0.5,
                 mean_scale=0.01, mean_bias=None, name="pi"):
        self.mu = Linear(n_feat, n_act, rng, dtype, scale=mean_scale, name=name + ".mu")
        if mean_bias is not None:
            self.mu.b.val[...] = np.asarray(mean_bias, dtype=dtype)
        self.log_std = Param(np.full(n_act, log_std_init, dtype=dtype), name + ".log_std")
        self.n_act = n_act

    def params(self):
        return self.mu.params() + [self.log_std]

    def forward(self, feat):
        """feat (B, F) -> pre-squash mean (B, A)."""
        return self.mu.forward(feat)

    def backward_mu(self, g):
        return self.mu.backward(g)

    def mean_action(self, mu_pre):
        return np.tanh(mu_pre)

    def sample(self, mu_pre, rng):
        """Returns (action in [-1,1]^A, pre-squash sample z)."""
        std = np.exp(self.log_std.val)
        z = mu_pre + std * rng.standard_normal(mu_pre.shape).astype(mu_pre.dtype)
        return np.tanh(z), z

    def log_prob(self, z, mu_pre):
        """Exact log density of a = tanh(z) under the squashed Gaussian."""
        log_std = self.log_std.val
        std = np.exp(log_std)
        u = (z - mu_pre) / std
        gauss = -0.5 * (u * u) - log_std - 0.5 * LOG_2PI
        return np.sum(gauss - _log1m_tanh_sq(z), axis=-1)

    def log_prob_grads(self, z, mu_pre):
        """d logp / d mu_pre (B, A) and d logp / d log_std (B, A)."""
        std = np.exp(self.log_std.val)
        u = (z - mu_pre) / std
        return u / std, u * u - 1.0

    def entropy(self):
        """Pre-squash Gaussian entropy (scalar)."""
        return float(np.sum(self.log_std.val + 0.5 * (LOG_2PI + 1.0)))


class ValueHead(Module):
    def __init__(self, n_feat, rng, dtype=np.float32, name="value"):
        self.fc = Linear(n_feat, 1, rng, dtype, name=name + ".fc")

    def params(self):
        return self.fc.params()

    def forward(self, feat):
        return self.fc.forward(feat)[:, 0]

    def backward(self, g):
        return self.fc.backward(g[:, None])
