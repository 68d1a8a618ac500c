"""Policy networks: the point-observation actor-critic trained with RL,
the recurrent pixel student it is distilled into, and a feedforward pixel
actor-critic used as the direct-RL baseline.
"""

import numpy as np

from ..dynamics import GRAVITY
from .checkpoint import load_params, params_to_arrays
from .gru import GRU
from .heads import GaussianHead, ValueHead
from .layers import ConvEncoder, MLP, PointEncoder

N_PROPRIO = 12  # roll, pitch, v_body(3), accel(3), last_action(4)
N_ACT = 4


def _proprio_scale(dtype):
    s = np.ones(N_PROPRIO, dtype=dtype)
    s[5:8] = 1.0 / GRAVITY  # accelerometer channels to ~unit range
    return s


class TeacherPolicy:
    """Point encoder + proprioception trunk with Gaussian policy and value
    heads (shared trunk)."""

    def __init__(self, n_points=32, point_widths=(64, 128), trunk_widths=(256, 256),
                 log_std_init=-0.5, mean_bias=None, rng=None, dtype=np.float32):
        self.n_points = n_points
        self.dtype = dtype
        self.encoder = PointEncoder((3,) + tuple(point_widths), rng, dtype, name="teacher.points")
        self.point_dim = point_widths[-1]
        self.trunk = MLP([self.point_dim + N_PROPRIO] + list(trunk_widths), rng, dtype,
                         final_relu=True, name="teacher.trunk")
        self.head = GaussianHead(trunk_widths[-1], N_ACT, rng, dtype, log_std_init,
                                 mean_bias=mean_bias, name="teacher.pi")
        self.vhead = ValueHead(trunk_widths[-1], rng, dtype, name="teacher.value")
        self._scale = _proprio_scale(dtype)

    def params(self):
        return (self.encoder.params() + self.trunk.params()
                + self.head.params() + self.vhead.params())

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def _split(self, obs_flat):
        x = obs_flat.astype(self.dtype, copy=False)
        m = 3 * self.n_points
        pts = x[:, :m].reshape(-1, self.n_points, 3)
        extra = x[:, m:] * self._scale
        return pts, extra

    def forward(self, obs_flat):
        """obs_flat (B, 3M+12) -> (mu_pre (B, 4), value (B,))."""
        pts, extra = self._split(obs_flat)
        f_pts = self.encoder.forward(pts)
        feat = self.trunk.forward(np.concatenate([f_pts, extra], axis=1))
        return self.head.forward(feat), self.vhead.forward(feat)

    def backward(self, d_mu, d_value):
        g_feat = self.head.backward_mu(d_mu) + self.vhead.backward(d_value)
        g_in = self.trunk.backward(g_feat)
        self.encoder.backward(g_in[:, :self.point_dim])

    def act(self, obs_flat, rng):
        """Stochastic action for collection: (a, z, logp, value)."""
        mu_pre, value = self.forward(obs_flat)
        a, z = self.head.sample(mu_pre, rng)
        logp = self.head.log_prob(z, mu_pre)
        return a, z, logp, value

    def act_deterministic(self, obs_flat):
        mu_pre, _ = self.forward(obs_flat)
        return self.head.mean_action(mu_pre)

    def value(self, obs_flat):
        return self.forward(obs_flat)[1]

    def named_arrays(self):
        return params_to_arrays(self.params())

    def load_arrays(self, arrays):
        load_params(self.params(), arrays)


class StudentPolicy:
    """Conv encoder over (depth, mask) images, GRU memory over the episode,
    MLP head emitting deterministic actions in [-1, 1]^4."""

    def __init__(self, image_hw=(32, 32), conv_channels=(2, 8, 16, 32), feat_dim=128,
                 hidden_dim=128, head_widths=(128,), d_max=10.0, rng=None,
                 dtype=np.float32):
        self.dtype = dtype
        self.d_max = d_max
        self.conv = ConvEncoder(image_hw, tuple(conv_channels), feat_dim, rng, dtype,
                                name="student.pixels")
        self.feat_dim = feat_dim
        self.hidden_dim = hidden_dim
        self.gru = GRU(feat_dim + N_PROPRIO, hidden_dim, rng, dtype, name="student.gru")
        self.head = MLP([hidden_dim] + list(head_widths) + [N_ACT], rng, dtype,
                        final_tanh=True, name="student.head")
        self._scale = _proprio_scale(dtype)
        self._img_scale = np.array([1.0 / d_max, 1.0], dtype=dtype)[:, None, None]

    def params(self):
        return self.conv.params() + self.gru.params() + self.head.params()

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def init_hidden(self, batch):
        return self.gru.init_hidden(batch)

    def _features(self, images, proprio):
        x = images.astype(self.dtype, copy=False) * self._img_scale
        f = self.conv.forward(x)
        return np.concatenate([f, proprio.astype(self.dtype, copy=False) * self._scale], axis=1)

    def forward_seq(self, images, proprio, h0):
        """images (T, B, 2, H, W), proprio (T, B, 12) -> actions (T, B, 4)."""
        t_len, b = images.shape[:2]
        feats = self._features(images.reshape((t_len * b,) + images.shape[2:]),
                               proprio.reshape(t_len * b, -1))
        xs = feats.reshape(t_len, b, -1)
        hs = self.gru.forward_seq(xs, h0)
        acts = self.head.forward(hs.reshape(t_len * b, -1))
        return acts.reshape(t_len, b, N_ACT), hs[-1]

    def backward_seq(self, d_actions):
        t_len, b = d_actions.shape[:2]
        dh = self.head.backward(d_actions.reshape(t_len * b, N_ACT))
        dxs, _ = self.gru.backward_seq(dh.reshape(t_len, b, -1))
        self.conv.backward(dxs[..., :self.feat_dim].reshape(t_len * b, self.feat_dim))

    def step(self, images, proprio, h):
        """Single inference step: (actions (B, 4), next hidden (B, H))."""
        x = self._features(images, proprio)
        h_new = self.gru.step(x, h)
        return self.head.forward(h_new), h_new

    def named_arrays(self):
        return params_to_arrays(self.params())

    def load_arrays(self, arrays):
        load_params(self.params(), arrays)


class PixelActorCritic:
    """Feedforward conv actor-critic for the direct pixel-RL baseline."""

    def __init__(self, image_hw=(32, 32), conv_channels=(2, 8, 16, 32), feat_dim=128,
                 trunk_widths=(128, 128), log_std_init=-0.5, mean_bias=None,
                 d_max=10.0, rng=None, dtype=np.float32):
        self.dtype = dtype
        self.conv = ConvEncoder(image_hw, tuple(conv_channels), feat_dim, rng, dtype,
                                name="pixelrl.pixels")
        self.feat_dim = feat_dim
        self.trunk = MLP([feat_dim + N_PROPRIO] + list(trunk_widths), rng, dtype,
                         final_relu=True, name="pixelrl.trunk")
        self.head = GaussianHead(trunk_widths[-1], N_ACT, rng, dtype, log_std_init,
                                 mean_bias=mean_bias, name="pixelrl.pi")
        self.vhead = ValueHead(trunk_widths[-1], rng, dtype, name="pixelrl.value")
        self._scale = _proprio_scale(dtype)
        self._img_scale = np.array([1.0 / d_max, 1.0], dtype=dtype)[:, None, None]

    def params(self):
        return (self.conv.params() + self.trunk.params()
                + self.head.params() + self.vhead.params())

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def forward(self, images, proprio):
        x = images.astype(self.dtype, copy=False) * self._img_scale
        f = self.conv.forward(x)
        feat = self.trunk.forward(
            np.concatenate([f, proprio.astype(self.dtype, copy=False) * self._scale], axis=1))
        return self.head.forward(feat), self.vhead.forward(feat)

    def backward(self, d_mu, d_value):
        g_feat = self.head.backward_mu(d_mu) + self.vhead.backward(d_value)
        g_in = self.trunk.backward(g_feat)
        self.conv.backward(g_in[:, :self.feat_dim])

    def named_arrays(self):
        return params_to_arrays(self.params())

    def load_arrays(self, arrays):
        load_params(self.params(), arrays)
