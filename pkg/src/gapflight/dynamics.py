"""Discrete-time rigid-body quadrotor driven by collective thrust + body rates.

The vehicle is a kinematic SE(3) x R^3 state (position, attitude, linear
velocity) with unit mass; thrust is expressed as acceleration along body z
and body rates are tracked instantaneously. Integration is semi-implicit
Euler (velocity first, then position) at a fixed control step.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rotations

GRAVITY = 9.81
# actuation limits: thrust-to-weight ratio window and per-axis rate cap
TWR_MIN = 0.56
TWR_MAX = 2.8
RATE_MAX = 5.0  # rad/s

E3 = np.array([0.0, 0.0, 1.0])


class InvalidInputError(ValueError):
    """Raised when a command or state contains non-finite entries."""


@dataclass
class DynParams:
    g: float = GRAVITY
    dt: float = 0.02
    accel_noise_std: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.accel_noise_std < 0:
            raise ValueError("accel noise std must be >= 0")

    @property
    def c_min(self):
        return TWR_MIN * self.g

    @property
    def c_max(self):
        return TWR_MAX * self.g


@dataclass
class Command:
    """Collective mass-normalized thrust (m/s^2) and body rates (rad/s)."""

    c: float
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)


@dataclass
class VehicleState:
    p: np.ndarray
    R: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)

    @staticmethod
    def hover(p=(0.0, 0.0, 0.0)):
        return VehicleState(np.asarray(p, dtype=np.float64), np.eye(3), np.zeros(3))

    def copy(self):
        return VehicleState(self.p.copy(), self.R.copy(), self.v.copy())


def clip_command(raw: Command, params: DynParams) -> Command:
    """Clip thrust into the TWR window and rates into the per-axis cap."""
    if not (np.isfinite(raw.c) and np.all(np.isfinite(raw.w))):
        raise InvalidInputError("non-finite command")
    c = float(np.clip(raw.c, params.c_min, params.c_max))
    w = np.clip(raw.w, -RATE_MAX, RATE_MAX)
    return Command(c, w)


def clip_command_batch(c, w, params: DynParams):
    """Vectorized clip: c (N,), w (N, 3) -> clipped copies."""
    return (
        np.clip(c, params.c_min, params.c_max),
        np.clip(w, -RATE_MAX, RATE_MAX),
    )


def step_batch(p, R, v, c, w, params: DynParams):
    """Semi-implicit Euler step for N vehicles.

    v' = v + (c * R e3 - g e3) dt,  p' = p + v' dt,  R' = R exp(hat(w) dt),
    with R' re-orthonormalized. Inputs are (N, 3), (N, 3, 3), (N, 3),
    (N,), (N, 3); returns new (p, R, v).
    """
    dt = params.dt
    body_z = R[..., :, 2]
    acc = c[..., None] * body_z
    acc = acc - params.g * E3
    v_new = v + acc * dt
    p_new = p + v_new * dt
    R_new = rotations.renormalize(R @ rotations.exp_so3(w * dt))
    return p_new, R_new, v_new


def step(s: VehicleState, u: Command, params: DynParams) -> VehicleState:
    """Single-vehicle step; same math path as the batched version."""
    if not (np.all(np.isfinite(s.p)) and np.all(np.isfinite(s.R)) and np.all(np.isfinite(s.v))):
        raise InvalidInputError("non-finite state")
    p, R, v = step_batch(
        s.p[None], s.R[None], s.v[None], np.array([u.c]), u.w[None], params
    )
    return VehicleState(p[0], R[0], v[0])


def accelerometer(s: VehicleState, u: Command, params: DynParams, rng=None):
    """Body-frame specific force: (0, 0, c) plus optional Gaussian noise."""
    out = np.array([0.0, 0.0, u.c])
    if params.accel_noise_std > 0:
        if rng is None:
            raise ValueError("rng required when accel noise is enabled")
        out = out + rng.normal(0.0, params.accel_noise_std, size=3)
    return out


@dataclass
class ActionMap:
    """Affine map between normalized actions in [-1, 1]^4 and commands.

    Channel 0 is thrust over [c_min, c_max]; channels 1..3 are body rates
    over [-RATE_MAX, RATE_MAX].
    """

    params: DynParams = field(default_factory=DynParams)

    def to_command(self, a):
        """a (..., 4) normalized -> (c (...,), w (..., 3)), already in range."""
        a = np.clip(a, -1.0, 1.0)
        c = self.params.c_min + (a[..., 0] + 1.0) * 0.5 * (self.params.c_max - self.params.c_min)
        w = a[..., 1:] * RATE_MAX
        return c, w

    def to_action(self, c, w):
        """Inverse map; commands outside the ranges are clipped first."""
        c = np.clip(c, self.params.c_min, self.params.c_max)
        w = np.clip(w, -RATE_MAX, RATE_MAX)
        a0 = 2.0 * (c - self.params.c_min) / (self.params.c_max - self.params.c_min) - 1.0
        return np.concatenate([np.asarray(a0)[..., None], w / RATE_MAX], axis=-1)

    @property
    def hover_action(self):
        a = self.to_action(np.array(self.params.g), np.zeros(3))
        return a
