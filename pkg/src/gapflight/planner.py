"""Model-based trajectory generation for informed resets.

A traversal state at the gap center (attitude aligning the collider's thin
axis with the hole's tightest direction, hover-magnitude thrust, crossing
speed along the normal) anchors a three-piece reference: a minimum-jerk
approach, a constant-acceleration crossing during which the attitude holds
the traversal attitude, and a minimum-jerk braking segment to rest past
the wall. Attitude and body rates come from differential flatness; a
cascaded PID tracks the reference through the simulator.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rotations
from .dynamics import RATE_MAX, DynParams, VehicleState, clip_command_batch, step_batch
from .geometry import (
    Collider,
    GapBatch,
    GapSpec,
    Region,
    classify_batch,
    collision_batch,
    collision_from_corners,
)

E3 = np.array([0.0, 0.0, 1.0])

_CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64
)


class InfeasibleTaskError(RuntimeError):
    """No collider orientation clears the hole by the required margin."""


class PlanningError(RuntimeError):
    """Time scaling failed to produce commands inside the clip ranges."""


@dataclass
class TraversalPlan:
    p_star: np.ndarray  # traversal position (gap center)
    z_b_star: np.ndarray  # body z (collider thin axis) at traversal, unit
    a_star: np.ndarray  # g * (z_b_star - e3): hover-magnitude thrust
    v_star: float  # crossing speed along the gap normal, m/s
    direction: np.ndarray  # crossing direction (+gap normal)
    clearance: float  # uniform inflation margin at the traversal pose


@dataclass
class PidGains:
    kp: float = 6.0
    kv: float = 4.0
    katt: float = 8.0


@dataclass
class FlatTrajectory:
    """Reference sampled at the control step."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    R: np.ndarray
    w_ff: np.ndarray
    c_ff: np.ndarray
    yaw: float


@dataclass
class Trajectory:
    """A tracked (simulated) rollout with verification flags."""

    t: np.ndarray
    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    a: np.ndarray  # realized acceleration c * R e3 - g e3
    cell: tuple
    geom: int
    roll: float
    collision_free: bool
    terminal_region: int

    def __len__(self):
        return len(self.t)


def _traversal_attitude(direction, z_dir):
    """Right-handed attitude: body x along the crossing direction, body z
    along the chosen in-plane axis."""
    x = direction / np.linalg.norm(direction)
    z = z_dir / np.linalg.norm(z_dir)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _collision_inflated(p, R, gaps: GapBatch, half_extents, deltas):
    """Collision with per-row uniformly inflated colliders."""
    he = np.maximum(half_extents[None, :] + deltas[:, None], 1e-6)
    body = _CORNER_SIGNS[None, :, :] * he[:, None, :]
    corners = np.einsum("nij,nkj->nki", R, body) + p[:, None, :]
    return collision_from_corners(corners, gaps)[0]


@lru_cache(maxsize=64)
def _clearance_profile(boundary_key, half_extents_key, thickness, step_deg):
    """Signed clearance per in-plane angle, measured in the gap frame.

    Angles are relative to the (rolled) gap axes, so one profile per hole
    geometry serves every wall roll.
    """
    shape, data = boundary_key
    gap = GapSpec(shape, data, center=(0.0, 0.0, 0.0), normal=(1.0, 0.0, 0.0),
                  roll=0.0, thickness=thickness)
    u1, u2 = gap.axes()
    he = np.asarray(half_extents_key, dtype=np.float64)
    angles = np.radians(np.arange(0.0, 180.0, step_deg))
    n = len(angles)
    p = np.zeros((n, 3))
    R = np.empty((n, 3, 3))
    for i, phi in enumerate(angles):
        z_dir = math.cos(phi) * u1 + math.sin(phi) * u2
        R[i] = _traversal_attitude(gap.normal, z_dir)
    gaps = GapBatch([gap] * n)
    lo = np.full(n, -float(np.min(he)) + 1e-4)
    hi = np.full(n, 0.5)
    if np.any(_collision_inflated(p, R, gaps, he, lo)):
        bad = _collision_inflated(p, R, gaps, he, lo)
        hi[bad] = lo[bad]  # even the most deflated collider hits: clearance = lo
    for _ in range(36):
        mid = 0.5 * (lo + hi)
        hit = _collision_inflated(p, R, gaps, he, mid)
        hi = np.where(hit, mid, hi)
        lo = np.where(hit, lo, mid)
    return angles, 0.5 * (lo + hi)


def plan_traversal(gap: GapSpec, collider: Collider, v_star=1.5,
                   min_clearance=0.005, step_deg=1.0) -> TraversalPlan:
    """Pick the traversal state: grid-search the in-plane angle of the
    collider thin axis for maximum clearance, tie-breaking toward the
    smallest attitude change from hover."""
    angles, clear = _clearance_profile(gap._boundary_key(),
                                       tuple(collider.half_extents),
                                       gap.thickness, step_deg)
    best = float(np.max(clear))
    if best < min_clearance:
        raise InfeasibleTaskError(
            f"no orientation clears the hole by {min_clearance * 1000:.0f} mm "
            f"(best {best * 1000:.1f} mm)")
    u1, u2 = gap.axes()
    near = np.flatnonzero(clear >= best - 1e-6)
    dirs = (np.cos(angles[near])[:, None] * u1 + np.sin(angles[near])[:, None] * u2)
    # orient each candidate up-ish, then prefer the most vertical (smallest
    # attitude change from hover)
    flip = dirs[:, 2] < -1e-12
    dirs[flip] *= -1.0
    pick = int(np.argmax(np.round(dirs[:, 2], 9)))
    z_b = dirs[pick] / np.linalg.norm(dirs[pick])
    direction = gap.normal.copy()
    g = 9.81
    return TraversalPlan(
        p_star=gap.center.copy(),
        z_b_star=z_b,
        a_star=g * (z_b - E3),
        v_star=float(v_star),
        direction=direction,
        clearance=best,
    )


def min_jerk_coeffs(x0, v0, a0, x1, v1, a1, T):
    """Quintic with full boundary conditions, per axis (vectorized)."""
    x0, v0, a0 = np.asarray(x0, float), np.asarray(v0, float), np.asarray(a0, float)
    x1, v1, a1 = np.asarray(x1, float), np.asarray(v1, float), np.asarray(a1, float)
    dp = x1 - x0 - v0 * T - 0.5 * a0 * T * T
    dv = v1 - v0 - a0 * T
    da = a1 - a0
    T2, T3, T4, T5 = T * T, T**3, T**4, T**5
    A = np.array([[T3, T4, T5], [3 * T2, 4 * T3, 5 * T4], [6 * T, 12 * T2, 20 * T3]])
    rhs = np.stack([dp, dv, da], axis=0)
    c345 = np.linalg.solve(A, rhs)
    return np.stack([x0, v0, 0.5 * a0, c345[0], c345[1], c345[2]], axis=0)


def eval_quintic(coeffs, t):
    """coeffs (6, d), t (T,) -> p, v, a each (T, d)."""
    t = np.asarray(t, float)[:, None]
    c0, c1, c2, c3, c4, c5 = coeffs
    p = c0 + c1 * t + c2 * t**2 + c3 * t**3 + c4 * t**4 + c5 * t**5
    v = c1 + 2 * c2 * t + 3 * c3 * t**2 + 4 * c4 * t**3 + 5 * c5 * t**4
    a = 2 * c2 + 6 * c3 * t + 12 * c4 * t**2 + 20 * c5 * t**3
    return p, v, a


def _flat_attitudes(acc, yaw, g):
    """Differential flatness: body z along thrust, yaw fixed toward the gap."""
    f = acc + g * E3
    c = np.linalg.norm(f, axis=1)
    z_b = f / np.maximum(c, 1e-9)[:, None]
    x_c = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y_raw = np.cross(z_b, x_c)
    norms = np.linalg.norm(y_raw, axis=1)
    R = np.empty((len(acc), 3, 3))
    prev_y = None
    for i in range(len(acc)):
        if norms[i] > 1e-6:
            y = y_raw[i] / norms[i]
        elif prev_y is not None:
            y = prev_y - z_b[i] * (prev_y @ z_b[i])
            y /= np.linalg.norm(y)
        else:
            y = np.cross(z_b[i], np.array([-math.sin(yaw), math.cos(yaw), 0.0]))
            y /= np.linalg.norm(y)
        x = np.cross(y, z_b[i])
        R[i] = np.column_stack([x, y, z_b[i]])
        prev_y = y
    return R, c


def plan_trajectory(init: VehicleState, plan: TraversalPlan, exit_offset=1.0,
                    dyn: DynParams = None, slab_pad=0.02,
                    collider: Collider = None, gap: GapSpec = None,
                    max_scaling=10.0) -> FlatTrajectory:
    """Piece together approach / crossing / braking and recover attitude and
    rates by flatness. Durations start from a distance/speed heuristic and
    are scaled up until the flat commands respect the actuation clips.
    When collider and gap are given, the nominal path is also required to
    be collision-free (the crossing speed may be raised by the caller)."""
    dyn = dyn or DynParams()
    g, dt = dyn.g, dyn.dt
    d = plan.direction
    # constant-acceleration crossing window centered on the traversal state:
    # the collider must be fully outside the slab at both ends
    reach = 0.0
    if collider is not None:
        # cuboid support extent along the crossing direction
        reach = float(np.sum(np.abs(_traversal_attitude(d, plan.z_b_star).T @ d)
                             * collider.half_extents))
    half_window = (gap.thickness / 2.0 if gap is not None else 0.05) + reach + slab_pad
    t_half = half_window / plan.v_star
    v_mid = plan.v_star * d
    p_enter = plan.p_star - v_mid * t_half + 0.5 * plan.a_star * t_half * t_half
    v_enter = v_mid - plan.a_star * t_half
    p_exit = plan.p_star + v_mid * t_half + 0.5 * plan.a_star * t_half * t_half
    v_exit = v_mid + plan.a_star * t_half
    rest = plan.p_star + exit_offset * d

    to_gap = plan.p_star - init.p
    yaw = math.atan2(to_gap[1], to_gap[0])

    d1 = float(np.linalg.norm(p_enter - init.p))
    d2 = float(np.linalg.norm(rest - p_exit))
    T1 = max(0.8, 1.3 * d1 / plan.v_star)
    T2 = max(0.7, 2.2 * d2 / max(plan.v_star, 1.0))
    scale = 1.0
    while scale <= max_scaling:
        c1 = min_jerk_coeffs(init.p, init.v, np.zeros(3), p_enter, v_enter,
                             plan.a_star, T1 * scale)
        c2 = min_jerk_coeffs(p_exit, v_exit, plan.a_star, rest, np.zeros(3),
                             np.zeros(3), T2 * scale)
        n1 = max(2, int(round(T1 * scale / dt)))
        nb = max(2, int(round(2 * t_half / dt)))
        n2 = max(2, int(round(T2 * scale / dt)))
        t1 = np.arange(n1) * dt
        p1, v1, a1 = eval_quintic(c1, t1)
        tb = np.arange(nb) * dt - t_half
        pb = plan.p_star + v_mid * tb[:, None] + 0.5 * plan.a_star * tb[:, None] ** 2
        vb = v_mid + plan.a_star * tb[:, None]
        ab = np.tile(plan.a_star, (nb, 1))
        t2 = np.arange(n2 + 1) * dt
        p2, v2, a2 = eval_quintic(c2, t2)
        p = np.concatenate([p1, pb, p2])
        v = np.concatenate([v1, vb, v2])
        a = np.concatenate([a1, ab, a2])
        R, c = _flat_attitudes(a, yaw, g)
        # rates from consecutive attitudes
        w_body = rotations.log_so3(np.einsum("tij,tik->tjk", R[:-1], R[1:])) / dt
        w_body = np.vstack([w_body, w_body[-1:]])
        ok_c = np.all((c >= dyn.c_min - 1e-9) & (c <= dyn.c_max + 1e-9))
        ok_w = np.all(np.abs(w_body) <= RATE_MAX + 1e-9)
        if ok_c and ok_w:
            t = np.arange(len(p)) * dt
            traj = FlatTrajectory(t, p, v, a, R, w_body, c, yaw)
            if collider is None or gap is None:
                return traj
            gaps = GapBatch([gap] * len(p))
            if not np.any(collision_batch(p, R, gaps, collider)):
                return traj
            raise PlanningError("nominal trajectory intersects the wall")
        scale *= 1.2
    raise PlanningError(f"time scaling exceeded {max_scaling}x without feasibility")


def boundary_states(traj: FlatTrajectory):
    """(initial, final) vehicle states of the reference."""
    return (VehicleState(traj.p[0], traj.R[0], traj.v[0]),
            VehicleState(traj.p[-1], traj.R[-1], traj.v[-1]))


def track_pid_batch(trajs, dyn: DynParams, gains: PidGains, collider: Collider,
                    gaps_batch: GapBatch, cells, geoms, rolls):
    """Track N references simultaneously; returns a Trajectory per input.

    Each rollout records the realized states, per-step collision flags and
    the terminal region label.
    """
    n = len(trajs)
    lengths = np.array([len(tr.t) for tr in trajs])
    t_max = int(lengths.max())
    dt = dyn.dt

    def padded(getter, shape):
        out = np.zeros((n, t_max) + shape)
        for i, tr in enumerate(trajs):
            arr = getter(tr)
            out[i, :lengths[i]] = arr
            out[i, lengths[i]:] = arr[-1]
        return out

    p_ref = padded(lambda tr: tr.p, (3,))
    v_ref = padded(lambda tr: tr.v, (3,))
    a_ref = padded(lambda tr: tr.a, (3,))
    w_ref = padded(lambda tr: tr.w_ff, (3,))
    yaws = np.array([tr.yaw for tr in trajs])
    x_c = np.stack([np.cos(yaws), np.sin(yaws), np.zeros(n)], axis=1)

    p = p_ref[:, 0].copy()
    v = v_ref[:, 0].copy()
    R = np.stack([tr.R[0] for tr in trajs])
    ps = np.zeros((n, t_max, 3))
    vs = np.zeros((n, t_max, 3))
    accs = np.zeros((n, t_max, 3))
    Rs = np.zeros((n, t_max, 3, 3))
    collided = np.zeros(n, dtype=bool)
    prev_y = R[:, :, 1].copy()

    for k in range(t_max):
        a_des = a_ref[:, k] + gains.kp * (p_ref[:, k] - p) + gains.kv * (v_ref[:, k] - v)
        f = a_des + dyn.g * E3
        c_cmd = np.einsum("nj,nj->n", f, R[:, :, 2])
        fn = np.linalg.norm(f, axis=1)
        z_d = f / np.maximum(fn, 1e-9)[:, None]
        y_raw = np.cross(z_d, x_c)
        yn = np.linalg.norm(y_raw, axis=1)
        deg = yn < 1e-6
        y_d = np.where(deg[:, None], prev_y, y_raw / np.maximum(yn, 1e-9)[:, None])
        y_d = y_d - z_d * np.einsum("nj,nj->n", y_d, z_d)[:, None]
        y_d /= np.maximum(np.linalg.norm(y_d, axis=1), 1e-9)[:, None]
        prev_y = y_d
        x_d = np.cross(y_d, z_d)
        R_d = np.stack([x_d, y_d, z_d], axis=2)
        err = rotations.log_so3(np.einsum("nji,njk->nik", R, R_d))
        w_cmd = gains.katt * err + w_ref[:, k]
        c_cmd, w_cmd = clip_command_batch(c_cmd, w_cmd, dyn)
        p, R, v = step_batch(p, R, v, c_cmd, w_cmd, dyn)
        ps[:, k] = p
        vs[:, k] = v
        Rs[:, k] = R
        accs[:, k] = c_cmd[:, None] * R[:, :, 2] - dyn.g * E3
        active = k < lengths
        collided |= collision_batch(p, R, gaps_batch, collider) & active

    labels, _ = classify_batch(p, R, gaps_batch, collider)
    out = []
    for i in range(n):
        L = lengths[i]
        out.append(Trajectory(
            t=np.arange(L) * dt,
            p=ps[i, :L].copy(),
            R=Rs[i, :L].copy(),
            v=vs[i, :L].copy(),
            a=accs[i, :L].copy(),
            cell=tuple(cells[i]),
            geom=int(geoms[i]),
            roll=float(rolls[i]),
            collision_free=not bool(collided[i]),
            terminal_region=int(labels[i]),
        ))
    return out


def track_pid(traj: FlatTrajectory, dyn: DynParams, gains: PidGains,
              collider: Collider, gap: GapSpec, cell=(0, 0, 0), geom=0,
              roll=0.0) -> Trajectory:
    """Single-reference wrapper over the batched tracker."""
    batch = GapBatch([gap])
    return track_pid_batch([traj], dyn, gains, collider, batch,
                           [cell], [geom], [roll])[0]


def crossing_speed_candidates(base=1.5, top=4.5, step=0.5):
    return [round(base + i * step, 6) for i in range(int((top - base) / step) + 1)]


def plan_feasible_trajectory(init: VehicleState, gap: GapSpec, collider: Collider,
                             dyn: DynParams, exit_offset=1.0,
                             v_candidates=None) -> FlatTrajectory:
    """Plan with the slowest crossing speed whose nominal path clears the
    hole; ballistic drift during the crossing shrinks with speed."""
    v_candidates = v_candidates or crossing_speed_candidates()
    last_err = None
    for v_star in v_candidates:
        plan = plan_traversal(gap, collider, v_star=v_star)
        try:
            return plan_trajectory(init, plan, exit_offset, dyn,
                                   collider=collider, gap=gap)
        except PlanningError as e:
            last_err = e
    raise PlanningError(f"no crossing speed produced a clear nominal path: {last_err}")
