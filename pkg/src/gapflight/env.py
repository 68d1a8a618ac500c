"""Vectorized traversal environment: task sampling, observations, the
reward engine and termination logic for N independent episodes.

Every environment owns its RNG stream, so a batch of N envs stepped
together is bit-identical to stepping the same N envs one at a time.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry, rotations
from .dynamics import (
    ActionMap,
    Command,
    DynParams,
    VehicleState,
    accelerometer,
    clip_command_batch,
    step_batch,
)
from .geometry import (
    Collider,
    GapBatch,
    GapSpec,
    Region,
    gap_axis_coord,
    gap_preset,
    sample_gap_points,
)


class TerminationKind(enum.IntEnum):
    RUNNING = 0
    CROSSED = 1
    OUT_OF_BOX = 2
    COLLISION = 3
    TIMEOUT = 4


class EnvContractError(RuntimeError):
    """Stepping a terminated episode without resetting it first."""


@dataclass
class RewardWeights:
    w_trav: float = 10.0
    w_shape: float = 1.0
    lam_mag: float = 1e-3
    lam_var: float = 1e-2
    w_agg: float = 0.05
    v_max: float = 3.0
    lam_vis: float = 0.01
    lam_nu: float = 0.1
    lam_n: float = 0.5
    l_c: float = 0.30
    d_lat: float | None = None  # None: per-gap circumradius

    def __post_init__(self):
        vals = [self.w_shape, self.lam_mag, self.lam_var, self.w_agg,
                self.lam_vis, self.lam_nu, self.lam_n]
        if any(v < 0 for v in vals) or self.w_trav < 0 or self.l_c <= 0:
            raise ValueError("reward weights must be non-negative, l_c positive")
        if any(self.w_trav <= v for v in vals):
            raise ValueError("w_trav must dominate every other weight")

    def lateral_threshold(self, gap: GapSpec) -> float:
        return self.d_lat if self.d_lat is not None else gap.circumradius


def normalized_return(raw_return, weights: RewardWeights):
    """Undiscounted return over the ideal traversing total, clipped to [0, 1]."""
    return float(np.clip(raw_return / (weights.w_trav * 2.0 * weights.l_c), 0.0, 1.0))


@dataclass
class Observation:
    """Batched observation arrays (leading dim = n_envs)."""

    points_body: np.ndarray  # (N, M, 3) gap-edge points in the body frame
    roll: np.ndarray
    pitch: np.ndarray
    v_body: np.ndarray  # (N, 3)
    accel: np.ndarray  # (N, 3) specific force reading
    last_action: np.ndarray  # (N, 4) normalized

    def flat(self):
        n = self.points_body.shape[0]
        return np.concatenate(
            [
                self.points_body.reshape(n, -1),
                self.roll[:, None],
                self.pitch[:, None],
                self.v_body,
                self.accel,
                self.last_action,
            ],
            axis=1,
        )

    @staticmethod
    def dim(n_points):
        return 3 * n_points + 12


@dataclass
class TaskSpec:
    gap_id: int
    pose_cell: int
    init_cell: int
    gap: GapSpec
    init: VehicleState

    @property
    def cell(self):
        return (self.gap_id, self.pose_cell, self.init_cell)


@dataclass
class StepResult:
    obs: Observation
    reward: float
    reward_terms: dict
    terminated: bool
    kind: TerminationKind


@dataclass
class StepBatch:
    obs: Observation
    reward: np.ndarray
    reward_terms: dict
    terminated: np.ndarray
    kind: np.ndarray


@dataclass
class EpisodeRecord:
    episode_id: int
    env_index: int
    cell: tuple
    kind: TerminationKind
    length: int
    raw_return: float
    success: bool
    informed_start: bool


_INIT_CELL_GRIDS = {1: (1, 1), 2: (2, 1), 4: (2, 2)}


class GapTemplate:
    """Roll-independent per-geometry data for fast episode resets."""

    def __init__(self, name, center, normal, thickness):
        spec = gap_preset(name, center, normal, 0.0, thickness)
        self.name = name
        self.center = spec.center
        self.normal = spec.normal
        self.half_thickness = thickness / 2.0
        self.thickness = thickness
        self.circumradius = spec.circumradius
        self.is_ellipse = spec.shape == "ellipse"
        self.base_axes = spec.axes()  # roll = 0 frame
        if self.is_ellipse:
            self.ab = np.asarray(spec.semi_axes)
            self.poly_m = None
            self.poly_b = None
        else:
            self.ab = None
            self.poly_m, self.poly_b = geometry._polygon_planes(spec.boundary)
        self._local_pts = {}

    def axes(self, roll):
        c, s = math.cos(roll), math.sin(roll)
        e1, e2 = self.base_axes
        return c * e1 + s * e2, -s * e1 + c * e2

    def local_points(self, n):
        pts = self._local_pts.get(n)
        if pts is None:
            pts = geometry._boundary_points_local(
                ("ellipse", tuple(self.ab)) if self.is_ellipse
                else gap_preset(self.name)._boundary_key(), n)
            self._local_pts[n] = pts
        return pts

    def world_points(self, roll, n):
        u1, u2 = self.axes(roll)
        local = self.local_points(n)
        return self.center + local[:, :1] * u1 + local[:, 1:] * u2

    def spec(self, roll) -> GapSpec:
        return gap_preset(self.name, self.center, self.normal, roll, self.thickness)


@dataclass
class GapRef:
    """Lightweight reference to a distribution gap: geometry index + roll."""

    geom: int
    roll: float


@dataclass
class TaskDistribution:
    """Gap geometry x wall roll x initial state randomization, cut into
    (i, j, k) task subspaces."""

    geometries: tuple = ("rectangle-simple",)
    roll_range: tuple = (-math.pi / 4, math.pi / 4)
    n_pose_cells: int = 4
    dist_range: tuple = (1.5, 3.5)
    lat_range: tuple = (-1.0, 1.0)
    vert_range: tuple = (-0.5, 0.5)
    n_init_cells: int = 4
    center: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (1.0, 0.0, 0.0)
    thickness: float = geometry.DEFAULT_THICKNESS

    def __post_init__(self):
        if not self.geometries:
            raise ValueError("task distribution needs at least one gap geometry")
        if self.n_init_cells not in _INIT_CELL_GRIDS:
            raise ValueError("n_init_cells must be 1, 2 or 4")
        if self.n_pose_cells < 1:
            raise ValueError("n_pose_cells must be >= 1")
        n = np.asarray(self.normal, dtype=np.float64)
        if abs(n[2]) > 0.5 * np.linalg.norm(n):
            raise ValueError("wall normal must be near-horizontal for init sampling")
        self.templates = [
            GapTemplate(name, self.center, self.normal, self.thickness)
            for name in self.geometries
        ]
        nrm = self.templates[0].normal
        self._side = np.cross([0.0, 0.0, 1.0], nrm)
        self._side /= np.linalg.norm(self._side)
        self._up = np.array([0.0, 0.0, 1.0])

    @property
    def n_cells(self):
        return (len(self.geometries), self.n_pose_cells, self.n_init_cells)

    def cells(self):
        gi, pj, ik = self.n_cells
        return [(a, b, c) for a in range(gi) for b in range(pj) for c in range(ik)]

    def _roll_bounds(self, j):
        lo, hi = self.roll_range
        width = (hi - lo) / self.n_pose_cells
        return lo + j * width, lo + (j + 1) * width

    def _init_bounds(self, k):
        nl, nv = _INIT_CELL_GRIDS[self.n_init_cells]
        il, iv = k % nl, k // nl
        lat_lo, lat_hi = self.lat_range
        ver_lo, ver_hi = self.vert_range
        lw = (lat_hi - lat_lo) / nl
        vw = (ver_hi - ver_lo) / nv
        return (lat_lo + il * lw, lat_lo + (il + 1) * lw), (ver_lo + iv * vw, ver_lo + (iv + 1) * vw)

    def sample_reset(self, rng, cell=None):
        """Fast-path draw: (cell, GapRef, init state). Same rng sequence as
        sample_task so the two paths are interchangeable."""
        gi, pj, ik = self.n_cells
        if cell is None:
            cell = (int(rng.integers(gi)), int(rng.integers(pj)), int(rng.integers(ik)))
        g, j, k = cell
        rlo, rhi = self._roll_bounds(j)
        roll = float(rng.uniform(rlo, rhi)) if rhi > rlo else rlo
        (llo, lhi), (vlo, vhi) = self._init_bounds(k)
        dist = float(rng.uniform(*self.dist_range))
        lat = float(rng.uniform(llo, lhi))
        vert = float(rng.uniform(vlo, vhi))
        tpl = self.templates[g]
        p = tpl.center - dist * tpl.normal + lat * self._side + vert * self._up
        to_gap = tpl.center - p
        yaw = math.atan2(to_gap[1], to_gap[0])
        init = VehicleState(p, rotations.rot_z(yaw), np.zeros(3))
        return cell, GapRef(g, roll), init

    def sample_task(self, rng, cell=None) -> TaskSpec:
        """Uniform cell choice, then uniform sample inside the cell."""
        cell, ref, init = self.sample_reset(rng, cell)
        gap = self.templates[ref.geom].spec(ref.roll)
        return TaskSpec(cell[0], cell[1], cell[2], gap, init)


class RandomResetSampler:
    """Draws a fresh randomized task; the default reset scheme."""

    def __call__(self, rng, dist: TaskDistribution, cell=None):
        cell, ref, init = dist.sample_reset(rng, cell)
        return cell, init, ref, False


# ---------------------------------------------------------------------------
# scalar reward engine (reference implementations used directly by tests;
# the batch env computes the same terms vectorized)


def reward_traversing(prev_state, state, gap, collider, w: RewardWeights):
    x_prev = gap_axis_coord(prev_state.p, gap)
    x = gap_axis_coord(state.p, gap)
    rel = state.p - gap.center
    lat = math.sqrt(max(float(rel @ rel) - x * x, 0.0))
    colliding = geometry.check_collision(state, collider, gap)
    ind = (abs(x) <= w.l_c) and (lat <= w.lateral_threshold(gap)) and not colliding
    return w.w_trav * (x - x_prev) if ind else 0.0


def reward_shaping(prev_state, state, gap, w: RewardWeights):
    x = gap_axis_coord(state.p, gap)
    if abs(x) <= w.l_c:
        return 0.0
    d_prev = float(np.linalg.norm(prev_state.p - gap.center))
    d = float(np.linalg.norm(state.p - gap.center))
    return w.w_shape * (d_prev - d)


def reward_smoothness(action, prev_action, w: RewardWeights):
    a = np.asarray(action, dtype=np.float64)
    a_prev = np.asarray(prev_action, dtype=np.float64)
    return -(w.lam_mag * float(np.linalg.norm(a)) + w.lam_var * float(np.linalg.norm(a - a_prev)))


def reward_speed(state, w: RewardWeights):
    s = float(np.linalg.norm(state.v))
    if s > w.v_max:
        return 0.0
    return w.w_agg * (1.0 - math.exp(s - w.v_max))


def reward_distill_awareness(state, gap, points_world, w: RewardWeights, fov_deg):
    x = gap_axis_coord(state.p, gap)
    nu_x = state.R[:, 0]
    far = abs(x) > w.l_c
    if far:
        to_gap = gap.center - state.p
        norm = np.linalg.norm(to_gap)
        nu_g = to_gap / norm if norm > 1e-12 else nu_x
        vis = geometry.visible_count(state, points_world, fov_deg)
        return w.lam_vis * vis - w.lam_nu * float(np.linalg.norm(nu_x - nu_g))
    sign = 1.0 if float(state.v @ gap.normal) >= 0 else -1.0
    return -w.lam_n * float(np.linalg.norm(nu_x - sign * gap.normal))


def build_observation(state: VehicleState, last_cmd: Command, gap: GapSpec,
                      params: DynParams, n_points=32, rng=None) -> Observation:
    """Single-state observation; the batched env mirrors this exactly."""
    pts = sample_gap_points(gap, n_points)
    body = (pts - state.p) @ state.R
    roll, pitch, _ = rotations.roll_pitch_yaw(state.R)
    v_body = state.v @ state.R
    accel = accelerometer(state, last_cmd, params, rng)
    amap = ActionMap(params)
    last_a = amap.to_action(np.asarray(last_cmd.c), last_cmd.w)
    return Observation(
        points_body=body[None],
        roll=np.array([roll]),
        pitch=np.array([pitch]),
        v_body=v_body[None],
        accel=accel[None],
        last_action=np.asarray(last_a)[None],
    )


class BatchEnv:
    """N traversal episodes stepped together.

    auto_reset=True re-samples a task the moment an episode terminates
    (training mode); auto_reset=False freezes terminated episodes until
    `set_tasks` is called (evaluation mode).
    """

    def __init__(self, n_envs, dist: TaskDistribution, weights: RewardWeights = None,
                 dyn: DynParams = None, horizon=250, world_box=(5.0, 5.0, 3.0),
                 fov_deg=120.0, n_points=32, seed=0, reset_sampler=None,
                 collider: Collider = None, auto_reset=True, record_episodes=True):
        self.n = n_envs
        self.dist = dist
        self.weights = weights or RewardWeights()
        self.dyn = dyn or DynParams()
        self.horizon = horizon
        self.world_box = np.asarray(world_box, dtype=np.float64)
        self.fov_deg = fov_deg
        self.n_points = n_points
        self.collider = collider or Collider()
        self.auto_reset = auto_reset
        self.record_episodes = record_episodes
        self.reset_sampler = reset_sampler or RandomResetSampler()
        self.amap = ActionMap(self.dyn)
        self.hover_action = self.amap.hover_action

        if isinstance(seed, np.random.SeedSequence):
            seeds = seed.spawn(n_envs)
        elif isinstance(seed, (list, tuple)):
            seeds = list(seed)
            assert len(seeds) == n_envs
        else:
            seeds = np.random.SeedSequence(seed).spawn(n_envs)
        self.rngs = [np.random.default_rng(s) for s in seeds]

        n = n_envs
        self.p = np.zeros((n, 3))
        self.R = np.tile(np.eye(3), (n, 1, 1))
        self.v = np.zeros((n, 3))
        self.last_action = np.zeros((n, 4))
        self.accel = np.zeros((n, 3))
        self.step_count = np.zeros(n, dtype=np.int64)
        self.x_prev = np.zeros(n)
        self.dist_prev = np.zeros(n)
        self.ep_return = np.zeros(n)
        self.cells = np.zeros((n, 3), dtype=np.int64)
        self.d_lat = np.zeros(n)
        self.informed = np.zeros(n, dtype=bool)
        self.frozen = np.zeros(n, dtype=bool)
        self.points_world = np.zeros((n, n_points, 3))
        placeholder = gap_preset(dist.geometries[0], dist.center, dist.normal,
                                 0.0, dist.thickness)
        self.gaps = GapBatch([placeholder] * n)
        self._records = []
        self._episode_counter = 0
        self.cos_half_fov = math.cos(math.radians(fov_deg) / 2.0)

        for i in range(n):
            self._reset_env(i)

    # -- episode management -------------------------------------------------

    def _apply_state(self, i, state: VehicleState, gap, cell, informed):
        """gap is either a GapRef into the distribution or a full GapSpec."""
        self.p[i] = state.p
        self.R[i] = state.R
        self.v[i] = state.v
        if isinstance(gap, GapRef):
            tpl = self.dist.templates[gap.geom]
            u1, u2 = tpl.axes(gap.roll)
            self.gaps.set_row_arrays(i, tpl.center, tpl.normal, u1, u2,
                                     tpl.half_thickness, tpl.is_ellipse, tpl.ab,
                                     tpl.poly_m, tpl.poly_b)
            local = tpl.local_points(self.n_points)
            self.points_world[i] = tpl.center + local[:, :1] * u1 + local[:, 1:] * u2
            center, normal, circum = tpl.center, tpl.normal, tpl.circumradius
        else:
            self.gaps.set_row(i, gap)
            self.points_world[i] = sample_gap_points(gap, self.n_points)
            center, normal, circum = gap.center, gap.normal, gap.circumradius
        rel = state.p - center
        self.x_prev[i] = float(rel @ normal)
        self.dist_prev[i] = float(np.linalg.norm(rel))
        self.last_action[i] = self.hover_action
        accel = np.array([0.0, 0.0, self.dyn.g])
        if self.dyn.accel_noise_std > 0:
            accel = accel + self.rngs[i].normal(0.0, self.dyn.accel_noise_std, 3)
        self.accel[i] = accel
        self.step_count[i] = 0
        self.ep_return[i] = 0.0
        self.cells[i] = cell
        self.d_lat[i] = self.weights.d_lat if self.weights.d_lat is not None else circum
        self.informed[i] = informed
        self.frozen[i] = False

    def _reset_env(self, i, cell=None):
        cell_out, state, gap, informed = self.reset_sampler(self.rngs[i], self.dist, cell)
        self._apply_state(i, state, gap, cell_out, informed)

    def set_tasks(self, tasks):
        """Pin each env to a given TaskSpec (evaluation grids)."""
        assert len(tasks) == self.n
        for i, t in enumerate(tasks):
            self._apply_state(i, t.init, t.gap, t.cell, False)
        return self.observe()

    def reset_all(self):
        for i in range(self.n):
            self._reset_env(i)
        return self.observe()

    def drain_records(self):
        out = self._records
        self._records = []
        return out

    # -- observation --------------------------------------------------------

    def _body_points(self):
        return np.matmul(self.points_world - self.p[:, None, :], self.R)

    def observe(self) -> Observation:
        body = self._body_points()
        roll, pitch, _ = rotations.roll_pitch_yaw(self.R)
        v_body = np.einsum("nj,nji->ni", self.v, self.R)
        return Observation(body, roll, pitch, v_body, self.accel.copy(),
                           self.last_action.copy())

    # -- stepping -----------------------------------------------------------

    def step(self, actions) -> StepBatch:
        a = np.clip(np.asarray(actions, dtype=np.float64), -1.0, 1.0)
        if a.shape != (self.n, 4):
            raise ValueError(f"actions must have shape ({self.n}, 4)")
        if not self.auto_reset and np.all(self.frozen):
            raise EnvContractError("all episodes terminated; call set_tasks/reset_all")
        active = ~self.frozen
        w = self.weights

        c, wrate = self.amap.to_command(a)
        c, wrate = clip_command_batch(c, wrate, self.dyn)
        p_new, R_new, v_new = step_batch(self.p, self.R, self.v, c, wrate, self.dyn)
        # frozen envs hold their state
        if not self.auto_reset and np.any(self.frozen):
            keep = self.frozen
            p_new[keep] = self.p[keep]
            R_new[keep] = self.R[keep]
            v_new[keep] = self.v[keep]
        self.p, self.R, self.v = p_new, R_new, v_new

        accel = np.zeros((self.n, 3))
        accel[:, 2] = c
        if self.dyn.accel_noise_std > 0:
            for i in range(self.n):
                accel[i] += self.rngs[i].normal(0.0, self.dyn.accel_noise_std, 3)
        self.accel = accel

        rel = self.p - self.gaps.center
        x = np.einsum("nj,nj->n", rel, self.gaps.normal)
        dist = np.linalg.norm(rel, axis=1)
        lat = np.sqrt(np.maximum(dist * dist - x * x, 0.0))

        col, x_corners = geometry.collision_and_corners(self.p, self.R, self.gaps, self.collider)
        h = self.gaps.half_thickness[:, None]
        crossed = np.all(x_corners > h, axis=1)
        out_of_box = np.any(np.abs(rel) > self.world_box, axis=1)
        timeout = self.step_count + 1 >= self.horizon

        kind = np.zeros(self.n, dtype=np.int64)
        kind[timeout] = TerminationKind.TIMEOUT
        kind[col] = TerminationKind.COLLISION
        kind[out_of_box] = TerminationKind.OUT_OF_BOX
        kind[crossed] = TerminationKind.CROSSED
        terminated = kind > 0

        # reward terms (Eqs. of the reward engine), all (N,)
        in_band = np.abs(x) <= w.l_c
        trav_ind = in_band & (lat <= self.d_lat) & ~col
        r_trav = w.w_trav * np.where(trav_ind, x - self.x_prev, 0.0)
        r_shape = w.w_shape * np.where(~in_band, self.dist_prev - dist, 0.0)
        a_norm = np.linalg.norm(a, axis=1)
        a_diff = np.linalg.norm(a - self.last_action, axis=1)
        r_smooth = -(w.lam_mag * a_norm + w.lam_var * a_diff)
        speed = np.linalg.norm(self.v, axis=1)
        r_speed = w.w_agg * np.where(speed <= w.v_max, 1.0 - np.exp(speed - w.v_max), 0.0)

        body_pts = self._body_points()
        norms = np.linalg.norm(body_pts, axis=2)
        cosang = np.where(norms > 1e-12, body_pts[..., 0] / np.maximum(norms, 1e-12), 1.0)
        vis_cnt = np.sum(cosang >= self.cos_half_fov, axis=1).astype(np.float64)
        nu_x = self.R[:, :, 0]
        to_gap = -rel
        nrm = np.maximum(np.linalg.norm(to_gap, axis=1, keepdims=True), 1e-12)
        nu_g = np.where(nrm > 1e-9, to_gap / nrm, nu_x)
        sign = np.where(np.einsum("nj,nj->n", self.v, self.gaps.normal) >= 0, 1.0, -1.0)
        n_pm = sign[:, None] * self.gaps.normal
        far = ~in_band
        r_da = np.where(
            far,
            w.lam_vis * vis_cnt - w.lam_nu * np.linalg.norm(nu_x - nu_g, axis=1),
            -w.lam_n * np.linalg.norm(nu_x - n_pm, axis=1),
        )

        terms = {
            "traversing": r_trav,
            "shaping": r_shape,
            "smoothness": r_smooth,
            "speed": r_speed,
            "distill_awareness": r_da,
        }
        reward = r_trav + r_shape + r_smooth + r_speed + r_da
        if not self.auto_reset:
            reward = np.where(active, reward, 0.0)
            kind = np.where(active, kind, 0)
            terminated = terminated & active
            for k in terms:
                terms[k] = np.where(active, terms[k], 0.0)

        self.ep_return += reward
        if self.auto_reset:
            self.step_count += 1
        else:
            self.step_count += active.astype(np.int64)

        done_idx = np.flatnonzero(terminated)
        if done_idx.size:
            for i in done_idx:
                if self.record_episodes:
                    self._records.append(EpisodeRecord(
                        episode_id=self._episode_counter,
                        env_index=int(i),
                        cell=tuple(int(v) for v in self.cells[i]),
                        kind=TerminationKind(int(kind[i])),
                        length=int(self.step_count[i]),
                        raw_return=float(self.ep_return[i]),
                        success=int(kind[i]) == TerminationKind.CROSSED,
                        informed_start=bool(self.informed[i]),
                    ))
                self._episode_counter += 1
                if self.auto_reset:
                    self._reset_env(int(i))
                else:
                    self.frozen[i] = True

        cont = active.copy()
        cont[done_idx] = False
        self.x_prev = np.where(cont, x, self.x_prev)
        self.dist_prev = np.where(cont, dist, self.dist_prev)
        self.last_action[cont] = a[cont]

        # observation of the post-step (post-reset where applicable) state
        roll, pitch, _ = rotations.roll_pitch_yaw(self.R)
        v_body = np.einsum("nj,nji->ni", self.v, self.R)
        reset_idx = done_idx if self.auto_reset else np.empty(0, dtype=np.int64)
        for i in reset_idx:
            body_pts[i] = (self.points_world[i] - self.p[i]) @ self.R[i]
            roll[i], pitch[i], _ = rotations.roll_pitch_yaw(self.R[i])
            v_body[i] = self.v[i] @ self.R[i]
        obs = Observation(body_pts, roll, pitch, v_body, self.accel.copy(),
                          self.last_action.copy())
        return StepBatch(obs, reward, terms, terminated, kind)


class SingleEnv:
    """One episode with explicit resets; batch-of-one core underneath."""

    def __init__(self, **kwargs):
        kwargs.setdefault("auto_reset", False)
        self._env = BatchEnv(n_envs=1, **kwargs)
        self._terminated = False

    @property
    def env(self):
        return self._env

    def reset(self, task: TaskSpec = None):
        if task is not None:
            obs = self._env.set_tasks([task])
        else:
            obs = self._env.reset_all()
        self._terminated = False
        return obs

    def step(self, action) -> StepResult:
        if self._terminated:
            raise EnvContractError("episode already terminated; reset first")
        batch = self._env.step(np.asarray(action, dtype=np.float64)[None])
        self._terminated = bool(batch.terminated[0])
        return StepResult(
            obs=batch.obs,
            reward=float(batch.reward[0]),
            reward_terms={k: float(v[0]) for k, v in batch.reward_terms.items()},
            terminated=self._terminated,
            kind=TerminationKind(int(batch.kind[0])),
        )


def run_episodes(env: BatchEnv, act_fn, max_steps=None):
    """Step a manual-mode env until every episode ends; returns the records.

    act_fn maps an Observation to an (N, 4) action array and may carry its
    own state (e.g. recurrent policies reset it before calling this).
    """
    assert not env.auto_reset, "evaluation requires a manual-reset env"
    limit = max_steps or (env.horizon + 1)
    obs = env.observe()
    for _ in range(limit):
        obs_step = env.step(act_fn(obs))
        obs = obs_step.obs
        if np.all(env.frozen):
            break
    return env.drain_records()
