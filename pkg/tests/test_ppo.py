import math

import numpy as np
import pytest

from gapflight.env import BatchEnv, RewardWeights, TaskDistribution
from gapflight.nn import Adam, TeacherPolicy
from gapflight.ppo import (
    PpoConfig,
    RolloutBuffer,
    build_eval_tasks,
    clipped_objective,
    compute_gae,
    evaluate_policy,
    normalize_advantages,
    ppo_update,
    train,
)

from oracles import finite_difference_grads


def gae_reference(rewards, values, dones, bootstrap, gamma, lam):
    """Per-env python-loop GAE used as an oracle."""
    t_len, n = rewards.shape
    adv = np.zeros((t_len, n))
    for e in range(n):
        vals = list(values[:, e]) + [bootstrap[e]]
        gae = 0.0
        for t in range(t_len - 1, -1, -1):
            nd = 0.0 if dones[t, e] else 1.0
            delta = rewards[t, e] + gamma * vals[t + 1] * nd - vals[t]
            gae = delta + gamma * lam * nd * gae
            adv[t, e] = gae
    return adv, adv + values


class TestComputeGae:
    def test_single_terminal_step(self):
        adv, ret = compute_gae(np.array([[1.0]]), np.array([[0.0]]),
                               np.array([[True]]), np.array([5.0]), 0.99, 0.95)
        assert adv[0, 0] == pytest.approx(1.0)
        assert ret[0, 0] == pytest.approx(1.0)

    def test_two_step_hand_recursion(self):
        rewards = np.array([[0.0], [1.0]])
        values = np.array([[0.5], [0.5]])
        dones = np.array([[False], [True]])
        adv, ret = compute_gae(rewards, values, dones, np.array([0.0]), 0.99, 0.95)
        assert adv[1, 0] == pytest.approx(0.5, abs=1e-12)
        assert adv[0, 0] == pytest.approx(0.46525, abs=1e-12)

    def test_lambda_zero_is_td(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=(7, 3))
        v = rng.normal(size=(7, 3))
        d = rng.random((7, 3)) < 0.2
        boot = rng.normal(size=3)
        adv, _ = compute_gae(r, v, d, boot, 0.7, 0.0)
        v_next = np.vstack([v[1:], boot[None]])
        delta = r + 0.7 * v_next * ~d - v
        assert np.allclose(adv, delta, atol=1e-12)

    def test_gamma_lambda_one_rewards_to_go(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=(9, 4))
        v = rng.normal(size=(9, 4))
        d = np.zeros((9, 4), dtype=bool)
        d[-1] = True  # full episodes
        adv, ret = compute_gae(r, v, d, rng.normal(size=4), 1.0, 1.0)
        rtg = np.flip(np.cumsum(np.flip(r, 0), 0), 0)
        assert np.allclose(adv, rtg - v, atol=1e-12)
        assert np.allclose(ret, rtg, atol=1e-12)

    def test_matches_reference_random(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            t, n = rng.integers(2, 12), rng.integers(1, 5)
            r = rng.normal(size=(t, n))
            v = rng.normal(size=(t, n))
            d = rng.random((t, n)) < 0.3
            boot = rng.normal(size=n)
            g, l = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
            a1, r1 = compute_gae(r, v, d, boot, g, l)
            a2, r2 = gae_reference(r, v, d, boot, g, l)
            assert np.allclose(a1, a2, atol=1e-12)
            assert np.allclose(r1, r2, atol=1e-12)


class TestNormalization:
    def test_mean_std(self):
        rng = np.random.default_rng(3)
        a = normalize_advantages(rng.normal(2.0, 5.0, size=4096))
        assert abs(a.mean()) < 1e-6
        assert abs(a.std() - 1.0) < 1e-6


class TestClippedObjective:
    def test_positive_adv_clips_high(self):
        obj = clipped_objective(np.array([2.0]), np.array([1.5]), 0.2)
        assert obj[0] == pytest.approx(1.2 * 1.5)

    def test_negative_adv_clips_low(self):
        obj = clipped_objective(np.array([0.5]), np.array([-1.0]), 0.2)
        assert obj[0] == pytest.approx(0.8 * -1.0)

    def test_ratio_one_identity(self):
        adv = np.array([0.3, -0.7])
        assert np.allclose(clipped_objective(np.ones(2), adv, 0.2), adv)


def tiny_policy(seed=0, dtype=np.float32):
    return TeacherPolicy(n_points=4, point_widths=(8, 8), trunk_widths=(16,),
                         rng=np.random.default_rng(seed), dtype=dtype)


def synthetic_buffer(policy, seed=1, t_len=8, n_envs=16):
    rng = np.random.default_rng(seed)
    obs_dim = 4 * 3 + 12
    buf = RolloutBuffer(t_len, n_envs, obs_dim)
    obs = rng.normal(size=(t_len, n_envs, obs_dim)).astype(np.float32)
    for t in range(t_len):
        a, z, logp, value = policy.act(obs[t], rng)
        buf.add(t, obs[t], z, logp, value,
                rng.normal(size=n_envs), rng.random(n_envs) < 0.1)
    adv, ret = compute_gae(buf.reward, buf.value, buf.done,
                           policy.value(obs[-1]), 0.99, 0.95)
    buf.adv[...] = adv
    buf.ret[...] = ret
    return buf


class TestPpoUpdate:
    def test_first_minibatch_on_policy_loss(self):
        policy = tiny_policy()
        buf = synthetic_buffer(policy)
        cfg = PpoConfig(n_envs=16, n_steps=8, epochs=1, minibatches=1)
        opt = Adam(policy.params(), lr=cfg.lr)
        metrics = ppo_update(policy, opt, buf, cfg, np.random.default_rng(5))
        # ratio == 1 on the very first minibatch: loss is -mean(normalized A)
        assert abs(metrics["first_minibatch_policy_loss"]) < 1e-6

    def test_loss_decreases_across_epochs(self):
        policy = tiny_policy(7)
        buf = synthetic_buffer(policy, seed=8)
        cfg = PpoConfig(n_envs=16, n_steps=8, epochs=2, minibatches=2, lr=1e-3)
        opt = Adam(policy.params(), lr=cfg.lr)
        metrics = ppo_update(policy, opt, buf, cfg, np.random.default_rng(9))
        assert metrics["epoch_losses"][1] < metrics["epoch_losses"][0]

    def test_nonfinite_abort(self):
        policy = tiny_policy(10)
        buf = synthetic_buffer(policy, seed=11)
        buf.adv[...] = np.inf
        cfg = PpoConfig(n_envs=16, n_steps=8, epochs=1, minibatches=1)
        opt = Adam(policy.params(), lr=cfg.lr)
        metrics = ppo_update(policy, opt, buf, cfg, np.random.default_rng(12))
        assert metrics["aborted"]

    def test_vanilla_pg_direction(self):
        # entropy 0, huge clip, one epoch/minibatch, value coef 0: the update
        # direction must match the plain policy gradient of -mean(A * logp)
        policy = tiny_policy(13, dtype=np.float64)
        buf = synthetic_buffer(policy, seed=14, t_len=4, n_envs=8)
        cfg = PpoConfig(n_envs=8, n_steps=4, epochs=1, minibatches=1,
                        clip_eps=1e9, value_coef=0.0, entropy_coef=0.0, lr=1e-4)

        obs, z, logp_old, _, adv, _ = buf.flat()
        adv_n = normalize_advantages(adv.astype(np.float64))

        params = [p for p in policy.params()]
        pg = {}
        for p in params:
            p.grad[...] = 0.0
        mu_pre, _ = policy.forward(obs)
        dmu_unit, dls_unit = policy.head.log_prob_grads(z, mu_pre)
        dlogp = -adv_n / len(adv_n)
        policy.backward((dlogp[:, None] * dmu_unit), np.zeros(len(adv_n)))
        policy.head.log_std.grad += np.sum(dlogp[:, None] * dls_unit, axis=0)
        analytic_pg = np.concatenate([p.grad.ravel().copy() for p in params])

        # finite-difference the PG objective as an independent oracle
        def pg_loss():
            mu, _ = policy.forward(obs)
            lp = policy.head.log_prob(z, mu)
            return float(-np.mean(adv_n * lp))

        fd = finite_difference_grads(pg_loss, [p.val for p in params], h=1e-6)
        fd_flat = np.concatenate([g.ravel() for g in fd])
        cos_fd = np.dot(analytic_pg, fd_flat) / (
            np.linalg.norm(analytic_pg) * np.linalg.norm(fd_flat))
        assert cos_fd > 0.9999

        # the actual PPO update gradient (captured pre-Adam) vs the PG
        before = [p.val.copy() for p in params]
        captured = {}
        original_step = Adam.step

        def capture_step(self):
            captured["grad"] = np.concatenate([p.grad.ravel().copy() for p in self.params])
            original_step(self)

        Adam.step = capture_step
        try:
            opt = Adam(params, lr=cfg.lr)
            ppo_update(policy, opt, buf, cfg, np.random.default_rng(15))
        finally:
            Adam.step = original_step
        for p, b in zip(params, before):
            p.val[...] = b
        g = captured["grad"]
        cos = np.dot(g, analytic_pg) / (np.linalg.norm(g) * np.linalg.norm(analytic_pg))
        assert cos > 0.999


class TestTrainLoop:
    def _setup(self, tmp_path, total_steps, seed=0):
        dist = TaskDistribution(geometries=("rectangle-simple",),
                                roll_range=(0.0, 0.0), n_pose_cells=1, n_init_cells=4)
        root = np.random.SeedSequence(seed)
        env = BatchEnv(n_envs=8, dist=dist, horizon=40, seed=root.spawn(1)[0])
        eval_tasks = build_eval_tasks(dist, 1, root.spawn(2)[1])
        eval_env = BatchEnv(n_envs=len(eval_tasks), dist=dist, horizon=40,
                            seed=root.spawn(3)[2], auto_reset=False)
        policy = TeacherPolicy(n_points=32, point_widths=(8, 8), trunk_widths=(16,),
                               rng=np.random.default_rng(seed + 100))
        cfg = PpoConfig(n_envs=8, n_steps=8, epochs=1, minibatches=1,
                        total_steps=total_steps, eval_interval=1)
        return policy, env, eval_env, eval_tasks, cfg

    def test_zero_budget(self, tmp_path):
        policy, env, eval_env, eval_tasks, cfg = self._setup(tmp_path, 0)
        rows = train(policy, env, eval_env, eval_tasks, cfg, tmp_path / "run",
                     np.random.default_rng(1))
        assert len(rows) == 1
        assert rows[0]["update"] == 0
        assert (tmp_path / "run" / "metrics.csv").exists()
        assert (tmp_path / "run" / "ckpt_000000.json").exists()

    def test_short_run_writes_metrics(self, tmp_path):
        policy, env, eval_env, eval_tasks, cfg = self._setup(tmp_path, 8 * 8 * 3)
        rows = train(policy, env, eval_env, eval_tasks, cfg, tmp_path / "run",
                     np.random.default_rng(1), log_episodes=True)
        assert len(rows) == 4  # eval at 0 plus one per update
        assert rows[-1]["env_steps"] == 8 * 8 * 3
        assert (tmp_path / "run" / "episodes.csv").exists()

    def test_reproducible_metrics(self, tmp_path):
        out = []
        for run in range(2):
            policy, env, eval_env, eval_tasks, cfg = self._setup(tmp_path, 8 * 8 * 2, seed=3)
            train(policy, env, eval_env, eval_tasks, cfg, tmp_path / f"r{run}",
                  np.random.default_rng(42), log_episodes=True)
            out.append((tmp_path / f"r{run}" / "metrics.csv").read_bytes())
            bin1 = (tmp_path / f"r{run}" / "final.bin").read_bytes()
            out.append(bin1)
        assert out[0] == out[2]
        assert out[1] == out[3]


class TestEvaluate:
    def test_deterministic_and_flagged(self, tmp_path):
        dist = TaskDistribution(geometries=("rectangle-simple",),
                                roll_range=(0.0, 0.0), n_pose_cells=1, n_init_cells=4)
        tasks = build_eval_tasks(dist, 2, 7)
        env = BatchEnv(n_envs=len(tasks), dist=dist, horizon=30, seed=1, auto_reset=False)
        policy = TeacherPolicy(n_points=32, point_widths=(8, 8), trunk_widths=(16,),
                               rng=np.random.default_rng(2))
        s1 = evaluate_policy(policy, env, tasks, RewardWeights())
        s2 = evaluate_policy(policy, env, tasks, RewardWeights())
        assert s1 == s2
        assert len(s1["per_task_success"]) == len(tasks)
        assert s1["success_rate"] == pytest.approx(np.mean(s1["per_task_success"]))
