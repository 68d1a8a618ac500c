"""On-policy PPO over the vectorized environment: GAE, the clipped
surrogate update with analytic gradients through the Gaussian head, and
the collect/update/evaluate training loop.
"""

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import normalized_return, run_episodes
from .nn.checkpoint import save_checkpoint
from .nn.optim import Adam, clip_grad_norm


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class PpoConfig:
    n_envs: int = 256
    n_steps: int = 64
    epochs: int = 4
    minibatches: int = 8
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 3e-4
    max_grad_norm: float = 0.5
    total_steps: int = 1_000_000
    eval_interval: int = 10  # updates between evaluations
    eval_episodes_per_cell: int = 1
    p_ir: float = 0.0  # informed reset probability
    early_stop_success: float | None = None
    early_stop_patience: int = 2  # consecutive evals at/above the bar

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip epsilon must be positive")
        if not 0.0 <= self.p_ir <= 1.0:
            raise ValueError("p_ir must be a probability")


class RolloutBuffer:
    """Fixed-shape (n_steps, n_envs) on-policy storage."""

    def __init__(self, n_steps, n_envs, obs_dim, n_act=4):
        self.n_steps, self.n_envs = n_steps, n_envs
        self.obs = np.zeros((n_steps, n_envs, obs_dim), dtype=np.float32)
        self.z = np.zeros((n_steps, n_envs, n_act), dtype=np.float32)
        self.logp = np.zeros((n_steps, n_envs), dtype=np.float32)
        self.value = np.zeros((n_steps, n_envs), dtype=np.float32)
        self.reward = np.zeros((n_steps, n_envs), dtype=np.float32)
        self.done = np.zeros((n_steps, n_envs), dtype=bool)
        self.adv = np.zeros((n_steps, n_envs), dtype=np.float32)
        self.ret = np.zeros((n_steps, n_envs), dtype=np.float32)

    def add(self, t, obs, z, logp, value, reward, done):
        self.obs[t] = obs
        self.z[t] = z
        self.logp[t] = logp
        self.value[t] = value
        self.reward[t] = reward
        self.done[t] = done

    def flat(self):
        m = self.n_steps * self.n_envs
        return (self.obs.reshape(m, -1), self.z.reshape(m, -1),
                self.logp.reshape(m), self.value.reshape(m),
                self.adv.reshape(m), self.ret.reshape(m))


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """delta_t = r_t + g*V_{t+1}*(1-done_t) - V_t;
    A_t = delta_t + g*l*(1-done_t)*A_{t+1}; returns = A + V."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    gae = np.zeros_like(next_value)
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        gae = delta + gamma * lam * not_done[t] * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    mu = adv.mean()
    sd = adv.std()
    return (adv - mu) / (sd + 1e-8)


def clipped_objective(ratio, adv, eps):
    """Per-sample min(ratio*A, clip(ratio, 1-eps, 1+eps)*A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def ppo_update(policy, optimizer, buffer: RolloutBuffer, cfg: PpoConfig, rng):
    """One PPO update over the buffer; returns metrics.

    Advantages must already be filled. On a non-finite loss the update is
    aborted and the metrics carry aborted=True.
    """
    obs, z, logp_old, _, adv, ret = buffer.flat()
    adv = normalize_advantages(adv.astype(np.float64)).astype(np.float32)
    m = obs.shape[0]
    mb = m // cfg.minibatches
    head = policy.head
    n_act = z.shape[1]

    losses, pol_losses, val_losses, kls, clip_fracs = [], [], [], [], []
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        ep_loss = 0.0
        for b in range(cfg.minibatches):
            idx = order[b * mb:(b + 1) * mb]
            o, zb = obs[idx], z[idx]
            ab, rb, lb = adv[idx], ret[idx], logp_old[idx]
            k = len(idx)

            mu_pre, value = policy.forward(o)
            logp = head.log_prob(zb, mu_pre)
            ratio = np.exp(logp - lb)
            clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * ab
            surr = ratio * ab
            obj = np.minimum(surr, clipped)
            policy_loss = -float(np.mean(obj))
            verr = value - rb
            value_loss = float(np.mean(verr * verr))
            entropy = head.entropy()
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
            if not math.isfinite(loss):
                return {"aborted": True, "loss": loss, "update_epochs": epoch}

            # gradient of the surrogate w.r.t. logp: active where the
            # unclipped branch attains the min
            active = surr <= clipped
            dlogp = np.where(active, ratio * ab, 0.0) * (-1.0 / k)
            dmu_unit, dls_unit = head.log_prob_grads(zb, mu_pre)
            d_mu = (dlogp[:, None] * dmu_unit).astype(mu_pre.dtype)
            d_value = (2.0 * cfg.value_coef / k) * verr.astype(value.dtype)
            policy.zero_grad()
            policy.backward(d_mu, d_value)
            head.log_std.grad += np.sum(dlogp[:, None] * dls_unit, axis=0).astype(
                head.log_std.val.dtype)
            head.log_std.grad += -cfg.entropy_coef  # dH/dlog_std = 1 per dim
            clip_grad_norm(policy.params(), cfg.max_grad_norm)
            optimizer.step()

            losses.append(loss)
            ep_loss += loss
            pol_losses.append(policy_loss)
            val_losses.append(value_loss)
            kls.append(float(np.mean(lb - logp)))
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)))
        epoch_losses.append(ep_loss / cfg.minibatches)

    return {
        "aborted": False,
        "loss": float(np.mean(losses)),
        "policy_loss": float(np.mean(pol_losses)),
        "value_loss": float(np.mean(val_losses)),
        "entropy": head.entropy(),
        "kl": float(np.mean(kls)),
        "clip_fraction": float(np.mean(clip_fracs)),
        "first_minibatch_policy_loss": pol_losses[0],
        "epoch_losses": epoch_losses,
    }


def evaluate_policy(policy, eval_env, eval_tasks, weights):
    """Deterministic episodes over the fixed task grid."""
    eval_env.set_tasks(eval_tasks)

    def act(obs):
        return policy.act_deterministic(obs.flat().astype(np.float32))

    records = run_episodes(eval_env, act)
    assert len(records) == len(eval_tasks)
    by_env = sorted(records, key=lambda r: r.env_index)
    flags = [1.0 if r.success else 0.0 for r in by_env]
    nrets = [normalized_return(r.raw_return, weights) for r in by_env]
    return {
        "success_rate": float(np.mean(flags)),
        "normalized_return": float(np.mean(nrets)),
        "per_task_success": flags,
        "per_task_return": nrets,
    }


# wall-clock lives in a sidecar timing.csv so metrics.csv is byte-identical
# across reruns of the same config+seed
METRIC_COLUMNS = [
    "update", "env_steps", "success_rate", "normalized_return", "loss",
    "policy_loss", "value_loss", "entropy", "kl", "clip_fraction",
]


def build_eval_tasks(dist, episodes_per_cell, seed):
    """Fixed per-cell evaluation tasks drawn from a dedicated stream."""
    rng = np.random.default_rng(np.random.SeedSequence(seed) if isinstance(seed, int) else seed)
    tasks = []
    for cell in dist.cells():
        for _ in range(episodes_per_cell):
            tasks.append(dist.sample_task(rng, cell))
    return tasks


def train(policy, env, eval_env, eval_tasks, cfg: PpoConfig, out_dir, rng,
          weights=None, save_checkpoints=True, log_episodes=False):
    """Collect/update/evaluate loop; writes metrics.csv and checkpoints.

    Returns the list of metric rows. env must auto-reset; eval_env is a
    manual-mode env with len(eval_tasks) slots.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    weights = weights or env.weights
    obs_dim = env.observe().flat().shape[1]
    buffer = RolloutBuffer(cfg.n_steps, cfg.n_envs, obs_dim)
    optimizer = Adam(policy.params(), lr=cfg.lr)
    n_updates = cfg.total_steps // (cfg.n_envs * cfg.n_steps)
    rows = []
    t_start = time.perf_counter()
    ep_log = open(out / "episodes.csv", "w", newline="") if log_episodes else None
    if ep_log:
        ep_writer = csv.writer(ep_log)
        ep_writer.writerow(["episode_id", "cell_g", "cell_j", "cell_k", "kind",
                            "length", "raw_return", "success", "informed_start"])

    metrics_path = out / "metrics.csv"
    mfile = open(metrics_path, "w", newline="")
    mwriter = csv.writer(mfile)
    mwriter.writerow(METRIC_COLUMNS)
    tfile = open(out / "timing.csv", "w", newline="")
    twriter = csv.writer(tfile)
    twriter.writerow(["update", "wall_clock"])

    def run_eval(update_idx, update_metrics):
        stats = evaluate_policy(policy, eval_env, eval_tasks, weights)
        row = {
            "update": update_idx,
            "env_steps": update_idx * cfg.n_envs * cfg.n_steps,
            "success_rate": stats["success_rate"],
            "normalized_return": stats["normalized_return"],
            "loss": update_metrics.get("loss", 0.0),
            "policy_loss": update_metrics.get("policy_loss", 0.0),
            "value_loss": update_metrics.get("value_loss", 0.0),
            "entropy": update_metrics.get("entropy", 0.0),
            "kl": update_metrics.get("kl", 0.0),
            "clip_fraction": update_metrics.get("clip_fraction", 0.0),
        }
        rows.append(row)
        mwriter.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                          for c in METRIC_COLUMNS])
        mfile.flush()
        twriter.writerow([update_idx, round(time.perf_counter() - t_start, 3)])
        tfile.flush()
        if save_checkpoints:
            save_checkpoint(out / f"ckpt_{update_idx:06d}", policy.named_arrays(),
                            step=row["env_steps"])
        return stats

    stats = run_eval(0, {})
    streak = 0
    last_metrics = {}
    try:
        obs = env.observe().flat().astype(np.float32)
        for update in range(1, n_updates + 1):
            for t in range(cfg.n_steps):
                a, z, logp, value = policy.act(obs, rng)
                step = env.step(a.astype(np.float64))
                buffer.add(t, obs, z, logp, value, step.reward, step.terminated)
                obs = step.obs.flat().astype(np.float32)
            bootstrap = policy.value(obs)
            adv, ret = compute_gae(buffer.reward, buffer.value, buffer.done,
                                   bootstrap, cfg.gamma, cfg.gae_lambda)
            buffer.adv[...] = adv
            buffer.ret[...] = ret
            last_metrics = ppo_update(policy, optimizer, buffer, cfg, rng)
            if last_metrics.get("aborted"):
                run_eval(update, last_metrics)
                raise NonFiniteLossError(f"non-finite loss at update {update}")
            if ep_log:
                for r in env.drain_records():
                    ep_writer.writerow([r.episode_id, *r.cell, int(r.kind), r.length,
                                        repr(r.raw_return), int(r.success),
                                        int(r.informed_start)])
            else:
                env.drain_records()
            if update % cfg.eval_interval == 0 or update == n_updates:
                stats = run_eval(update, last_metrics)
                if cfg.early_stop_success is not None:
                    streak = streak + 1 if stats["success_rate"] >= cfg.early_stop_success else 0
                    if streak >= cfg.early_stop_patience:
                        break
    finally:
        mfile.close()
        tfile.close()
        if ep_log:
            ep_log.close()
    if save_checkpoints:
        save_checkpoint(out / "final", policy.named_arrays(),
                        step=rows[-1]["env_steps"] if rows else 0)
    return rows
