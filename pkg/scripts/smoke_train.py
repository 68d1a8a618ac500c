"""Quick learning-signal check on an easy fixed-roll rectangle task."""

import math
import sys
import time

import numpy as np

from gapflight.dynamics import ActionMap, DynParams
from gapflight.env import BatchEnv, RewardWeights, TaskDistribution
from gapflight.nn import TeacherPolicy
from gapflight.ppo import PpoConfig, build_eval_tasks, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
total = int(float(sys.argv[2])) if len(sys.argv) > 2 else 1_500_000
out = sys.argv[3] if len(sys.argv) > 3 else "/tmp/smoke_run"

dist = TaskDistribution(
    geometries=("rectangle-simple",),
    roll_range=(-0.2, 0.2),
    n_pose_cells=2,
    dist_range=(1.5, 2.5),
    lat_range=(-0.5, 0.5),
    vert_range=(-0.3, 0.3),
    n_init_cells=4,
)
root = np.random.SeedSequence(seed)
s_env, s_eval_env, s_eval_tasks, s_policy, s_act = root.spawn(5)
env = BatchEnv(n_envs=128, dist=dist, seed=s_env)
eval_tasks = build_eval_tasks(dist, 2, s_eval_tasks)
eval_env = BatchEnv(n_envs=len(eval_tasks), dist=dist, seed=s_eval_env, auto_reset=False)
amap = ActionMap(DynParams())
policy = TeacherPolicy(
    n_points=32,
    mean_bias=np.arctanh(amap.hover_action),
    rng=np.random.default_rng(s_policy),
)
cfg = PpoConfig(n_envs=128, n_steps=64, total_steps=total, eval_interval=10,
                early_stop_success=0.95, early_stop_patience=3)
t0 = time.perf_counter()
rows = train(policy, env, eval_env, eval_tasks, cfg, out, np.random.default_rng(s_act),
             save_checkpoints=True, log_episodes=True)
dt = time.perf_counter() - t0
for r in rows:
    print(f"step {r['env_steps']:>9d}  sr={r['success_rate']:.3f}  nret={r['normalized_return']:.3f}  "
          f"kl={r['kl']:.4f}  clip={r['clip_fraction']:.3f}  ent={r['entropy']:.2f}")
print(f"wall: {dt:.1f}s  throughput: {rows[-1]['env_steps']/dt/1e3:.1f}k steps/s")
