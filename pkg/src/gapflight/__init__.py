"""Quadrotor narrow-gap traversal testbed.

Batch rigid-body simulation, exact gap collision geometry, a reward engine
for whole-body traversal, model-based trajectory libraries for informed
episode resets, PPO training on gap-edge point observations, and DAgger
distillation into a recurrent depth/mask pixel policy.
"""

__version__ = "0.1.0"
