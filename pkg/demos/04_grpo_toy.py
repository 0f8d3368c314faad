"""
GRPO on a toy strategy-selection task
=====================================

Each seeker message hashes to one of 16 buckets and every bucket has a fixed
gold strategy. A tabular softmax policy picks a strategy per bucket, renders a
full think/answer output, and learns from group-relative advantages of the
hierarchical reward.
"""

import numpy as np

from carekit.grpo import TrainConfig, group_advantages, make_bucket_task, train_toy

# group advantages are standardised rewards
print(group_advantages([1, 0, 0, 1], eps=0.0))

train, holdout, gold_of_bucket = make_bucket_task(n_buckets=16, seed=0)
print("gold strategy index per bucket:", gold_of_bucket)

policy, stats = train_toy(train, TrainConfig(seed=0), holdout)
for point in stats.curve:
    reward = "   -  " if point.mean_reward is None else f"{point.mean_reward:.3f}"
    print(f"iter {point.iteration:4d}  reward {reward}  holdout acc {point.holdout_accuracy:.3f}")

# a strong pull towards the uniform reference keeps the policy near chance
_, tight = train_toy(train, TrainConfig(seed=0, beta=50.0), holdout)
print("beta=50 gold probability:", round(tight.curve[-1].holdout_gold_prob, 3))

# corrupted rollouts never earn reward
_, sab = train_toy(train, TrainConfig(seed=0, iterations=200, sabotage_rate=0.5), holdout)
print(f"sabotaged rollouts: {sab.sabotaged}, of which rewarded: {sab.sabotaged_rewarded}")
print("mean reward, first vs last 100 iterations:",
      round(np.mean(stats.rewards[:100]), 3), round(np.mean(stats.rewards[-100:]), 3))
