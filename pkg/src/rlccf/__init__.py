"""Collective-feedback reinforcement learning on synthetic answer policies."""
from .vote import (AnswerSample, PseudoLabel, SelfConsistencyScore, VotePool, compute_sc,
                   sc_weighted_vote, simple_vote)
from .rewards import (RewardGroup, StepMetrics, binary_rewards, collective_consistency,
                      label_accuracy, reward_accuracy)
from .grpo import (ClipConfig, clipped_advantage, importance_ratio, kl_categorical, normalize_advantages,
                   objective_gradient, objective_value)

__version__ = "0.1.0"
