"""Consensus rewards and the diagnostic accuracies tracked during training."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import EmptyPool, InsufficientData, MissingGroundTruth
from .vote import PseudoLabel, VotePool, simple_vote


@dataclass(frozen=True)
class RewardGroup:
    question_id: str
    model_id: str
    rewards: tuple  # one 0/1 entry per requested sample; invalid samples get 0


@dataclass(frozen=True)
class StepMetrics:
    label_accuracy: float
    reward_accuracy: float
    per_model_sc: dict
    collective_consistency: float


def binary_rewards(pool: VotePool, label: PseudoLabel) -> list[RewardGroup]:
    if label.question_id != pool.question_id:
        raise ValueError("label and pool refer to different questions")
    groups = []
    for model_id in sorted(pool.per_model_samples):
        rewards = [0] * pool.k_requested
        for s in pool.per_model_samples[model_id]:
            if s.answer == label.answer:
                rewards[s.sample_index] = 1
        groups.append(RewardGroup(pool.question_id, model_id, tuple(rewards)))
    return groups


def label_accuracy(labels: Sequence[PseudoLabel], ground_truth: Mapping[str, str]) -> float:
    if not labels:
        raise InsufficientData("no pseudo-labels to score")
    hits = 0
    for label in labels:
        if label.question_id not in ground_truth:
            raise MissingGroundTruth(label.question_id)
        hits += label.answer == ground_truth[label.question_id]
    return hits / len(labels)


def oracle_rewards(pool: VotePool, truth: str) -> dict[str, tuple]:
    """Rewards a verifier holding the ground truth would assign."""
    out = {}
    for model_id, samples in pool.per_model_samples.items():
        bits = [0] * pool.k_requested
        for s in samples:
            if s.answer == truth:
                bits[s.sample_index] = 1
        out[model_id] = tuple(bits)
    return out


def reward_accuracy(reward_groups: Sequence[RewardGroup], pools: Sequence[VotePool],
                    ground_truth: Mapping[str, str]) -> float:
    """Fraction of reward bits equal to the ground-truth verifier's bit."""
    by_question = {p.question_id: p for p in pools}
    oracle_cache: dict[str, dict] = {}
    agree = total = 0
    for group in reward_groups:
        qid = group.question_id
        if qid not in ground_truth:
            raise MissingGroundTruth(qid)
        if qid not in oracle_cache:
            oracle_cache[qid] = oracle_rewards(by_question[qid], ground_truth[qid])
        oracle = oracle_cache[qid][group.model_id]
        agree += sum(int(a == b) for a, b in zip(group.rewards, oracle))
        total += len(group.rewards)
    if total == 0:
        raise InsufficientData("no reward bits to score")
    return agree / total


def collective_consistency(pool: VotePool) -> float:
    """Share of all pooled valid samples that equal the pooled simple-vote mode."""
    if pool.n_valid == 0:
        raise EmptyPool(f"question {pool.question_id!r} has no valid samples")
    label = simple_vote(pool)
    return label.weighted_mass / pool.n_valid
