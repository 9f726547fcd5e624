"""Group-relative clipped policy objective for categorical answer policies.

Everything here works on one (model, question) group: integer sample codes
into the question's vocabulary (``-1`` for an invalid sample), one advantage
per sample, and logit vectors for the live, snapshot and reference policies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SupportMismatch, ZeroOldProbability


@dataclass(frozen=True)
class ClipConfig:
    epsilon: float = 0.2
    beta: float = 0.01
    inner_epochs: int = 1
    learning_rate: float = 0.05

    def __post_init__(self):
        bad = []
        if not 0.0 < self.epsilon < 1.0:
            bad.append("epsilon")
        if not (np.isfinite(self.beta) and self.beta >= 0.0):
            bad.append("beta")
        if int(self.inner_epochs) != self.inner_epochs or self.inner_epochs < 1:
            bad.append("inner_epochs")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0.0):
            bad.append("learning_rate")
        if bad:
            raise ConfigError(f"invalid clip config fields: {', '.join(bad)}", bad)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def normalize_advantages(rewards) -> np.ndarray:
    """Z-score rewards within the group using the population std.

    A group with identical rewards carries no signal and maps to zeros.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("need at least one reward")
    std = r.std()
    if std == 0.0:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def importance_ratio(p_new: float, p_old: float) -> float:
    if p_old <= 0.0:
        raise ZeroOldProbability(f"snapshot probability is {p_old}")
    return p_new / p_old


def clipped_advantage(rho: float, a: float, epsilon: float) -> float:
    return min(rho * a, min(max(rho, 1.0 - epsilon), 1.0 + epsilon) * a)


def kl_categorical(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    if np.any(q[support] <= 0):
        raise SupportMismatch("p puts mass where q has none")
    return float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))


def _ratios(samples, logits_new, logits_old):
    samples = np.asarray(samples, dtype=np.int64)
    p_new = softmax(logits_new)
    p_old = softmax(logits_old)
    valid = samples >= 0
    idx = samples[valid]
    if np.any(p_old[idx] <= 0):
        raise ZeroOldProbability("sampled answer impossible under the snapshot policy")
    rho = np.zeros(samples.shape, dtype=np.float64)
    rho[valid] = p_new[idx] / p_old[idx]
    return samples, valid, rho, p_new


def objective_value(samples, advantages, logits_new, logits_old, logits_ref, config: ClipConfig) -> float:
    """Mean clipped surrogate over the K samples minus the KL penalty to the reference."""
    samples, valid, rho, p_new = _ratios(samples, logits_new, logits_old)
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape != samples.shape:
        raise ValueError("one advantage per sample required")
    k = samples.size
    surrogate = 0.0
    for i in np.flatnonzero(valid):
        surrogate += clipped_advantage(rho[i], adv[i], config.epsilon)
    kl = kl_categorical(p_new, softmax(logits_ref))
    return surrogate / k - config.beta * kl


def objective_gradient(samples, advantages, logits_new, logits_old, logits_ref, config: ClipConfig) -> np.ndarray:
    """Exact gradient of :func:`objective_value` with respect to ``logits_new``.

    Where the min/clip is not differentiable the clipped branch is taken.
    """
    samples, valid, rho, p_new = _ratios(samples, logits_new, logits_old)
    adv = np.asarray(advantages, dtype=np.float64)
    eps = config.epsilon
    k = samples.size
    grad = np.zeros_like(p_new)
    for i in np.flatnonzero(valid):
        r, a = rho[i], adv[i]
        unclipped = r * a
        clipped = min(max(r, 1.0 - eps), 1.0 + eps) * a
        if unclipped < clipped or 1.0 - eps < r < 1.0 + eps:
            # d rho / d z = rho * (onehot - p)
            g = -r * a * p_new
            g[samples[i]] += r * a
            grad += g
    grad /= k
    if config.beta:
        log_ratio = log_softmax(logits_new) - log_softmax(logits_ref)
        kl = float(np.sum(p_new * log_ratio))
        grad -= config.beta * p_new * (log_ratio - kl)
    return grad
