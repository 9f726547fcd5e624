"""Monte Carlo check that pooling biased Gaussian generators recovers the truth.

Each of N models draws a bias ``eps_n ~ N(0, bias_std^2)`` (fresh every
trial) and K outputs ``X_nk ~ N(GT + eps_n, noise_std^2)``; the pooled mean
has variance ``bias_std^2 / N + noise_std^2 / (N K)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels as K
from .errors import InsufficientPoints
from .policies import draw_codes

MEAN_STREAM = 11
RECOVERY_STREAM = 12


@dataclass(frozen=True)
class AggregationTrial:
    n_models: int
    k_samples: int
    bias_std: float
    noise_std: float
    trials: int = 10_000
    seed: int = 0
    ground_truth: float = 0.0

    def __post_init__(self):
        if self.n_models < 1 or self.k_samples < 1:
            raise ValueError("n_models and k_samples must be positive")
        if self.bias_std < 0 or self.noise_std < 0:
            raise ValueError("bias_std and noise_std must be nonnegative")
        if self.trials < 100:
            raise ValueError("need at least 100 trials")

    def with_models(self, n: int) -> "AggregationTrial":
        return AggregationTrial(n, self.k_samples, self.bias_std, self.noise_std, self.trials, self.seed,
                                self.ground_truth)

    @property
    def closed_form_std(self) -> float:
        return float(np.sqrt(self.bias_std ** 2 / self.n_models
                             + self.noise_std ** 2 / (self.n_models * self.k_samples)))


@dataclass(frozen=True)
class ErrorSummary:
    n_models: int
    mean_abs_error: float
    std: float
    mean: float
    standard_error: float
    closed_form_std: float


def pooled_means(trial: AggregationTrial, chunk: int = 2048) -> np.ndarray:
    """Grand mean of the N*K outputs for every trial."""
    rng = np.random.default_rng([trial.seed, MEAN_STREAM, trial.n_models])
    out = np.empty(trial.trials)
    for start in range(0, trial.trials, chunk):
        t = min(chunk, trial.trials - start)
        eps = trial.bias_std * rng.standard_normal((t, trial.n_models))
        noise = rng.standard_normal((t, trial.n_models, trial.k_samples))
        out[start:start + t] = trial.ground_truth + K.grand_means(eps, noise, trial.noise_std)
    return out


def aggregate_mean_error(trial: AggregationTrial) -> ErrorSummary:
    x = pooled_means(trial)
    std = float(x.std(ddof=1))
    return ErrorSummary(
        n_models=trial.n_models,
        mean_abs_error=float(np.abs(x - trial.ground_truth).mean()),
        std=std,
        mean=float(x.mean()),
        standard_error=float(std / np.sqrt(trial.trials)),
        closed_form_std=trial.closed_form_std,
    )


@dataclass(frozen=True)
class SweepResult:
    rows: list
    slope: float
    intercept: float


def loglog_slope(n_values, stds) -> tuple:
    slope, intercept = np.polyfit(np.log(np.asarray(n_values, dtype=float)), np.log(np.asarray(stds)), 1)
    return float(slope), float(intercept)


def convergence_sweep(n_values: Sequence[int], base: AggregationTrial) -> SweepResult:
    """Error table over N and the least-squares slope of log std against log N."""
    n_values = [int(n) for n in n_values]
    if len(n_values) < 3:
        raise InsufficientPoints(f"need at least 3 values of N, got {len(n_values)}")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly increasing")
    rows = [aggregate_mean_error(base.with_models(n)) for n in n_values]
    slope, intercept = loglog_slope(n_values, [r.std for r in rows])
    return SweepResult(rows, slope, intercept)


# ------------------------------------------------------------ discrete voting

def gaussian_answer_probs(m: int, centers: np.ndarray, sigma: float) -> np.ndarray:
    """Discretized normal over answers ``0..m-1`` for each center.

    ``sigma == 0`` puts all mass on the answer nearest the center.
    """
    centers = np.asarray(centers, dtype=np.float64)
    grid = np.arange(m, dtype=np.float64)
    if sigma == 0:
        idx = np.clip(np.rint(centers), 0, m - 1).astype(np.int64)
        return np.eye(m)[idx]
    logits = -((grid[None, :] - centers[:, None]) ** 2) / (2.0 * sigma ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class RecoveryResult:
    n_models: int
    successes: int
    trials: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials


def mode_recovery_rate(trial: AggregationTrial, vocab_size: int = 7,
                       biases: Optional[Sequence[float]] = None) -> RecoveryResult:
    """How often the pooled simple-vote mode equals the ground-truth answer.

    Each model's answers follow the discretized normal centered on the truth
    plus its rounded bias; ``biases`` fixes one offset per model instead of
    drawing them.
    """
    m = vocab_size
    gt = m // 2
    n, k, t = trial.n_models, trial.k_samples, trial.trials
    rng = np.random.default_rng([trial.seed, RECOVERY_STREAM, n])
    if biases is not None:
        if len(biases) != n:
            raise ValueError("one bias per model required")
        eps = np.broadcast_to(np.asarray(biases, dtype=np.float64), (t, n))
    else:
        eps = trial.bias_std * rng.standard_normal((t, n))
    centers = gt + np.rint(eps).reshape(-1)
    probs = gaussian_answer_probs(m, centers, trial.noise_std)
    codes = draw_codes(probs, k, rng).reshape(t, n * k)
    counts = K.count_answers(codes, m)
    label, _, _ = K.weighted_vote(counts[None], np.ones((1, t)))
    return RecoveryResult(n, int((label == gt).sum()), t)


def recovery_advantage_pvalue(small: RecoveryResult, large: RecoveryResult) -> float:
    """One-sided binomial p-value that ``large`` recovers more often than ``small``'s rate."""
    return float(stats.binomtest(large.successes, large.trials, small.rate, alternative="greater").pvalue)
