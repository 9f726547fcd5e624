"""Synthetic categorical answer policies standing in for LLMs.

Answers to a question sit on an integer line ``0 .. m-1``; the ground truth
is one of them. A model's logits for question ``q`` are

    logits[j] = residual[q, j]
                - truth_weight[d] * (j - gt_q)**2 / 2
                - bias_weight[d] * (j - center[q])**2 / 2

with ``d`` the question's domain and ``center[q] = gt_q + round(eps/skill)``
the model's quantized biased answer. At initialization ``truth_weight = 0``,
``residual = 0`` and ``bias_weight = (skill / sigma)**2``, which is the
discretized normal ``N(gt + eps, sigma**2)`` shrunk toward the truth by the
model's domain competence. The two per-domain weights are shared across
questions, so what a model learns on training questions carries over to
held-out ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import ShapeMismatch
from .grpo import softmax
from .vote import AnswerSample

INIT_STREAM = 1


@dataclass(frozen=True)
class TaskInstance:
    question_id: str
    domain_tag: str
    vocabulary: tuple
    ground_truth_index: int

    def __post_init__(self):
        if len(self.vocabulary) < 2:
            raise ValueError("vocabulary needs at least two answers")
        if not 0 <= self.ground_truth_index < len(self.vocabulary):
            raise ValueError("ground_truth_index out of range")
        if list(self.vocabulary) != sorted(set(self.vocabulary)):
            # index order must agree with the lexicographic vote tie-break
            raise ValueError("vocabulary must be strictly increasing")

    @property
    def ground_truth(self) -> str:
        return self.vocabulary[self.ground_truth_index]


def answer_vocabulary(m: int) -> tuple:
    width = len(str(m - 1))
    return tuple(f"{j:0{width}d}" for j in range(m))


class TaskSet:
    """Ordered collection of tasks sharing one vocabulary size."""

    def __init__(self, tasks: Sequence[TaskInstance]):
        tasks = list(tasks)
        if not tasks:
            raise ValueError("empty task set")
        sizes = {len(t.vocabulary) for t in tasks}
        if len(sizes) != 1:
            raise ValueError("all tasks must share one vocabulary size")
        self.tasks = tasks
        self.m = sizes.pop()
        self.question_ids = [t.question_id for t in tasks]
        if len(set(self.question_ids)) != len(tasks):
            raise ValueError("duplicate question_id")
        self.index = {qid: i for i, qid in enumerate(self.question_ids)}
        self.domains = tuple(sorted({t.domain_tag for t in tasks}))
        dmap = {d: i for i, d in enumerate(self.domains)}
        self.domain_index = np.array([dmap[t.domain_tag] for t in tasks], dtype=np.int64)
        self.gt = np.array([t.ground_truth_index for t in tasks], dtype=np.int64)
        grid = np.arange(self.m, dtype=np.float64)
        self.truth_kernel = -0.5 * (grid[None, :] - self.gt[:, None]) ** 2

    def __len__(self):
        return len(self.tasks)

    def rows(self, question_ids) -> np.ndarray:
        return np.array([self.index[q] for q in question_ids], dtype=np.int64)

    def rows_in_domain(self, domain: str) -> np.ndarray:
        return np.flatnonzero(self.domain_index == self.domains.index(domain))


def make_tasks(per_domain: Mapping[str, int], vocab_size: int, seed: int, prefix: str = "q") -> list:
    """Random ground truths on a shared vocabulary, domain by domain."""
    rng = np.random.default_rng([seed, 7, sum(map(ord, prefix))])
    vocab = answer_vocabulary(vocab_size)
    tasks = []
    for domain in sorted(per_domain):
        for i in range(per_domain[domain]):
            gt = int(rng.integers(vocab_size))
            tasks.append(TaskInstance(f"{prefix}-{domain}-{i:04d}", domain, vocab, gt))
    return tasks


@dataclass(frozen=True)
class BiasModelSpec:
    """Per-model bias/noise parameters of the Gaussian answer model.

    ``bias_scale[n]`` is the std of model n's per-question bias draws;
    with ``center_bias`` the draws are re-centered to zero mean across the
    models for every question. ``fixed_biases`` replaces the draws with one
    constant offset per model. ``bias_correlation`` in [0, 1] mixes a
    per-question draw shared by all models into each model's bias, which
    models a misconception common to the population. ``skills[n]`` maps
    domain -> competence.
    """

    noise_std: tuple
    bias_scale: tuple
    skills: Optional[tuple] = None
    center_bias: bool = True
    fixed_biases: Optional[tuple] = None
    invalid_fraction: float = 0.0
    bias_correlation: float = 0.0

    def __post_init__(self):
        n = len(self.noise_std)
        if n < 1:
            raise ValueError("need at least one model")
        if len(self.bias_scale) != n:
            raise ValueError("bias_scale must have one entry per model")
        if any(s <= 0 for s in self.noise_std):
            raise ValueError("noise_std entries must be positive")
        if any(b < 0 for b in self.bias_scale):
            raise ValueError("bias_scale entries must be nonnegative")
        if self.skills is not None and len(self.skills) != n:
            raise ValueError("skills must have one entry per model")
        if self.fixed_biases is not None and len(self.fixed_biases) != n:
            raise ValueError("fixed_biases must have one entry per model")
        if not 0.0 <= self.invalid_fraction < 1.0:
            raise ValueError("invalid_fraction must lie in [0, 1)")
        if not 0.0 <= self.bias_correlation <= 1.0:
            raise ValueError("bias_correlation must lie in [0, 1]")

    @property
    def n_models(self) -> int:
        return len(self.noise_std)

    def skill(self, n: int, domain: str) -> float:
        if self.skills is None:
            return 1.0
        return float(self.skills[n].get(domain, 1.0))


@dataclass
class CategoricalPolicy:
    model_id: str
    tasks: TaskSet
    skill_profile: dict
    bias_center: np.ndarray  # (Q,)
    truth_weight: np.ndarray  # (D,)
    bias_weight: np.ndarray  # (D,)
    residual: np.ndarray  # (Q, m)
    _bias_kernel: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        grid = np.arange(self.tasks.m, dtype=np.float64)
        self._bias_kernel = -0.5 * (grid[None, :] - self.bias_center[:, None]) ** 2

    def logits_rows(self, rows=None) -> np.ndarray:
        if rows is None:
            rows = slice(None)
        d = self.tasks.domain_index[rows]
        return (self.residual[rows]
                + self.truth_weight[d][:, None] * self.tasks.truth_kernel[rows]
                + self.bias_weight[d][:, None] * self._bias_kernel[rows])

    def probs_rows(self, rows=None) -> np.ndarray:
        return softmax(self.logits_rows(rows))

    @property
    def logits(self) -> dict:
        """question_id -> logit vector."""
        z = self.logits_rows()
        return {qid: z[i] for i, qid in enumerate(self.tasks.question_ids)}

    def distribution(self, question_id: str) -> np.ndarray:
        return self.probs_rows(np.array([self.tasks.index[question_id]]))[0]

    def mode_index(self, rows=None) -> np.ndarray:
        return np.argmax(self.logits_rows(rows), axis=1)

    def copy(self) -> "CategoricalPolicy":
        # the task set is immutable and shared between copies
        return CategoricalPolicy(self.model_id, self.tasks, dict(self.skill_profile), self.bias_center.copy(),
                                 self.truth_weight.copy(), self.bias_weight.copy(), self.residual.copy())

    def sample_codes(self, rows, k: int, rng: np.random.Generator, invalid_fraction: float = 0.0) -> np.ndarray:
        """Draw ``k`` answer codes per row; striped positions become -1."""
        return draw_codes(self.probs_rows(rows), k, rng, invalid_fraction)

    def step(self, rows, grad: np.ndarray, learning_rate: float, shared_learning_rate: float = 0.0,
             n_batch: Optional[int] = None) -> None:
        """In-place ascent step from a logit gradient on ``rows``.

        The residual logits move by ``learning_rate * grad``; the shared domain
        weights move by ``shared_learning_rate`` times the batch-mean chain-rule
        gradient.
        """
        rows = np.asarray(rows, dtype=np.int64)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (len(rows), self.tasks.m):
            raise ShapeMismatch(f"gradient shape {grad.shape} does not match ({len(rows)}, {self.tasks.m})")
        if learning_rate:
            np.add.at(self.residual, rows, learning_rate * grad)
        if shared_learning_rate:
            n_batch = n_batch or len(rows)
            d = self.tasks.domain_index[rows]
            g_truth = np.einsum("ij,ij->i", grad, self.tasks.truth_kernel[rows])
            g_bias = np.einsum("ij,ij->i", grad, self._bias_kernel[rows])
            n_dom = len(self.tasks.domains)
            self.truth_weight += shared_learning_rate * np.bincount(d, g_truth, minlength=n_dom) / n_batch
            self.bias_weight += shared_learning_rate * np.bincount(d, g_bias, minlength=n_dom) / n_batch


def draw_codes(probs: np.ndarray, k: int, rng: np.random.Generator, invalid_fraction: float = 0.0) -> np.ndarray:
    """Inverse-CDF categorical draws, one row per distribution."""
    cdf = np.cumsum(probs, axis=1)
    codes = K.sample_codes(cdf, rng.random((probs.shape[0], k)))
    mask = invalid_mask(k, invalid_fraction)
    if mask.any():
        codes[:, mask] = -1
    return codes


def invalid_mask(k: int, fraction: float) -> np.ndarray:
    """Evenly striped positions marking ``round(fraction * k)`` samples invalid."""
    n_bad = int(round(fraction * k))
    i = np.arange(k)
    return (i + 1) * n_bad // k > i * n_bad // k


def init_policies(tasks: TaskSet, spec: BiasModelSpec, seed: int, model_ids=None) -> list:
    """One policy per model in ``spec``, deterministic in ``seed``."""
    n_models = spec.n_models
    model_ids = list(model_ids) if model_ids is not None else [f"model-{n}" for n in range(n_models)]
    rng = np.random.default_rng([seed, INIT_STREAM])
    draws = rng.standard_normal((n_models, len(tasks)))
    if spec.bias_correlation:
        common = rng.standard_normal(len(tasks))
        rho = spec.bias_correlation
        draws = np.sqrt(rho) * common[None, :] + np.sqrt(1.0 - rho) * draws
    eps = draws * np.asarray(spec.bias_scale, dtype=np.float64)[:, None]
    if spec.center_bias and n_models > 1:
        eps = eps - eps.mean(axis=0, keepdims=True)
    if spec.fixed_biases is not None:
        eps = np.repeat(np.asarray(spec.fixed_biases, dtype=np.float64)[:, None], len(tasks), axis=1)
    policies = []
    for n in range(n_models):
        skills = np.array([spec.skill(n, d) for d in tasks.domains])
        row_skill = skills[tasks.domain_index]
        center = tasks.gt + np.rint(eps[n] / row_skill)
        bias_weight = (skills / spec.noise_std[n]) ** 2
        policies.append(CategoricalPolicy(
            model_id=model_ids[n],
            tasks=tasks,
            skill_profile={d: float(s) for d, s in zip(tasks.domains, skills)},
            bias_center=center.astype(np.float64),
            truth_weight=np.zeros(len(tasks.domains)),
            bias_weight=bias_weight.astype(np.float64),
            residual=np.zeros((len(tasks), tasks.m)),
        ))
    return policies


def init_policy(tasks, bias_spec: BiasModelSpec, seed: int) -> list:
    if not isinstance(tasks, TaskSet):
        tasks = TaskSet(tasks)
    return init_policies(tasks, bias_spec, seed)


def sample_answers(policy: CategoricalPolicy, task, k: int, seed, invalid_fraction: float = 0.0) -> list:
    """``k`` independent draws for one task as :class:`AnswerSample` records."""
    if k < 1:
        raise ValueError("k must be at least 1")
    qid = task.question_id if isinstance(task, TaskInstance) else task
    row = policy.tasks.index[qid]
    vocab = policy.tasks.tasks[row].vocabulary
    codes = policy.sample_codes(np.array([row]), k, np.random.default_rng(seed), invalid_fraction)[0]
    return [AnswerSample(qid, policy.model_id, i, None if c < 0 else vocab[c]) for i, c in enumerate(codes)]


def apply_update(policy: CategoricalPolicy, gradient, learning_rate: float,
                 shared_learning_rate: float = 0.0) -> CategoricalPolicy:
    """Return an updated copy; ``gradient`` maps question_id -> logit gradient.

    A (Q, m) array aligned with the policy's task order is accepted too.
    """
    new = policy.copy()
    if isinstance(gradient, Mapping):
        qids = list(gradient)
        rows = policy.tasks.rows(qids)
        try:
            grad = np.stack([np.asarray(gradient[q], dtype=np.float64) for q in qids]) if qids else np.zeros((0, policy.tasks.m))
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from exc
    else:
        grad = np.asarray(gradient, dtype=np.float64)
        rows = np.arange(len(policy.tasks))
    new.step(rows, grad, learning_rate, shared_learning_rate)
    return new


# ----------------------------------------------------------- checkpoint format

CHECKPOINT_HEADER = "# rlccf policy checkpoint v1"


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_checkpoint(policy: CategoricalPolicy) -> str:
    """Plain-text ``key = value`` dump; arrays are space-separated floats."""
    lines = [
        CHECKPOINT_HEADER,
        f"model_id = {policy.model_id}",
        f"vocab_size = {policy.tasks.m}",
        f"domains = {' '.join(policy.tasks.domains)}",
        f"skills = {_fmt([policy.skill_profile[d] for d in policy.tasks.domains])}",
        f"truth_weight = {_fmt(policy.truth_weight)}",
        f"bias_weight = {_fmt(policy.bias_weight)}",
    ]
    for i, qid in enumerate(policy.tasks.question_ids):
        lines.append(f"center[{qid}] = {repr(float(policy.bias_center[i]))}")
        lines.append(f"residual[{qid}] = {_fmt(policy.residual[i])}")
    return "\n".join(lines) + "\n"


def load_checkpoint(text: str, tasks: TaskSet) -> CategoricalPolicy:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise ValueError("not a policy checkpoint")
    values = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        values[key] = value
    if int(values["vocab_size"]) != tasks.m or values["domains"].split() != list(tasks.domains):
        raise ShapeMismatch("checkpoint does not match the task set")

    def floats(s):
        return np.array([float(x) for x in s.split()], dtype=np.float64)

    center = np.array([float(values[f"center[{q}]"]) for q in tasks.question_ids])
    residual = np.stack([floats(values[f"residual[{q}]"]) for q in tasks.question_ids])
    skills = floats(values["skills"])
    return CategoricalPolicy(
        model_id=values["model_id"],
        tasks=tasks,
        skill_profile={d: float(s) for d, s in zip(tasks.domains, skills)},
        bias_center=center,
        truth_weight=floats(values["truth_weight"]),
        bias_weight=floats(values["bias_weight"]),
        residual=residual,
    )
