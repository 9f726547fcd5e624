"""Population training loop: sample, vote, reward, optimize, evaluate.

Three modes share one loop:

``rlccf``
    every model draws K samples; the N*K pool is labelled by SC-weighted vote
    and each model updates on its own samples against that label.
``rlccf_simple_vote``
    as above with an unweighted vote.
``ttrl_single``
    every model draws ``pool_budget`` samples, labels the question by a
    simple vote over its own pool and updates on the first ``update_samples``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import ConfigError, ZeroOldProbability
from .grpo import ClipConfig, log_softmax
from .policies import BiasModelSpec, TaskSet, draw_codes, init_policies, make_tasks
from .rewards import StepMetrics

MODES = ("rlccf", "ttrl_single", "rlccf_simple_vote")

SAMPLE_STREAM = 2
EVAL_STREAM = 3
BATCH_STREAM = 4

TRACE_SCHEMA = "rlccf.trace"
TRACE_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    bias: BiasModelSpec
    mode: str = "rlccf"
    vocab_size: int = 4
    train_tasks: dict = field(default_factory=lambda: {"math": 200})
    eval_tasks: dict = field(default_factory=lambda: {"math": 100})
    samples_per_model: int = 16
    update_samples: Optional[int] = None
    pool_budget: Optional[int] = None
    clip: ClipConfig = field(default_factory=ClipConfig)
    shared_learning_rate: float = 0.5
    steps: int = 300
    batch_size: Optional[int] = None
    eval_every: int = 10
    eval_samples: int = 32
    seed: int = 0
    model_ids: Optional[tuple] = None

    @property
    def n_models(self) -> int:
        return self.bias.n_models

    @property
    def k_update(self) -> int:
        return self.update_samples if self.update_samples is not None else self.samples_per_model

    @property
    def budget(self) -> int:
        return self.pool_budget if self.pool_budget is not None else self.n_models * self.samples_per_model

    @property
    def samples_drawn(self) -> int:
        """Samples each model draws per question per step."""
        return self.budget if self.mode == "ttrl_single" else self.samples_per_model

    def validate(self) -> "ExperimentConfig":
        bad = []
        if self.mode not in MODES:
            bad.append("mode")
        if self.vocab_size < 2:
            bad.append("vocab_size")
        if not self.train_tasks or any(v < 1 for v in self.train_tasks.values()):
            bad.append("train_tasks")
        if not self.eval_tasks or any(v < 1 for v in self.eval_tasks.values()):
            bad.append("eval_tasks")
        if self.samples_per_model < 1:
            bad.append("samples_per_model")
        if self.steps < 1:
            bad.append("steps")
        if self.eval_every < 1:
            bad.append("eval_every")
        if self.eval_samples < 1:
            bad.append("eval_samples")
        if self.batch_size is not None and self.batch_size < 1:
            bad.append("batch_size")
        if not np.isfinite(self.shared_learning_rate) or self.shared_learning_rate < 0:
            bad.append("shared_learning_rate")
        if self.mode != "ttrl_single" and self.budget != self.n_models * self.samples_per_model:
            bad.append("pool_budget")
        if self.mode == "ttrl_single" and self.budget < 1:
            bad.append("pool_budget")
        if not 1 <= self.k_update <= self.samples_drawn:
            bad.append("update_samples")
        if self.model_ids is not None and (len(self.model_ids) != self.n_models
                                           or len(set(self.model_ids)) != self.n_models):
            bad.append("model_ids")
        if bad:
            raise ConfigError(f"invalid experiment config: {', '.join(bad)}", bad)
        return self


@dataclass(frozen=True)
class EvalResult:
    per_model_accuracy: dict
    group_accuracy: float
    per_domain: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_model_accuracy": self.per_model_accuracy, "group_accuracy": self.group_accuracy,
                "per_domain": self.per_domain}


@dataclass(frozen=True)
class StepRecord:
    step: int
    metrics: StepMetrics
    skipped: int = 0
    evaluation: Optional[EvalResult] = None


@dataclass
class TrainingTrace:
    mode: str
    seed: int
    model_ids: list
    initial_evaluation: EvalResult
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def evaluations(self) -> list:
        return [(r.step, r.evaluation) for r in self.steps if r.evaluation is not None]

    @property
    def final_evaluation(self) -> EvalResult:
        evals = self.evaluations()
        return evals[-1][1] if evals else self.initial_evaluation

    def label_accuracy_curve(self) -> np.ndarray:
        return np.array([np.nan if r.metrics.label_accuracy is None else r.metrics.label_accuracy
                         for r in self.steps])

    def final_label_accuracy(self, window: int = 10) -> float:
        """Mean label accuracy over the last ``window`` steps."""
        curve = self.label_accuracy_curve()[-window:]
        return float(np.nanmean(curve))

    def to_lines(self) -> list:
        header = {"schema": TRACE_SCHEMA, "version": TRACE_VERSION, "mode": self.mode, "seed": self.seed,
                  "models": list(self.model_ids), "initial_evaluation": self.initial_evaluation.to_dict()}
        lines = [json.dumps(header)]
        for r in self.steps:
            rec = {"step": r.step, **asdict(r.metrics), "skipped": r.skipped,
                   "evaluation": None if r.evaluation is None else r.evaluation.to_dict()}
            lines.append(json.dumps(rec))
        return lines

    @classmethod
    def from_lines(cls, lines) -> "TrainingTrace":
        lines = [ln for ln in lines if ln.strip()]
        header = json.loads(lines[0])
        if header.get("schema") != TRACE_SCHEMA:
            raise ValueError("not a training trace")

        def ev(d):
            return None if d is None else EvalResult(d["per_model_accuracy"], d["group_accuracy"], d.get("per_domain", {}))

        trace = cls(header["mode"], header["seed"], header["models"], ev(header["initial_evaluation"]))
        for ln in lines[1:]:
            d = json.loads(ln)
            metrics = StepMetrics(d["label_accuracy"], d["reward_accuracy"], d["per_model_sc"],
                                  d["collective_consistency"])
            trace.steps.append(StepRecord(d["step"], metrics, d["skipped"], ev(d["evaluation"])))
        return trace


def build_tasks(config: ExperimentConfig):
    """Task set holding training tasks first, then the disjoint held-out set."""
    train = make_tasks(config.train_tasks, config.vocab_size, config.seed, "train")
    held_out = make_tasks(config.eval_tasks, config.vocab_size, config.seed, "eval")
    tasks = TaskSet(train + held_out)
    return tasks, np.arange(len(train)), np.arange(len(train), len(tasks))


def self_consistency(counts: np.ndarray) -> np.ndarray:
    valid = counts.sum(axis=-1)
    top = counts.max(axis=-1)
    return np.where(valid > 0, top / np.maximum(valid, 1), 0.0)


def evaluate(policies, rows, eval_samples: int, seed) -> EvalResult:
    """Per-model mean sample accuracy and pooled simple-vote accuracy on ``rows``.

    ``rows`` may be row indices into the policies' task set or question ids.
    """
    tasks = policies[0].tasks
    rows = np.asarray(rows)
    if rows.dtype.kind not in "iu":
        rows = tasks.rows(list(rows))
    gt = tasks.gt[rows]
    seed_key = list(np.atleast_1d(seed))
    codes = np.stack([
        draw_codes(p.probs_rows(rows), eval_samples, np.random.default_rng(seed_key + [EVAL_STREAM, n]))
        for n, p in enumerate(policies)
    ])
    hits = codes == gt[None, :, None]
    counts = K.count_answers(codes, tasks.m)
    label, _, _ = K.weighted_vote(counts, np.ones(counts.shape[:2]))
    group_hits = label == gt
    per_model = {p.model_id: float(hits[n].mean()) for n, p in enumerate(policies)}
    per_domain = {}
    dom = tasks.domain_index[rows]
    if len(tasks.domains) > 1:
        for d, name in enumerate(tasks.domains):
            sel = dom == d
            if sel.any():
                per_domain[name] = {
                    "group_accuracy": float(group_hits[sel].mean()),
                    "per_model_accuracy": {p.model_id: float(hits[n][sel].mean()) for n, p in enumerate(policies)},
                }
    return EvalResult(per_model, float(group_hits.mean()), per_domain)


def model_update(policy, ref_logp, rows, codes, p_old, labels, clip: ClipConfig,
                 k_update: int, shared_learning_rate: float, n_batch: int) -> None:
    """GRPO step for one model from its own samples and the pseudo-labels.

    ``codes`` (B, >=k_update) and ``p_old`` (B, m) are the model's draws and the
    snapshot distribution they came from; ``labels`` (B,) is -1 for skipped
    questions. Nothing about other models enters except through ``labels``.
    """
    keep = labels >= 0
    if not keep.any():
        return
    rows = rows[keep]
    codes = codes[keep, :k_update]
    p_old = p_old[keep]
    rewards = (codes == labels[keep][:, None]) & (codes >= 0)
    adv = K.group_advantages(rewards)
    log_ref = ref_logp[rows]
    for _ in range(clip.inner_epochs):
        p_new = policy.probs_rows(rows)
        grad = K.surrogate_gradient(codes, adv, p_new, p_old, clip.epsilon)
        if grad is None:
            raise ZeroOldProbability(f"{policy.model_id}: sampled answer impossible under snapshot")
        if clip.beta:
            log_ratio = log_softmax(policy.logits_rows(rows)) - log_ref
            kl = np.sum(p_new * log_ratio, axis=1, keepdims=True)
            grad = grad - clip.beta * p_new * (log_ratio - kl)
        policy.step(rows, grad, clip.learning_rate, shared_learning_rate, n_batch)


class Simulation:
    def __init__(self, config: ExperimentConfig):
        self.config = config.validate()
        self.tasks, self.train_rows, self.eval_rows = build_tasks(config)
        self.policies = init_policies(self.tasks, config.bias, config.seed, config.model_ids)
        # frozen reference = initial policy
        self.ref_logp = [log_softmax(p.logits_rows()) for p in self.policies]
        self._order = None
        self._epoch = -1

    @property
    def model_ids(self):
        return [p.model_id for p in self.policies]

    def batch_rows(self, step: int) -> np.ndarray:
        n_train = len(self.train_rows)
        bs = self.config.batch_size
        if bs is None or bs >= n_train:
            return self.train_rows
        per_epoch = -(-n_train // bs)
        epoch, i = divmod(step, per_epoch)
        if epoch != self._epoch:
            rng = np.random.default_rng([self.config.seed, BATCH_STREAM, epoch])
            self._order = self.train_rows[rng.permutation(n_train)]
            self._epoch = epoch
        return self._order[i * bs:(i + 1) * bs]

    def evaluate(self, checkpoint: int) -> EvalResult:
        return evaluate(self.policies, self.eval_rows, self.config.eval_samples, [self.config.seed, checkpoint])

    def step(self, t: int) -> StepRecord:
        cfg = self.config
        rows = self.batch_rows(t)
        m = self.tasks.m
        gt = self.tasks.gt[rows]
        draw = cfg.samples_drawn
        p_old = [p.probs_rows(rows) for p in self.policies]
        codes = np.stack([
            draw_codes(p_old[n], draw, np.random.default_rng([cfg.seed, SAMPLE_STREAM, n, t]),
                       cfg.bias.invalid_fraction)
            for n in range(len(self.policies))
        ])
        counts = K.count_answers(codes, m)
        sc = self_consistency(counts)
        n_models = len(self.policies)
        if cfg.mode == "ttrl_single":
            labels = np.stack([K.weighted_vote(counts[n:n + 1], np.ones((1, len(rows))))[0]
                               for n in range(n_models)])
        else:
            weights = sc if cfg.mode == "rlccf" else np.ones_like(sc)
            label, _, _ = K.weighted_vote(counts, weights)
            labels = np.broadcast_to(label, (n_models, len(rows)))

        for n, policy in enumerate(self.policies):
            model_update(policy, self.ref_logp[n], rows, codes[n], p_old[n], labels[n], cfg.clip,
                         cfg.k_update, cfg.shared_learning_rate, len(rows))

        return StepRecord(t, self._metrics(codes, counts, sc, labels, gt), int((labels < 0).sum()))

    def _metrics(self, codes, counts, sc, labels, gt) -> StepMetrics:
        labelled = labels >= 0
        label_acc = float((labels == gt[None, :])[labelled].mean()) if labelled.any() else None
        valid = codes >= 0
        rewards = (codes == labels[:, :, None]) & valid & labelled[:, :, None]
        oracle = (codes == gt[None, :, None]) & valid
        reward_acc = float((rewards == oracle).mean())
        pooled = counts.sum(axis=0)
        total = pooled.sum(axis=1)
        has = total > 0
        cc = float((pooled.max(axis=1)[has] / total[has]).mean()) if has.any() else 0.0
        per_model_sc = {p.model_id: float(sc[n].mean()) for n, p in enumerate(self.policies)}
        return StepMetrics(label_acc, reward_acc, per_model_sc, cc)

    def run(self) -> TrainingTrace:
        cfg = self.config
        trace = TrainingTrace(cfg.mode, cfg.seed, self.model_ids, self.evaluate(0))
        for t in range(cfg.steps):
            record = self.step(t)
            if (t + 1) % cfg.eval_every == 0 or t == cfg.steps - 1:
                record = replace(record, evaluation=self.evaluate(t + 1))
            trace.steps.append(record)
        return trace


def _run_mode(config: ExperimentConfig, mode: str) -> TrainingTrace:
    if config.mode != mode:
        raise ConfigError(f"expected mode {mode!r}, got {config.mode!r}", ["mode"])
    return Simulation(config).run()


def run_rlccf(config: ExperimentConfig) -> TrainingTrace:
    return _run_mode(config, "rlccf")


def run_ttrl_single(config: ExperimentConfig) -> TrainingTrace:
    return _run_mode(config, "ttrl_single")


def run_ablation_simple_vote(config: ExperimentConfig) -> TrainingTrace:
    return _run_mode(config, "rlccf_simple_vote")


def run(config: ExperimentConfig) -> TrainingTrace:
    return Simulation(config).run()


@dataclass(frozen=True)
class SCAccuracyStudy:
    model_ids: list
    mean_sc: np.ndarray
    mean_accuracy: np.ndarray
    correlation: float
    per_question_correlation: dict
    binned_correlation: dict


def _pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.std() == 0 or y.std() == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def sc_accuracy_study(bias: BiasModelSpec, n_questions: int = 200, k: int = 16, vocab_size: int = 4,
                      seed: int = 0, min_bin: int = 5) -> SCAccuracyStudy:
    """Relate self-consistency to accuracy over a population of untrained models.

    ``correlation`` is taken across models (each model's mean SC against its
    mean per-sample accuracy). Per model, ``per_question_correlation`` pairs SC
    and accuracy question by question, and ``binned_correlation`` pairs each SC
    level held by at least ``min_bin`` questions with the mean accuracy there.
    """
    tasks = TaskSet(make_tasks({"math": n_questions}, vocab_size, seed, "sc"))
    policies = init_policies(tasks, bias, seed)
    rows = np.arange(len(tasks))
    mean_sc, mean_acc, per_q, binned = [], [], {}, {}
    for n, p in enumerate(policies):
        codes = draw_codes(p.probs_rows(rows), k, np.random.default_rng([seed, SAMPLE_STREAM, n]))
        sc = self_consistency(K.count_answers(codes, tasks.m))
        acc = (codes == tasks.gt[:, None]).mean(axis=1)
        mean_sc.append(sc.mean())
        mean_acc.append(acc.mean())
        per_q[p.model_id] = _pearson(sc, acc)
        levels = [lv for lv in np.unique(sc) if (sc == lv).sum() >= min_bin]
        binned[p.model_id] = _pearson(levels, [acc[sc == lv].mean() for lv in levels]) if len(levels) > 2 else float("nan")
    return SCAccuracyStudy([p.model_id for p in policies], np.array(mean_sc), np.array(mean_acc),
                           _pearson(mean_sc, mean_acc), per_q, binned)
