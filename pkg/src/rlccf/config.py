"""TOML experiment configs and the built-in scenarios.

A simulation config looks like::

    schema_version = 1
    modes = ["rlccf", "ttrl_single"]   # or: mode = "rlccf"
    seeds = [0, 1, 2, 3, 4]            # or: seed = 0
    steps = 300
    samples_per_model = 16
    pool_budget = 64

    [tasks]
    vocab_size = 4
    train = { math = 200 }
    eval = { math = 100 }

    [clip]
    epsilon = 0.2
    beta = 0.01

    [models]
    noise_std = [0.6, 0.8, 1.0, 1.2]
    bias_scale = [1.0, 1.0, 1.0, 1.0]

Unknown keys are rejected so typos surface as config errors.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bias import AggregationTrial
from .errors import ConfigError
from .grpo import ClipConfig
from .policies import BiasModelSpec
from .sim import MODES, ExperimentConfig

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "mode", "modes", "seed", "seeds", "steps", "batch_size", "eval_every",
             "eval_samples", "samples_per_model", "update_samples", "pool_budget", "shared_learning_rate",
             "tasks", "clip", "models"}
_TASK_KEYS = {"vocab_size", "train", "eval"}
_CLIP_KEYS = {"epsilon", "beta", "inner_epochs", "learning_rate"}
_MODEL_KEYS = {"noise_std", "bias_scale", "skills", "center_bias", "fixed_biases", "invalid_fraction",
               "bias_correlation", "ids"}
_SWEEP_KEYS = {"schema_version", "n_values", "k_samples", "bias_std", "noise_std", "trials", "seed",
               "ground_truth", "recovery"}
_RECOVERY_KEYS = {"vocab_size", "trials", "bias_std", "noise_std", "k_samples"}


@dataclass(frozen=True)
class SimulationPlan:
    """One config expanded over the requested modes and seeds."""

    base: ExperimentConfig
    modes: tuple
    seeds: tuple

    def runs(self):
        for mode in self.modes:
            for seed in self.seeds:
                yield replace(self.base, mode=mode, seed=seed)


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _check_keys(section: dict, allowed: set, prefix: str = ""):
    unknown = sorted(set(section) - allowed)
    if unknown:
        keys = [prefix + k for k in unknown]
        raise ConfigError(f"unknown config keys: {', '.join(keys)}", keys)


def _check_version(data: dict):
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}", ["schema_version"])


def parse_simulation(data: dict) -> SimulationPlan:
    _check_version(data)
    _check_keys(data, _TOP_KEYS)
    tasks = data.get("tasks", {})
    clip = data.get("clip", {})
    models = data.get("models")
    _check_keys(tasks, _TASK_KEYS, "tasks.")
    _check_keys(clip, _CLIP_KEYS, "clip.")
    if models is None:
        raise ConfigError("missing [models] section", ["models"])
    _check_keys(models, _MODEL_KEYS, "models.")
    if "mode" in data and "modes" in data:
        raise ConfigError("give either mode or modes", ["mode", "modes"])
    if "seed" in data and "seeds" in data:
        raise ConfigError("give either seed or seeds", ["seed", "seeds"])
    modes = tuple(data["modes"]) if "modes" in data else (data.get("mode", "rlccf"),)
    seeds = tuple(data["seeds"]) if "seeds" in data else (data.get("seed", 0),)
    if not modes or any(m not in MODES for m in modes):
        raise ConfigError(f"modes must be drawn from {MODES}", ["modes" if "modes" in data else "mode"])
    if not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
        raise ConfigError("seeds must be nonnegative integers", ["seeds" if "seeds" in data else "seed"])

    try:
        bias = BiasModelSpec(
            noise_std=tuple(float(x) for x in models["noise_std"]),
            bias_scale=tuple(float(x) for x in models["bias_scale"]),
            skills=tuple(dict(s) for s in models["skills"]) if "skills" in models else None,
            center_bias=bool(models.get("center_bias", True)),
            fixed_biases=tuple(float(x) for x in models["fixed_biases"]) if "fixed_biases" in models else None,
            invalid_fraction=float(models.get("invalid_fraction", 0.0)),
            bias_correlation=float(models.get("bias_correlation", 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing models.{exc.args[0]}", [f"models.{exc.args[0]}"]) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [models] section: {exc}", ["models"]) from None
    ids = models.get("ids")
    if ids is not None and (len(ids) != bias.n_models or len(set(ids)) != len(ids)):
        raise ConfigError("models.ids must name every model once", ["models.ids"])

    try:
        clip_cfg = ClipConfig(**clip)
    except TypeError as exc:
        raise ConfigError(str(exc), ["clip"]) from None
    except ConfigError as exc:
        raise ConfigError(str(exc), ["clip." + k for k in exc.keys]) from None

    kwargs = {k: data[k] for k in ("steps", "batch_size", "eval_every", "eval_samples", "samples_per_model",
                                   "update_samples", "pool_budget", "shared_learning_rate") if k in data}
    if "vocab_size" in tasks:
        kwargs["vocab_size"] = tasks["vocab_size"]
    if "train" in tasks:
        kwargs["train_tasks"] = dict(tasks["train"])
    if "eval" in tasks:
        kwargs["eval_tasks"] = dict(tasks["eval"])
    try:
        base = ExperimentConfig(bias=bias, clip=clip_cfg, mode=modes[0], seed=seeds[0],
                                model_ids=tuple(ids) if ids else None, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for mode in modes:
        replace(base, mode=mode).validate()
    return SimulationPlan(base, modes, seeds)


def load_simulation(path) -> SimulationPlan:
    return parse_simulation(load_toml(path))


@dataclass(frozen=True)
class SweepPlan:
    n_values: tuple
    base: AggregationTrial
    recovery: AggregationTrial = None
    vocab_size: int = 7


def parse_sweep(data: dict) -> SweepPlan:
    _check_version(data)
    _check_keys(data, _SWEEP_KEYS)
    try:
        n_values = tuple(int(n) for n in data["n_values"])
        base = AggregationTrial(n_values[0] if n_values else 1, int(data.get("k_samples", 16)),
                                float(data["bias_std"]), float(data["noise_std"]),
                                int(data.get("trials", 10_000)), int(data.get("seed", 0)),
                                float(data.get("ground_truth", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"missing {exc.args[0]}", [exc.args[0]]) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid bias sweep config: {exc}") from None
    recovery = None
    vocab = 7
    if "recovery" in data:
        rec = data["recovery"]
        _check_keys(rec, _RECOVERY_KEYS, "recovery.")
        vocab = int(rec.get("vocab_size", 7))
        if vocab < 2:
            raise ConfigError("recovery.vocab_size must be at least 2", ["recovery.vocab_size"])
        try:
            recovery = AggregationTrial(base.n_models, int(rec.get("k_samples", base.k_samples)),
                                        float(rec.get("bias_std", base.bias_std)),
                                        float(rec.get("noise_std", base.noise_std)),
                                        int(rec.get("trials", base.trials)), base.seed)
        except ValueError as exc:
            raise ConfigError(f"invalid [recovery] section: {exc}", ["recovery"]) from None
    return SweepPlan(n_values, base, recovery, vocab)


def load_sweep(path) -> SweepPlan:
    return parse_sweep(load_toml(path))


# ------------------------------------------------------------- built-in scenarios

def reference_config(seed: int = 0, mode: str = "rlccf", **overrides) -> ExperimentConfig:
    """Four heterogeneous models with zero-mean biases on 4-answer tasks."""
    bias = BiasModelSpec(noise_std=(0.6, 0.8, 1.0, 1.2), bias_scale=(1.0, 1.0, 1.0, 1.0))
    cfg = ExperimentConfig(bias=bias, mode=mode, seed=seed, vocab_size=4, train_tasks={"math": 200},
                           eval_tasks={"math": 100}, samples_per_model=16, pool_budget=64, steps=300)
    return replace(cfg, **overrides)


def asymmetric_sc_config(seed: int = 0, mode: str = "rlccf", **overrides) -> ExperimentConfig:
    """One sharp, nearly unbiased model and three diffuse models sharing a misconception."""
    bias = BiasModelSpec(noise_std=(0.5, 1.2, 1.2, 1.2), bias_scale=(0.3, 1.2, 1.2, 1.2),
                         center_bias=False, bias_correlation=0.8)
    cfg = ExperimentConfig(bias=bias, mode=mode, seed=seed, vocab_size=4, train_tasks={"math": 200},
                           eval_tasks={"math": 100}, samples_per_model=16, pool_budget=64, steps=300)
    return replace(cfg, **overrides)


def complementarity_config(seed: int = 0, mode: str = "rlccf", **overrides) -> ExperimentConfig:
    """A math specialist and a code specialist on a mixed two-domain task set."""
    skills = ({"math": 2.0, "code": 0.5}, {"math": 0.5, "code": 2.0})
    bias = BiasModelSpec(noise_std=(1.0, 1.0), bias_scale=(1.0, 1.0), skills=skills)
    cfg = ExperimentConfig(bias=bias, mode=mode, seed=seed, vocab_size=4,
                           train_tasks={"math": 100, "code": 100}, eval_tasks={"math": 100, "code": 100},
                           samples_per_model=32, update_samples=16, pool_budget=64, steps=300,
                           model_ids=("math-specialist", "code-specialist"))
    return replace(cfg, **overrides)


def sc_population() -> BiasModelSpec:
    """Eight models whose noise ranges from sharp to diffuse."""
    noise = tuple(round(0.3 + i * (2.0 - 0.3) / 7, 6) for i in range(8))
    return BiasModelSpec(noise_std=noise, bias_scale=(0.5,) * 8, center_bias=False)
