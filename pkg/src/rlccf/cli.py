"""Command-line entry point.

Exit codes: 0 success, 2 input or config error, 1 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import formats
from .bias import convergence_sweep, mode_recovery_rate
from .config import load_simulation, load_sweep
from .errors import ConfigError, EmptyPool, FormatError, InsufficientPoints, MissingGroundTruth, RLCCFError
from .policies import save_checkpoint
from .rewards import collective_consistency
from .sim import Simulation
from .vote import pool_scores, sc_weighted_vote, simple_vote

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


class InputError(RLCCFError):
    pass


def vote_pools(pools: dict, weighting: str) -> list:
    """One label record per question, skipped questions included."""
    records = []
    for qid, pool in pools.items():
        scores = pool_scores(pool)
        try:
            label = sc_weighted_vote(pool, scores) if weighting == "sc" else simple_vote(pool)
        except EmptyPool:
            label = None
        records.append(formats.label_record(qid, weighting, label, scores))
    return records


def cmd_vote(args) -> int:
    samples = formats.read_pool(args.pool)
    records = vote_pools(formats.group_pools(samples), args.weighting)
    lines = [formats.header(formats.LABELS_SCHEMA, weighting=args.weighting)]
    lines += [json.dumps(r) for r in records]
    formats.write_lines(args.output, lines)
    skipped = sum(r["status"] == "skipped" for r in records)
    print(f"{len(records)} questions, {skipped} skipped -> {args.output}", file=sys.stderr)
    return EXIT_OK


def cmd_reward(args) -> int:
    samples = formats.read_pool(args.pool)
    pools = formats.group_pools(samples)
    if args.labels:
        labels = formats.read_labels(args.labels)
        missing = sorted(set(pools) - set(labels))
        if missing:
            raise InputError(f"no label for pooled questions: {', '.join(missing[:10])}")
    else:
        labels = {r["question_id"]: r["label"] for r in vote_pools(pools, args.weighting)}
    truth = formats.read_ground_truth(args.ground_truth) if args.ground_truth else None

    rewards = []
    for s in sorted(samples, key=lambda s: (s.question_id, s.model_id, s.sample_index)):
        label = labels[s.question_id]
        bit = int(s.answer is not None and label is not None and s.answer == label)
        rewards.append(formats.reward_record(s.question_id, s.model_id, s.sample_index, bit))
    lines = [formats.header(formats.REWARDS_SCHEMA)] + [json.dumps(r) for r in rewards]
    formats.write_lines(args.output, lines)

    sc_by_model: dict[str, list] = {}
    cc = []
    for pool in pools.values():
        for m, score in pool_scores(pool).items():
            sc_by_model.setdefault(m, []).append(score.sc)
        if pool.n_valid:
            cc.append(collective_consistency(pool))
    summary = {
        "schema": "rlccf.reward_summary",
        "version": formats.VERSION,
        "questions": len(pools),
        "skipped": sum(labels[q] is None for q in pools),
        "samples": len(rewards),
        "label_accuracy": None,
        "reward_accuracy": None,
        "per_model_sc": {m: float(np.mean(v)) for m, v in sorted(sc_by_model.items())},
        "collective_consistency": float(np.mean(cc)) if cc else None,
    }
    if truth is not None:
        labelled = [q for q in pools if labels[q] is not None]
        missing = sorted(q for q in pools if q not in truth)
        if missing:
            raise MissingGroundTruth(f"no ground truth for: {', '.join(missing[:10])}")
        if labelled:
            summary["label_accuracy"] = sum(labels[q] == truth[q] for q in labelled) / len(labelled)
        by_key = {(s.question_id, s.model_id, s.sample_index): s for s in samples}
        agree = 0
        for r in rewards:
            s = by_key[(r["question_id"], r["model_id"], r["sample_index"])]
            oracle = int(s.answer is not None and s.answer == truth[s.question_id])
            agree += oracle == r["reward"]
        summary["reward_accuracy"] = agree / len(rewards) if rewards else None
    text = json.dumps(summary, indent=2) + "\n"
    if args.summary:
        formats.write_atomic(args.summary, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _run_summary(trace) -> dict:
    ie, fe = trace.initial_evaluation, trace.final_evaluation
    return {
        "mode": trace.mode,
        "seed": trace.seed,
        "steps": len(trace),
        "initial_group_accuracy": ie.group_accuracy,
        "final_group_accuracy": fe.group_accuracy,
        "initial_model_accuracy": ie.per_model_accuracy,
        "final_model_accuracy": fe.per_model_accuracy,
        "final_label_accuracy": trace.final_label_accuracy(),
    }


def cmd_simulate(args) -> int:
    plan = load_simulation(args.config)
    out = Path(args.output)
    runs = []
    for cfg in plan.runs():
        sim = Simulation(cfg)
        trace = sim.run()
        tag = f"{cfg.mode}_seed{cfg.seed}"
        formats.write_lines(out / f"trace_{tag}.jsonl", trace.to_lines())
        for policy in sim.policies:
            formats.write_atomic(out / "checkpoints" / tag / f"{policy.model_id}.ckpt", save_checkpoint(policy))
        runs.append(_run_summary(trace))
        print(f"{tag}: group accuracy {runs[-1]['initial_group_accuracy']:.3f} -> "
              f"{runs[-1]['final_group_accuracy']:.3f}", file=sys.stderr)
    by_mode = {}
    for mode in plan.modes:
        rs = [r for r in runs if r["mode"] == mode]
        by_mode[mode] = {
            "runs": len(rs),
            "mean_initial_group_accuracy": float(np.mean([r["initial_group_accuracy"] for r in rs])),
            "mean_final_group_accuracy": float(np.mean([r["final_group_accuracy"] for r in rs])),
            "mean_final_label_accuracy": float(np.mean([r["final_label_accuracy"] for r in rs])),
        }
    summary = {"schema": "rlccf.simulation_summary", "version": formats.VERSION, "runs": runs, "by_mode": by_mode}
    formats.write_atomic(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


SWEEP_COLUMNS = ("n_models", "mean_abs_error", "std", "mean", "standard_error", "closed_form_std", "recovery_rate")


def sweep_table(plan) -> tuple:
    result = convergence_sweep(plan.n_values, plan.base)
    lines = ["# schema: rlccf.bias_sweep v1", f"# slope: {result.slope!r}", f"# intercept: {result.intercept!r}",
             "\t".join(SWEEP_COLUMNS)]
    rows = []
    for r in result.rows:
        rate = ""
        if plan.recovery is not None:
            rate = repr(mode_recovery_rate(plan.recovery.with_models(r.n_models), plan.vocab_size).rate)
        row = {"n_models": r.n_models, "mean_abs_error": r.mean_abs_error, "std": r.std, "mean": r.mean,
               "standard_error": r.standard_error, "closed_form_std": r.closed_form_std,
               "recovery_rate": float(rate) if rate else None}
        rows.append(row)
        lines.append("\t".join([str(r.n_models)] + [repr(v) for v in (r.mean_abs_error, r.std, r.mean,
                                                                       r.standard_error, r.closed_form_std)] + [rate]))
    return result, rows, lines


def cmd_bias_sweep(args) -> int:
    plan = load_sweep(args.config)
    result, rows, lines = sweep_table(plan)
    text = "".join(line + "\n" for line in lines)
    if args.output:
        formats.write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    print(json.dumps({"slope": result.slope, "intercept": result.intercept}), file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlccf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vote", help="pseudo-label every question in a sample pool")
    p.add_argument("pool", help="pool file (JSON lines)")
    p.add_argument("-o", "--output", required=True, help="labels file to write")
    p.add_argument("--weighting", choices=("sc", "simple"), default="sc")
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("reward", help="per-sample consensus rewards and accuracy metrics")
    p.add_argument("pool")
    p.add_argument("--labels", help="labels file from `rlccf vote`; voted in-process when omitted")
    p.add_argument("--ground-truth", help="ground-truth file; enables label and reward accuracy")
    p.add_argument("--weighting", choices=("sc", "simple"), default="sc")
    p.add_argument("-o", "--output", required=True, help="rewards file to write")
    p.add_argument("--summary", help="write the metrics summary here instead of stdout")
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("simulate", help="run simulator experiments from a TOML config")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bias-sweep", help="Monte Carlo bias-reduction table")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="table file (stdout when omitted)")
    p.set_defaults(func=cmd_bias_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        keys = f" [keys: {', '.join(exc.keys)}]" if exc.keys else ""
        print(f"config error: {exc}{keys}", file=sys.stderr)
        return EXIT_INPUT
    except (FormatError, InputError, MissingGroundTruth, InsufficientPoints, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
