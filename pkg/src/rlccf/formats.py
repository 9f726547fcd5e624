"""Line-oriented record formats used by the command-line tools.

Every file is JSON Lines. An optional first line ``{"schema": ..., "version": 1}``
names the format; each following line is one record with a fixed field order:

pool          question_id, model_id, sample_index, answer (string or null)
labels        question_id, status ("ok" | "skipped"), label, weighted_mass, margin,
              contributing_models, self_consistency, mode_answers
ground truth  question_id, answer
rewards       question_id, model_id, sample_index, reward
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from .errors import FormatError
from .vote import AnswerSample, VotePool

VERSION = 1
POOL_SCHEMA = "rlccf.pool"
LABELS_SCHEMA = "rlccf.labels"
GROUND_TRUTH_SCHEMA = "rlccf.ground_truth"
REWARDS_SCHEMA = "rlccf.rewards"


def header(schema: str, **extra) -> str:
    return json.dumps({"schema": schema, "version": VERSION, **extra})


def write_atomic(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_lines(path, lines) -> None:
    write_atomic(path, "".join(line + "\n" for line in lines))


def iter_records(path, schema: str):
    """Yield ``(line_number, record)``; a leading header line is checked and skipped."""
    with open(path, encoding="utf-8") as fh:
        first = True
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise FormatError("record must be a JSON object", lineno)
            if first and "schema" in rec:
                first = False
                if rec["schema"] != schema:
                    raise FormatError(f"expected schema {schema!r}, found {rec['schema']!r}", lineno)
                if rec.get("version") != VERSION:
                    raise FormatError(f"unsupported version {rec.get('version')!r}", lineno)
                continue
            first = False
            yield lineno, rec


def _require(rec, lineno, name, kind, nullable=False):
    if name not in rec:
        raise FormatError(f"missing field {name!r}", lineno)
    value = rec[name]
    if value is None and nullable:
        return None
    if kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise FormatError(f"field {name!r} has wrong type", lineno)
    return value


def read_pool(path) -> list:
    """Parse a pool file into :class:`AnswerSample` records (file order)."""
    samples = []
    seen = set()
    for lineno, rec in iter_records(path, POOL_SCHEMA):
        qid = _require(rec, lineno, "question_id", str)
        mid = _require(rec, lineno, "model_id", str)
        idx = _require(rec, lineno, "sample_index", int)
        answer = _require(rec, lineno, "answer", str, nullable=True)
        if idx < 0:
            raise FormatError("sample_index must be nonnegative", lineno)
        key = (qid, mid, idx)
        if key in seen:
            raise FormatError(f"duplicate sample {key}", lineno)
        seen.add(key)
        samples.append(AnswerSample(qid, mid, idx, answer))
    return samples


def group_pools(samples) -> dict:
    """question_id -> VotePool, ordered by question_id."""
    by_q: dict[str, list] = {}
    for s in samples:
        by_q.setdefault(s.question_id, []).append(s)
    return {qid: VotePool.from_samples(by_q[qid], question_id=qid) for qid in sorted(by_q)}


def pool_lines(samples) -> list:
    lines = [header(POOL_SCHEMA)]
    for s in samples:
        lines.append(json.dumps({"question_id": s.question_id, "model_id": s.model_id,
                                 "sample_index": s.sample_index, "answer": s.answer}))
    return lines


def label_record(question_id, weighting, label=None, scores=None) -> dict:
    scores = scores or {}
    rec = {"question_id": question_id}
    if label is None:
        rec.update(status="skipped", label=None, weighted_mass=0.0, margin=0.0, contributing_models=[])
    else:
        rec.update(status="ok", label=label.answer, weighted_mass=label.weighted_mass, margin=label.margin,
                   contributing_models=sorted(label.contributing_models))
    rec["self_consistency"] = {m: scores[m].sc for m in sorted(scores)}
    rec["mode_answers"] = {m: scores[m].mode_answer for m in sorted(scores)}
    return rec


def read_labels(path) -> dict:
    """question_id -> label string, or None for skipped questions."""
    out = {}
    for lineno, rec in iter_records(path, LABELS_SCHEMA):
        qid = _require(rec, lineno, "question_id", str)
        status = rec.get("status", "ok")
        if status == "skipped":
            out[qid] = None
        elif status == "ok":
            out[qid] = _require(rec, lineno, "label", str)
        else:
            raise FormatError(f"unknown status {status!r}", lineno)
    return out


def read_ground_truth(path) -> dict:
    out = {}
    for lineno, rec in iter_records(path, GROUND_TRUTH_SCHEMA):
        out[_require(rec, lineno, "question_id", str)] = _require(rec, lineno, "answer", str)
    return out


def reward_record(question_id, model_id, sample_index, reward) -> dict:
    return {"question_id": question_id, "model_id": model_id, "sample_index": sample_index, "reward": reward}


def read_rewards(path) -> dict:
    """(question_id, model_id, sample_index) -> reward bit."""
    out = {}
    for lineno, rec in iter_records(path, REWARDS_SCHEMA):
        key = (_require(rec, lineno, "question_id", str), _require(rec, lineno, "model_id", str),
               _require(rec, lineno, "sample_index", int))
        out[key] = _require(rec, lineno, "reward", int)
    return out
