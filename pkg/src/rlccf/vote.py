"""Self-consistency scores and multi-model answer voting.

Answers are canonical strings compared byte-exactly; ``None`` marks an
invalid sample (the answer extractor found nothing usable).
"""
from __future__ import annotations

from collections import Counter
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .errors import EmptyPool

INVALID = None


@dataclass(frozen=True)
class AnswerSample:
    question_id: str
    model_id: str
    sample_index: int
    answer: Optional[str]

    @property
    def valid(self) -> bool:
        return self.answer is not None


@dataclass(frozen=True)
class VotePool:
    """Valid samples for one question, grouped by model.

    Models whose samples were all invalid stay in ``per_model_samples`` with an
    empty tuple so they still receive (zero) rewards downstream.
    """

    question_id: str
    per_model_samples: Mapping[str, tuple]
    k_requested: int

    def __post_init__(self):
        for model_id, samples in self.per_model_samples.items():
            if len(samples) > self.k_requested:
                raise ValueError(f"model {model_id!r} has more than k_requested samples")
            for s in samples:
                if s.question_id != self.question_id:
                    raise ValueError("all samples must share the pool's question_id")
                if not s.valid:
                    raise ValueError("VotePool holds valid samples only")

    @classmethod
    def from_samples(cls, samples: Iterable[AnswerSample], k_requested: Optional[int] = None,
                     question_id: Optional[str] = None) -> "VotePool":
        """Group raw samples (valid or not) into a pool, dropping invalid ones."""
        samples = list(samples)
        if question_id is None:
            ids = {s.question_id for s in samples}
            if len(ids) != 1:
                raise ValueError("samples must share exactly one question_id")
            question_id = ids.pop()
        grouped: dict[str, list] = {}
        seen = set()
        for s in samples:
            key = (s.model_id, s.sample_index)
            if key in seen:
                raise ValueError(f"duplicate sample_index {s.sample_index} for model {s.model_id!r}")
            seen.add(key)
            grouped.setdefault(s.model_id, [])
            if s.valid:
                grouped[s.model_id].append(s)
        if k_requested is None:
            k_requested = max((s.sample_index + 1 for s in samples), default=0)
        per_model = {m: tuple(sorted(v, key=lambda s: s.sample_index)) for m, v in grouped.items()}
        return cls(question_id, per_model, k_requested)

    def valid_answers(self) -> list[str]:
        return [s.answer for m in sorted(self.per_model_samples) for s in self.per_model_samples[m]]

    @property
    def n_valid(self) -> int:
        return sum(len(v) for v in self.per_model_samples.values())


@dataclass(frozen=True)
class SelfConsistencyScore:
    model_id: Optional[str]
    sc: float
    mode_answer: Optional[str]
    valid_count: int


@dataclass(frozen=True)
class PseudoLabel:
    question_id: str
    answer: str
    weighted_mass: float
    margin: float
    contributing_models: frozenset = field(default_factory=frozenset)


def _argmax_lexicographic(tally: Mapping[str, float]):
    """Winner, winning tally and runner-up tally; ties go to the smallest answer."""
    best = None
    best_val = None
    for answer in sorted(tally):
        val = tally[answer]
        if best_val is None or val > best_val:
            best, best_val = answer, val
    rest = [v for a, v in tally.items() if a != best]
    runner_up = max(rest) if rest else 0.0
    return best, best_val, runner_up


def compute_sc(samples: Sequence[AnswerSample]) -> SelfConsistencyScore:
    """Frequency of the model's most common valid answer.

    The denominator counts valid samples only; with no valid sample the score
    is 0 and the mode is invalid.
    """
    model_ids = {s.model_id for s in samples}
    if len(model_ids) > 1:
        raise ValueError("compute_sc expects samples from a single model")
    model_id = next(iter(model_ids)) if model_ids else None
    counts = Counter(s.answer for s in samples if s.valid)
    valid_count = sum(counts.values())
    if valid_count == 0:
        return SelfConsistencyScore(model_id, 0.0, INVALID, 0)
    mode, top, _ = _argmax_lexicographic(counts)
    return SelfConsistencyScore(model_id, top / valid_count, mode, valid_count)


def _rational_weights(weights: Mapping[str, float]) -> tuple[dict, float]:
    """Weights relative to the largest one, snapped to nearby small-denominator rationals.

    SC values are ratios of small counts, so the ratios between them are too;
    recovering them exactly keeps ties such as 3 * (1/3) == 1 exact and makes
    the winner independent of any common positive rescaling.
    """
    top = max(weights.values(), default=0.0)
    if top <= 0:
        return {m: Fraction(0) for m in weights}, 0.0
    return {m: Fraction(w / top).limit_denominator(1_000_000) for m, w in weights.items()}, float(top)


def _weighted_tally(pool: VotePool, weights: Mapping[str, Fraction]) -> dict[str, Fraction]:
    # exact sums; float addition would split genuine ties and depend on model order
    tally: dict[str, Fraction] = {}
    for model_id, samples in pool.per_model_samples.items():
        counts = Counter(s.answer for s in samples)
        w = weights[model_id]
        for answer, c in counts.items():
            tally[answer] = tally.get(answer, 0) + w * c
    return tally


def _vote(pool: VotePool, weights: Mapping[str, float]) -> PseudoLabel:
    if pool.n_valid == 0:
        raise EmptyPool(f"question {pool.question_id!r} has no valid samples")
    rational, scale = _rational_weights(weights)
    tally = _weighted_tally(pool, rational)
    answer, mass, runner_up = _argmax_lexicographic(tally)
    contributors = frozenset(
        m for m, samples in pool.per_model_samples.items()
        if any(s.answer == answer for s in samples)
    )
    scale = Fraction(scale)
    return PseudoLabel(pool.question_id, answer, float(mass * scale), float((mass - runner_up) * scale),
                       contributors)


def sc_weighted_vote(pool: VotePool, scores: Mapping[str, SelfConsistencyScore]) -> PseudoLabel:
    """Answer with the largest sum of SC_n over the votes it received."""
    missing = set(pool.per_model_samples) - set(scores)
    if missing:
        raise KeyError(f"no SC score for models {sorted(missing)}")
    weights = {m: scores[m].sc for m in pool.per_model_samples}
    return _vote(pool, weights)


def simple_vote(pool: VotePool) -> PseudoLabel:
    return _vote(pool, {m: 1.0 for m in pool.per_model_samples})


def pool_scores(pool: VotePool) -> dict[str, SelfConsistencyScore]:
    """SC score for every model in the pool (models without valid samples get 0)."""
    out = {}
    for model_id, samples in pool.per_model_samples.items():
        score = compute_sc(samples)
        if score.model_id is None:
            score = SelfConsistencyScore(model_id, 0.0, INVALID, 0)
        out[model_id] = score
    return out
