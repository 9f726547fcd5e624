import random

import pytest

from rlccf.vote import AnswerSample, VotePool


def make_pool(answers_by_model, question_id="q", k=None):
    """Pool from {model_id: [answer or None, ...]}."""
    samples = [AnswerSample(question_id, m, i, a)
               for m, answers in answers_by_model.items() for i, a in enumerate(answers)]
    if k is None:
        k = max((len(v) for v in answers_by_model.values()), default=1) or 1
    return VotePool.from_samples(samples, k_requested=k, question_id=question_id)


def random_answers(rng: random.Random, max_models=5, max_samples=8, max_answers=6):
    alphabet = [chr(ord("A") + i) for i in range(rng.randint(1, max_answers))]
    out = {}
    for n in range(rng.randint(1, max_models)):
        out[f"m{n}"] = [rng.choice(alphabet) for _ in range(rng.randint(1, max_samples))]
    return out


@pytest.fixture
def candidate_pool():
    # the worked two-model example: A:3, B:3, C:2
    return make_pool({"model1": ["A", "A", "A", "B"], "model2": ["B", "B", "C", "C"]})


# ------------------------------------------------------------ acceptance report

ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail):
        status = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES[number] = f"[{status}] criterion {number:>2}: {title} :: {detail}"
        assert ok, ACCEPTANCE_LINES[number]

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
