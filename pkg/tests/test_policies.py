import numpy as np
import pytest

from rlccf.errors import ShapeMismatch
from rlccf.grpo import ClipConfig, normalize_advantages, objective_gradient
from rlccf.policies import (BiasModelSpec, TaskInstance, TaskSet, answer_vocabulary, apply_update, draw_codes,
                            init_policies, init_policy, invalid_mask, load_checkpoint, make_tasks, sample_answers,
                            save_checkpoint)


def centered_tasks(n=1, m=7, domain="math", prefix="q"):
    vocab = answer_vocabulary(m)
    return TaskSet([TaskInstance(f"{prefix}{i}", domain, vocab, m // 2) for i in range(n)])


def test_task_instance_validation():
    with pytest.raises(ValueError):
        TaskInstance("q", "math", ("0",), 0)
    with pytest.raises(ValueError):
        TaskInstance("q", "math", ("0", "1"), 2)
    with pytest.raises(ValueError):
        TaskInstance("q", "math", ("1", "0"), 0)


def test_zero_bias_small_noise_concentrates_on_truth():
    tasks = TaskSet(make_tasks({"math": 50}, 5, seed=3))
    spec = BiasModelSpec(noise_std=(0.1,), bias_scale=(0.0,))
    (policy,) = init_policy(tasks, spec, seed=0)
    assert np.array_equal(policy.mode_index(), tasks.gt)
    assert policy.probs_rows()[np.arange(len(tasks)), tasks.gt].min() > 0.99


def test_opposite_biases_give_symmetric_pool():
    tasks = centered_tasks()
    spec = BiasModelSpec(noise_std=(1.0, 1.0), bias_scale=(1.0, 1.0), fixed_biases=(1.0, -1.0))
    policies = init_policies(tasks, spec, seed=0)
    codes = np.concatenate([draw_codes(p.probs_rows(), 10_000, np.random.default_rng([5, n]))[0]
                            for n, p in enumerate(policies)])
    hist = np.bincount(codes, minlength=7) / codes.size
    se = np.sqrt(hist * (1 - hist) / codes.size)
    assert np.all(np.abs(hist - hist[::-1]) < 3 * np.sqrt(2) * se + 1e-12)
    assert np.argmax(hist) == 3


def test_skill_profile_shifts_accuracy():
    tasks = TaskSet(make_tasks({"math": 300, "code": 300}, 4, seed=1))
    spec = BiasModelSpec(noise_std=(1.0,), bias_scale=(1.0,), skills=({"math": 2.0, "code": 0.5},))
    (policy,) = init_policy(tasks, spec, seed=2)
    hit = policy.mode_index() == tasks.gt
    assert hit[tasks.rows_in_domain("math")].mean() > hit[tasks.rows_in_domain("code")].mean()


def test_sample_answers_point_mass():
    tasks = centered_tasks(m=5)
    (policy,) = init_policies(tasks, BiasModelSpec(noise_std=(0.01,), bias_scale=(0.0,)), seed=0)
    answers = sample_answers(policy, tasks.tasks[0], 12, seed=4)
    assert [a.answer for a in answers] == ["2"] * 12
    assert [a.sample_index for a in answers] == list(range(12))


def test_sample_answers_uniform_frequencies():
    tasks = centered_tasks(m=4)
    (policy,) = init_policies(tasks, BiasModelSpec(noise_std=(1.0,), bias_scale=(0.0,)), seed=0)
    policy.bias_weight[:] = 0.0
    k = 40_000
    answers = [a.answer for a in sample_answers(policy, "q0", k, seed=11)]
    se = np.sqrt(0.25 * 0.75 / k)
    for v in answer_vocabulary(4):
        assert abs(answers.count(v) / k - 0.25) < 3 * se


@pytest.mark.parametrize("k, fraction, n_bad", [(8, 0.25, 2), (16, 0.5, 8), (5, 0.0, 0), (10, 0.3, 3)])
def test_invalid_striping(k, fraction, n_bad):
    mask = invalid_mask(k, fraction)
    assert mask.sum() == n_bad
    tasks = centered_tasks()
    (policy,) = init_policies(tasks, BiasModelSpec(noise_std=(1.0,), bias_scale=(0.0,)), seed=0)
    answers = sample_answers(policy, "q0", k, seed=1, invalid_fraction=fraction)
    assert sum(a.answer is None for a in answers) == n_bad


def test_sampling_is_deterministic():
    tasks = TaskSet(make_tasks({"math": 10}, 4, seed=0))
    spec = BiasModelSpec(noise_std=(0.8, 1.2), bias_scale=(1.0, 1.0))
    a = init_policies(tasks, spec, seed=9)
    b = init_policies(tasks, spec, seed=9)
    for pa, pb in zip(a, b):
        assert sample_answers(pa, "q-math-0003", 32, seed=[1, 2]) == sample_answers(pb, "q-math-0003", 32, seed=[1, 2])


def test_initial_distributions_are_valid():
    tasks = TaskSet(make_tasks({"math": 20}, 4, seed=0))
    spec = BiasModelSpec(noise_std=(1.0,) * 3, bias_scale=(1.0, 2.0, 0.5))
    policies = init_policies(tasks, spec, seed=0)
    assert all(np.isfinite(p.logits_rows()).all() for p in policies)
    probs = policies[0].probs_rows()
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_apply_update_basics():
    tasks = TaskSet(make_tasks({"math": 3}, 4, seed=0))
    (policy,) = init_policies(tasks, BiasModelSpec(noise_std=(1.0,), bias_scale=(1.0,)), seed=0)
    before = policy.probs_rows().copy()
    same = apply_update(policy, np.zeros((3, 4)), 0.5, shared_learning_rate=0.5)
    assert np.array_equal(same.probs_rows(), before)
    push = np.zeros((3, 4))
    push[1, 2] = 1.0
    moved = apply_update(policy, push, 0.5)
    assert moved.probs_rows()[1, 2] > before[1, 2]
    assert np.array_equal(policy.probs_rows(), before)  # original untouched
    with pytest.raises(ShapeMismatch):
        apply_update(policy, np.zeros((3, 5)), 0.1)
    with pytest.raises(ShapeMismatch):
        apply_update(policy, {"q-math-0000": np.zeros(3)}, 0.1)


def test_snapshot_unaffected_by_live_updates():
    tasks = TaskSet(make_tasks({"math": 3}, 4, seed=0))
    (policy,) = init_policies(tasks, BiasModelSpec(noise_std=(1.0,), bias_scale=(1.0,)), seed=0)
    snapshot = policy.copy()
    frozen = snapshot.probs_rows().copy()
    policy.step(np.arange(3), np.ones((3, 4)) * np.array([1.0, -1.0, 0.0, 0.0]), 1.0, 1.0)
    assert np.array_equal(snapshot.probs_rows(), frozen)
    assert not np.array_equal(policy.probs_rows(), frozen)


def test_rewarding_truth_converges():
    vocab = answer_vocabulary(4)
    tasks = TaskSet([TaskInstance("q", "math", vocab, 1)])
    spec = BiasModelSpec(noise_std=(1.0,), bias_scale=(1.0,), fixed_biases=(1.0,))
    (policy,) = init_policies(tasks, spec, seed=0)
    ref = policy.logits["q"].copy()
    cfg = ClipConfig(learning_rate=0.1)
    rng = np.random.default_rng(0)
    assert policy.distribution("q")[1] < 0.5
    for step in range(500):
        z = policy.logits["q"]
        codes = draw_codes(policy.probs_rows(), 16, rng)[0]
        grad = objective_gradient(codes, normalize_advantages(codes == 1), z, z, ref, cfg)
        policy = apply_update(policy, {"q": grad}, cfg.learning_rate)
        probs = policy.distribution("q")
        assert abs(probs.sum() - 1.0) < 1e-9 and probs.min() >= 0
        if probs[1] >= 0.99:
            break
    assert policy.distribution("q")[1] >= 0.99


def test_checkpoint_roundtrip():
    tasks = TaskSet(make_tasks({"math": 4, "code": 3}, 5, seed=2))
    spec = BiasModelSpec(noise_std=(0.7,), bias_scale=(1.3,), skills=({"math": 1.5, "code": 0.7},))
    (policy,) = init_policies(tasks, spec, seed=1)
    rng = np.random.default_rng(0)
    policy.step(np.arange(len(tasks)), rng.normal(size=(len(tasks), 5)), 0.3, 0.2)
    text = save_checkpoint(policy)
    restored = load_checkpoint(text, tasks)
    assert save_checkpoint(restored) == text
    assert np.array_equal(restored.logits_rows(), policy.logits_rows())
    assert restored.skill_profile == policy.skill_profile
    with pytest.raises(ShapeMismatch):
        load_checkpoint(text, TaskSet(make_tasks({"math": 4}, 5, seed=2)))
