import os
import subprocess
import sys

import numpy as np
import pytest

from rlccf import _kernels as K
from rlccf.grpo import ClipConfig, normalize_advantages, objective_gradient
from rlccf.vote import AnswerSample, VotePool, pool_scores, sc_weighted_vote, simple_vote

needs_numba = pytest.mark.skipif(K.NUMBA is None, reason="numba not importable")


def random_inputs(seed, n=4, q=50, m=5, k=16):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(m), size=q)
    codes = rng.integers(-1, m, size=(n, q, k))
    counts = K.count_answers_np(codes, m)
    weights = rng.random((n, q))
    p_old = rng.dirichlet(np.ones(m), size=q)
    p_new = p_old * np.exp(rng.normal(scale=0.3, size=(q, m)))
    p_new /= p_new.sum(axis=1, keepdims=True)
    return rng, probs, codes, counts, weights, p_new, p_old


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    rng, probs, codes, counts, weights, p_new, p_old = random_inputs(seed)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((len(probs), 32))
    assert np.array_equal(K.NUMPY["sample_codes"](cdf, u), K.NUMBA["sample_codes"](cdf, u))
    assert np.array_equal(K.NUMPY["count_answers"](codes, 5), K.NUMBA["count_answers"](codes, 5))
    for a, b in zip(K.NUMPY["weighted_vote"](counts, weights), K.NUMBA["weighted_vote"](counts, weights)):
        assert np.array_equal(a, b)
    rewards = codes[0] == 2
    adv_np = K.NUMPY["group_advantages"](rewards)
    assert np.array_equal(adv_np, K.NUMBA["group_advantages"](rewards))
    g_np = K.NUMPY["surrogate_gradient"](codes[0], adv_np, p_new, p_old, 0.2)
    g_nb = K.NUMBA["surrogate_gradient"](codes[0], adv_np, p_new, p_old, 0.2)
    np.testing.assert_allclose(g_np, g_nb, rtol=0, atol=1e-15)
    eps = rng.normal(size=(100, 4))
    noise = rng.normal(size=(100, 4, 8))
    np.testing.assert_allclose(K.NUMPY["grand_means"](eps, noise, 0.7), K.NUMBA["grand_means"](eps, noise, 0.7),
                               rtol=0, atol=1e-15)


def test_set_backend_roundtrip():
    before = K.backend()
    try:
        K.set_backend("numpy")
        assert K.backend() == "numpy"
        with pytest.raises(ValueError):
            K.set_backend("fortran")
    finally:
        K.set_backend(before)


def test_env_flag_selects_numpy():
    env = dict(os.environ, RLCCF_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from rlccf import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def as_pool(codes_q, vocab):
    samples = [AnswerSample("q", f"m{n}", i, None if c < 0 else vocab[c])
               for n, row in enumerate(codes_q) for i, c in enumerate(row)]
    return VotePool.from_samples(samples, k_requested=codes_q.shape[1], question_id="q")


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_kernel_vote_matches_string_vote(backend):
    before = K.backend()
    K.set_backend(backend)
    try:
        rng = np.random.default_rng(99)
        vocab = ("0", "1", "2", "3")
        n, q, k = 4, 2000, 6
        codes = rng.integers(-1, 4, size=(n, q, k))
        counts = K.count_answers(codes, 4)
        valid = counts.sum(axis=2)
        sc = np.where(valid > 0, counts.max(axis=2) / np.maximum(valid, 1), 0.0)
        for weights, voter in ((sc, "sc"), (np.ones_like(sc), "simple")):
            label, mass, margin = K.weighted_vote(counts, weights)
            for j in range(q):
                pool = as_pool(codes[:, j], vocab)
                if pool.n_valid == 0:
                    assert label[j] == -1
                    continue
                ref = sc_weighted_vote(pool, pool_scores(pool)) if voter == "sc" else simple_vote(pool)
                assert vocab[label[j]] == ref.answer
                assert mass[j] == pytest.approx(ref.weighted_mass, abs=1e-9)
                assert margin[j] == pytest.approx(ref.margin, abs=1e-9)
    finally:
        K.set_backend(before)


def test_batched_gradient_matches_scalar_gradient():
    rng, probs, codes, counts, weights, p_new, p_old = random_inputs(3, q=30)
    rewards = codes[0] == 1
    adv = K.group_advantages(rewards)
    grad = K.surrogate_gradient(codes[0], adv, p_new, p_old, 0.2)
    cfg = ClipConfig(epsilon=0.2, beta=0.0)
    for j in range(30):
        np.testing.assert_allclose(adv[j], normalize_advantages(rewards[j]), atol=1e-12)
        expected = objective_gradient(codes[0, j], adv[j], np.log(p_new[j]), np.log(p_old[j]), np.log(p_old[j]), cfg)
        np.testing.assert_allclose(grad[j], expected, atol=1e-12)


def test_surrogate_gradient_flags_zero_snapshot_probability():
    codes = np.array([[0, 1]])
    p = np.array([[1.0, 0.0]])
    assert K.surrogate_gradient(codes, np.ones((1, 2)), p, p, 0.2) is None
