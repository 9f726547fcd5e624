"""Batched inner loops of the simulator, with numba and pure-numpy backends.

The numba versions are used when numba imports and ``RLCCF_DISABLE_NUMBA`` is
unset (or "0"). Both backends accumulate in the same order, so for a given
input they return identical arrays; random numbers are always drawn by the
caller with numpy so the backends see the same draws.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

# relative gap below which two vote tallies are treated as tied
TIE_RTOL = 1e-9


def _env_disabled() -> bool:
    return os.environ.get("RLCCF_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------- numpy path

def sample_codes_np(cdf, u):
    """Inverse-CDF draws: row g of ``u`` (G, K) against ``cdf`` (G, m)."""
    m = cdf.shape[1]
    codes = np.zeros(u.shape, dtype=np.int64)
    for j in range(m - 1):
        codes += u >= cdf[:, j:j + 1]
    return codes


def count_answers_np(codes, m):
    flat = codes.reshape(-1, codes.shape[-1])
    counts = np.zeros((flat.shape[0], m), dtype=np.int64)
    for j in range(m):
        counts[:, j] = (flat == j).sum(axis=1)
    return counts.reshape(codes.shape[:-1] + (m,))


def weighted_vote_np(counts, weights):
    """Weighted tallies over models: counts (N, Q, m), weights (N, Q).

    Returns (label, mass, margin); label is -1 where no model has a valid vote.
    Tallies within TIE_RTOL of the maximum count as tied and the lowest
    index wins, so float rounding cannot split an exact tie.
    """
    n_models, n_q, m = counts.shape
    tally = np.zeros((n_q, m), dtype=np.float64)
    for n in range(n_models):
        tally += weights[n][:, None] * counts[n]
    top = tally.max(axis=1)
    tol = TIE_RTOL * np.maximum(1.0, top)
    label = np.argmax(tally >= (top - tol)[:, None], axis=1)
    rows = np.arange(n_q)
    mass = tally[rows, label]
    if m > 1:
        masked = tally.copy()
        masked[rows, label] = -np.inf
        margin = np.maximum(mass - masked.max(axis=1), 0.0)
    else:
        margin = mass.copy()
    empty = counts.sum(axis=(0, 2)) == 0
    label = np.where(empty, -1, label)
    mass = np.where(empty, 0.0, mass)
    margin = np.where(empty, 0.0, margin)
    return label, mass, margin


def group_advantages_np(rewards):
    r = rewards.astype(np.float64)
    k = r.shape[1]
    total = np.zeros(r.shape[0])
    for i in range(k):
        total += r[:, i]
    mean = total / k
    sq = np.zeros(r.shape[0])
    for i in range(k):
        d = r[:, i] - mean
        sq += d * d
    std = np.sqrt(sq / k)
    out = np.zeros_like(r)
    nz = std > 0.0
    out[nz] = (r[nz] - mean[nz, None]) / std[nz, None]
    return out


def surrogate_gradient_np(codes, adv, p_new, p_old, epsilon):
    """Gradient of the mean clipped surrogate with respect to the live logits."""
    g_count, k = codes.shape
    rows = np.arange(g_count)
    grad = np.zeros_like(p_new)
    wsum = np.zeros(g_count)
    for i in range(k):
        o = codes[:, i]
        valid = o >= 0
        oc = np.where(valid, o, 0)
        po = p_old[rows, oc]
        if np.any(valid & (po <= 0.0)):
            return None
        rho = np.where(valid, p_new[rows, oc] / np.where(valid, po, 1.0), 0.0)
        a = adv[:, i]
        unclipped = rho * a
        clipped = np.minimum(np.maximum(rho, 1.0 - epsilon), 1.0 + epsilon) * a
        active = valid & ((unclipped < clipped) | ((rho > 1.0 - epsilon) & (rho < 1.0 + epsilon)))
        w = np.where(active, rho * a, 0.0)
        grad[rows, oc] += w
        wsum += w
    grad -= p_new * wsum[:, None]
    return grad / k


def grand_means_np(eps, noise, sigma):
    """Mean of eps[t, n] + sigma * noise[t, n, k] over (n, k) for each trial t."""
    t, n, k = noise.shape
    out = np.zeros(t)
    for a in range(n):
        for b in range(k):
            out += eps[:, a] + sigma * noise[:, a, b]
    return out / (n * k)


# ---------------------------------------------------------------- numba path

if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def sample_codes_nb(cdf, u):
        g_count, k = u.shape
        m = cdf.shape[1]
        codes = np.zeros((g_count, k), dtype=np.int64)
        for g in range(g_count):
            for i in range(k):
                c = 0
                for j in range(m - 1):
                    if u[g, i] >= cdf[g, j]:
                        c += 1
                codes[g, i] = c
        return codes

    @_jit
    def _count_flat_nb(flat, m):
        counts = np.zeros((flat.shape[0], m), dtype=np.int64)
        for g in range(flat.shape[0]):
            for i in range(flat.shape[1]):
                o = flat[g, i]
                if 0 <= o < m:
                    counts[g, o] += 1
        return counts

    def count_answers_nb(codes, m):
        flat = np.ascontiguousarray(codes.reshape(-1, codes.shape[-1]))
        return _count_flat_nb(flat, m).reshape(codes.shape[:-1] + (m,))

    @_jit
    def weighted_vote_nb(counts, weights):
        n_models, n_q, m = counts.shape
        label = np.full(n_q, -1, dtype=np.int64)
        mass = np.zeros(n_q)
        margin = np.zeros(n_q)
        tally = np.zeros(m)
        for q in range(n_q):
            total = 0
            for j in range(m):
                tally[j] = 0.0
            for n in range(n_models):
                for j in range(m):
                    tally[j] += weights[n, q] * counts[n, q, j]
                    total += counts[n, q, j]
            if total == 0:
                continue
            top = tally[0]
            for j in range(1, m):
                if tally[j] > top:
                    top = tally[j]
            tol = TIE_RTOL * max(1.0, top)
            best = 0
            while tally[best] < top - tol:
                best += 1
            runner = -np.inf
            for j in range(m):
                if j != best and tally[j] > runner:
                    runner = tally[j]
            label[q] = best
            mass[q] = tally[best]
            margin[q] = max(tally[best] - runner, 0.0) if m > 1 else tally[best]
        return label, mass, margin

    @_jit
    def group_advantages_nb(rewards):
        g_count, k = rewards.shape
        out = np.zeros((g_count, k))
        for g in range(g_count):
            total = 0.0
            for i in range(k):
                total += rewards[g, i]
            mean = total / k
            sq = 0.0
            for i in range(k):
                d = rewards[g, i] - mean
                sq += d * d
            std = np.sqrt(sq / k)
            if std > 0.0:
                for i in range(k):
                    out[g, i] = (rewards[g, i] - mean) / std
        return out

    @_jit
    def _surrogate_gradient_nb(codes, adv, p_new, p_old, epsilon):
        g_count, k = codes.shape
        m = p_new.shape[1]
        grad = np.zeros((g_count, m))
        for g in range(g_count):
            wsum = 0.0
            for i in range(k):
                o = codes[g, i]
                if o < 0:
                    continue
                po = p_old[g, o]
                if po <= 0.0:
                    return grad, False
                rho = p_new[g, o] / po
                a = adv[g, i]
                unclipped = rho * a
                c = rho
                if c < 1.0 - epsilon:
                    c = 1.0 - epsilon
                if c > 1.0 + epsilon:
                    c = 1.0 + epsilon
                clipped = c * a
                if unclipped < clipped or (rho > 1.0 - epsilon and rho < 1.0 + epsilon):
                    w = rho * a
                    grad[g, o] += w
                    wsum += w
            for j in range(m):
                grad[g, j] -= p_new[g, j] * wsum
            for j in range(m):
                grad[g, j] /= k
        return grad, True

    def surrogate_gradient_nb(codes, adv, p_new, p_old, epsilon):
        grad, ok = _surrogate_gradient_nb(codes, adv, p_new, p_old, float(epsilon))
        return grad if ok else None

    @_jit
    def grand_means_nb(eps, noise, sigma):
        t, n, k = noise.shape
        out = np.zeros(t)
        for a in range(n):
            for b in range(k):
                for i in range(t):
                    out[i] += eps[i, a] + sigma * noise[i, a, b]
        for i in range(t):
            out[i] /= n * k
        return out


NUMPY = {
    "sample_codes": sample_codes_np,
    "count_answers": count_answers_np,
    "weighted_vote": weighted_vote_np,
    "group_advantages": group_advantages_np,
    "surrogate_gradient": surrogate_gradient_np,
    "grand_means": grand_means_np,
}

NUMBA = None if numba is None else {
    "sample_codes": sample_codes_nb,
    "count_answers": count_answers_nb,
    "weighted_vote": weighted_vote_nb,
    "group_advantages": group_advantages_nb,
    "surrogate_gradient": surrogate_gradient_nb,
    "grand_means": grand_means_nb,
}

_active = NUMPY if (NUMBA is None or _env_disabled()) else NUMBA


def backend() -> str:
    return "numba" if _active is NUMBA else "numpy"


def set_backend(name: str) -> None:
    """Switch backends in-process ("numba" or "numpy")."""
    global _active
    if name == "numba":
        if NUMBA is None:
            raise RuntimeError("numba is not installed")
        _active = NUMBA
    elif name == "numpy":
        _active = NUMPY
    else:
        raise ValueError(f"unknown backend {name!r}")


def sample_codes(cdf, u):
    return _active["sample_codes"](np.ascontiguousarray(cdf, dtype=np.float64),
                                   np.ascontiguousarray(u, dtype=np.float64))


def count_answers(codes, m):
    return _active["count_answers"](np.asarray(codes, dtype=np.int64), int(m))


def weighted_vote(counts, weights):
    return _active["weighted_vote"](np.ascontiguousarray(counts, dtype=np.int64),
                                    np.ascontiguousarray(weights, dtype=np.float64))


def group_advantages(rewards):
    return _active["group_advantages"](np.ascontiguousarray(rewards, dtype=np.float64))


def surrogate_gradient(codes, adv, p_new, p_old, epsilon):
    """Returns None if a sampled answer has zero snapshot probability."""
    return _active["surrogate_gradient"](
        np.ascontiguousarray(codes, dtype=np.int64),
        np.ascontiguousarray(adv, dtype=np.float64),
        np.ascontiguousarray(p_new, dtype=np.float64),
        np.ascontiguousarray(p_old, dtype=np.float64),
        float(epsilon),
    )


def grand_means(eps, noise, sigma):
    return _active["grand_means"](np.ascontiguousarray(eps, dtype=np.float64),
                                  np.ascontiguousarray(noise, dtype=np.float64), float(sigma))
