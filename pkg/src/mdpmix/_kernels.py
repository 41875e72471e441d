"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

Set MDPMIX_DISABLE_NUMBA=1 to force the numpy path (useful for debugging
and for the benchmark in benchmarks/bench_kernels.py).
"""

import os

import numpy as np

_DISABLE = os.environ.get("MDPMIX_DISABLE_NUMBA", "").strip() not in ("", "0")

if not _DISABLE:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dependency
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


def _walk_py(start, pol_cdf, ker_cdf, u_actions, u_states):
    """Sample a state/action walk from precomputed inverse-CDF uniforms.

    pol_cdf: (S, A) per-state action CDF; ker_cdf: (S, A, S) next-state CDF.
    Integer outputs depend only on comparisons, so the numba and numpy
    paths are bitwise identical.
    """
    T = u_actions.shape[0]
    states = np.empty(T + 1, dtype=np.int64)
    actions = np.empty(T, dtype=np.int64)
    states[0] = start
    s = start
    A = pol_cdf.shape[1]
    S = ker_cdf.shape[2]
    for t in range(T):
        # cap guards against a final CDF entry just below 1 from rounding
        a = min(int(np.searchsorted(pol_cdf[s], u_actions[t], side="right")), A - 1)
        s2 = min(int(np.searchsorted(ker_cdf[s, a], u_states[t], side="right")), S - 1)
        actions[t] = a
        states[t + 1] = s2
        s = s2
    return states, actions


def _pairwise_max_inner_py(proj1, proj2):
    """max over features of (x1_n - x1_m) . (x2_n - x2_m) for all pairs.

    proj1, proj2: (N, F, K).  Returns a symmetric (N, N) matrix with an
    exactly zero diagonal.
    """
    N, F, K = proj1.shape
    out = np.full((N, N), -np.inf)
    for f in range(F):
        a1 = np.ascontiguousarray(proj1[:, f, :])
        a2 = np.ascontiguousarray(proj2[:, f, :])
        s = np.einsum("nk,nk->n", a1, a2)
        g = a1 @ a2.T
        inner = s[:, None] + s[None, :] - g - g.T
        np.maximum(out, inner, out=out)
    if F == 0:
        out.fill(0.0)
    np.fill_diagonal(out, 0.0)
    return out


if HAS_NUMBA:

    @njit(cache=True)
    def _walk_nb(start, pol_cdf, ker_cdf, u_actions, u_states):  # pragma: no cover
        T = u_actions.shape[0]
        S = pol_cdf.shape[0]
        A = pol_cdf.shape[1]
        states = np.empty(T + 1, dtype=np.int64)
        actions = np.empty(T, dtype=np.int64)
        states[0] = start
        s = start
        for t in range(T):
            u = u_actions[t]
            a = 0
            while a < A - 1 and pol_cdf[s, a] <= u:
                a += 1
            u = u_states[t]
            s2 = 0
            while s2 < S - 1 and ker_cdf[s, a, s2] <= u:
                s2 += 1
            actions[t] = a
            states[t + 1] = s2
            s = s2
        return states, actions

    @njit(cache=True)
    def _pairwise_max_inner_nb(proj1, proj2):  # pragma: no cover
        N, F, K = proj1.shape
        out = np.zeros((N, N))
        for n in range(N):
            for m in range(n + 1, N):
                best = -np.inf
                for f in range(F):
                    acc = 0.0
                    for k in range(K):
                        acc += (proj1[n, f, k] - proj1[m, f, k]) * (
                            proj2[n, f, k] - proj2[m, f, k]
                        )
                    if acc > best:
                        best = acc
                if F == 0:
                    best = 0.0
                out[n, m] = best
                out[m, n] = best
        return out

    sample_walk = _walk_nb
    pairwise_max_inner = _pairwise_max_inner_nb
else:
    sample_walk = _walk_py
    pairwise_max_inner = _pairwise_max_inner_py
