"""Soft/hard EM refinement over trajectory count tables.

Two observation models: "restricted" scores only next-state transitions out
of a chosen state-action scope (the frequent set), "full" scores the whole
trajectory and additionally fits per-label policies and start distributions.
All likelihood arithmetic is in log space; an undefined parameter row (zero
weighted denominator) is excluded from the likelihood product rather than
imputed, while a defined row assigning probability zero to an observed
transition genuinely contributes -inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EmData:
    """Flattened whole-trajectory counts for vectorized E/M steps."""

    n_traj: int
    num_states: int
    num_actions: int
    trans_codes: np.ndarray = field(repr=False)  # (nnz,) sa*S + s'
    trans_counts: np.ndarray = field(repr=False)
    trans_tid: np.ndarray = field(repr=False)
    sa_codes: np.ndarray = field(repr=False)  # (nnz_sa,) aggregated (s,a) visits
    sa_counts: np.ndarray = field(repr=False)
    sa_tid: np.ndarray = field(repr=False)
    first_states: np.ndarray = field(repr=False)
    ids: list = field(default_factory=list)


def build_em_data(tables) -> EmData:
    if not tables:
        raise ValueError("no count tables")
    S, A = tables[0].num_states, tables[0].num_actions
    codes, counts, tids = [], [], []
    sa_codes, sa_counts, sa_tids = [], [], []
    firsts = np.empty(len(tables), dtype=np.int64)
    for tid, table in enumerate(tables):
        firsts[tid] = table.first_state
        for sa in sorted(table.whole):
            vec = table.whole[sa]
            nz = np.flatnonzero(vec)
            codes.append(sa * S + nz)
            counts.append(vec[nz].astype(np.float64))
            tids.append(np.full(len(nz), tid, dtype=np.int64))
            sa_codes.append(sa)
            sa_counts.append(float(vec.sum()))
            sa_tids.append(tid)
    return EmData(
        n_traj=len(tables),
        num_states=S,
        num_actions=A,
        trans_codes=np.concatenate(codes) if codes else np.empty(0, dtype=np.int64),
        trans_counts=np.concatenate(counts) if counts else np.empty(0),
        trans_tid=np.concatenate(tids) if tids else np.empty(0, dtype=np.int64),
        sa_codes=np.array(sa_codes, dtype=np.int64),
        sa_counts=np.array(sa_counts),
        sa_tid=np.array(sa_tids, dtype=np.int64),
        first_states=firsts,
        ids=[t.traj_id for t in tables],
    )


@dataclass(frozen=True)
class EmParams:
    """Weighted-MLE parameters for one M step."""

    variant: str
    weights: np.ndarray
    trans: np.ndarray = field(repr=False)  # (K, S*A, S)
    trans_defined: np.ndarray = field(repr=False)  # (K, S*A)
    scope: np.ndarray = field(repr=False)  # (S*A,) bool
    policy: np.ndarray | None = field(repr=False, default=None)  # (K, S, A)
    policy_defined: np.ndarray | None = field(repr=False, default=None)  # (K, S)
    start: np.ndarray | None = field(repr=False, default=None)  # (K, S)
    start_defined: np.ndarray | None = field(repr=False, default=None)  # (K,)


@dataclass(frozen=True)
class EmState:
    responsibilities: np.ndarray
    params: EmParams
    loglik_trace: np.ndarray
    per_traj_loglik: np.ndarray
    n_iter: int
    converged: bool
    zero_likelihood_count: int = 0


def em_init_from_labels(labels, num_components, softening=0.2) -> np.ndarray:
    """Softened one-hot responsibilities: (1-s)*onehot + s/K per row."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_components:
        raise ValueError("labels out of range")
    if not 0.0 <= softening <= 1.0:
        raise ValueError("softening must lie in [0, 1]")
    resp = np.full((len(labels), num_components), softening / num_components)
    resp[np.arange(len(labels)), labels] += 1.0 - softening
    return resp


def random_responsibilities(n_traj, num_components, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(num_components), size=n_traj)


def _scope_mask(num_states, num_actions, scope):
    mask = np.zeros(num_states * num_actions, dtype=bool)
    if scope is None:
        mask[:] = True
    else:
        mask[np.asarray(list(scope), dtype=np.int64)] = True
    return mask


def m_step(resp, data: EmData, variant="restricted", scope=None) -> EmParams:
    """Weighted MLEs for transitions, weights, and (full variant) policy/start."""
    resp = np.asarray(resp, dtype=np.float64)
    K = resp.shape[1]
    S, A = data.num_states, data.num_actions
    SA = S * A
    mask = scope if isinstance(scope, np.ndarray) else _scope_mask(S, A, scope)
    trans = np.zeros((K, SA, S))
    defined = np.zeros((K, SA), dtype=bool)
    for k in range(K):
        w = data.trans_counts * resp[data.trans_tid, k]
        numer = np.bincount(data.trans_codes, weights=w, minlength=SA * S).reshape(SA, S)
        denom = numer.sum(axis=1)
        defined[k] = denom > 0
        trans[k][defined[k]] = numer[defined[k]] / denom[defined[k], None]
    weights = resp.sum(axis=0) / resp.shape[0]
    policy = policy_defined = start = start_defined = None
    if variant == "full":
        policy = np.zeros((K, S, A))
        policy_defined = np.zeros((K, S), dtype=bool)
        start = np.zeros((K, S))
        start_defined = np.zeros(K, dtype=bool)
        for k in range(K):
            w = data.sa_counts * resp[data.sa_tid, k]
            numer = np.bincount(data.sa_codes, weights=w, minlength=SA).reshape(S, A)
            denom = numer.sum(axis=1)
            policy_defined[k] = denom > 0
            policy[k][policy_defined[k]] = (
                numer[policy_defined[k]] / denom[policy_defined[k], None]
            )
            sw = resp[:, k].sum()
            if sw > 0:
                start[k] = np.bincount(
                    data.first_states, weights=resp[:, k], minlength=S
                ) / sw
                start_defined[k] = True
    elif variant != "restricted":
        raise ValueError(f"unknown variant {variant!r}")
    return EmParams(
        variant=variant,
        weights=weights,
        trans=trans,
        trans_defined=defined,
        scope=mask,
        policy=policy,
        policy_defined=policy_defined,
        start=start,
        start_defined=start_defined,
    )


def _trajectory_logliks(params: EmParams, data: EmData) -> np.ndarray:
    """(N, K) log-likelihood terms, excluding undefined/out-of-scope rows."""
    K = params.weights.shape[0]
    S, A = data.num_states, data.num_actions
    SA = S * A
    out = np.zeros((data.n_traj, K))
    for k in range(K):
        log_rows = np.zeros((SA, S))
        active = params.trans_defined[k] & params.scope
        with np.errstate(divide="ignore"):
            log_rows[active] = np.log(params.trans[k][active])
        vals = data.trans_counts * log_rows.reshape(-1)[data.trans_codes]
        out[:, k] = np.bincount(data.trans_tid, weights=vals, minlength=data.n_traj)
        if params.variant == "full":
            log_pol = np.zeros((S, A))
            act = params.policy_defined[k]
            with np.errstate(divide="ignore"):
                log_pol[act] = np.log(params.policy[k][act])
            pvals = data.sa_counts * log_pol.reshape(-1)[data.sa_codes]
            out[:, k] += np.bincount(data.sa_tid, weights=pvals, minlength=data.n_traj)
            if params.start_defined[k]:
                with np.errstate(divide="ignore"):
                    log_start = np.log(params.start[k])
                out[:, k] += log_start[data.first_states]
    return out


def e_step(params: EmParams, data: EmData, mode="soft"):
    """Posterior responsibilities plus per-trajectory marginal log-likelihood.

    Trajectories with zero likelihood under every label get a uniform row;
    their count is returned so callers can surface a warning.
    """
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown mode {mode!r}")
    ll = _trajectory_logliks(params, data)
    with np.errstate(divide="ignore"):
        logw = ll + np.log(params.weights)[None, :]
    row_max = logw.max(axis=1)
    dead = ~np.isfinite(row_max)
    K = logw.shape[1]
    resp = np.zeros_like(logw)
    ok = ~dead
    shifted = np.exp(logw[ok] - row_max[ok, None])
    norms = shifted.sum(axis=1)
    loglik = np.full(data.n_traj, -np.inf)
    loglik[ok] = row_max[ok] + np.log(norms)
    if mode == "soft":
        resp[ok] = shifted / norms[:, None]
    else:
        hard = np.argmax(logw[ok], axis=1)  # ties break to the lowest label
        resp[np.flatnonzero(ok), hard] = 1.0
    resp[dead] = 1.0 / K
    return resp, loglik, int(dead.sum())


def run_em(
    init_resp,
    data: EmData,
    variant="restricted",
    mode="soft",
    scope=None,
    max_iter=200,
    tol=1e-6,
) -> EmState:
    """Alternate M and E steps from the given responsibilities until the total
    log-likelihood moves by less than tol (absolute) or max_iter is hit."""
    resp = np.asarray(init_resp, dtype=np.float64)
    if resp.shape[0] != data.n_traj:
        raise ValueError("responsibility rows must match trajectory count")
    mask = _scope_mask(data.num_states, data.num_actions, scope)
    trace = []
    params = None
    per_traj = None
    zero_count = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        params = m_step(resp, data, variant=variant, scope=mask)
        resp, per_traj, dead = e_step(params, data, mode=mode)
        zero_count += dead
        trace.append(per_traj.sum())
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
    return EmState(
        responsibilities=resp,
        params=params,
        loglik_trace=np.array(trace),
        per_traj_loglik=per_traj,
        n_iter=it,
        converged=converged,
        zero_likelihood_count=zero_count,
    )
