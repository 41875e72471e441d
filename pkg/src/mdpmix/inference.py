"""Model estimation from clusters and subspace-distance classification of new trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import em as em_mod
from .clustering import _project_estimates
from .subspace import top_k_projector


@dataclass(frozen=True)
class MixtureEstimate:
    """Learned models plus the projectors rebuilt from them for classification."""

    num_states: int
    num_actions: int
    num_components: int
    trans: np.ndarray = field(repr=False)  # (K, S*A, S)
    trans_defined: np.ndarray = field(repr=False)  # (K, S*A)
    weights: np.ndarray = field(repr=False)
    cond_prevalence: np.ndarray = field(repr=False)  # (S*A, K), nan if unobserved
    occupancy: np.ndarray = field(repr=False)  # (K, S*A) per-label mean d-hat
    projectors: np.ndarray = field(repr=False)  # (S*A, K, S)
    occupancy_projector: np.ndarray = field(repr=False)  # (K, S*A)

    def kernel(self, k) -> np.ndarray:
        return self.trans[k].reshape(self.num_states, self.num_actions, self.num_states)


def estimate_models(labels, data: em_mod.EmData, num_components):
    """Pooled per-cluster MLE models; identical arithmetic to a one-hot M step.

    Returns (params, empty_clusters).  A label with no members yields weight 0
    and a fully undefined model.
    """
    labels = np.asarray(labels, dtype=np.int64)
    resp = np.zeros((len(labels), num_components))
    resp[np.arange(len(labels)), labels] = 1.0
    params = em_mod.m_step(resp, data, variant="restricted", scope=None)
    empty = [k for k in range(num_components) if not (labels == k).any()]
    return params, empty


def conditional_prevalence(labels, tables, num_components) -> np.ndarray:
    """(S*A, K) share of label-k trajectories among those observing each (s,a).

    Rows for never-observed pairs are nan.
    """
    labels = np.asarray(labels, dtype=np.int64)
    S, A = tables[0].num_states, tables[0].num_actions
    seen = np.zeros((S * A, num_components))
    for label, table in zip(labels, tables):
        for sa in table.whole:
            seen[sa, label] += 1
    totals = seen.sum(axis=1)
    out = np.full((S * A, num_components), np.nan)
    obs = totals > 0
    out[obs] = seen[obs] / totals[obs, None]
    return out


def build_mixture_estimate(labels, tables, data, num_components) -> MixtureEstimate:
    """Models, conditional prevalences, per-label occupancies and the rebuilt projectors."""
    params, _ = estimate_models(labels, data, num_components)
    prev = conditional_prevalence(labels, tables, num_components)
    S, A = tables[0].num_states, tables[0].num_actions
    K = num_components
    G = tables[0].scheme.blocks_per_segment
    labels = np.asarray(labels, dtype=np.int64)

    occupancy = np.zeros((K, S * A))
    sizes = np.zeros(K)
    for label, table in zip(labels, tables):
        sizes[label] += 1
        for sa, vec in table.whole.items():
            occupancy[label, sa] += vec.sum() / G
    nonempty = sizes > 0
    occupancy[nonempty] /= sizes[nonempty, None]

    projectors = np.zeros((S * A, K, S))
    for sa in range(S * A):
        if not np.isfinite(prev[sa, 0]):
            continue
        m = np.zeros((S, S))
        for k in range(K):
            if params.trans_defined[k, sa]:
                row = params.trans[k, sa]
                m += prev[sa, k] * np.outer(row, row)
        projectors[sa] = top_k_projector(m + m.T, K)
    d_tilde = occupancy.T @ occupancy  # sum_k d_k d_k^T
    u_tilde = top_k_projector(d_tilde + d_tilde.T, K)
    return MixtureEstimate(
        num_states=S,
        num_actions=A,
        num_components=K,
        trans=params.trans,
        trans_defined=params.trans_defined,
        weights=params.weights,
        cond_prevalence=prev,
        occupancy=occupancy,
        projectors=projectors,
        occupancy_projector=u_tilde,
    )


def classify(estimate_pairs, mixture_est: MixtureEstimate, freq, weight=1.0):
    """Assign each trajectory the label minimizing the double-estimator distance.

    Returns (labels, dists (N, K), unclassifiable mask).  A trajectory that
    observes no frequent pair in either segment cannot be scored by the
    model-difference channel; with weight == 1 it is flagged unclassifiable
    (its argmin label is still reported), otherwise the occupancy channel
    decides alone.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    K = mixture_est.num_components
    freq = list(freq)
    proj, occ = _project_estimates(estimate_pairs, mixture_est.projectors, freq)
    n = len(estimate_pairs)

    # projected model rows; undefined rows enter as zero vectors
    model_proj = np.zeros((K, len(freq), K))
    for f, sa in enumerate(freq):
        for k in range(K):
            if mixture_est.trans_defined[k, sa]:
                model_proj[k, f] = mixture_est.projectors[sa] @ mixture_est.trans[k, sa]

    u = mixture_est.occupancy_projector
    b1 = occ[:, 0] @ u.T
    b2 = occ[:, 1] @ u.T
    bk = mixture_est.occupancy @ u.T

    dist1 = np.zeros((n, K))
    dist2 = np.zeros((n, K))
    for k in range(K):
        inner = ((proj[:, 0] - model_proj[k][None]) * (proj[:, 1] - model_proj[k][None])).sum(
            axis=2
        )
        dist1[:, k] = inner.max(axis=1) if len(freq) else 0.0
        dist2[:, k] = ((b1 - bk[k][None]) * (b2 - bk[k][None])).sum(axis=1)
    dists = weight * dist1 + (1.0 - weight) * dist2

    freq_set = set(freq)
    unclassifiable = np.zeros(n, dtype=bool)
    for i, (e1, e2) in enumerate(estimate_pairs):
        if not (freq_set & (set(e1.trans) | set(e2.trans))):
            unclassifiable[i] = True
    if weight < 1.0:
        labels = np.where(
            unclassifiable, np.argmin(dist2, axis=1), np.argmin(dists, axis=1)
        )
        unclassifiable[:] = False
    else:
        labels = np.argmin(dists, axis=1)
    return labels.astype(np.int64), dists, unclassifiable
