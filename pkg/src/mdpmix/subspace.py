"""Moment accumulation and top-K eigenprojector extraction (the subspace stage)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EigenSolverError(RuntimeError):
    def __init__(self, pair, cause):
        super().__init__(f"eigendecomposition failed for (s,a)={pair}: {cause}")
        self.pair = pair


@dataclass(frozen=True)
class SubspaceBank:
    """Per-(s,a) K x S orthonormal projectors plus the K x SA occupancy projector.

    projectors[sa] is the zero matrix when no trajectory observed (s,a) in
    both segments.  spectra[sa] holds all S eigenvalues of the symmetrized
    moment (M_hat + M_hat^T)/2 sorted by decreasing magnitude (zeros for
    unobserved pairs).
    """

    num_states: int
    num_actions: int
    rank: int
    projectors: np.ndarray = field(repr=False)  # (S*A, K, S)
    occupancy_projector: np.ndarray = field(repr=False)  # (K, S*A)
    n_traj: np.ndarray = field(repr=False)  # (S*A,)
    spectra: np.ndarray = field(repr=False)  # (S*A, S)

    def projector(self, sa: int) -> np.ndarray:
        return self.projectors[sa]


def accumulate_moments(estimate_pairs, num_states, num_actions):
    """Average double-estimator outer products over the subspace split.

    estimate_pairs: list of (SegmentEstimate for segment 1, segment 2).
    Returns (m_hats: dict sa -> S x S, d_hat: SA x SA, n_traj: int vector).
    A trajectory contributes to m_hats[sa] only when it observed (s,a) in
    both segments; every trajectory contributes to d_hat.
    """
    if not estimate_pairs:
        raise ValueError("empty subspace split")
    S, A = num_states, num_actions
    n_traj = np.zeros(S * A, dtype=np.int64)
    sums: dict[int, np.ndarray] = {}
    d_hat = np.zeros((S * A, S * A))
    for e1, e2 in estimate_pairs:
        for sa in e1.trans.keys() & e2.trans.keys():
            n_traj[sa] += 1
            acc = sums.get(sa)
            if acc is None:
                acc = np.zeros((S, S))
                sums[sa] = acc
            acc += np.outer(e1.trans[sa], e2.trans[sa])
        d_hat += np.outer(e1.occupancy, e2.occupancy)
    d_hat /= len(estimate_pairs)
    m_hats = {sa: acc / n_traj[sa] for sa, acc in sums.items()}
    return m_hats, d_hat, n_traj


def top_k_projector(m_sym, rank) -> np.ndarray:
    """Orthonormal rows spanning the top-`rank` eigenspace by |eigenvalue|.

    The caller passes an already symmetrized matrix.
    """
    dim = m_sym.shape[0]
    if rank > dim:
        raise ValueError(f"rank {rank} exceeds dimension {dim}")
    try:
        evals, evecs = np.linalg.eigh(m_sym)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(None, exc) from exc
    order = np.argsort(-np.abs(evals), kind="stable")
    return np.ascontiguousarray(evecs[:, order[:rank]].T)


def sorted_spectrum(m_sym) -> np.ndarray:
    evals = np.linalg.eigvalsh(m_sym)
    return evals[np.argsort(-np.abs(evals), kind="stable")]


def build_subspace_bank(estimate_pairs, rank, num_states, num_actions) -> SubspaceBank:
    """Run the full subspace stage over the subspace split."""
    S, A = num_states, num_actions
    m_hats, d_hat, n_traj = accumulate_moments(estimate_pairs, S, A)
    projectors = np.zeros((S * A, rank, S))
    spectra = np.zeros((S * A, S))
    for sa, m in m_hats.items():
        m_sym = 0.5 * (m + m.T)
        try:
            projectors[sa] = top_k_projector(m_sym, rank)
        except EigenSolverError as exc:
            raise EigenSolverError(divmod(sa, A), exc.__cause__) from exc
        spectra[sa] = sorted_spectrum(m_sym)
    u = top_k_projector(0.5 * (d_hat + d_hat.T), rank)
    return SubspaceBank(
        num_states=S,
        num_actions=A,
        rank=rank,
        projectors=projectors,
        occupancy_projector=u,
        n_traj=n_traj,
        spectra=spectra,
    )


def eigen_energy_profile(bank: SubspaceBank) -> np.ndarray:
    """Mean squared eigenvalue per rank over the observed (s,a) pairs."""
    observed = bank.n_traj > 0
    if not observed.any():
        return np.zeros(bank.num_states)
    return (bank.spectra[observed] ** 2).mean(axis=0)


def choose_rank(profile, factor=10.0, max_rank=None) -> int:
    """Smallest rank r whose energy ratio to rank r+1 exceeds `factor`."""
    limit = len(profile) - 1 if max_rank is None else min(max_rank, len(profile) - 1)
    for r in range(1, limit + 1):
        nxt = profile[r]
        if nxt <= 0:
            return r
        if profile[r - 1] / nxt > factor:
            return r
    raise ValueError(f"no rank with energy ratio above {factor}; profile={profile[:8]}")
