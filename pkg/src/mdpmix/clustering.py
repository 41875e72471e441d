"""Pairwise double-estimator distances, threshold selection and graph clustering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import squareform
from sklearn.cluster import KMeans

from . import _kernels


class EmptyFrequentSetError(ValueError):
    pass


class ThresholdError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise distance estimates over the clustering split."""

    ids: list[int]
    dist1: np.ndarray = field(repr=False)
    dist2: np.ndarray = field(repr=False)
    dist: np.ndarray = field(repr=False)
    weight: float = 1.0  # convex weight on dist1
    frequent: tuple = ()

    def off_diagonal(self) -> np.ndarray:
        n = self.dist.shape[0]
        iu = np.triu_indices(n, k=1)
        return self.dist[iu]


def frequent_pairs(tables, beta, segments=(1, 2)):
    """State-action pairs whose share of recorded segment observations exceeds beta."""
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    counts: dict[int, int] = {}
    total = 0
    for table in tables:
        for i in segments:
            for sa, vec in table.seg[i].items():
                c = int(vec.sum())
                counts[sa] = counts.get(sa, 0) + c
                total += c
    if total == 0:
        raise EmptyFrequentSetError("no recorded observations in the clustering split")
    freq = sorted(sa for sa, c in counts.items() if c / total > beta)
    if not freq:
        top = max(counts.values()) / total
        raise EmptyFrequentSetError(
            f"no (s,a) pair above beta={beta}; maximum observed frequency is {top:.4f}"
        )
    return freq


def _project_estimates(estimate_pairs, projectors, freq):
    """Stack V_{s,a}^T P_hat_{n,i}(.|s,a) into (N, 2, F, K) plus occupancies."""
    n = len(estimate_pairs)
    rank = projectors.shape[1]
    sa_index = {sa: f for f, sa in enumerate(freq)}
    proj = np.zeros((n, 2, len(freq), rank))
    occ = np.zeros((n, 2, projectors.shape[0]))
    for idx, pair in enumerate(estimate_pairs):
        for i, est in enumerate(pair):
            occ[idx, i] = est.occupancy
            for sa, row in est.trans.items():
                f = sa_index.get(sa)
                if f is not None:
                    proj[idx, i, f] = projectors[sa] @ row
    return proj, occ


def compute_distances(estimate_pairs, bank, freq, weight=1.0) -> DistanceMatrix:
    """dist1/dist2/dist for all pairs in the clustering split.

    dist1(n,m) maxes the per-(s,a) inner product of projected segment-1 and
    segment-2 differences over the frequent set; dist2 is the projected
    occupancy inner product.  Both are exactly symmetric with zero diagonal.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    proj, occ = _project_estimates(estimate_pairs, bank.projectors, freq)
    dist1 = _kernels.pairwise_max_inner(
        np.ascontiguousarray(proj[:, 0]), np.ascontiguousarray(proj[:, 1])
    )
    b1 = occ[:, 0] @ bank.occupancy_projector.T
    b2 = occ[:, 1] @ bank.occupancy_projector.T
    s = np.einsum("nk,nk->n", b1, b2)
    g = b1 @ b2.T
    dist2 = s[:, None] + s[None, :] - g - g.T
    np.fill_diagonal(dist2, 0.0)
    dist = weight * dist1 + (1.0 - weight) * dist2
    np.fill_diagonal(dist, 0.0)
    return DistanceMatrix(
        ids=[p[0].traj_id for p in estimate_pairs],
        dist1=dist1,
        dist2=dist2,
        dist=dist,
        weight=weight,
        frequent=tuple(freq),
    )


def suggest_threshold(values, grid_size=512):
    """First KDE valley after the mode nearest zero, over off-diagonal distances.

    Returns (tau, grid, density).  Raises ThresholdError when the density is
    unimodal (set the threshold manually in that case).
    """
    values = np.asarray(values, dtype=np.float64)
    if np.unique(values).size < 2:
        raise ThresholdError("need at least 2 distinct distance values")
    kde = stats.gaussian_kde(values, bw_method="silverman")
    lo, hi = values.min(), values.max()
    pad = 0.05 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, grid_size)
    density = kde(grid)
    interior = np.arange(1, grid_size - 1)
    is_max = (density[interior] >= density[interior - 1]) & (
        density[interior] > density[interior + 1]
    )
    is_min = (density[interior] <= density[interior - 1]) & (
        density[interior] < density[interior + 1]
    )
    maxima = interior[is_max]
    minima = interior[is_min]
    if len(maxima) < 2:
        raise ThresholdError(
            "distance density looks unimodal; pass an explicit threshold instead"
        )
    first_mode = maxima[np.argmin(np.abs(grid[maxima]))]
    after = minima[minima > first_mode]
    if len(after) == 0:
        raise ThresholdError(
            "no valley after the first mode; pass an explicit threshold instead"
        )
    return float(grid[after[0]]), grid, density


def cluster_graph(simil, num_clusters, backend="spectral", seed=0, dist=None):
    """Cluster the similarity graph into num_clusters labels.

    backends: "spectral" (normalized Laplacian + k-means), "components"
    (connected components merged/split to K by size), "agglomerative"
    (average linkage on the raw distances, which must be passed as `dist`).
    """
    simil = np.asarray(simil)
    n = simil.shape[0]
    if num_clusters > n:
        raise ValueError(f"K={num_clusters} exceeds {n} trajectories")
    if not np.array_equal(simil, simil.T):
        raise ValueError("similarity matrix must be symmetric")
    if not np.all(np.diag(simil)):
        raise ValueError("similarity matrix must have a true diagonal")
    if backend == "spectral":
        return _spectral_labels(simil.astype(np.float64), num_clusters, seed, dist)
    if backend == "components":
        return _component_labels(simil, num_clusters, dist)
    if backend == "agglomerative":
        if dist is None:
            raise ValueError("agglomerative backend needs the raw distance matrix")
        return _agglomerative_labels(dist, num_clusters)
    raise ValueError(f"unknown backend {backend!r}")


def _spectral_labels(adj, k, seed, dist=None):
    # Tiny connected components (stragglers with no reliable edges) would
    # otherwise own the bottom Laplacian eigenvectors and hide the real cut,
    # so spectral clustering runs on the core subgraph and the stragglers are
    # attached afterwards by mean distance to each cluster.
    n = len(adj)
    n_comp, comp = connected_components(csr_matrix(adj), directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    min_core = max(2, int(0.01 * n))
    core_comps = np.flatnonzero(sizes >= min_core)
    if 0 < len(core_comps) < n_comp:
        core = np.isin(comp, core_comps)
        if core.sum() < k:
            core = np.ones(n, dtype=bool)
    else:
        core = np.ones(n, dtype=bool)
    labels = np.empty(n, dtype=np.int64)
    idx = np.flatnonzero(core)
    labels[idx] = _spectral_embed_kmeans(adj[np.ix_(idx, idx)], k, seed)
    rest = np.flatnonzero(~core)
    for i in rest:
        if dist is not None:
            means = []
            for c in range(k):
                members = idx[labels[idx] == c]
                means.append(dist[i, members].mean() if len(members) else np.inf)
            labels[i] = int(np.argmin(means))
        else:
            labels[i] = 0
    return labels


def _spectral_embed_kmeans(adj, k, seed):
    deg = adj.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    lap = np.eye(len(adj)) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    evals, evecs = np.linalg.eigh(lap)
    emb = evecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    km = KMeans(n_clusters=k, init="k-means++", n_init=50, random_state=seed)
    return km.fit_predict(emb)


def _component_labels(simil, k, dist):
    graph = csr_matrix(simil)
    n_comp, comp = connected_components(graph, directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    order = np.argsort(-sizes, kind="stable")
    if n_comp >= k:
        # keep the k-1 largest components, pool the rest
        relabel = np.full(n_comp, k - 1, dtype=np.int64)
        for new, old in enumerate(order[: k - 1]):
            relabel[old] = new
        return relabel[comp]
    # too few components: split the largest ones by average linkage
    labels = np.empty(len(comp), dtype=np.int64)
    n_extra = k - n_comp
    splits = np.ones(n_comp, dtype=np.int64)
    for _ in range(n_extra):
        # split the component with the largest size per assigned label
        target = np.argmax(sizes / splits)
        splits[target] += 1
    next_label = 0
    for old in order:
        members = np.flatnonzero(comp == old)
        parts = splits[old]
        if parts == 1 or len(members) < parts:
            labels[members] = next_label
            next_label += 1
            continue
        sub = _agglomerative_labels(dist[np.ix_(members, members)], parts)
        labels[members] = next_label + sub
        next_label += parts
    return labels


def _agglomerative_labels(dist, k):
    d = np.array(dist, dtype=np.float64, copy=True)
    d -= d.min()  # linkage requires nonnegative dissimilarities
    np.fill_diagonal(d, 0.0)
    z = linkage(squareform(d, checks=False), method="average")
    return fcluster(z, t=k, criterion="maxclust") - 1


def separation_scatter(estimate_pairs, bank, tables, pair_sample=None, seed=0):
    """Per-(s,a) mean pairwise inner product vs empirical occupancy.

    Returns (mean_gap, occupancy), both length S*A.  mean_gap[sa] averages the
    per-(s,a) dist1 term over sampled trajectory pairs; occupancy[sa] is the
    share of all whole-trajectory observations landing on (s,a).
    """
    S, A = bank.num_states, bank.num_actions
    all_sa = list(range(S * A))
    proj, _ = _project_estimates(estimate_pairs, bank.projectors, all_sa)
    n = len(estimate_pairs)
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if pair_sample is not None and pair_sample < len(pairs):
        idx = rng.choice(len(pairs), size=pair_sample, replace=False)
        pairs = [pairs[i] for i in idx]
    mean_gap = np.zeros(S * A)
    for i, j in pairs:
        diff1 = proj[i, 0] - proj[j, 0]
        diff2 = proj[i, 1] - proj[j, 1]
        mean_gap += np.einsum("fk,fk->f", diff1, diff2)
    if pairs:
        mean_gap /= len(pairs)
    occ = np.zeros(S * A)
    for table in tables:
        for sa, vec in table.whole.items():
            occ[sa] += vec.sum()
    total = occ.sum()
    if total > 0:
        occ /= total
    return mean_gap, occ


def suggest_beta(mean_gap, occupancy, gap_quantile=0.75, margin=0.999):
    """Pick beta so the frequent set keeps the high-gap, high-occupancy pairs."""
    observed = occupancy > 0
    if not observed.any():
        raise EmptyFrequentSetError("no observations to pick beta from")
    gaps = mean_gap[observed]
    cutoff = np.quantile(gaps, gap_quantile)
    candidates = observed & (mean_gap >= cutoff)
    if not candidates.any():
        candidates = observed
    return float(occupancy[candidates].min() * margin)
