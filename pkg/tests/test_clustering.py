"""Frequent pairs, pairwise distances, threshold selection and graph clustering."""

import numpy as np
import pytest

from mdpmix.clustering import (
    DistanceMatrix,
    EmptyFrequentSetError,
    ThresholdError,
    cluster_graph,
    compute_distances,
    frequent_pairs,
    separation_scatter,
    suggest_beta,
    suggest_threshold,
)
from mdpmix.core import MarkovMixture, SegmentScheme, segment_trajectory
from mdpmix.estimators import SegmentEstimate, segment_estimates
from mdpmix.harness import default_blocks, permutation_accuracy
from mdpmix.simulator import build_random_mixture, sample_dataset
from mdpmix.subspace import SubspaceBank, build_subspace_bank


def _tables(dataset, S, A, blocks=None):
    horizon = dataset[0].horizon
    scheme = SegmentScheme(horizon, blocks or default_blocks(horizon))
    return [segment_trajectory(t, scheme, S, A) for t in dataset]


def _pairs(tables):
    return [(segment_estimates(t, 1), segment_estimates(t, 2)) for t in tables]


# ---------------------------------------------------------------- frequent set


def test_beta_zero_keeps_all_observed_pairs():
    mixture, _ = build_random_mixture(4, 1, 2, 1.0, seed=0)
    tables = _tables(sample_dataset(mixture, 10, 100, seed=1), 4, 1)
    freq = frequent_pairs(tables, beta=0.0)
    observed = set()
    for table in tables:
        for i in (1, 2):
            observed |= set(table.seg[i])
    assert set(freq) == observed


def test_single_pair_dominates_any_beta():
    scheme = SegmentScheme(horizon=8, blocks_per_segment=1)
    table_args = dict(num_states=2, num_actions=1, scheme=scheme, whole={})
    from mdpmix.core import CountTable

    tables = [
        CountTable(traj_id=i, seg={1: {3: np.array([2, 1])}, 2: {3: np.array([1, 1])}},
                   **table_args)
        for i in range(3)
    ]
    assert frequent_pairs(tables, beta=0.99) == [3]


def test_frequent_pairs_match_exhaustive_count_oracle():
    mixture, _ = build_random_mixture(3, 1, 2, 1.0, seed=5)
    tables = _tables(sample_dataset(mixture, 20, 100, seed=2), 3, 1)
    freq = frequent_pairs(tables, beta=0.1)

    counts = np.zeros(3)
    for table in tables:
        for i in (1, 2):
            for sa, vec in table.seg[i].items():
                counts[sa] += vec.sum()
    expected = [sa for sa in range(3) if counts[sa] / counts.sum() > 0.1]
    assert freq == expected


def test_empty_frequent_set_reports_max_frequency():
    mixture, _ = build_random_mixture(3, 1, 2, 1.0, seed=5)
    tables = _tables(sample_dataset(mixture, 5, 100, seed=2), 3, 1)
    with pytest.raises(EmptyFrequentSetError, match="maximum observed frequency"):
        frequent_pairs(tables, beta=0.999)


# ------------------------------------------------------------------- distances


def _exact_bank(S, A, rank=None):
    rank = rank or S
    return SubspaceBank(
        num_states=S,
        num_actions=A,
        rank=rank,
        projectors=np.repeat(np.eye(S)[None, :rank], S * A, axis=0),
        occupancy_projector=np.eye(S * A)[:rank],
        n_traj=np.ones(S * A, dtype=np.int64),
        spectra=np.zeros((S * A, S)),
    )


def _manual_est(trans, occ, traj_id, segment):
    return SegmentEstimate(
        traj_id=traj_id, segment=segment, num_states=2, num_actions=1,
        trans={sa: np.asarray(v, float) for sa, v in trans.items()},
        occupancy=np.asarray(occ, float),
    )


def _orthogonal_chain_pairs():
    e0, e1 = np.eye(2)
    pair_a = (
        _manual_est({0: e1, 1: e0}, [0.5, 0.5], 0, 1),
        _manual_est({0: e1, 1: e0}, [0.5, 0.5], 0, 2),
    )
    pair_b = (
        _manual_est({0: e0}, [1.0, 0.0], 1, 1),
        _manual_est({0: e0}, [1.0, 0.0], 1, 2),
    )
    return [pair_a, pair_b]


def test_self_distance_is_zero():
    distm = compute_distances(_orthogonal_chain_pairs(), _exact_bank(2, 1), [0, 1])
    assert distm.dist[0, 0] == 0.0 and distm.dist[1, 1] == 0.0
    assert distm.dist1[0, 0] == 0.0 and distm.dist2[0, 0] == 0.0


def test_orthogonal_deterministic_chains_have_distance_two():
    distm = compute_distances(_orthogonal_chain_pairs(), _exact_bank(2, 1), [0, 1])
    assert distm.dist1[0, 1] == pytest.approx(2.0, abs=1e-12)
    assert distm.dist[0, 1] == distm.dist[1, 0]


def test_zero_weight_reduces_to_occupancy_distance():
    pairs = _orthogonal_chain_pairs()
    distm = compute_distances(pairs, _exact_bank(2, 1), [0, 1], weight=0.0)
    assert np.array_equal(distm.dist, distm.dist2)
    with pytest.raises(ValueError):
        compute_distances(pairs, _exact_bank(2, 1), [0, 1], weight=1.5)


def test_sampled_orthogonal_chains_reach_the_closed_form():
    swap = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    stay = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    mixture = MarkovMixture(
        num_states=2,
        num_actions=1,
        kernels=np.stack([swap, stay]),
        policies=np.ones((2, 2, 1)),
        start_dists=np.array([[1.0, 0.0], [1.0, 0.0]]),
        weights=np.array([0.5, 0.5]),
    )
    dataset = sample_dataset(mixture, 20, 400, seed=0)
    tables = _tables(dataset, 2, 1, blocks=10)
    pairs = _pairs(tables)
    bank = build_subspace_bank(pairs, 2, 2, 1)
    distm = compute_distances(pairs, bank, frequent_pairs(tables, 0.0))
    labels = np.array([t.true_label for t in dataset])
    cross = distm.dist[np.ix_(labels == 0, labels == 1)]
    within0 = distm.dist[np.ix_(labels == 0, labels == 0)]
    assert np.allclose(cross, 2.0, atol=1e-9)
    assert np.allclose(within0, 0.0, atol=1e-9)


def test_distance_matrix_off_diagonal_shape():
    distm = compute_distances(_orthogonal_chain_pairs(), _exact_bank(2, 1), [0, 1])
    assert distm.off_diagonal().shape == (1,)
    assert distm.ids == [0, 1]


# ------------------------------------------------------------------- threshold


def test_threshold_separates_two_point_masses():
    values = np.r_[np.zeros(300), np.ones(300)]
    tau, grid, density = suggest_threshold(values)
    assert 0.1 < tau < 0.9
    assert len(grid) == len(density) == 512


def test_threshold_rejects_unimodal_values():
    rng = np.random.default_rng(0)
    with pytest.raises(ThresholdError):
        suggest_threshold(rng.standard_normal(500))
    with pytest.raises(ThresholdError):
        suggest_threshold(np.ones(10))


def test_auto_threshold_pairwise_accuracy_on_separated_gridworld(separated_run):
    res, truth, _ = separated_run
    labels = np.array([truth[i] for i in res.ids_clust])
    n = len(labels)
    iu = np.triu_indices(n, k=1)
    same = labels[iu[0]] == labels[iu[1]]
    predicted_same = res.distances.dist[iu] <= res.tau
    assert (predicted_same == same).mean() >= 0.95


# ------------------------------------------------------------------ clustering


def _block_simil(sizes, flips=()):
    n = sum(sizes)
    simil = np.zeros((n, n), dtype=bool)
    start = 0
    blocks = []
    for size in sizes:
        simil[start : start + size, start : start + size] = True
        blocks.append(list(range(start, start + size)))
        start += size
    for i, j in flips:
        simil[i, j] = simil[j, i] = True
    np.fill_diagonal(simil, True)
    return simil, blocks


@pytest.mark.parametrize("backend", ["spectral", "components", "agglomerative"])
def test_perfect_block_diagonal_recovered(backend):
    simil, blocks = _block_simil([10, 10])
    dist = 1.0 - simil.astype(float)
    labels = cluster_graph(simil, 2, backend=backend, dist=dist)
    truth = np.array([0] * 10 + [1] * 10)
    acc, _ = permutation_accuracy(labels, truth, 2)
    assert acc == 1.0


def test_single_cluster_all_ones():
    simil = np.ones((6, 6), dtype=bool)
    labels = cluster_graph(simil, 1, backend="spectral", dist=np.zeros((6, 6)))
    assert set(labels) == {0}


def _exhaustive_min_cut(simil):
    """Brute-force best 2-partition by cut size over all nontrivial splits."""
    n = len(simil)
    adj = simil.astype(np.int64)
    np.fill_diagonal(adj, 0)
    masks = ((np.arange(1, 2 ** (n - 1))[:, None] >> np.arange(n)) & 1).astype(bool)
    inside = masks @ adj  # (n_masks, n): weighted degree into the mask
    cuts = (inside * ~masks).sum(axis=1)
    best = masks[np.argmin(cuts)]
    return best.astype(np.int64)


@pytest.mark.parametrize("backend", ["spectral", "agglomerative"])
def test_planted_two_block_graph_matches_min_cut_oracle(backend):
    simil, _ = _block_simil([10, 10], flips=[(0, 10), (5, 15)])
    dist = 1.0 - simil.astype(float)
    labels = cluster_graph(simil, 2, backend=backend, dist=dist)
    oracle = _exhaustive_min_cut(simil)
    acc, _ = permutation_accuracy(labels, oracle, 2)
    assert acc == 1.0
    # and the oracle itself recovers the planted blocks
    assert permutation_accuracy(oracle, np.r_[np.zeros(10), np.ones(10)].astype(int), 2)[0] == 1.0


def test_cluster_graph_input_validation():
    simil = np.ones((4, 4), dtype=bool)
    bad = simil.copy()
    bad[0, 1] = False
    with pytest.raises(ValueError, match="symmetric"):
        cluster_graph(bad, 2)
    no_diag = simil.copy()
    np.fill_diagonal(no_diag, False)
    with pytest.raises(ValueError, match="diagonal"):
        cluster_graph(no_diag, 2)
    with pytest.raises(ValueError, match="exceeds"):
        cluster_graph(simil, 5)
    with pytest.raises(ValueError, match="agglomerative"):
        cluster_graph(simil, 2, backend="agglomerative")
    with pytest.raises(ValueError, match="unknown backend"):
        cluster_graph(simil, 2, backend="bogus")


def test_components_backend_splits_when_too_few_components():
    # one connected blob but two well-separated distance clusters
    simil, _ = _block_simil([20])
    rng = np.random.default_rng(0)
    dist = rng.random((20, 20)) * 0.01
    dist[10:, :10] += 1.0
    dist[:10, 10:] += 1.0
    dist = (dist + dist.T) / 2
    np.fill_diagonal(dist, 0.0)
    labels = cluster_graph(simil, 2, backend="components", dist=dist)
    truth = np.array([0] * 10 + [1] * 10)
    assert permutation_accuracy(labels, truth, 2)[0] == 1.0


def test_spectral_straggler_attachment():
    # 2 clean blocks plus one isolated node: the singleton must not own an
    # eigenvector; it attaches to the cluster it is closest to in distance
    simil, _ = _block_simil([10, 10, 1])
    dist = 1.0 - simil.astype(float)
    dist[20, :10] = 0.2  # closest to the first block
    dist[:10, 20] = 0.2
    labels = cluster_graph(simil, 2, backend="spectral", dist=dist)
    truth = np.array([0] * 10 + [1] * 10 + [0])
    assert permutation_accuracy(labels, truth, 2)[0] == 1.0
    assert labels[20] == labels[0]


# ---------------------------------------------------------- separation scatter


def test_identical_model_control_has_flat_scatter():
    mixture, _ = build_random_mixture(6, 1, 1, 1.0, seed=2)
    dataset = sample_dataset(mixture, 40, 2000, seed=3)
    tables = _tables(dataset, 6, 1)
    pairs = _pairs(tables)
    bank = build_subspace_bank(pairs, 2, 6, 1)
    mean_gap, occ = separation_scatter(pairs, bank, tables, seed=0)
    assert np.abs(mean_gap).max() < 0.05
    assert occ.sum() == pytest.approx(1.0, abs=1e-12)


def test_planted_pair_dominates_the_scatter():
    mixture, info = build_random_mixture(10, 1, 2, 1.2, seed=3)
    s_star, a_star = info["pair"]
    dataset = sample_dataset(mixture, 40, 2000, seed=4)
    tables = _tables(dataset, 10, 1)
    pairs = _pairs(tables)
    bank = build_subspace_bank(pairs, 2, 10, 1)
    mean_gap, occ = separation_scatter(pairs, bank, tables, seed=0)
    assert np.argmax(mean_gap) == s_star * 1 + a_star
    assert occ.sum() == pytest.approx(1.0, abs=1e-12)

    beta = suggest_beta(mean_gap, occ)
    assert 0.0 < beta <= occ[s_star * 1 + a_star]


def test_suggest_beta_rejects_empty_occupancy():
    with pytest.raises(EmptyFrequentSetError):
        suggest_beta(np.zeros(4), np.zeros(4))


def test_pair_subsampling_is_seeded():
    mixture, _ = build_random_mixture(6, 1, 2, 1.0, seed=2)
    dataset = sample_dataset(mixture, 30, 1000, seed=3)
    tables = _tables(dataset, 6, 1)
    pairs = _pairs(tables)
    bank = build_subspace_bank(pairs, 2, 6, 1)
    g1, _ = separation_scatter(pairs, bank, tables, pair_sample=50, seed=9)
    g2, _ = separation_scatter(pairs, bank, tables, pair_sample=50, seed=9)
    assert np.array_equal(g1, g2)
