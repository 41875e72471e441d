"""End-to-end pipeline orchestration, metrics, and the experiment sweep runner."""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import clustering, em, inference, subspace
from .core import SegmentScheme, segment_trajectory, split_dataset
from .estimators import segment_estimates
from .simulator import GridworldSpec, build_gridworld_mixture, build_random_mixture, sample_dataset

RESULTS_SCHEMA = "mdpmix-results-v1"
DISTHIST_SCHEMA = "mdpmix-disthist-v1"
EIGEN_SCHEMA = "mdpmix-eigen-v1"
BLOCK_SCHEMA = "mdpmix-block-v1"
LOGLIK_SCHEMA = "mdpmix-loglik-v1"


def permutation_accuracy(pred, true, num_components):
    """Label accuracy maximized over relabelings of the predicted clusters.

    Exhaustive over K! for K <= 6, assignment matching above; K > 12 rejected.
    """
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError("label vectors must have equal length")
    K = num_components
    if K > 12:
        raise ValueError("K > 12 not supported")
    if pred.min() < 0 or pred.max() >= K or true.min() < 0 or true.max() >= K:
        raise ValueError("labels out of range")
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (pred, true), 1)
    if K <= 6:
        best_hits, best_perm = -1, None
        for perm in itertools.permutations(range(K)):
            hits = sum(conf[i, perm[i]] for i in range(K))
            if hits > best_hits:
                best_hits, best_perm = hits, perm
    else:
        rows, cols = linear_sum_assignment(-conf)
        best_perm = [0] * K
        for r, c in zip(rows, cols):
            best_perm[r] = c
        best_hits = conf[rows, cols].sum()
        best_perm = tuple(best_perm)
    return best_hits / len(pred), best_perm


def random_projector(num_states, dim, seed) -> np.ndarray:
    """Orthonormal dim x num_states matrix from a seeded Gaussian draw."""
    if dim > num_states:
        raise ValueError("dim must not exceed the ambient dimension")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((num_states, dim)))
    return np.ascontiguousarray(q.T)


def default_blocks(horizon, t_mix_guess=25):
    """G = (T_n / t_mix)^(2/3), clipped so every sub-block is nonempty."""
    g = int((horizon / t_mix_guess) ** (2.0 / 3.0))
    return max(1, min(g, horizon // 4))


@dataclass(frozen=True)
class PipelineOptions:
    num_components: int
    sub_fraction: float = 0.5
    mode: str = "full"
    blocks: int | None = None  # None -> default_blocks(T_n)
    beta: float | str = 0.0
    tau: float | str = "auto"
    weight: float = 1.0
    backend: str = "spectral"
    projector: str = "learned"  # "learned" | "identity" | "random:<dim>"
    em_init: str | None = None  # None | "labels" | "models" | "random"
    em_variant: str = "full"
    em_mode: str = "soft"
    em_scope_freq: bool = True  # restricted variant scoped to the frequent set
    softening: float = 0.2
    em_tol: float = 1e-6
    em_max_iter: int = 200
    em_restarts: int = 30
    seed: int = 0
    num_states: int | None = None  # None -> inferred from the data
    num_actions: int | None = None


@dataclass
class PipelineResult:
    options: PipelineOptions
    clustering_accuracy: float | None
    end_to_end_accuracy: float | None
    labels_clust: np.ndarray
    labels_all: np.ndarray
    ids_clust: list
    ids_all: list
    true_all: np.ndarray | None
    tau: float
    frequent: tuple
    distances: clustering.DistanceMatrix = field(repr=False)
    bank: subspace.SubspaceBank = field(repr=False)
    mixture_estimate: inference.MixtureEstimate | None = field(repr=False, default=None)
    em_state: em.EmState | None = field(repr=False, default=None)
    restart_stats: list = field(default_factory=list)  # (loglik, accuracy) per restart


def _substitute_projectors(bank, kind, num_states, num_actions, seed):
    S, A = num_states, num_actions
    if kind == "identity":
        v = np.eye(S)
        u = np.eye(S * A)
        rank = S
    elif kind.startswith("random:"):
        dim = int(kind.split(":", 1)[1])
        v = random_projector(S, dim, seed)
        u = random_projector(S * A, min(dim, S * A), seed + 1)
        rank = dim
    else:
        raise ValueError(f"unknown projector variant {kind!r}")
    return subspace.SubspaceBank(
        num_states=S,
        num_actions=A,
        rank=rank,
        projectors=np.repeat(v[None], S * A, axis=0),
        occupancy_projector=u,
        n_traj=bank.n_traj,
        spectra=bank.spectra,
    )


def run_pipeline(trajectories, opts: PipelineOptions) -> PipelineResult:
    """subspace -> cluster -> [EM] -> estimate -> classify, with metrics when labels exist."""
    K = opts.num_components
    horizon = trajectories[0].horizon
    S = opts.num_states or (max(int(t.states.max()) for t in trajectories) + 1)
    A = opts.num_actions or (max(int(t.actions.max()) for t in trajectories) + 1)
    blocks = opts.blocks if opts.blocks is not None else default_blocks(horizon)
    scheme = SegmentScheme(horizon=horizon, blocks_per_segment=blocks, mode=opts.mode)

    sub, clust = split_dataset(trajectories, opts.sub_fraction, opts.seed)
    tables_sub = [segment_trajectory(t, scheme, S, A) for t in sub]
    tables_clust = [segment_trajectory(t, scheme, S, A) for t in clust]
    pairs_sub = [(segment_estimates(t, 1), segment_estimates(t, 2)) for t in tables_sub]
    pairs_clust = [(segment_estimates(t, 1), segment_estimates(t, 2)) for t in tables_clust]

    bank = subspace.build_subspace_bank(pairs_sub, K, S, A)
    if opts.projector != "learned":
        bank = _substitute_projectors(bank, opts.projector, S, A, opts.seed)

    if opts.beta == "auto":
        gap, occ = clustering.separation_scatter(
            pairs_clust, bank, tables_clust, pair_sample=2000, seed=opts.seed
        )
        beta = clustering.suggest_beta(gap, occ)
    else:
        beta = float(opts.beta)
    freq = clustering.frequent_pairs(tables_clust, beta)

    distm = clustering.compute_distances(pairs_clust, bank, freq, opts.weight)
    if opts.tau == "auto":
        tau, _, _ = clustering.suggest_threshold(distm.off_diagonal())
    else:
        tau = float(opts.tau)
    simil = distm.dist <= tau
    np.fill_diagonal(simil, True)
    labels_clust = cluster_graph_labels = clustering.cluster_graph(
        simil, K, backend=opts.backend, seed=opts.seed, dist=distm.dist
    )

    data_clust = em.build_em_data(tables_clust)
    estimate = inference.build_mixture_estimate(labels_clust, tables_clust, data_clust, K)
    labels_sub, _, _ = inference.classify(pairs_sub, estimate, freq, opts.weight)

    tables_all = tables_clust + tables_sub
    labels_all = np.concatenate([labels_clust, labels_sub])
    ids_clust = [t.id for t in clust]
    ids_all = ids_clust + [t.id for t in sub]

    em_state = None
    restart_stats = []
    true_map = {t.id: t.true_label for t in trajectories}
    true_all = None
    if all(v is not None for v in true_map.values()):
        true_all = np.array([true_map[i] for i in ids_all], dtype=np.int64)

    if opts.em_init is not None:
        data_all = em.build_em_data(tables_all)
        scope = freq if (opts.em_variant == "restricted" and opts.em_scope_freq) else None
        if opts.em_init == "labels":
            init = em.em_init_from_labels(labels_all, K, opts.softening)
            em_state = em.run_em(
                init, data_all, variant=opts.em_variant, mode=opts.em_mode,
                scope=scope, max_iter=opts.em_max_iter, tol=opts.em_tol,
            )
        elif opts.em_init == "models":
            init_clust = em.em_init_from_labels(labels_clust, K, opts.softening)
            params0 = em.m_step(init_clust, data_clust, variant=opts.em_variant,
                                scope=em._scope_mask(S, A, scope))
            resp0, _, _ = em.e_step(params0, data_all, mode=opts.em_mode)
            em_state = em.run_em(
                resp0, data_all, variant=opts.em_variant, mode=opts.em_mode,
                scope=scope, max_iter=opts.em_max_iter, tol=opts.em_tol,
            )
        elif opts.em_init == "random":
            best = None
            for r in range(opts.em_restarts):
                init = em.random_responsibilities(
                    data_all.n_traj, K, np.random.SeedSequence((opts.seed, r))
                )
                state = em.run_em(
                    init, data_all, variant=opts.em_variant, mode=opts.em_mode,
                    scope=scope, max_iter=opts.em_max_iter, tol=opts.em_tol,
                )
                acc = None
                if true_all is not None:
                    acc, _ = permutation_accuracy(
                        np.argmax(state.responsibilities, axis=1), true_all, K
                    )
                restart_stats.append((float(state.loglik_trace[-1]), acc))
                if best is None or state.loglik_trace[-1] > best.loglik_trace[-1]:
                    best = state
            em_state = best
        else:
            raise ValueError(f"unknown em_init {opts.em_init!r}")
        labels_all = np.argmax(em_state.responsibilities, axis=1)
        labels_clust = labels_all[: len(clust)]

    clustering_accuracy = end_to_end_accuracy = None
    if true_all is not None:
        clustering_accuracy, _ = permutation_accuracy(
            cluster_graph_labels, true_all[: len(clust)], K
        )
        end_to_end_accuracy, _ = permutation_accuracy(labels_all, true_all, K)

    return PipelineResult(
        options=opts,
        clustering_accuracy=clustering_accuracy,
        end_to_end_accuracy=end_to_end_accuracy,
        labels_clust=np.asarray(labels_clust),
        labels_all=labels_all,
        ids_clust=ids_clust,
        ids_all=ids_all,
        true_all=true_all,
        tau=tau,
        frequent=tuple(freq),
        distances=distm,
        bank=bank,
        mixture_estimate=estimate,
        em_state=em_state,
        restart_stats=restart_stats,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "gridworld"  # "gridworld" | "random"
    num_components: int = 2
    num_states: int = 64  # gridworld: width*height (must be a square grid)
    num_actions: int = 4
    adversarial_strength: float = 0.5
    delta_target: float = 1.2
    horizons: tuple = (40, 60, 70, 100, 140, 200)
    n_traj: int = 1000
    trials: int = 10
    seed: int = 0
    variants: tuple = ("learned",)  # projector kind or "<kind>+em:<init>"
    pipeline: PipelineOptions = None  # template; projector/em fields come from variants

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.horizons:
            raise ValueError("horizon sweep must be nonempty")
        if self.pipeline is None:
            object.__setattr__(
                self,
                "pipeline",
                PipelineOptions(
                    num_components=self.num_components,
                    beta=0.005,
                    num_states=self.num_states,
                    num_actions=self.num_actions,
                ),
            )


def build_scenario_mixture(config: ExperimentConfig):
    if config.scenario == "gridworld":
        side = int(round(np.sqrt(config.num_states)))
        if side * side != config.num_states:
            raise ValueError("gridworld scenario needs a square state count")
        spec = GridworldSpec(
            width=side, height=side, adversarial_strength=config.adversarial_strength
        )
        return build_gridworld_mixture(spec)
    if config.scenario == "random":
        mixture, _ = build_random_mixture(
            config.num_states,
            config.num_actions,
            config.num_components,
            config.delta_target,
            config.seed,
        )
        return mixture
    raise ValueError(f"unknown scenario {config.scenario!r}")


def _variant_options(template: PipelineOptions, variant: str, seed: int) -> PipelineOptions:
    projector, em_init = variant, None
    if "+em:" in variant:
        projector, em_init = variant.split("+em:", 1)
    return replace(template, projector=projector, em_init=em_init or None, seed=seed)


def run_experiment(config: ExperimentConfig, out_path, timer=time.perf_counter):
    """Sweep (variant, horizon, trial); one CSV row each; failures are flagged rows.

    All variants within a (horizon, trial) cell share the same generated data.
    Everything except the runtime column is deterministic in the config seed;
    pass a deterministic `timer` to make the CSV bytes fully reproducible.
    """
    mixture = build_scenario_mixture(config)
    rows = []
    for horizon in config.horizons:
        for trial in range(config.trials):
            data_seed = int(
                np.random.SeedSequence((config.seed, horizon, trial)).generate_state(1)[0]
            )
            dataset = sample_dataset(mixture, config.n_traj, horizon, data_seed)
            for variant in config.variants:
                opts = _variant_options(config.pipeline, variant, seed=data_seed)
                t0 = timer()
                try:
                    res = run_pipeline(dataset, opts)
                    err_cluster = (
                        "" if res.clustering_accuracy is None
                        else 1.0 - res.clustering_accuracy
                    )
                    err_total = (
                        "" if res.end_to_end_accuracy is None
                        else 1.0 - res.end_to_end_accuracy
                    )
                    loglik = (
                        float(res.em_state.loglik_trace[-1]) if res.em_state is not None else ""
                    )
                    flag = ""
                except (clustering.ThresholdError, clustering.EmptyFrequentSetError,
                        subspace.EigenSolverError, ValueError) as exc:
                    err_cluster = err_total = loglik = ""
                    flag = type(exc).__name__
                rows.append(
                    {
                        "experiment": config.scenario,
                        "variant": variant,
                        "horizon": horizon,
                        "trial": trial,
                        "clustering_error": err_cluster,
                        "end_to_end_error": err_total,
                        "loglik": loglik,
                        "runtime_sec": round(timer() - t0, 4),
                        "error_flag": flag,
                    }
                )
    write_results_csv(out_path, rows)
    return rows


def _write_csv(path, schema, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def write_results_csv(path, rows):
    _write_csv(
        path,
        RESULTS_SCHEMA,
        [
            "experiment", "variant", "horizon", "trial", "clustering_error",
            "end_to_end_error", "loglik", "runtime_sec", "error_flag",
        ],
        rows,
    )


def write_distance_histogram_csv(path, distm: clustering.DistanceMatrix, true_labels=None,
                                 bins=60):
    """Off-diagonal distance histogram plus pairwise accuracy per candidate threshold."""
    values = distm.off_diagonal()
    counts, edges = np.histogram(values, bins=bins)
    acc = [""] * bins
    if true_labels is not None:
        true_labels = np.asarray(true_labels)
        n = distm.dist.shape[0]
        iu = np.triu_indices(n, k=1)
        same = true_labels[iu[0]] == true_labels[iu[1]]
        for b in range(bins):
            predicted_same = values <= edges[b + 1]
            acc[b] = float((predicted_same == same).mean())
    rows = [
        {
            "bin_left": edges[b],
            "bin_right": edges[b + 1],
            "count": int(counts[b]),
            "threshold_accuracy": acc[b],
        }
        for b in range(bins)
    ]
    _write_csv(path, DISTHIST_SCHEMA, ["bin_left", "bin_right", "count", "threshold_accuracy"], rows)


def write_eigen_energy_csv(path, bank: subspace.SubspaceBank):
    profile = subspace.eigen_energy_profile(bank)
    rows = [{"rank": r + 1, "mean_energy": profile[r]} for r in range(len(profile))]
    _write_csv(path, EIGEN_SCHEMA, ["rank", "mean_energy"], rows)


def write_block_matrix_csv(path, distm: clustering.DistanceMatrix, labels):
    """Distance matrix with rows/columns sorted by cluster label (then id)."""
    labels = np.asarray(labels)
    order = np.lexsort((np.asarray(distm.ids), labels))
    sorted_mat = distm.dist[np.ix_(order, order)]
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={BLOCK_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["label"] + [str(labels[i]) for i in order])
        for r, i in enumerate(order):
            writer.writerow([str(labels[i])] + [repr(float(v)) for v in sorted_mat[r]])


def write_loglik_accuracy_csv(path, restart_stats):
    rows = [
        {"restart": i, "loglik": ll, "accuracy": "" if acc is None else acc}
        for i, (ll, acc) in enumerate(restart_stats)
    ]
    _write_csv(path, LOGLIK_SCHEMA, ["restart", "loglik", "accuracy"], rows)


def write_labels_csv(path, ids, labels, flags=None):
    rows = []
    for i, (tid, lab) in enumerate(zip(ids, labels)):
        row = {"id": int(tid), "label": int(lab)}
        if flags is not None:
            row["unclassifiable"] = int(flags[i])
        rows.append(row)
    fields = ["id", "label"] + (["unclassifiable"] if flags is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
