"""Command-line interface: generate, subspace, cluster, em, estimate, classify,
experiment, evaluate."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import clustering, em, harness, inference, subspace
from .core import (
    SegmentScheme,
    load_mixture,
    load_trajectories,
    save_mixture,
    save_trajectories,
    segment_trajectory,
    split_dataset,
)
from .estimators import segment_estimates
from .simulator import (
    GridworldSpec,
    build_gridworld_mixture,
    build_random_mixture,
    mixing_report,
    sample_dataset,
)


def _load_config(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _float_or_auto(value):
    return value if value == "auto" else float(value)


def _int_or_auto(value):
    return value if value == "auto" else int(value)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value file mirroring the flags")


def _add_split(p):
    p.add_argument("--sub-fraction", type=float, default=0.5)
    p.add_argument("--blocks", type=_int_or_auto, default="auto")
    p.add_argument("--mode", choices=["full", "discard"], default="full")


def build_parser():
    parser = argparse.ArgumentParser(prog="mdpmix")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a trajectory dataset from a scenario")
    _add_common(p)
    p.add_argument("--scenario", choices=["gridworld", "random"], default="gridworld")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--s", type=int, default=64)
    p.add_argument("--a", type=int, default=4)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta", type=float, default=0.5, help="gridworld adversarial strength")
    p.add_argument("--delta", type=float, default=1.2, help="random-scenario separation")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--sidecar", default=None, help="true-mixture JSON (default <out>.model.json)")

    p = sub.add_parser("subspace", help="estimate per-(s,a) projectors from the subspace split")
    _add_common(p)
    _add_split(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--k", type=_int_or_auto, default="auto")
    p.add_argument("--energy-factor", type=float, default=10.0)
    p.add_argument("--out", required=True, help="output bank .npz path")
    p.add_argument("--eigen-out", default=None, help="eigen-energy CSV path")

    p = sub.add_parser("cluster", help="pairwise distances and graph clustering")
    _add_common(p)
    _add_split(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--beta", type=_float_or_auto, default=0.0)
    p.add_argument("--tau", type=_float_or_auto, default="auto")
    p.add_argument("--weight", type=float, default=1.0, help="convex weight on dist1")
    p.add_argument("--backend", choices=["spectral", "components", "agglomerative"],
                   default="spectral")
    p.add_argument("--out", required=True, help="labels CSV path")
    p.add_argument("--hist-out", default=None)
    p.add_argument("--block-out", default=None)

    p = sub.add_parser("em", help="EM refinement over the whole dataset")
    _add_common(p)
    _add_split(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--variant", choices=["restricted", "full"], default="restricted")
    p.add_argument("--em-mode", choices=["soft", "hard"], default="soft")
    p.add_argument("--init", required=True,
                   help="labels CSV path, or random:<seed>:<restarts>")
    p.add_argument("--softening", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.0, help="restricted-variant scope")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out-resp", required=True)
    p.add_argument("--out-params", default=None)
    p.add_argument("--out-trace", default=None)

    p = sub.add_parser("estimate", help="per-cluster MLE models from a labels CSV")
    _add_common(p)
    _add_split(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--out", required=True, help="model JSON path")

    p = sub.add_parser("classify", help="label new trajectories against an estimated model")
    _add_common(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="seeded sweep over (variant, horizon, trial)")
    _add_common(p)
    _add_split(p)
    p.add_argument("--scenario", choices=["gridworld", "random"], default="gridworld")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--s", type=int, default=64)
    p.add_argument("--a", type=int, default=4)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=1.2)
    p.add_argument("--horizons", default="40,60,70,100,140,200")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--variants", default="learned",
                   help="comma list; e.g. learned,identity,random:2,learned+em:labels")
    p.add_argument("--beta", type=_float_or_auto, default=0.005)
    p.add_argument("--tau", type=_float_or_auto, default="auto")
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--backend", default="spectral")
    p.add_argument("--em-variant", choices=["restricted", "full"], default="full")
    p.add_argument("--em-mode", choices=["soft", "hard"], default="soft")
    p.add_argument("--restarts", type=int, default=30)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--aux-dir", default=None,
                   help="also write histogram/eigen/block/loglik CSVs from one run")

    p = sub.add_parser("evaluate", help="permutation accuracy of a labels CSV vs truth")
    _add_common(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--truth", required=True, help="JSONL with true_label set")
    p.add_argument("--k", type=int, required=True)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv[1:])
    if known.config:
        cfg = _load_config(known.config)
        for action in parser._subparsers._group_actions[0].choices.values():
            defaults = {}
            for act in action._actions:
                if act.dest in cfg:
                    value = cfg[act.dest]
                    defaults[act.dest] = act.type(value) if act.type else value
            action.set_defaults(**defaults)


def _scheme_for(args, trajectories):
    horizon = trajectories[0].horizon
    blocks = args.blocks if args.blocks != "auto" else harness.default_blocks(horizon)
    return SegmentScheme(horizon=horizon, blocks_per_segment=blocks, mode=args.mode)


def _dims(trajectories):
    S = max(int(t.states.max()) for t in trajectories) + 1
    A = max(int(t.actions.max()) for t in trajectories) + 1
    return S, A


def _tables_pairs(trajectories, scheme, S, A):
    tables = [segment_trajectory(t, scheme, S, A) for t in trajectories]
    pairs = [(segment_estimates(t, 1), segment_estimates(t, 2)) for t in tables]
    return tables, pairs


def _read_labels_csv(path):
    ids, labels = [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["id"]))
            labels.append(int(row["label"]))
    return ids, labels


def cmd_generate(args):
    if args.scenario == "gridworld":
        side = int(round(np.sqrt(args.s)))
        if side * side != args.s:
            raise SystemExit("gridworld needs a square --s")
        mixture = build_gridworld_mixture(
            GridworldSpec(width=side, height=side, adversarial_strength=args.eta)
        )
    else:
        mixture, _ = build_random_mixture(args.s, args.a, args.k, args.delta, args.seed)
    dataset = sample_dataset(mixture, args.n, args.horizon, args.seed)
    save_trajectories(args.out, dataset)
    report = mixing_report(mixture)
    sidecar = args.sidecar or (args.out + ".model.json")
    save_mixture(
        sidecar,
        mixture,
        extra={
            "mixing": {
                "t_mix": report.t_mix,
                "t_mix_per_label": report.t_mix_per_label,
                "tv_curve": report.tv_curve.tolist(),
            }
        },
    )
    print(f"wrote {len(dataset)} trajectories to {args.out}; t_mix={report.t_mix}")


def cmd_subspace(args):
    trajectories = load_trajectories(args.inp)
    S, A = _dims(trajectories)
    scheme = _scheme_for(args, trajectories)
    sub, _ = split_dataset(trajectories, args.sub_fraction, args.seed)
    _, pairs = _tables_pairs(sub, scheme, S, A)
    if args.k == "auto":
        probe = subspace.build_subspace_bank(pairs, min(8, S), S, A)
        profile = subspace.eigen_energy_profile(probe)
        rank = subspace.choose_rank(profile, factor=args.energy_factor)
        print(f"auto-selected K={rank}")
    else:
        rank = args.k
    bank = subspace.build_subspace_bank(pairs, rank, S, A)
    np.savez(
        args.out,
        projectors=bank.projectors,
        occupancy_projector=bank.occupancy_projector,
        n_traj=bank.n_traj,
        spectra=bank.spectra,
        rank=rank,
        num_states=S,
        num_actions=A,
    )
    if args.eigen_out:
        harness.write_eigen_energy_csv(args.eigen_out, bank)
    print(f"wrote subspace bank (K={rank}) to {args.out}")


def _load_bank(path):
    z = np.load(path)
    return subspace.SubspaceBank(
        num_states=int(z["num_states"]),
        num_actions=int(z["num_actions"]),
        rank=int(z["rank"]),
        projectors=z["projectors"],
        occupancy_projector=z["occupancy_projector"],
        n_traj=z["n_traj"],
        spectra=z["spectra"],
    )


def cmd_cluster(args):
    trajectories = load_trajectories(args.inp)
    S, A = _dims(trajectories)
    scheme = _scheme_for(args, trajectories)
    bank = _load_bank(args.bank)
    _, clust = split_dataset(trajectories, args.sub_fraction, args.seed)
    tables, pairs = _tables_pairs(clust, scheme, S, A)
    if args.beta == "auto":
        gap, occ = clustering.separation_scatter(pairs, bank, tables, pair_sample=2000,
                                                 seed=args.seed)
        beta = clustering.suggest_beta(gap, occ)
        print(f"auto-selected beta={beta:.6f}")
    else:
        beta = args.beta
    freq = clustering.frequent_pairs(tables, beta)
    distm = clustering.compute_distances(pairs, bank, freq, args.weight)
    if args.tau == "auto":
        tau, _, _ = clustering.suggest_threshold(distm.off_diagonal())
        print(f"auto-selected tau={tau:.6f}")
    else:
        tau = args.tau
    simil = distm.dist <= tau
    np.fill_diagonal(simil, True)
    labels = clustering.cluster_graph(simil, args.k, backend=args.backend,
                                      seed=args.seed, dist=distm.dist)
    harness.write_labels_csv(args.out, distm.ids, labels)
    if args.hist_out:
        truth = [t.true_label for t in clust]
        truth = truth if all(v is not None for v in truth) else None
        harness.write_distance_histogram_csv(args.hist_out, distm, truth)
    if args.block_out:
        harness.write_block_matrix_csv(args.block_out, distm, labels)
    print(f"wrote {len(labels)} cluster labels to {args.out}")


def cmd_em(args):
    trajectories = load_trajectories(args.inp)
    S, A = _dims(trajectories)
    scheme = _scheme_for(args, trajectories)
    if not args.init.startswith("random:"):
        # a labels init may cover a subset (e.g. the clustering split only)
        ids, _ = _read_labels_csv(args.init)
        keep = set(ids)
        trajectories = [t for t in trajectories if t.id in keep]
    tables, _ = _tables_pairs(trajectories, scheme, S, A)
    data = em.build_em_data(tables)
    scope = None
    if args.variant == "restricted" and args.beta > 0:
        scope = clustering.frequent_pairs(tables, args.beta)

    if args.init.startswith("random:"):
        _, seed_s, restarts_s = args.init.split(":")
        best = None
        for r in range(int(restarts_s)):
            init = em.random_responsibilities(
                data.n_traj, args.k, np.random.SeedSequence((int(seed_s), r))
            )
            state = em.run_em(init, data, variant=args.variant, mode=args.em_mode,
                              scope=scope, max_iter=args.max_iter, tol=args.tol)
            if best is None or state.loglik_trace[-1] > best.loglik_trace[-1]:
                best = state
        state = best
    else:
        ids, labels = _read_labels_csv(args.init)
        by_id = dict(zip(ids, labels))
        labels = [by_id[t.traj_id] for t in tables]
        init = em.em_init_from_labels(labels, args.k, args.softening)
        state = em.run_em(init, data, variant=args.variant, mode=args.em_mode,
                          scope=scope, max_iter=args.max_iter, tol=args.tol)

    with open(args.out_resp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"p{k}" for k in range(args.k)])
        for tid, row in zip(data.ids, state.responsibilities):
            writer.writerow([tid] + [repr(float(v)) for v in row])
    if args.out_params:
        with open(args.out_params, "w") as fh:
            json.dump(_params_doc(state.params, S, A), fh)
    if args.out_trace:
        with open(args.out_trace, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loglik"])
            for i, ll in enumerate(state.loglik_trace):
                writer.writerow([i + 1, repr(float(ll))])
    print(f"EM finished after {state.n_iter} iterations "
          f"(converged={state.converged}, loglik={state.loglik_trace[-1]:.4f})")


def _params_doc(params, S, A):
    doc = {
        "S": S,
        "A": A,
        "weights": params.weights.tolist(),
        "trans": params.trans.tolist(),
        "trans_defined": params.trans_defined.tolist(),
        "variant": params.variant,
    }
    if params.policy is not None:
        doc["policy"] = params.policy.tolist()
        doc["start"] = params.start.tolist()
    return doc


def cmd_estimate(args):
    trajectories = load_trajectories(args.inp)
    S, A = _dims(trajectories)
    scheme = _scheme_for(args, trajectories)
    ids, labels = _read_labels_csv(args.labels)
    by_id = dict(zip(ids, labels))
    subset = [t for t in trajectories if t.id in by_id]
    tables, _ = _tables_pairs(subset, scheme, S, A)
    labels = [by_id[t.traj_id] for t in tables]
    data = em.build_em_data(tables)
    estimate = inference.build_mixture_estimate(labels, tables, data, args.k)
    freq = clustering.frequent_pairs(tables, args.beta)
    doc = {
        "S": S,
        "A": A,
        "K": args.k,
        "blocks": scheme.blocks_per_segment,
        "mode": scheme.mode,
        "frequent": list(freq),
        "trans": estimate.trans.tolist(),
        "trans_defined": estimate.trans_defined.tolist(),
        "weights": estimate.weights.tolist(),
        "cond_prevalence": np.nan_to_num(estimate.cond_prevalence, nan=-1.0).tolist(),
        "occupancy": estimate.occupancy.tolist(),
        "projectors": estimate.projectors.tolist(),
        "occupancy_projector": estimate.occupancy_projector.tolist(),
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh)
    print(f"wrote model estimate for K={args.k} to {args.out}")


def cmd_classify(args):
    with open(args.model) as fh:
        doc = json.load(fh)
    trajectories = load_trajectories(args.inp)
    S, A = doc["S"], doc["A"]
    scheme = SegmentScheme(
        horizon=trajectories[0].horizon,
        blocks_per_segment=int(doc["blocks"]),
        mode=doc["mode"],
    )
    _, pairs = _tables_pairs(trajectories, scheme, S, A)
    prev = np.array(doc["cond_prevalence"])
    prev[prev < 0] = np.nan
    estimate = inference.MixtureEstimate(
        num_states=S,
        num_actions=A,
        num_components=int(doc["K"]),
        trans=np.array(doc["trans"]),
        trans_defined=np.array(doc["trans_defined"], dtype=bool),
        weights=np.array(doc["weights"]),
        cond_prevalence=prev,
        occupancy=np.array(doc["occupancy"]),
        projectors=np.array(doc["projectors"]),
        occupancy_projector=np.array(doc["occupancy_projector"]),
    )
    labels, dists, flags = inference.classify(pairs, estimate, doc["frequent"], args.weight)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "unclassifiable"]
                        + [f"dist{k}" for k in range(estimate.num_components)])
        for i, t in enumerate(trajectories):
            writer.writerow([t.id, int(labels[i]), int(flags[i])]
                            + [repr(float(v)) for v in dists[i]])
    print(f"classified {len(labels)} trajectories "
          f"({int(flags.sum())} unclassifiable) -> {args.out}")


def cmd_experiment(args):
    pipeline = harness.PipelineOptions(
        num_components=args.k,
        sub_fraction=args.sub_fraction,
        mode=args.mode,
        blocks=None if args.blocks == "auto" else args.blocks,
        beta=args.beta,
        tau=args.tau,
        weight=args.weight,
        backend=args.backend,
        em_variant=args.em_variant,
        em_mode=args.em_mode,
        em_restarts=args.restarts,
        num_states=args.s,
        num_actions=args.a,
    )
    config = harness.ExperimentConfig(
        scenario=args.scenario,
        num_components=args.k,
        num_states=args.s,
        num_actions=args.a,
        adversarial_strength=args.eta,
        delta_target=args.delta,
        horizons=tuple(int(h) for h in args.horizons.split(",")),
        n_traj=args.n,
        trials=args.trials,
        seed=args.seed,
        variants=tuple(args.variants.split(",")),
        pipeline=pipeline,
    )
    harness.run_experiment(config, args.out)
    print(f"wrote results to {args.out}")
    if args.aux_dir:
        import os

        os.makedirs(args.aux_dir, exist_ok=True)
        mixture = harness.build_scenario_mixture(config)
        horizon = max(config.horizons)
        data_seed = int(
            np.random.SeedSequence((config.seed, horizon, 0)).generate_state(1)[0]
        )
        dataset = sample_dataset(mixture, config.n_traj, horizon, data_seed)
        opts = harness._variant_options(pipeline, "learned", seed=data_seed)
        res = harness.run_pipeline(dataset, opts)
        truth = res.true_all[: len(res.ids_clust)] if res.true_all is not None else None
        harness.write_distance_histogram_csv(
            os.path.join(args.aux_dir, "dist_hist.csv"), res.distances, truth
        )
        harness.write_eigen_energy_csv(os.path.join(args.aux_dir, "eigen_energy.csv"), res.bank)
        harness.write_block_matrix_csv(
            os.path.join(args.aux_dir, "block_matrix.csv"), res.distances, res.labels_clust
        )
        rnd = harness._variant_options(pipeline, "learned+em:random", seed=data_seed)
        res_rnd = harness.run_pipeline(dataset, rnd)
        harness.write_loglik_accuracy_csv(
            os.path.join(args.aux_dir, "loglik_accuracy.csv"), res_rnd.restart_stats
        )
        print(f"wrote aux CSVs to {args.aux_dir}")


def cmd_evaluate(args):
    ids, labels = _read_labels_csv(args.labels)
    truth = {t.id: t.true_label for t in load_trajectories(args.truth)}
    missing = [i for i in ids if truth.get(i) is None]
    if missing:
        raise SystemExit(f"{len(missing)} trajectories lack a true label")
    true = [truth[i] for i in ids]
    acc, perm = harness.permutation_accuracy(labels, true, args.k)
    print(f"permutation accuracy: {acc:.4f} (best permutation {perm})")


COMMANDS = {
    "generate": cmd_generate,
    "subspace": cmd_subspace,
    "cluster": cmd_cluster,
    "em": cmd_em,
    "estimate": cmd_estimate,
    "classify": cmd_classify,
    "experiment": cmd_experiment,
    "evaluate": cmd_evaluate,
}


def main(argv=None):
    argv = argv if argv is not None else sys.argv
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv[1:])
    if getattr(args, "threads", None):
        try:
            import numba

            numba.set_num_threads(args.threads)
        except ImportError:
            pass
    COMMANDS[args.command](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
