"""Domain types, trajectory segmentation, dataset splitting and serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ATOL_SIMPLEX = 1e-12


def _check_simplex(arr, name):
    arr = np.asarray(arr, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=ATOL_SIMPLEX, rtol=0):
        raise ValueError(f"{name} rows do not sum to 1 (max dev {np.abs(sums - 1).max():.3e})")


@dataclass(frozen=True)
class MarkovMixture:
    """Ground-truth mixture: K transition kernels, policies, start dists and weights.

    kernels: (K, S, A, S), policies: (K, S, A), start_dists: (K, S), weights: (K,).
    A=1 encodes a plain Markov chain.
    """

    num_states: int
    num_actions: int
    kernels: np.ndarray
    policies: np.ndarray
    start_dists: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        S, A = self.num_states, self.num_actions
        if S < 1 or A < 1:
            raise ValueError("need S >= 1 and A >= 1")
        object.__setattr__(self, "kernels", np.asarray(self.kernels, dtype=np.float64))
        object.__setattr__(self, "policies", np.asarray(self.policies, dtype=np.float64))
        object.__setattr__(self, "start_dists", np.asarray(self.start_dists, dtype=np.float64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        K = self.kernels.shape[0]
        if K < 1:
            raise ValueError("need K >= 1")
        if self.kernels.shape != (K, S, A, S):
            raise ValueError(f"kernels shape {self.kernels.shape} != {(K, S, A, S)}")
        if self.policies.shape != (K, S, A):
            raise ValueError(f"policies shape {self.policies.shape} != {(K, S, A)}")
        if self.start_dists.shape != (K, S):
            raise ValueError(f"start_dists shape {self.start_dists.shape} != {(K, S)}")
        if self.weights.shape != (K,):
            raise ValueError(f"weights shape {self.weights.shape} != {(K,)}")
        _check_simplex(self.kernels, "kernels")
        _check_simplex(self.policies, "policies")
        _check_simplex(self.start_dists, "start_dists")
        _check_simplex(self.weights, "weights")
        for arr in (self.kernels, self.policies, self.start_dists, self.weights):
            arr.setflags(write=False)

    @property
    def num_components(self) -> int:
        return self.kernels.shape[0]

    def to_dict(self) -> dict:
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "K": self.num_components,
            "kernels": self.kernels.tolist(),
            "policies": self.policies.tolist(),
            "start_dists": self.start_dists.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovMixture":
        return cls(
            num_states=int(d["S"]),
            num_actions=int(d["A"]),
            kernels=np.array(d["kernels"], dtype=np.float64),
            policies=np.array(d["policies"], dtype=np.float64),
            start_dists=np.array(d["start_dists"], dtype=np.float64),
            weights=np.array(d["weights"], dtype=np.float64),
        )


@dataclass(frozen=True)
class Trajectory:
    """One sampled episode. Learning never reads true_label or rewards."""

    id: int
    states: np.ndarray
    actions: np.ndarray
    true_label: int | None = None
    rewards: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.int64))
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("len(states) must equal len(actions)+1")
        if np.any(self.states < 0) or np.any(self.actions < 0):
            raise ValueError("negative state or action index")
        self.states.setflags(write=False)
        self.actions.setflags(write=False)

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class SegmentScheme:
    """Slicing of a length-T_n trajectory into 4 segments with G blocks each.

    The two time-separated segments used by the double estimators are the
    2nd and 4th quarters.  mode="discard" keeps one observation per block
    (anchored at the first timestep of each sub-block; whole-trajectory
    blocks anchor at the last timestep instead).  mode="full" keeps every
    observation.
    """

    horizon: int
    blocks_per_segment: int
    mode: str = "full"
    segment_anchor: str = "first_in_subblock"
    block_anchor: str = "last_in_block"

    def __post_init__(self):
        if self.blocks_per_segment < 1:
            raise ValueError("need G >= 1")
        if 4 * self.blocks_per_segment > self.horizon:
            raise ValueError(
                f"segment underflow: 4*G={4 * self.blocks_per_segment} > T_n={self.horizon}"
            )
        if self.mode not in ("discard", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def segment_length(self) -> int:
        return self.horizon // 4

    def segment_range(self, i: int) -> tuple[int, int]:
        """Timestep range of double-estimator segment i in {1, 2}."""
        if i not in (1, 2):
            raise ValueError("segment index must be 1 or 2")
        T = self.segment_length
        lo = (2 * i - 1) * T
        return lo, lo + T


@dataclass(frozen=True)
class CountTable:
    """Per-trajectory (s,a)->next-state count maps, per segment and whole-trajectory.

    seg[i][sa] and whole[sa] are length-S integer vectors of next-state
    counts; the (s,a) visit count is their sum.  sa = s * A + a.
    """

    traj_id: int
    num_states: int
    num_actions: int
    scheme: SegmentScheme
    seg: dict = field(repr=False)
    whole: dict = field(repr=False)
    first_state: int = 0

    def seg_count(self, i: int, sa: int) -> int:
        vec = self.seg[i].get(sa)
        return 0 if vec is None else int(vec.sum())

    def whole_count(self, sa: int) -> int:
        vec = self.whole.get(sa)
        return 0 if vec is None else int(vec.sum())


def _count_slice(states, actions, lo, hi, S, A):
    """Dense next-state count map for transitions with t in [lo, hi)."""
    s = states[lo:hi]
    a = actions[lo:hi]
    s2 = states[lo + 1 : hi + 1]
    codes = (s * A + a) * S + s2
    uniq, cnt = np.unique(codes, return_counts=True)
    out: dict[int, np.ndarray] = {}
    for code, c in zip(uniq.tolist(), cnt.tolist()):
        sa, nxt = divmod(code, S)
        vec = out.get(sa)
        if vec is None:
            vec = np.zeros(S, dtype=np.int64)
            out[sa] = vec
        vec[nxt] += c
    return out


def segment_trajectory(
    traj: Trajectory, scheme: SegmentScheme, num_states: int, num_actions: int
) -> CountTable:
    """Build the per-segment and whole-trajectory count table for one trajectory.

    Segment counts cover the 2nd and 4th quarters (indices 1 and 2); in
    discard mode exactly one (s,a,s') triple is recorded per sub-block.
    """
    if traj.horizon < scheme.horizon:
        raise ValueError("trajectory shorter than scheme horizon")
    S, A = num_states, num_actions
    G = scheme.blocks_per_segment
    states, actions = traj.states, traj.actions
    seg: dict[int, dict] = {}
    if scheme.mode == "full":
        for i in (1, 2):
            lo, hi = scheme.segment_range(i)
            seg[i] = _count_slice(states, actions, lo, hi, S, A)
        whole = _count_slice(states, actions, 0, scheme.horizon, S, A)
    else:
        T = scheme.segment_length
        sub = T // G
        for i in (1, 2):
            lo, _ = scheme.segment_range(i)
            anchors = lo + np.arange(G) * sub
            seg[i] = _anchor_counts(states, actions, anchors, S, A)
        block = scheme.horizon // G
        anchors = np.arange(G) * block + block - 1
        whole = _anchor_counts(states, actions, anchors, S, A)
    return CountTable(
        traj_id=traj.id,
        num_states=S,
        num_actions=A,
        scheme=scheme,
        seg=seg,
        whole=whole,
        first_state=int(states[0]),
    )


def _anchor_counts(states, actions, anchors, S, A):
    out: dict[int, np.ndarray] = {}
    for t in anchors.tolist():
        sa = int(states[t]) * A + int(actions[t])
        vec = out.get(sa)
        if vec is None:
            vec = np.zeros(S, dtype=np.int64)
            out[sa] = vec
        vec[int(states[t + 1])] += 1
    return out


def split_dataset(dataset, sub_fraction: float, seed: int):
    """Deterministically split trajectories into (subspace set, clustering set)."""
    if not dataset:
        raise ValueError("empty dataset")
    if not 0.0 < sub_fraction < 1.0:
        raise ValueError("sub_fraction must lie in (0, 1)")
    horizons = {t.horizon for t in dataset}
    if len(horizons) > 1:
        raise ValueError(f"mixed trajectory lengths in dataset: {sorted(horizons)}")
    order = sorted(range(len(dataset)), key=lambda idx: dataset[idx].id)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_sub = int(np.floor(sub_fraction * len(dataset)))
    sub_idx = sorted(order[p] for p in perm[:n_sub])
    clust_idx = sorted(order[p] for p in perm[n_sub:])
    return [dataset[i] for i in sub_idx], [dataset[i] for i in clust_idx]


def save_trajectories(path, trajectories):
    with open(path, "w") as fh:
        for t in trajectories:
            rec = {
                "id": int(t.id),
                "true_label": None if t.true_label is None else int(t.true_label),
                "states": [int(x) for x in t.states],
                "actions": [int(x) for x in t.actions],
            }
            if t.rewards is not None:
                rec["rewards"] = [float(r) for r in t.rewards]
            fh.write(json.dumps(rec) + "\n")


def load_trajectories(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                Trajectory(
                    id=int(rec["id"]),
                    states=np.array(rec["states"], dtype=np.int64),
                    actions=np.array(rec["actions"], dtype=np.int64),
                    true_label=rec.get("true_label"),
                    rewards=np.array(rec["rewards"]) if rec.get("rewards") else None,
                )
            )
    horizons = {t.horizon for t in out}
    if len(horizons) > 1:
        raise ValueError(f"mixed trajectory lengths in {path}: {sorted(horizons)}")
    return out


def save_mixture(path, mixture: MarkovMixture, extra: dict | None = None):
    doc = mixture.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_mixture(path) -> MarkovMixture:
    with open(path) as fh:
        return MarkovMixture.from_dict(json.load(fh))
