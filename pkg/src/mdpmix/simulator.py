"""Ground-truth mixture generators, trajectory sampling and mixing-time measurement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import MarkovMixture, Trajectory

N_ACTIONS_GRID = 4  # N, E, S, W


class MixingTimeError(RuntimeError):
    """The induced chain did not come within tolerance of stationarity before the cap."""


class ValueIterationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridworldSpec:
    """Two-element gridworld mixture: a normal kernel and an adversarial tweak.

    The adversarial element moves `adversarial_strength` of each (s,a) row's
    mass onto the reachable neighbor with the lowest state value, where values
    come from value iteration on the normal element.
    """

    width: int = 8
    height: int = 8
    slip: float = 0.1
    reward_map: np.ndarray | None = None
    discount: float = 0.9
    adversarial_strength: float = 0.5
    mixture_weight: float = 0.9  # share of the normal element
    value_iter_cap: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.adversarial_strength <= 1.0:
            raise ValueError("adversarial_strength must lie in [0, 1]")
        if not 0.0 < self.mixture_weight < 1.0:
            raise ValueError("mixture_weight must lie in (0, 1)")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip must lie in [0, 1)")
        if self.reward_map is not None:
            rm = np.asarray(self.reward_map, dtype=np.float64)
            if rm.shape != (self.width * self.height,):
                raise ValueError("reward_map must have width*height entries")
            object.__setattr__(self, "reward_map", rm)

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def rewards(self) -> np.ndarray:
        if self.reward_map is not None:
            return self.reward_map
        r = np.zeros(self.num_states)
        r[-1] = 1.0  # single goal in the last cell by default
        return r


def gridworld_kernel(width: int, height: int, slip: float) -> np.ndarray:
    """(S, A, S) kernel: intended move w.p. 1-slip, each perpendicular w.p. slip/2.

    Moves off the grid reflect (the agent stays put).
    """
    S = width * height
    # action -> (drow, dcol); perpendicular pairs share an axis
    moves = {0: (-1, 0), 1: (0, 1), 2: (1, 0), 3: (0, -1)}
    perp = {0: (1, 3), 1: (0, 2), 2: (1, 3), 3: (0, 2)}
    P = np.zeros((S, N_ACTIONS_GRID, S))

    def target(s, action):
        r, c = divmod(s, width)
        dr, dc = moves[action]
        r2, c2 = r + dr, c + dc
        if 0 <= r2 < height and 0 <= c2 < width:
            return r2 * width + c2
        return s

    for s in range(S):
        for a in range(N_ACTIONS_GRID):
            P[s, a, target(s, a)] += 1.0 - slip
            for ap in perp[a]:
                P[s, a, target(s, ap)] += slip / 2.0
    return P


def value_iteration(kernel, rewards, discount, tol=1e-10, cap=10_000) -> np.ndarray:
    """State values V(s) = max_a sum_s' P(s'|s,a) (r(s') + discount V(s'))."""
    S = kernel.shape[0]
    V = np.zeros(S)
    for _ in range(cap):
        Q = kernel @ (rewards + discount * V)
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            return V_new
        V = V_new
    raise ValueIterationError(f"value iteration did not converge within {cap} iterations")


def adversarial_tweak(kernel, values, eta) -> np.ndarray:
    """Shift eta of each row's mass onto the lowest-value state in the row's support.

    Ties in the argmin break toward the lowest state index.
    """
    out = np.array(kernel, copy=True)
    S, A, _ = kernel.shape
    for s in range(S):
        for a in range(A):
            support = np.flatnonzero(kernel[s, a] > 0)
            worst = support[np.argmin(values[support])]
            out[s, a] = (1.0 - eta) * kernel[s, a]
            out[s, a, worst] += eta
    return out


def build_gridworld_mixture(spec: GridworldSpec) -> MarkovMixture:
    """K=2 mixture sharing a uniform behavior policy; element 2 is adversarial."""
    S = spec.num_states
    normal = gridworld_kernel(spec.width, spec.height, spec.slip)
    values = value_iteration(normal, spec.rewards(), spec.discount, cap=spec.value_iter_cap)
    adversarial = adversarial_tweak(normal, values, spec.adversarial_strength)
    policy = np.full((S, N_ACTIONS_GRID), 1.0 / N_ACTIONS_GRID)
    start = np.full(S, 1.0 / S)
    return MarkovMixture(
        num_states=S,
        num_actions=N_ACTIONS_GRID,
        kernels=np.stack([normal, adversarial]),
        policies=np.stack([policy, policy]),
        start_dists=np.stack([start, start]),
        weights=np.array([spec.mixture_weight, 1.0 - spec.mixture_weight]),
    )


def build_random_mixture(num_states, num_actions, num_components, delta_target, seed):
    """Random mixture with a planted separating (s,a) pair.

    All labels share one Dirichlet-random base kernel; at the pair with the
    highest base occupancy each label k gets the row
    (1-g)*base + g*e_{s_k} with g = delta_target/sqrt(2), which puts every
    pairwise row gap at exactly delta_target.  Returns (mixture, info) where
    info records the planted pair and the realized pairwise separations.
    """
    S, A, K = num_states, num_actions, num_components
    if not 0.0 < delta_target <= np.sqrt(2.0) + 1e-12:
        raise ValueError("delta_target must lie in (0, sqrt(2)]")
    if K > 1 and S < K:
        raise ValueError(f"planting {K} separated rows needs S >= K (got S={S})")
    rng = np.random.default_rng(seed)
    base = rng.dirichlet(np.ones(S), size=(S, A))
    policy = np.full((S, A), 1.0 / A)
    start = np.full(S, 1.0 / S)
    if K == 1:
        mixture = MarkovMixture(S, A, base[None], policy[None], start[None], np.ones(1))
        return mixture, {"pair": None, "separations": {}}

    occ = _stationary_distribution(_induced_chain(base, policy))
    pair = int(np.argmax(occ))
    s_star, a_star = divmod(pair, A)
    gamma = float(delta_target) / np.sqrt(2.0)
    kernels = np.repeat(base[None], K, axis=0)
    targets = rng.permutation(S)[:K]
    for k in range(K):
        row = (1.0 - gamma) * base[s_star, a_star]
        row[targets[k]] += gamma
        kernels[k, s_star, a_star] = row
    mixture = MarkovMixture(
        S,
        A,
        kernels,
        np.repeat(policy[None], K, axis=0),
        np.repeat(start[None], K, axis=0),
        np.full(K, 1.0 / K),
    )
    seps = {}
    for k1 in range(K):
        for k2 in range(k1 + 1, K):
            gaps = np.linalg.norm(kernels[k1] - kernels[k2], axis=-1)
            seps[(k1, k2)] = float(gaps.max())
    realized = min(seps.values())
    if realized < delta_target - 1e-9:
        raise RuntimeError(f"could not reach target separation: {realized:.4f}")
    return mixture, {"pair": (s_star, a_star), "separations": seps}


def _mixture_cdfs(mixture: MarkovMixture, label: int):
    pol_cdf = np.cumsum(mixture.policies[label], axis=-1)
    ker_cdf = np.cumsum(mixture.kernels[label], axis=-1)
    start_cdf = np.cumsum(mixture.start_dists[label])
    return pol_cdf, ker_cdf, start_cdf


def sample_trajectory(
    mixture: MarkovMixture,
    horizon: int,
    seed,
    label: int | None = None,
    traj_id: int = 0,
    _cdfs=None,
) -> Trajectory:
    """Sample one episode; deterministic in (seed, traj_id) regardless of order."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    weight_cdf = np.cumsum(mixture.weights)
    if label is None:
        label = min(
            int(np.searchsorted(weight_cdf, rng.random(), side="right")),
            mixture.num_components - 1,
        )
    else:
        rng.random()  # keep stream alignment with the unforced path
    if _cdfs is None:
        pol_cdf, ker_cdf, start_cdf = _mixture_cdfs(mixture, label)
    else:
        pol_cdf, ker_cdf, start_cdf = _cdfs[label]
    start = min(
        int(np.searchsorted(start_cdf, rng.random(), side="right")), mixture.num_states - 1
    )
    u_actions = rng.random(horizon)
    u_states = rng.random(horizon)
    states, actions = _kernels.sample_walk(start, pol_cdf, ker_cdf, u_actions, u_states)
    return Trajectory(id=traj_id, states=states, actions=actions, true_label=label)


def sample_dataset(mixture, n_traj, horizon, seed, start_id=0):
    """Sample n_traj episodes with per-trajectory seeds derived from (seed, id)."""
    cdfs = [_mixture_cdfs(mixture, k) for k in range(mixture.num_components)]
    out = []
    for i in range(n_traj):
        tid = start_id + i
        traj_seed = np.random.SeedSequence((seed, tid))
        out.append(
            sample_trajectory(mixture, horizon, traj_seed, traj_id=tid, _cdfs=cdfs)
        )
    return out


def _induced_chain(kernel, policy) -> np.ndarray:
    """Chain on (s,a): Q[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')."""
    S, A, _ = kernel.shape
    Q = np.einsum("sat,tb->satb", kernel, policy)
    return Q.reshape(S * A, S * A)


def _stationary_distribution(Q, tol=1e-13, cap=100_000):
    d = np.full(Q.shape[0], 1.0 / Q.shape[0])
    for _ in range(cap):
        d_next = d @ Q
        if np.abs(d_next - d).sum() < tol:
            return d_next
        d = d_next
    raise MixingTimeError("stationary distribution power iteration did not converge")


@dataclass(frozen=True)
class MixingReport:
    """Mixing diagnostics for the induced state-action chains of a mixture."""

    t_mix: int
    t_mix_per_label: list[int]
    tv_curve: np.ndarray
    tv_curves_per_label: list[np.ndarray] = field(repr=False, default_factory=list)
    stationary: list[np.ndarray] = field(repr=False, default_factory=list)


def estimate_mixing_time(mixture, label, tol=0.25, horizon_cap=2000, extra_steps=10):
    """(t_mix_k, tv_curve, stationary d_k) for one label's induced chain.

    tv_curve[t] is the worst-start total variation distance after t+1 steps;
    it is extended extra_steps past the first crossing for diagnostics.
    """
    Q = _induced_chain(mixture.kernels[label], mixture.policies[label])
    d = _stationary_distribution(Q)
    M = np.eye(Q.shape[0])
    curve = []
    t_mix = None
    t = 0
    while t < horizon_cap:
        M = M @ Q
        t += 1
        tv = 0.5 * np.abs(M - d[None, :]).sum(axis=1).max()
        curve.append(tv)
        if t_mix is None and tv < tol:
            t_mix = t
        if t_mix is not None and t >= t_mix + extra_steps:
            break
    if t_mix is None:
        raise MixingTimeError(
            f"label {label}: worst-start TV still {curve[-1]:.4f} after {horizon_cap} steps"
        )
    return t_mix, np.array(curve), d


def mixing_report(mixture, tol=0.25, horizon_cap=2000) -> MixingReport:
    per = [estimate_mixing_time(mixture, k, tol, horizon_cap) for k in range(mixture.num_components)]
    t_mixes = [p[0] for p in per]
    curves = [p[1] for p in per]
    longest = max(len(c) for c in curves)
    padded = [np.pad(c, (0, longest - len(c)), constant_values=0.0) for c in curves]
    return MixingReport(
        t_mix=max(t_mixes),
        t_mix_per_label=t_mixes,
        tv_curve=np.max(padded, axis=0),
        tv_curves_per_label=curves,
        stationary=[p[2] for p in per],
    )
