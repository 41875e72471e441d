"""Per-trajectory, per-segment transition and occupancy estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CountTable


@dataclass(frozen=True)
class SegmentEstimate:
    """MLE next-state rows and occupancy vector from one segment of one trajectory.

    trans maps sa -> probability vector over next states (unseen pairs are
    absent and stand for the zero vector); occupancy has length S*A with
    entries count/G.
    """

    traj_id: int
    segment: int
    num_states: int
    num_actions: int
    trans: dict = field(repr=False)
    occupancy: np.ndarray = field(repr=False)

    def row(self, sa: int) -> np.ndarray:
        vec = self.trans.get(sa)
        if vec is None:
            return np.zeros(self.num_states)
        return vec

    @property
    def observed(self):
        return self.trans.keys()


def segment_estimates(table: CountTable, segment: int) -> SegmentEstimate:
    """Raw MLE ratios for one double-estimator segment (1 or 2).

    Unseen (s,a) pairs are zero vectors by contract.  The occupancy
    denominator is the block count G in both counting modes.
    """
    if segment not in (1, 2):
        raise ValueError("segment must be 1 or 2")
    S, A = table.num_states, table.num_actions
    G = table.scheme.blocks_per_segment
    trans = {}
    occ = np.zeros(S * A)
    for sa, vec in table.seg[segment].items():
        n = vec.sum()
        trans[sa] = vec / n
        occ[sa] = n / G
    return SegmentEstimate(
        traj_id=table.traj_id,
        segment=segment,
        num_states=S,
        num_actions=A,
        trans=trans,
        occupancy=occ,
    )


def whole_trajectory_rows(table: CountTable) -> dict:
    """Whole-trajectory MLE rows keyed by sa (pooled over the full count table)."""
    return {sa: vec / vec.sum() for sa, vec in table.whole.items()}
