"""Four-feature step state extracted from a probe estimate, plus binning.

The state is (m, zeta, kappa, dist):

  m      remaining active variables
  zeta   ratio of the two largest |correlation| values (z-gap)
  kappa  endpoint overlap among the top-k candidate edges (conflict ratio)
  dist   minimum hop distance between the endpoints of the two leading edges

Degenerate situations (fewer than two edges, disconnected leading edges) map
to the maximally-confident sentinel values: near the classical threshold
such steps are easy and should not inflate the budget.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .instance import UNREACHABLE, WeightedGraph, graph_distance
from .qaoa import CorrelationEstimate

ZGAP_EPS = 1e-12
ZGAP_SENTINEL = 1e18
DIST_SENTINEL = UNREACHABLE

ZGAP_LITERAL = "literal"
ZGAP_RELATIVE = "relative_gap"


@dataclass(frozen=True)
class StepState:
    """Raw per-step MDP state."""

    m: int
    zeta: float
    kappa: float
    dist: int


@dataclass(frozen=True)
class DiscreteState:
    """Binned state indexing the tabular policy."""

    m_bin: int
    zeta_bin: int
    kappa_bin: int
    dist_bin: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.m_bin, self.zeta_bin, self.kappa_bin, self.dist_bin)

    def key(self) -> str:
        return f"{self.m_bin}:{self.zeta_bin}:{self.kappa_bin}:{self.dist_bin}"


@dataclass(frozen=True)
class BinBoundaries:
    """Bin edges for the tabular state space.

    A policy is only meaningful under the binning it was trained with, so
    these boundaries travel inside checkpoints and must match exactly on
    load.  zeta edges are upper bin edges: value < edges[0] is bin 0,
    value >= edges[-1] is the top bin.  Same for kappa.  Distances bin as
    min(d, dist_bins - 1).
    """

    zeta_edges: tuple[float, ...] = (1.0, 1.2, 1.6, 2.0, 3.0, 4.0)
    kappa_edges: tuple[float, ...] = (0.10, 0.20, 0.30, 0.40)
    dist_bins: int = 5

    @property
    def zeta_bins(self) -> int:
        return len(self.zeta_edges) + 1

    @property
    def kappa_bins(self) -> int:
        return len(self.kappa_edges) + 1

    def to_dict(self) -> dict:
        return {
            "zeta_edges": list(self.zeta_edges),
            "kappa_edges": list(self.kappa_edges),
            "dist_bins": self.dist_bins,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BinBoundaries":
        return cls(
            zeta_edges=tuple(data["zeta_edges"]),
            kappa_edges=tuple(data["kappa_edges"]),
            dist_bins=int(data["dist_bins"]),
        )


def probe_shot_count(n: int) -> int:
    """Probe shots by original instance size: 16 up to n=16, 32 above."""
    if n < 1:
        raise ValueError("instance size must be positive")
    return 16 if n <= 16 else 32


def ranked_edges(est: CorrelationEstimate) -> list[tuple[int, int]]:
    """Edges sorted by |correlation| descending, lexicographic on ties."""
    return sorted(est.values, key=lambda e: (-abs(est.values[e]), e))


def zgap(est: CorrelationEstimate, variant: str = ZGAP_LITERAL) -> float:
    """Ratio of the two largest |correlations|.

    With fewer than two edges there is nothing to confuse, so the sentinel
    maps the step to the most confident bin.  The literal variant is clamped
    to >= 1: the clamp only engages when both magnitudes sit at the
    regularization scale, which is an exact tie for every practical purpose.
    """
    mags = sorted((abs(v) for v in est.values.values()), reverse=True)
    if len(mags) < 2:
        return ZGAP_SENTINEL
    m1, m2 = mags[0], mags[1]
    if variant == ZGAP_RELATIVE:
        return (m1 - m2) / (m1 + ZGAP_EPS)
    if variant != ZGAP_LITERAL:
        raise ValueError(f"unknown zgap variant {variant!r}")
    return max(1.0, m1 / (m2 + ZGAP_EPS))


def conflict_ratio(est: CorrelationEstimate, k_top: int = 3) -> float:
    """1 - (unique endpoints of the top-k edges) / (2k), k = min(k_top, |E|)."""
    if not est.values:
        raise ValueError("conflict ratio needs at least one edge")
    top = ranked_edges(est)[: min(k_top, len(est.values))]
    endpoints = {u for e in top for u in e}
    return 1.0 - len(endpoints) / (2 * len(top))


def edge_distance(g: WeightedGraph, est: CorrelationEstimate) -> int:
    """Minimum hop distance between endpoints of the two leading edges."""
    if len(est.values) < 2:
        return DIST_SENTINEL
    e1, e2 = ranked_edges(est)[:2]
    best = DIST_SENTINEL
    for u in e1:
        for v in e2:
            best = min(best, graph_distance(g, u, v))
    return best


def extract_state(
    g: WeightedGraph,
    est: CorrelationEstimate,
    k_top: int = 3,
    zgap_variant: str = ZGAP_LITERAL,
) -> StepState:
    """Assemble the full step state from a probe estimate."""
    return StepState(
        m=g.node_count,
        zeta=zgap(est, variant=zgap_variant),
        kappa=conflict_ratio(est, k_top=k_top),
        dist=edge_distance(g, est),
    )


def discretize(s: StepState, n: int, n_c: int, bins: BinBoundaries | None = None) -> DiscreteState:
    """Bin a raw state; m runs over n - n_c levels from n_c+1 to n."""
    bins = bins or BinBoundaries()
    m_bin = s.m - n_c - 1
    if not 0 <= m_bin <= n - n_c - 1:
        raise ValueError(f"m={s.m} outside [{n_c + 1}, {n}]")
    return DiscreteState(
        m_bin=m_bin,
        zeta_bin=bisect.bisect_right(bins.zeta_edges, s.zeta),
        kappa_bin=bisect.bisect_right(bins.kappa_edges, s.kappa),
        dist_bin=min(s.dist, bins.dist_bins - 1),
    )
