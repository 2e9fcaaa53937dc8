"""Weighted Max-Cut / Ising instances and the variable-elimination calculus.

An instance is an undirected coupling graph J_uv over integer node ids.
The cut value of a spin assignment z in {-1,+1}^n is

    cut(z) = sum_{(u,v)} J_uv * (1 - z_u * z_v) / 2

and the Ising energy is sum J_uv z_u z_v, so maximizing the cut is the same
as minimizing the energy.  Variable elimination substitutes
z_u = sign * z_v for one edge (u, v), merging u's couplings into v and
accumulating a constant energy offset; `contract` performs one such step and
`reconstruct_assignment` undoes a whole stack of them.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

COUPLING_EPS = 1e-12
BRUTE_FORCE_MAX_NODES = 26
UNREACHABLE = 10 ** 9

_RESEED_STRIDE = 1_000_003
_REWEIGHT_SEED_BASE = 10 ** 9


class ContractionError(ValueError):
    """Raised when a contraction references inactive nodes or a missing edge."""


def _ordered(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


class WeightedGraph:
    """Immutable undirected graph with real couplings, one entry per pair.

    Couplings with magnitude below ``eps`` are dropped at construction so
    that degree-based features see true structure.  All iteration orders
    (nodes, edges, neighbors) are sorted and therefore deterministic.
    """

    __slots__ = ("_nodes", "_edges", "_adj", "_signature")

    def __init__(
        self,
        nodes: Iterable[int],
        edges: Mapping[tuple[int, int], float],
        eps: float = COUPLING_EPS,
    ):
        node_set = set(int(u) for u in nodes)
        clean: dict[tuple[int, int], float] = {}
        adj: dict[int, dict[int, float]] = {u: {} for u in node_set}
        for (u, v), j in edges.items():
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if u not in node_set or v not in node_set:
                raise ValueError(f"edge ({u}, {v}) references unknown node")
            key = _ordered(u, v)
            if key in clean:
                raise ValueError(f"duplicate edge {key}")
            j = float(j)
            if not math.isfinite(j):
                raise ValueError(f"non-finite coupling on edge {key}")
            if abs(j) < eps:
                continue
            clean[key] = j
            adj[u][v] = j
            adj[v][u] = j
        self._nodes: tuple[int, ...] = tuple(sorted(node_set))
        self._edges: dict[tuple[int, int], float] = dict(sorted(clean.items()))
        self._adj = adj
        self._signature: tuple | None = None

    @property
    def nodes(self) -> tuple[int, ...]:
        return self._nodes

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def edges(self) -> dict[tuple[int, int], float]:
        """Couplings keyed by (u, v) with u < v, in sorted order."""
        return dict(self._edges)

    def edge_list(self) -> list[tuple[int, int]]:
        return list(self._edges)

    def has_node(self, u: int) -> bool:
        return u in self._adj

    def has_edge(self, u: int, v: int) -> bool:
        return _ordered(u, v) in self._edges

    def coupling(self, u: int, v: int) -> float:
        key = _ordered(u, v)
        if key not in self._edges:
            raise ValueError(f"no edge {key} in graph")
        return self._edges[key]

    def neighbors(self, u: int) -> dict[int, float]:
        return self._adj[u]

    def degree(self, u: int) -> int:
        return len(self._adj[u])

    def signature(self) -> tuple:
        """Hashable identity used as a cache key for per-graph computations."""
        if self._signature is None:
            self._signature = (
                self._nodes,
                tuple((u, v, j) for (u, v), j in self._edges.items()),
            )
        return self._signature

    def __repr__(self) -> str:  # pragma: no cover
        return f"WeightedGraph(n={self.node_count}, m={self.edge_count})"


@dataclass(frozen=True)
class ContractionRecord:
    """One elimination: z_eliminated = sign * z_kept."""

    eliminated: int
    kept: int
    sign: int

    def __post_init__(self):
        if self.eliminated == self.kept:
            raise ValueError("cannot contract a node onto itself")
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")


@dataclass(frozen=True)
class ReducedInstance:
    """A graph plus the constant energy offset and the elimination stack."""

    graph: WeightedGraph
    offset: float
    stack: tuple[ContractionRecord, ...]

    @classmethod
    def fresh(cls, graph: WeightedGraph) -> "ReducedInstance":
        return cls(graph=graph, offset=0.0, stack=())


def contract(inst: ReducedInstance, rec: ContractionRecord) -> ReducedInstance:
    """Eliminate rec.eliminated by substituting z = sign * z_kept.

    Couplings of the eliminated node merge into the kept node; merged values
    with magnitude below COUPLING_EPS delete the edge.  The (eliminated,
    kept) coupling itself becomes a constant contribution sign * J added to
    the offset.
    """
    g = inst.graph
    u_star, v_star, sign = rec.eliminated, rec.kept, rec.sign
    if not (g.has_node(u_star) and g.has_node(v_star)):
        raise ContractionError(f"inactive endpoint in contraction {u_star}->{v_star}")
    if not g.has_edge(u_star, v_star):
        raise ContractionError(f"no edge ({u_star}, {v_star}) to contract")

    edges = g.edges()
    j_uv = edges.pop(_ordered(u_star, v_star))
    for w, j_uw in g.neighbors(u_star).items():
        if w == v_star:
            continue
        del edges[_ordered(u_star, w)]
        key = _ordered(v_star, w)
        merged = edges.get(key, 0.0) + sign * j_uw
        if abs(merged) < COUPLING_EPS:
            edges.pop(key, None)
        else:
            edges[key] = merged

    nodes = [x for x in g.nodes if x != u_star]
    return ReducedInstance(
        graph=WeightedGraph(nodes, edges),
        offset=inst.offset + sign * j_uv,
        stack=inst.stack + (rec,),
    )


def reconstruct_assignment(
    stack: Iterable[ContractionRecord], residual: Mapping[int, int]
) -> dict[int, int]:
    """Replay the elimination stack in reverse, filling in eliminated spins."""
    z = {int(k): int(v) for k, v in residual.items()}
    for rec in reversed(list(stack)):
        if rec.kept not in z:
            raise ValueError(f"residual assignment is missing variable {rec.kept}")
        z[rec.eliminated] = rec.sign * z[rec.kept]
    return z


def ising_energy(g: WeightedGraph, z: Mapping[int, int]) -> float:
    return sum(j * z[u] * z[v] for (u, v), j in g.edges().items())


def cut_value(g: WeightedGraph, z: Mapping[int, int]) -> float:
    return sum(j * (1 - z[u] * z[v]) / 2 for (u, v), j in g.edges().items())


def brute_force_optimum(g: WeightedGraph) -> tuple[float, dict[int, int]]:
    """Exhaustive Max-Cut over all sign-distinct assignments.

    The first (lowest-id) node is pinned to +1, halving the search space via
    global spin-flip symmetry.  Ties break toward the smallest bitmask over
    the remaining nodes, which makes the result deterministic.
    """
    n = g.node_count
    if n == 0:
        return 0.0, {}
    if n > BRUTE_FORCE_MAX_NODES:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_NODES} nodes, got {n}")
    nodes = g.nodes
    if g.edge_count == 0:
        return 0.0, {u: 1 for u in nodes}

    pos = {u: i for i, u in enumerate(nodes)}
    # bit i-1 of the mask is the spin of nodes[i]; nodes[0] is pinned to bit 0
    edge_shifts = []
    weights = []
    for (u, v), j in g.edges().items():
        edge_shifts.append((pos[u] - 1, pos[v] - 1))
        weights.append(j)

    total = 1 << (n - 1)
    chunk = 1 << 18
    best_cut = -math.inf
    best_mask = 0
    for start in range(0, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        acc = np.zeros(masks.shape[0])
        for (su, sv), w in zip(edge_shifts, weights):
            bu = (masks >> su) & 1 if su >= 0 else 0
            bv = (masks >> sv) & 1 if sv >= 0 else 0
            acc += w * (bu ^ bv)
        i = int(np.argmax(acc))
        if acc[i] > best_cut:
            best_cut = float(acc[i])
            best_mask = int(masks[i])

    assignment = {nodes[0]: 1}
    for i in range(1, n):
        assignment[nodes[i]] = -1 if (best_mask >> (i - 1)) & 1 else 1
    return best_cut, assignment


def graph_distance(g: WeightedGraph, u: int, v: int) -> int:
    """BFS hop count between u and v; UNREACHABLE if no path exists."""
    if not (g.has_node(u) and g.has_node(v)):
        raise ValueError(f"node {u} or {v} not in graph")
    if u == v:
        return 0
    seen = {u}
    frontier = deque([(u, 0)])
    while frontier:
        x, d = frontier.popleft()
        for w in g.neighbors(x):
            if w == v:
                return d + 1
            if w not in seen:
                seen.add(w)
                frontier.append((w, d + 1))
    return UNREACHABLE


def _regular_topology(n: int, d: int, rng: np.random.Generator) -> set[tuple[int, int]]:
    """Uniform-ish random d-regular simple graph via the pairing model.

    Pairs node stubs repeatedly, re-shuffling colliding stubs; restarts from
    scratch when no suitable pairing remains (rare for the sizes used here).
    """

    def suitable(edges, leftover):
        counts = sorted(leftover)
        for i, s1 in enumerate(counts):
            for s2 in counts[i + 1 :]:
                if s1 != s2 and _ordered(s1, s2) not in edges:
                    return True
        return False

    while True:
        edges: set[tuple[int, int]] = set()
        stubs = [x for x in range(n) for _ in range(d)]
        failed = False
        while stubs:
            stub_array = np.array(stubs)
            rng.shuffle(stub_array)
            stubs = []
            it = iter(stub_array.tolist())
            for s1, s2 in zip(it, it):
                key = _ordered(s1, s2)
                if s1 == s2 or key in edges:
                    stubs.extend((s1, s2))
                else:
                    edges.add(key)
            if stubs and not suitable(edges, stubs):
                failed = True
                break
        if not failed:
            return edges


def generate_regular_gaussian(n: int, d: int, seed: int) -> WeightedGraph:
    """Random d-regular graph on nodes 0..n-1 with standard-normal weights.

    Weights are drawn i.i.d. N(0, 1) in sorted edge order after the topology
    is fixed, so the result is fully determined by the seed.
    """
    if not 0 < d < n:
        raise ValueError(f"degree must satisfy 0 < d < n, got d={d}, n={n}")
    if (n * d) % 2 != 0:
        raise ValueError(f"no {d}-regular graph on {n} nodes: n*d must be even")
    rng = np.random.default_rng(seed)
    topology = sorted(_regular_topology(n, d, rng))
    weights = rng.standard_normal(len(topology))
    return WeightedGraph(range(n), {e: w for e, w in zip(topology, weights)})


@dataclass
class Instance:
    """A generated benchmark instance plus its metadata and exact optimum."""

    graph: WeightedGraph
    n: int
    d: int
    seed: int
    weight_dist: str = "normal(0,1)"
    e_opt: float | None = None
    category: str = "unscreened"

    @property
    def instance_id(self) -> str:
        return f"n{self.n:02d}d{self.d:02d}s{self.seed}"

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "seed": self.seed,
            "weight_dist": self.weight_dist,
            "edges": [[u, v, j] for (u, v), j in self.graph.edges().items()],
            "e_opt": self.e_opt,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        edges = {(int(u), int(v)): float(j) for u, v, j in data["edges"]}
        graph = WeightedGraph(range(int(data["n"])), edges)
        return cls(
            graph=graph,
            n=int(data["n"]),
            d=int(data["d"]),
            seed=int(data["seed"]),
            weight_dist=data.get("weight_dist", "normal(0,1)"),
            e_opt=None if data.get("e_opt") is None else float(data["e_opt"]),
            category=data.get("category", "unscreened"),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_instance(n: int, d: int, seed: int, compute_opt: bool = True) -> Instance:
    """Generate an instance, reseeding until the brute-force optimum is positive.

    A non-positive optimum would make the success ratio ill-defined; with
    continuous weights this occurs with probability zero, but the guard is
    kept explicit.
    """
    attempt_seed = seed
    while True:
        graph = generate_regular_gaussian(n, d, attempt_seed)
        if not compute_opt:
            return Instance(graph=graph, n=n, d=d, seed=attempt_seed)
        e_opt, _ = brute_force_optimum(graph)
        if e_opt > 0:
            return Instance(graph=graph, n=n, d=d, seed=attempt_seed, e_opt=e_opt)
        attempt_seed += _RESEED_STRIDE


def reweighted_instance(base: Instance, seed: int) -> Instance:
    """Same topology as the base instance, fresh standard-normal weights.

    Weights are drawn in sorted edge order; reseeds on a non-positive
    optimum like generate_instance.  Seeds live in a shifted namespace so a
    variant's instance_id never collides with a fresh instance's.
    """
    topology = base.graph.edge_list()
    attempt_seed = _REWEIGHT_SEED_BASE + seed
    while True:
        rng = np.random.default_rng(attempt_seed)
        weights = rng.standard_normal(len(topology))
        graph = WeightedGraph(base.graph.nodes, {e: w for e, w in zip(topology, weights)})
        e_opt, _ = brute_force_optimum(graph)
        if e_opt > 0:
            return Instance(
                graph=graph, n=base.n, d=base.d, seed=attempt_seed,
                weight_dist=base.weight_dist, e_opt=e_opt, category="reweighted",
            )
        attempt_seed += _RESEED_STRIDE
