"""End-to-end execution of one RQAOA episode under a shot-allocation policy.

Each elimination step re-optimizes the depth-1 angles on the current reduced
graph (a classical closed-form computation, no shots), draws a probe pool to
read the step state, lets the policy set the step budget k_t, then estimates
correlations from all k_t shots with the probe shots pooled in as the first
k_probe of them.  The strongest edge is contracted and the loop repeats
until the classical threshold, where the residual is brute-forced and the
full assignment reconstructed.

Angles and prepared-state probabilities depend only on the reduced graph, so
repeated trials on one instance share them through a StepCache.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .allocation import AllocationDecision
from .features import (
    BinBoundaries,
    DiscreteState,
    StepState,
    discretize,
    extract_state,
    probe_shot_count,
    ranked_edges,
)
from .instance import (
    ContractionRecord,
    Instance,
    ReducedInstance,
    brute_force_optimum,
    contract,
    cut_value,
    reconstruct_assignment,
)
from .qaoa import (
    MODE_AUTO,
    MODE_BINOMIAL,
    MODE_EXACT,
    MODE_STATEVECTOR,
    STATEVECTOR_MAX_QUBITS,
    STATEVECTOR_SAMPLING_THRESHOLD,
    Angles,
    CorrelationEstimate,
    CorrelationSampler,
    optimize_angles,
)


@dataclass(frozen=True)
class DriverConfig:
    """Knobs shared by every episode run."""

    n_c: int = 8
    rho_star: float = 0.99
    sampling_mode: str = MODE_AUTO
    sv_threshold: int = STATEVECTOR_SAMPLING_THRESHOLD
    sv_max_qubits: int = STATEVECTOR_MAX_QUBITS
    zgap_variant: str = "literal"
    k_top: int = 3
    bins: BinBoundaries = field(default_factory=BinBoundaries)
    eta: float = 1.0


class EpisodePolicy(Protocol):
    def decide(
        self,
        state: StepState,
        disc: DiscreteState,
        cap: int,
        k_probe: int,
        rng: np.random.Generator | None,
    ) -> AllocationDecision: ...


class StepCache:
    """Per-instance cache of angle optima and prepared-state data.

    Keys are graph signatures; an episode's reduced graphs recur across
    trials of the same instance, so this removes nearly all redundant angle
    searches and statevector builds.  Probability vectors are the big
    entries and live in a bounded LRU; angles and exact correlation values
    are tiny and kept unbounded.
    """

    def __init__(self, max_prob_entries: int | None = None):
        self.angles: dict[tuple, Angles] = {}
        self.exact: dict[tuple, dict] = {}
        self._probs: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._max_prob = max_prob_entries

    def probs_get(self, key: tuple) -> np.ndarray | None:
        if key not in self._probs:
            return None
        self._probs.move_to_end(key)
        return self._probs[key]

    def probs_put(self, key: tuple, value: np.ndarray) -> None:
        if self._max_prob is None:
            # keep total cached floats around 2^24 regardless of state size
            self._max_prob = max(16, (1 << 24) // max(1, len(value)))
        self._probs[key] = value
        self._probs.move_to_end(key)
        while len(self._probs) > self._max_prob:
            self._probs.popitem(last=False)


@dataclass
class StepLog:
    """One elimination step, as logged."""

    step: int
    m: int
    state: StepState | None
    disc: DiscreteState | None
    baseline_index: int
    residual: int
    shots: int
    edge: tuple[int, int] | None
    sign: int
    top_two: tuple[float, ...]
    trivial: bool = False

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "m": self.m,
            "zeta": None if self.state is None else self.state.zeta,
            "kappa": None if self.state is None else self.state.kappa,
            "dist": None if self.state is None else self.state.dist,
            "disc": None if self.disc is None else self.disc.key(),
            "baseline_index": self.baseline_index,
            "residual": self.residual,
            "shots": self.shots,
            "edge": None if self.edge is None else list(self.edge),
            "sign": self.sign,
            "top_two": list(self.top_two),
            "trivial": self.trivial,
        }


@dataclass
class EpisodeResult:
    """Outcome and per-step trace of one episode."""

    steps: list[StepLog]
    total_shots: int
    e_out: float
    e_opt: float
    sigma: int
    approx_ratio: float
    early_exhausted: bool = False

    def to_dict(self) -> dict:
        return {
            "total_shots": self.total_shots,
            "e_out": self.e_out,
            "e_opt": self.e_opt,
            "sigma": self.sigma,
            "approx_ratio": self.approx_ratio,
            "early_exhausted": self.early_exhausted,
        }


def select_edge(est: CorrelationEstimate) -> tuple[int, int, int]:
    """Pick the edge with the largest |correlation|.

    Returns (eliminated, kept, sign): the larger endpoint id is eliminated,
    ties in magnitude break lexicographically, and sign(0) is +1.
    """
    if not est.values:
        raise ValueError("cannot select an edge from an empty estimate")
    edge = ranked_edges(est)[0]
    value = est.values[edge]
    sign = -1 if value < 0 else 1
    return max(edge), min(edge), sign


def success(e_out: float, e_opt: float, rho_star: float = 0.99) -> int:
    """Binary success: approximation ratio at or above rho_star."""
    if e_opt <= 0:
        raise ValueError("success ratio undefined for non-positive optimum")
    return 1 if e_out / e_opt >= rho_star else 0


def run_episode(
    inst: Instance,
    policy: EpisodePolicy,
    cap: int,
    cfg: DriverConfig,
    rng: np.random.Generator,
    cache: StepCache | None = None,
) -> EpisodeResult:
    """Run one full RQAOA episode and score it against the known optimum."""
    if inst.e_opt is None:
        raise ValueError("instance has no recorded optimum; screen it first")
    n = inst.n
    if n <= cfg.n_c:
        raise ValueError(f"instance size {n} not above classical threshold {cfg.n_c}")
    k_probe = probe_shot_count(n)
    if cap < k_probe:
        raise ValueError(f"cap {cap} below probe size {k_probe}")
    cache = cache if cache is not None else StepCache()

    red = ReducedInstance.fresh(inst.graph)
    steps: list[StepLog] = []
    total_shots = 0
    early_exhausted = False

    while red.graph.node_count > cfg.n_c:
        g = red.graph
        if g.edge_count == 0:
            # all couplings cancelled: remaining spins are free
            early_exhausted = True
            break

        key = g.signature()
        angles = cache.angles.get(key)
        if angles is None:
            angles = optimize_angles(g)
            cache.angles[key] = angles

        sampler = CorrelationSampler(
            g,
            angles,
            mode=cfg.sampling_mode,
            sv_threshold=cfg.sv_threshold,
            sv_max_qubits=cfg.sv_max_qubits,
            exact_values=cache.exact.get(key),
            cumulative_probs=cache.probs_get(key),
        )

        if sampler.mode == MODE_EXACT:
            probe_est = sampler.exact_estimate()
            cache.exact.setdefault(key, sampler.exact_values())
        else:
            probe_pool = sampler.draw(k_probe, rng)
            probe_est = sampler.estimate(probe_pool)

        state = extract_state(g, probe_est, k_top=cfg.k_top, zgap_variant=cfg.zgap_variant)
        disc = discretize(state, n, cfg.n_c, cfg.bins)
        decision = policy.decide(state, disc, cap, k_probe, rng)
        k_t = decision.shots

        if sampler.mode == MODE_EXACT:
            main_est = probe_est
        else:
            pool = probe_pool
            if k_t > k_probe:
                pool = CorrelationSampler.merge(pool, sampler.draw(k_t - k_probe, rng))
            main_est = sampler.estimate(pool)

        # persist prepared-state data for future trials on this instance
        if sampler.mode == MODE_STATEVECTOR and cache.probs_get(key) is None:
            cache.probs_put(key, sampler.cumulative_probs())
        if sampler.mode == MODE_BINOMIAL:
            cache.exact.setdefault(key, sampler.exact_values())

        elim, kept, sign = select_edge(main_est)
        red = contract(red, ContractionRecord(eliminated=elim, kept=kept, sign=sign))
        top_two = sorted((abs(v) for v in main_est.values.values()), reverse=True)[:2]
        steps.append(
            StepLog(
                step=len(steps) + 1,
                m=g.node_count,
                state=state,
                disc=disc,
                baseline_index=decision.baseline_index,
                residual=decision.residual,
                shots=k_t,
                edge=(min((elim, kept)), max((elim, kept))),
                sign=sign,
                top_two=tuple(top_two),
            )
        )
        total_shots += k_t

    while len(steps) < n - cfg.n_c:
        steps.append(
            StepLog(
                step=len(steps) + 1,
                m=red.graph.node_count,
                state=None,
                disc=None,
                baseline_index=0,
                residual=0,
                shots=0,
                edge=None,
                sign=1,
                top_two=(),
                trivial=True,
            )
        )

    _, residual_assignment = brute_force_optimum(red.graph)
    full = reconstruct_assignment(red.stack, residual_assignment)
    e_out = cut_value(inst.graph, full)
    sigma = success(e_out, inst.e_opt, cfg.rho_star)
    return EpisodeResult(
        steps=steps,
        total_shots=total_shots,
        e_out=e_out,
        e_opt=inst.e_opt,
        sigma=sigma,
        approx_ratio=e_out / inst.e_opt,
        early_exhausted=early_exhausted,
    )
