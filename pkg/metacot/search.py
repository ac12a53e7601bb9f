"""
Búsqueda de aristas dispersas con N rollouts paralelos por ronda.

Cada ronda elige X₀, deja correr N rollouts T₀ pasos para estimar el
cluster (Ĉ = intersección de los conjuntos visitados) y luego los sigue
hasta que cada uno sale de su propio Ĉⁿ, registrando la arista de salida.
En modo PRM las aristas se acumulan en 𝕄_s; en modo RL cada ronda
ajusta el modelo con PPO y la ronda siguiente muestrea del modelo nuevo.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Iterator, List, Optional, Set, Tuple

import numpy as np

from utils.rng import derive_rng, derive_seed, uniform_blocks

from .dynamics import RngLike, Walker, master_seed, walker_for
from .errors import ValidationError
from .kernel import TransitionKernel
from .pretrain import SourceDistribution, source_weights
from .softmax import SoftmaxTable

logger = logging.getLogger(__name__)


class SearchMode(str, Enum):
    PRM = "prm"
    RL = "rl"


@dataclass(frozen=True)
class SearchSchedule:
    R: int
    N: int
    T0: int
    Tmax: int
    mode: SearchMode = SearchMode.PRM
    source_dist: SourceDistribution = SourceDistribution.UNIFORM

    def __post_init__(self):
        object.__setattr__(self, 'mode', SearchMode(self.mode))
        object.__setattr__(self, 'source_dist', SourceDistribution(self.source_dist))

    def validate(self) -> 'SearchSchedule':
        if min(self.R, self.N, self.T0, self.Tmax) < 1:
            raise ValidationError("R, N, T0 and Tmax must be positive")
        if self.T0 >= self.Tmax:
            raise ValidationError(f"T0={self.T0} must be below Tmax={self.Tmax}")
        return self

    @property
    def step_budget(self) -> int:
        return self.R * self.N * self.Tmax


def default_schedule(
    K: int,
    M: int,
    epsilon: float,
    c_R: float = 4.0,
    c_N: float = 4.0,
    c_T: float = 2.0,
    c_X: float = 8.0,
    mode: SearchMode = SearchMode.PRM,
    source_dist: SourceDistribution = SourceDistribution.UNIFORM,
) -> SearchSchedule:
    """
    R = ⌈c_R·K·ln K⌉, N = max(4, ⌈c_N·ln K⌉), T₀ = ⌈c_T·M·(ln M)²⌉,
    T_max = ⌈c_X·M/ε⌉ (2·T₀ si ε = 0).

    Example:
        >>> default_schedule(8, 16, 0.01).N
        9
    """
    R = max(1, math.ceil(c_R * K * math.log(K)))
    N = max(4, math.ceil(c_N * math.log(K)))
    T0 = max(1, math.ceil(c_T * M * math.log(M) ** 2))
    Tmax = math.ceil(c_X * M / epsilon) if epsilon > 0.0 else 2 * T0
    return SearchSchedule(R, N, T0, max(Tmax, T0 + 1), mode, source_dist).validate()


class Rollout:
    """Un rollout con su propio flujo de uniformes y su conjunto visitado Ĉⁿ."""

    def __init__(self, walker: Walker, x0: int, uniforms: Iterator[float]):
        self.walker = walker
        self.state = x0
        self.visited: Set[int] = {x0}
        self.uniforms = uniforms
        self.steps = 0
        self.edge: Optional[Tuple[int, int]] = None

    def advance(self) -> Tuple[int, int]:
        previous = self.state
        self.state = self.walker.next_state(previous, next(self.uniforms))
        self.steps += 1
        return previous, self.state


@dataclass(frozen=True)
class ClusterEstimate:
    cluster: FrozenSet[int]
    per_rollout: Tuple[FrozenSet[int], ...]


def cluster_explore(kernel: TransitionKernel, x0: int, N: int, T0: int, rng: RngLike,
                    ) -> Tuple[ClusterEstimate, List[Rollout]]:
    """
    N rollouts de T₀ pasos desde x0. Devuelve Ĉ = ∩ₙ Ĉⁿ y los rollouts,
    ya posicionados para la búsqueda de aristas.
    """
    seed = master_seed(rng)
    walker = walker_for(kernel)
    rollouts = [Rollout(walker, x0, uniform_blocks(derive_rng(seed, n), block=1024)) for n in range(N)]
    for rollout in rollouts:
        for _ in range(T0):
            _, y = rollout.advance()
            rollout.visited.add(y)
    per_rollout = tuple(frozenset(r.visited) for r in rollouts)
    return ClusterEstimate(frozenset.intersection(*per_rollout), per_rollout), rollouts


def edge_search(rollouts: List[Rollout], Tmax: int) -> FrozenSet[Tuple[int, int]]:
    """
    Sigue cada rollout hasta que pisa un estado fuera de su Ĉⁿ o llega a
    T_max pasos; la transición de salida entra en Ê.
    """
    found: Set[Tuple[int, int]] = set()
    for rollout in rollouts:
        while rollout.steps < Tmax:
            previous, current = rollout.advance()
            if current not in rollout.visited:
                rollout.edge = (previous, current)
                found.add(rollout.edge)
                break
    return frozenset(found)


@dataclass(frozen=True)
class RoundReport:
    round: int
    x0: int
    cluster_correct: bool
    edges_found: Tuple[Tuple[int, int], ...]
    steps_used: int
    auxiliary_states: int

    def to_dict(self) -> dict:
        return {
            'round': self.round,
            'x0': self.x0,
            'cluster_correct': self.cluster_correct,
            'edges_found': [list(e) for e in self.edges_found],
            'steps_used': self.steps_used,
        }


@dataclass(frozen=True)
class SearchResult:
    found: FrozenSet[Tuple[int, int]]
    rounds: Tuple[RoundReport, ...]
    model: Optional[SoftmaxTable] = None
    sparse_truth: FrozenSet[Tuple[int, int]] = field(default_factory=frozenset)
    # pasos de PPO de todas las rondas, numerados en forma continua
    ppo_trace: Tuple = ()

    @property
    def equals_sparse_edges(self) -> bool:
        return self.found == self.sparse_truth

    @property
    def total_steps(self) -> int:
        return sum(r.steps_used for r in self.rounds)

    @property
    def peak_auxiliary_states(self) -> int:
        return max((r.auxiliary_states for r in self.rounds), default=0) + len(self.found)

    def false_positives(self) -> FrozenSet[Tuple[int, int]]:
        return frozenset(e for e in self.found if e not in self.sparse_truth)

    def to_dict(self) -> dict:
        return {
            'rounds': [r.to_dict() for r in self.rounds],
            'M_s': [list(e) for e in sorted(self.found)],
            'equals_E_s': self.equals_sparse_edges,
            'total_steps': self.total_steps,
            'peak_auxiliary_states': self.peak_auxiliary_states,
        }


def _search_round(kernel: TransitionKernel, sampling_kernel: TransitionKernel, schedule: SearchSchedule,
                  weights: np.ndarray, seed: int, r: int) -> RoundReport:
    rng = derive_rng(seed, r)
    x0 = int(rng.choice(kernel.num_states, p=weights))
    estimate, rollouts = cluster_explore(sampling_kernel, x0, schedule.N, schedule.T0, derive_seed(seed, r))
    edges = edge_search(rollouts, schedule.Tmax)
    truth = frozenset(kernel.clusters[kernel.partition[x0]].tolist())
    report = RoundReport(
        r, x0, estimate.cluster == truth, tuple(sorted(edges)),
        sum(ro.steps for ro in rollouts), sum(len(ro.visited) for ro in rollouts),
    )
    logger.debug("round %d: x0=%d cluster_ok=%s edges=%s steps=%d",
                 r, x0, report.cluster_correct, report.edges_found, report.steps_used)
    return report


def run_search(
    kernel: TransitionKernel,
    schedule: SearchSchedule,
    rng: RngLike,
    model: Optional[SoftmaxTable] = None,
    ppo_schedule=None,
    threads: int = 1,
) -> SearchResult:
    """
    R rondas de búsqueda. En modo RL devuelve además el modelo ajustado
    por PPO (partiendo de ``model`` o de p^ε si no se pasa ninguno).
    """
    schedule.validate()
    seed = master_seed(rng)
    weights = source_weights(kernel, schedule.source_dist)
    truth = kernel.sparse_pairs()
    found: Set[Tuple[int, int]] = set()

    if schedule.mode is SearchMode.PRM:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
            rounds = list(executor.map(
                lambda r: _search_round(kernel, kernel, schedule, weights, seed, r), range(schedule.R)
            ))
        for report in rounds:
            found.update(report.edges_found)
        result = SearchResult(frozenset(found), tuple(rounds), None, truth)
    else:
        from .ppo import PpoSchedule, run_ppo_traced

        ppo_schedule = ppo_schedule or PpoSchedule()
        current = model if model is not None else SoftmaxTable.from_probabilities(kernel.dense())
        rounds = []
        trace = []
        for r in range(schedule.R):
            sampling_kernel = kernel.with_probabilities(current.probabilities())
            report = _search_round(kernel, sampling_kernel, schedule, weights, seed, r)
            rounds.append(report)
            found.update(report.edges_found)
            if report.edges_found:
                traced = run_ppo_traced(current, kernel, report.edges_found, ppo_schedule)
                offset = trace[-1].step + 1 if trace else 0
                trace.extend(p._replace(step=p.step + offset) for p in traced.trace)
                current = traced.model
        result = SearchResult(frozenset(found), tuple(rounds), current, truth, tuple(trace))

    logger.info("search: %d rounds, %d edges found (%d true), %d steps",
                schedule.R, len(result.found), len(truth), result.total_steps)
    return result
