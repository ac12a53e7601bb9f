"""
Rollouts de CoT sobre un kernel y estimación Monte Carlo de tiempos de
parada.

Dos motores con la misma semántica:

- ``Walker``: un paso por llamada, bisect sobre las sumas acumuladas de
  la fila. Lo usan los caminos individuales y la búsqueda.
- ``BatchWalker``: avanza un vector de rollouts a la vez sobre una tabla
  CSR rellenada con +inf.

Cada rollout i consume exactamente un uniforme por paso del flujo
``derive_rng(seed, i)``, así que ambos motores producen trayectorias
idénticas y las estimaciones no dependen del número de hilos.
"""

import logging
import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.stream import Stream
from utils.rng import derive_rng, uniform_blocks

from .errors import ValidationError
from .kernel import SparseEdgeSet, TransitionKernel

logger = logging.getLogger(__name__)

BATCH_BLOCK = 256
MAX_HORIZON = 10_000_000

RngLike = Union[int, np.random.Generator]


def master_seed(rng: RngLike) -> int:
    """Semilla entera a partir de una semilla o de un generador."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 63))
    return int(rng)


def default_horizon(num_clusters: int, cluster_size: int, epsilon: float) -> int:
    """50·K·M/ε, acotado; con ε = 0 el tope fijo."""
    if epsilon <= 0.0:
        return MAX_HORIZON
    return min(MAX_HORIZON, math.ceil(50 * num_clusters * cluster_size / epsilon))


class Walker:
    """Muestreo por CDF inversa fila a fila."""

    def __init__(self, kernel: TransitionKernel):
        self.kernel = kernel
        matrix = kernel.matrix
        self._rows: List[Tuple[List[int], List[float]]] = []
        for x in range(kernel.num_states):
            start, stop = matrix.indptr[x], matrix.indptr[x + 1]
            self._rows.append((
                matrix.indices[start:stop].tolist(),
                np.cumsum(matrix.data[start:stop]).tolist(),
            ))

    def next_state(self, x: int, u: float) -> int:
        cols, cumulative = self._rows[x]
        i = bisect_right(cumulative, u)
        return cols[min(i, len(cols) - 1)]

    def walk(self, x0: int, uniforms: Iterable[float]):
        """Generador infinito de estados empezando por x0."""
        x = x0
        yield x
        for u in uniforms:
            x = self.next_state(x, u)
            yield x


class BatchWalker:
    """Versión vectorizada de ``Walker`` sobre filas rellenadas."""

    def __init__(self, kernel: TransitionKernel):
        matrix = kernel.matrix
        lengths = np.diff(matrix.indptr)
        width = int(lengths.max())
        self.lengths = lengths
        self.cols = np.zeros((kernel.num_states, width), dtype=np.int64)
        self.cumulative = np.full((kernel.num_states, width), np.inf)
        for x in range(kernel.num_states):
            start, stop = matrix.indptr[x], matrix.indptr[x + 1]
            self.cols[x, :stop - start] = matrix.indices[start:stop]
            self.cumulative[x, :stop - start] = np.cumsum(matrix.data[start:stop])

    def next_states(self, states: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        index = np.sum(self.cumulative[states] <= uniforms[:, None], axis=1)
        index = np.minimum(index, self.lengths[states] - 1)
        return self.cols[states, index]


@lru_cache(maxsize=32)
def walker_for(kernel: TransitionKernel) -> Walker:
    return Walker(kernel)


def step(kernel: TransitionKernel, x: int, rng: np.random.Generator) -> int:
    """Un paso de la cadena desde x."""
    if not 0 <= x < kernel.num_states:
        raise ValidationError(f"state {x} outside S")
    return walker_for(kernel).next_state(x, float(rng.random()))


def trajectory(kernel: TransitionKernel, x0: int, rng: RngLike) -> Stream[int]:
    """
    Stream perezoso X_0 = x0, X_1, ...; re-iterarlo repite la misma
    trayectoria.
    """
    seed = master_seed(rng)
    walker = walker_for(kernel)
    return Stream(lambda: walker.walk(x0, uniform_blocks(derive_rng(seed))))


# TIEMPOS DE PARADA

@dataclass(frozen=True)
class StopTimeEstimate:
    mean: float
    stderr: float
    num_samples: int
    truncation_count: int

    @staticmethod
    def from_samples(times: np.ndarray, truncated: np.ndarray) -> 'StopTimeEstimate':
        times = np.asarray(times, dtype=np.float64)
        n = len(times)
        stderr = float(times.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return StopTimeEstimate(float(times.mean()) if n else 0.0, stderr, n, int(np.sum(truncated)))

    @property
    def truncated_fraction(self) -> float:
        return self.truncation_count / self.num_samples if self.num_samples else 0.0


def _first_passage_chunk(
    engine: BatchWalker,
    x0: int,
    target: np.ndarray,
    horizon: int,
    seed: int,
    start: int,
    stop: int,
    min_step: int,
) -> Tuple[np.ndarray, np.ndarray]:
    generators = [derive_rng(seed, i) for i in range(start, stop)]
    states = np.full(stop - start, x0, dtype=np.int64)
    times = np.full(stop - start, horizon, dtype=np.int64)
    done = np.zeros(stop - start, dtype=bool)
    if min_step == 0 and target[x0]:
        times[:] = 0
        done[:] = True
    block = np.empty((0, 0))
    for t in range(1, horizon + 1):
        active = np.flatnonzero(~done)
        if not len(active):
            break
        column = (t - 1) % BATCH_BLOCK
        if column == 0:
            block = np.stack([g.random(BATCH_BLOCK) for g in generators])
        states[active] = engine.next_states(states[active], block[active, column])
        hit = active[target[states[active]]]
        times[hit] = t
        done[hit] = True
    return times, ~done


def first_passage_times(
    kernel: TransitionKernel,
    x0: int,
    target: Iterable[int],
    horizon: int,
    num_rollouts: int,
    rng: RngLike,
    threads: int = 1,
    min_step: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tiempos de primera llegada (``min_step`` = 0) o de retorno (= 1) de
    cada rollout, con los truncados contados en ``horizon``.
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    if num_rollouts < 1:
        raise ValidationError("num_rollouts must be at least 1")
    mask = np.zeros(kernel.num_states, dtype=bool)
    mask[list(target)] = True
    if not mask.any():
        raise ValidationError("target set must be nonempty")
    seed = master_seed(rng)
    engine = BatchWalker(kernel)
    workers = max(1, min(threads, num_rollouts))
    bounds = np.linspace(0, num_rollouts, workers + 1).astype(int)
    chunks = list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(
            lambda chunk: _first_passage_chunk(engine, x0, mask, horizon, seed, chunk[0], chunk[1], min_step),
            chunks,
        ))
    times = np.concatenate([r[0] for r in results])
    truncated = np.concatenate([r[1] for r in results])
    if truncated.any():
        logger.warning("%d of %d rollouts truncated at horizon %d", int(truncated.sum()), num_rollouts, horizon)
    return times, truncated


def hitting_time_mc(
    kernel: TransitionKernel,
    x0: int,
    target: Iterable[int],
    horizon: int,
    num_rollouts: int,
    rng: RngLike,
    threads: int = 1,
) -> StopTimeEstimate:
    """Media de τ_A = inf{t ≥ 0 : X_t ∈ A}; vale 0 si x0 ∈ A."""
    return StopTimeEstimate.from_samples(
        *first_passage_times(kernel, x0, target, horizon, num_rollouts, rng, threads, min_step=0)
    )


def return_time_mc(
    kernel: TransitionKernel,
    x0: int,
    target: Iterable[int],
    horizon: int,
    num_rollouts: int,
    rng: RngLike,
    threads: int = 1,
) -> StopTimeEstimate:
    """Media de τ̄_A = inf{t ≥ 1 : X_t ∈ A}, siempre ≥ 1."""
    return StopTimeEstimate.from_samples(
        *first_passage_times(kernel, x0, target, horizon, num_rollouts, rng, threads, min_step=1)
    )


def escape_time_mc(
    kernel: TransitionKernel,
    x0: int,
    cluster: int,
    horizon: int,
    num_rollouts: int,
    rng: RngLike,
    threads: int = 1,
) -> StopTimeEstimate:
    outside = np.flatnonzero(kernel.partition != cluster)
    return hitting_time_mc(kernel, x0, outside, horizon, num_rollouts, rng, threads)


# GUÍA POR PRM

def prm_guided_kernel(kernel: TransitionKernel, prm: Union[SparseEdgeSet, Iterable[Tuple[int, int]]],
                      boost: float) -> TransitionKernel:
    """
    Multiplica por ``boost`` cada arista premiada y reescala el resto de
    su fila para que siga sumando 1.
    """
    if boost < 1.0:
        raise ValidationError(f"boost={boost} must be at least 1")
    pairs = prm.pairs() if isinstance(prm, SparseEdgeSet) else frozenset(prm)
    matrix = kernel.matrix.copy()
    rewarded = np.zeros(matrix.nnz, dtype=bool)
    for x, y in pairs:
        start, stop = matrix.indptr[x], matrix.indptr[x + 1]
        position = start + np.searchsorted(matrix.indices[start:stop], y)
        if position >= stop or matrix.indices[position] != y:
            raise ValidationError(f"rewarded edge ({x}, {y}) is not an edge of the kernel")
        rewarded[position] = True
    rows = np.repeat(np.arange(kernel.num_states), np.diff(matrix.indptr))
    original = np.bincount(rows[rewarded], weights=matrix.data[rewarded], minlength=kernel.num_states)
    boosted = boost * original
    if np.any(boosted >= 1.0):
        x = int(np.argmax(boosted))
        raise ValidationError(f"boosted mass {boosted[x]:.3g} in row {x} reaches 1; boost too large")
    with np.errstate(divide='ignore', invalid='ignore'):
        others = np.where(original > 0.0, (1.0 - boosted) / (1.0 - original), 1.0)
    matrix.data = np.where(rewarded, matrix.data * boost, matrix.data * others[rows])
    return TransitionKernel(matrix, kernel.partition, kernel.dense_support, kernel.epsilon, kernel.seed)


# CAMINOS

@dataclass(frozen=True)
class Path:
    """Estados visitados y posiciones i donde (X_i, X_{i+1}) fue dispersa."""
    states: Tuple[int, ...]
    sparse_crossings: Tuple[int, ...] = ()
    truncated: bool = False

    @staticmethod
    def from_states(states: Sequence[int], sparse_pairs, truncated: bool = False) -> 'Path':
        states = tuple(int(x) for x in states)
        crossings = tuple(i for i in range(len(states) - 1) if (states[i], states[i + 1]) in sparse_pairs)
        return Path(states, crossings, truncated)

    @property
    def length(self) -> int:
        return len(self.states) - 1

    @property
    def start(self) -> int:
        return self.states[0]

    @property
    def end(self) -> int:
        return self.states[-1]

    def edges(self) -> List[Tuple[int, int]]:
        return list(zip(self.states[:-1], self.states[1:]))

    def sparse_edges(self) -> List[Tuple[int, int]]:
        return [(self.states[i], self.states[i + 1]) for i in self.sparse_crossings]

    def is_valid(self, kernel: TransitionKernel) -> bool:
        return all(kernel.contains_edge(x, y) for x, y in self.edges())


def generate_valid_path(
    kernel: TransitionKernel,
    x_in: int,
    x_out: int,
    horizon: int,
    rng: RngLike,
    sparse_pairs: Optional[frozenset] = None,
) -> Path:
    """Rollout desde x_in hasta tocar x_out o agotar ``horizon`` pasos."""
    if sparse_pairs is None:
        sparse_pairs = kernel.sparse_pairs()
    states = trajectory(kernel, x_in, rng).take_until(lambda x: x == x_out).take(horizon + 1).to_list()
    truncated = states[-1] != x_out
    if truncated:
        logger.warning("path from %d truncated after %d steps without reaching %d", x_in, horizon, x_out)
    return Path.from_states(states, sparse_pairs, truncated)


# CSV

ESTIMATE_COLUMNS = ('experiment_id', 'K', 'M', 'epsilon', 'x0', 'target', 'mean', 'stderr', 'samples', 'truncated')


def estimate_row(experiment_id: str, kernel: TransitionKernel, x0: int, target: Iterable[int],
                 estimate: StopTimeEstimate) -> dict:
    return {
        'experiment_id': experiment_id,
        'K': kernel.num_clusters,
        'M': kernel.max_cluster_size,
        'epsilon': repr(float(kernel.epsilon)),
        'x0': x0,
        'target': ";".join(str(t) for t in sorted(target)),
        'mean': repr(estimate.mean),
        'stderr': repr(estimate.stderr),
        'samples': estimate.num_samples,
        'truncated': estimate.truncation_count,
    }
