"""
Familia de kernels metaestables p^ε: clusters densos unidos por aristas
dispersas de probabilidad O(ε).

Construcción en dos pasos:

1. ``build_unperturbed``: p^0 diagonal por bloques, cada bloque un paseo
   perezoso sobre un grafo aleatorio simétrico con pesos en [1, 2].
2. ``plant_sparse_edges``: agrega las aristas entre clusters y reescala
   las filas afectadas para que sigan sumando 1.

``validate_assumptions`` mide las hipótesis (masa estacionaria, brecha
pseudo-espectral, topes estructurales, escape del meta-kernel) y
``sample_task`` elige pares (X_in, X_out) suficientemente separados.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

from core.io_monad import IO, io_read_text, io_write_text
from utils.rng import derive_rng

from .errors import (
    ConstraintError,
    InfeasibleTaskError,
    StructureError,
    ValidationError,
)

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-12

# etiquetas de flujo aleatorio bajo la semilla del GraphSpec
_BLOCK_STREAM = 0
_SPARSE_STREAM = 1
_TOPOLOGY_STREAM = 2


class Topology(str, Enum):
    """Meta-grafo de aristas dispersas sobre los clusters."""
    CYCLE = "cycle"
    BIDIRECTIONAL_CYCLE = "bidirectional-cycle"
    RANDOM_REGULAR = "random-regular"
    EXPLICIT = "explicit"


class IntraClusterModel(str, Enum):
    """Generador de los bloques de p^0."""
    LAZY_RANDOM_WEIGHTS = "lazy-random-weights"
    LAZY_COMPLETE = "lazy-complete"


def epsilon_max(cluster_size: int, c0: float = 1.0) -> float:
    """
    Escala máxima de perturbación c0 / (M (ln M)^4), acotada por 1.

    Example:
        >>> round(epsilon_max(16), 6)
        0.001058
    """
    if cluster_size < 2:
        return 1.0
    return min(1.0, c0 / (cluster_size * math.log(cluster_size) ** 4))


@dataclass(frozen=True)
class GraphSpec:
    """Parámetros de una instancia metaestable."""
    num_clusters: int
    cluster_size: int
    epsilon: float
    d_out: int = 1
    n_out: int = 1
    topology: Topology = Topology.CYCLE
    explicit_edges: Tuple[Tuple[int, int], ...] = ()
    regular_degree: int = 2
    sparse_low: float = 0.5
    intra_cluster_model: IntraClusterModel = IntraClusterModel.LAZY_RANDOM_WEIGHTS
    edge_density: float = 0.75
    weight_low: float = 1.0
    weight_high: float = 2.0
    laziness: float = 0.5
    cluster_sizes: Optional[Tuple[int, ...]] = None
    size_ratio: float = 4.0
    inbound_targets: bool = False
    eps_max_const: float = 1.0
    strict_regime: bool = False
    max_retries: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'topology', Topology(self.topology))
        object.__setattr__(self, 'intra_cluster_model', IntraClusterModel(self.intra_cluster_model))
        object.__setattr__(self, 'explicit_edges', tuple(tuple(map(int, e)) for e in self.explicit_edges))
        if self.cluster_sizes is not None:
            object.__setattr__(self, 'cluster_sizes', tuple(int(s) for s in self.cluster_sizes))

    @property
    def sizes(self) -> Tuple[int, ...]:
        if self.cluster_sizes is not None:
            return self.cluster_sizes
        return (self.cluster_size,) * self.num_clusters

    @property
    def num_states(self) -> int:
        return sum(self.sizes)

    @property
    def eps_max(self) -> float:
        return epsilon_max(max(self.sizes), self.eps_max_const)

    def with_epsilon(self, epsilon: float) -> 'GraphSpec':
        return replace(self, epsilon=epsilon)

    def validate(self) -> 'GraphSpec':
        """Devuelve self o lanza ValidationError con el primer problema."""
        if self.num_clusters < 1 or self.cluster_size < 1:
            raise ValidationError("num_clusters and cluster_size must be positive")
        sizes = self.sizes
        if len(sizes) != self.num_clusters or min(sizes) < 1:
            raise ValidationError(f"cluster_sizes {sizes} do not match num_clusters={self.num_clusters}")
        if max(sizes) > self.size_ratio * min(sizes):
            raise ValidationError(f"cluster sizes {sizes} exceed size_ratio={self.size_ratio}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValidationError(f"epsilon={self.epsilon} must lie in [0, 1)")
        if self.d_out < 1 or self.n_out < 1:
            raise ValidationError("d_out and n_out must be positive")
        if self.d_out * self.epsilon >= 1.0:
            raise ValidationError("d_out * epsilon must stay below 1")
        if not 0.0 < self.sparse_low <= 1.0:
            raise ValidationError(f"sparse_low={self.sparse_low} must lie in (0, 1]")
        if not 0.0 < self.edge_density <= 1.0:
            raise ValidationError("edge_density must lie in (0, 1]")
        if not 0.0 < self.weight_low <= self.weight_high:
            raise ValidationError("weights must satisfy 0 < weight_low <= weight_high")
        if not 0.0 < self.laziness < 1.0:
            raise ValidationError("laziness must lie in (0, 1)")
        if self.n_out > min(sizes):
            raise ValidationError(f"n_out={self.n_out} exceeds the smallest cluster")
        if self.epsilon > self.eps_max:
            message = f"epsilon={self.epsilon:g} above eps_max(M)={self.eps_max:.3g}"
            if self.strict_regime:
                raise ValidationError(message)
            logger.warning("%s (outside the asymptotic regime, continuing)", message)
        return self

    def meta_edges(self) -> List[Tuple[int, int]]:
        """Pares (k, l) ordenados con una arista dispersa de C_k a C_l."""
        K = self.num_clusters
        if self.topology is Topology.EXPLICIT:
            return list(self.explicit_edges)
        if K == 1:
            return []
        if self.topology is Topology.CYCLE:
            return [(k, (k + 1) % K) for k in range(K)]
        if self.topology is Topology.BIDIRECTIONAL_CYCLE:
            pairs = []
            for k in range(K):
                for l in ((k + 1) % K, (k - 1) % K):
                    if (k, l) not in pairs:
                        pairs.append((k, l))
            return pairs
        rng = derive_rng(self.seed, _TOPOLOGY_STREAM)
        order = rng.permutation(K)
        degree = max(1, min(self.regular_degree, K - 1))
        out: Dict[int, List[int]] = {int(k): [] for k in range(K)}
        # un ciclo aleatorio garantiza conexión fuerte
        for i in range(K):
            out[int(order[i])].append(int(order[(i + 1) % K]))
        for k in range(K):
            candidates = [l for l in rng.permutation(K).tolist() if l != k and l not in out[k]]
            out[k].extend(candidates[:degree - len(out[k])])
        return [(k, l) for k in range(K) for l in out[k]]


@dataclass(frozen=True)
class SparseEdge:
    source: int
    target: int
    probability: float
    source_cluster: int
    target_cluster: int

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.source, self.target)


@dataclass(frozen=True)
class SparseEdgeSet:
    """Aristas dispersas E_s con su probabilidad y agrupadas por cluster de origen."""
    edges: Tuple[SparseEdge, ...] = ()

    @property
    def by_cluster(self) -> Dict[int, Tuple[SparseEdge, ...]]:
        grouped: Dict[int, List[SparseEdge]] = {}
        for edge in self.edges:
            grouped.setdefault(edge.source_cluster, []).append(edge)
        return {k: tuple(v) for k, v in grouped.items()}

    def pairs(self) -> FrozenSet[Tuple[int, int]]:
        return frozenset(edge.pair for edge in self.edges)

    def meta_pairs(self) -> List[Tuple[int, int]]:
        """Pares de clusters conectados, en orden de aparición."""
        seen: List[Tuple[int, int]] = []
        for edge in self.edges:
            pair = (edge.source_cluster, edge.target_cluster)
            if pair not in seen:
                seen.append(pair)
        return seen

    def meta_adjacency(self, num_clusters: int) -> np.ndarray:
        adjacency = np.zeros((num_clusters, num_clusters), dtype=bool)
        for k, l in self.meta_pairs():
            adjacency[k, l] = True
        return adjacency

    def inbound_targets(self) -> Dict[int, int]:
        """Cluster -> estado de llegada, si todas las aristas entrantes coinciden."""
        targets: Dict[int, set] = {}
        for edge in self.edges:
            targets.setdefault(edge.target_cluster, set()).add(edge.target)
        return {k: next(iter(v)) for k, v in targets.items() if len(v) == 1}

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    @staticmethod
    def empty() -> 'SparseEdgeSet':
        return SparseEdgeSet(())

    @staticmethod
    def from_pairs(kernel: 'TransitionKernel', pairs: Iterable[Tuple[int, int]]) -> 'SparseEdgeSet':
        """Edge set for ``pairs`` with probabilities read from ``kernel``."""
        dense = kernel.dense()
        partition = kernel.partition
        edges = tuple(
            SparseEdge(int(x), int(y), float(dense[x, y]), int(partition[x]), int(partition[y]))
            for x, y in sorted(pairs)
        )
        return SparseEdgeSet(edges)


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """
    Kernel estocástico por filas sobre S con partición en clusters.

    ``dense_support`` es E_0 = supp p^0; las aristas dispersas son el
    soporte de ``matrix`` menos E_0. Las instancias son inmutables y se
    pueden compartir entre hilos.
    """
    matrix: sp.csr_matrix
    partition: np.ndarray
    dense_support: sp.csr_matrix
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        matrix = sp.csr_matrix(self.matrix, dtype=np.float64)
        matrix.eliminate_zeros()
        matrix.sort_indices()
        partition = np.asarray(self.partition, dtype=np.int64).copy()
        partition.setflags(write=False)
        support = sp.csr_matrix(self.dense_support, dtype=bool)
        support.eliminate_zeros()
        support.sort_indices()
        object.__setattr__(self, 'matrix', matrix)
        object.__setattr__(self, 'partition', partition)
        object.__setattr__(self, 'dense_support', support)
        if matrix.shape[0] != matrix.shape[1] or matrix.shape[0] != partition.shape[0]:
            raise ValidationError("kernel matrix and partition sizes disagree")

    # ESTRUCTURA

    @property
    def num_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_clusters(self) -> int:
        return int(self.partition.max()) + 1 if self.num_states else 0

    @cached_property
    def clusters(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.flatnonzero(self.partition == k) for k in range(self.num_clusters))

    @property
    def cluster_sizes(self) -> Tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)

    @property
    def max_cluster_size(self) -> int:
        return max(self.cluster_sizes)

    def row(self, x: int) -> Tuple[np.ndarray, np.ndarray]:
        start, stop = self.matrix.indptr[x], self.matrix.indptr[x + 1]
        return self.matrix.indices[start:stop], self.matrix.data[start:stop]

    def dense(self) -> np.ndarray:
        """Copia densa de sólo lectura (cacheada)."""
        return self._dense

    @cached_property
    def _dense(self) -> np.ndarray:
        array = self.matrix.toarray()
        array.setflags(write=False)
        return array

    def edge_pairs(self) -> FrozenSet[Tuple[int, int]]:
        coo = self.matrix.tocoo()
        return frozenset(zip(coo.row.tolist(), coo.col.tolist()))

    def dense_pairs(self) -> FrozenSet[Tuple[int, int]]:
        coo = self.dense_support.tocoo()
        return frozenset(zip(coo.row.tolist(), coo.col.tolist()))

    def sparse_pairs(self) -> FrozenSet[Tuple[int, int]]:
        return self.edge_pairs() - self.dense_pairs()

    def sparse_row_mass(self) -> np.ndarray:
        """Masa de cada fila fuera de su propio cluster."""
        coo = self.matrix.tocoo()
        outside = self.partition[coo.row] != self.partition[coo.col]
        return np.bincount(coo.row[outside], weights=coo.data[outside], minlength=self.num_states)

    def is_block_diagonal(self) -> bool:
        return not np.any(self.sparse_row_mass() > 0.0)

    def row_sum_error(self) -> float:
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        return float(np.max(np.abs(sums - 1.0))) if self.num_states else 0.0

    def contains_edge(self, x: int, y: int) -> bool:
        cols, _ = self.row(x)
        i = np.searchsorted(cols, y)
        return bool(i < len(cols) and cols[i] == y)

    # DERIVADOS

    def unperturbed(self) -> 'TransitionKernel':
        """p^0: cada fila restringida a su cluster y renormalizada."""
        coo = self.matrix.tocoo()
        inside = self.partition[coo.row] == self.partition[coo.col]
        block = sp.csr_matrix(
            (coo.data[inside], (coo.row[inside], coo.col[inside])), shape=self.matrix.shape
        )
        sums = np.asarray(block.sum(axis=1)).ravel()
        if np.any(sums <= 0.0):
            raise StructureError("a state has no mass inside its own cluster")
        block = sp.diags(1.0 / sums) @ block
        return TransitionKernel(block, self.partition, block.astype(bool), 0.0, self.seed)

    def with_probabilities(self, probabilities: np.ndarray) -> 'TransitionKernel':
        """Mismo S, partición y E_0 con nuevas probabilidades (p. ej. las de un modelo)."""
        return TransitionKernel.from_dense(
            probabilities, self.partition, self.epsilon, self.dense_support, self.seed
        )

    @staticmethod
    def from_dense(
        probabilities: np.ndarray,
        partition: Sequence[int],
        epsilon: float = 0.0,
        dense_support=None,
        seed: int = 0,
        tolerance: float = ROW_TOLERANCE,
    ) -> 'TransitionKernel':
        matrix = np.asarray(probabilities, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValidationError("transition matrix must be square")
        if np.any(matrix < 0.0) or np.any(matrix > 1.0):
            raise ValidationError("transition probabilities must lie in [0, 1]")
        error = np.max(np.abs(matrix.sum(axis=1) - 1.0)) if matrix.size else 0.0
        if error > tolerance:
            raise ValidationError(f"rows must sum to 1 (max error {error:.3g})")
        labels = np.asarray(partition, dtype=np.int64)
        if dense_support is None:
            dense_support = (matrix > 0.0) & (labels[:, None] == labels[None, :])
        return TransitionKernel(sp.csr_matrix(matrix), labels, sp.csr_matrix(dense_support), epsilon, seed)


# CONSTRUCCIÓN

def _block_is_connected(weights: np.ndarray) -> bool:
    count, _ = connected_components(sp.csr_matrix(weights > 0), directed=False)
    return count == 1


def _lazy_block(size: int, spec: GraphSpec, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Paseo perezoso sobre pesos simétricos; None si el grafo salió desconexo."""
    if size == 1:
        return np.ones((1, 1))
    if spec.intra_cluster_model is IntraClusterModel.LAZY_COMPLETE:
        weights = np.ones((size, size)) - np.eye(size)
    else:
        keep = np.triu(rng.random((size, size)) < spec.edge_density, k=1)
        values = rng.uniform(spec.weight_low, spec.weight_high, size=(size, size))
        weights = np.where(keep, values, 0.0)
        weights = weights + weights.T
    if not _block_is_connected(weights):
        return None
    walk = weights / weights.sum(axis=1, keepdims=True)
    return spec.laziness * np.eye(size) + (1.0 - spec.laziness) * walk


def build_unperturbed(spec: GraphSpec) -> TransitionKernel:
    """
    p^0 diagonal por bloques. Cada bloque es reversible respecto de la
    medida de grados, irreducible y aperiódico (lazo 1/2).
    """
    spec.validate()
    blocks = []
    for k, size in enumerate(spec.sizes):
        block = None
        for attempt in range(spec.max_retries):
            block = _lazy_block(size, spec, derive_rng(spec.seed, _BLOCK_STREAM, k, attempt))
            if block is not None:
                break
            logger.debug("cluster %d: disconnected draw on attempt %d, retrying", k, attempt)
        if block is None:
            raise ValidationError(
                f"cluster {k} stayed disconnected after {spec.max_retries} draws; "
                f"raise edge_density or change the seed"
            )
        blocks.append(sp.csr_matrix(block))
    matrix = sp.block_diag(blocks, format='csr')
    partition = np.repeat(np.arange(spec.num_clusters), spec.sizes)
    logger.info("built p0: K=%d, |S|=%d", spec.num_clusters, spec.num_states)
    return TransitionKernel(matrix, partition, matrix.astype(bool), 0.0, spec.seed)


def check_topology(pairs: Sequence[Tuple[int, int]], spec: GraphSpec) -> None:
    """Lanza ConstraintError si el meta-grafo viola algún tope."""
    K = spec.num_clusters
    seen = set()
    for k, l in pairs:
        if not (0 <= k < K and 0 <= l < K):
            raise ConstraintError(f"cluster pair ({k}, {l}) out of range", (k, l))
        if k == l:
            raise ConstraintError(f"sparse edge ({k}, {l}) must join distinct clusters", (k, l))
        if (k, l) in seen:
            raise ConstraintError(f"more than one sparse edge for cluster pair ({k}, {l})", (k, l))
        seen.add((k, l))
    capacity = spec.n_out * spec.d_out
    for k in range(K):
        outbound = [pair for pair in pairs if pair[0] == k]
        if K > 1 and not outbound:
            raise ConstraintError(f"cluster {k} has no outbound sparse edge", (k, k))
        if len(outbound) > capacity:
            raise ConstraintError(
                f"cluster {k} needs {len(outbound)} sparse edges but n_out*d_out={capacity}; "
                f"first excess pair {outbound[capacity]}",
                outbound[capacity],
            )


def plant_sparse_edges(p0: TransitionKernel, spec: GraphSpec) -> Tuple[TransitionKernel, SparseEdgeSet]:
    """
    p^ε a partir de p^0: una arista por par de clusters del meta-grafo,
    con probabilidad u·ε, u ~ U[sparse_low, 1]. Los orígenes del cluster k
    son sus primeros n_out estados; las entradas internas de cada fila
    origen se multiplican por (1 − masa dispersa de la fila).
    """
    spec.validate()
    if spec.epsilon == 0.0 or spec.num_clusters == 1:
        return p0, SparseEdgeSet.empty()
    pairs = spec.meta_edges()
    check_topology(pairs, spec)

    rng = derive_rng(spec.seed, _SPARSE_STREAM)
    clusters = p0.clusters
    designated = {l: int(clusters[l][rng.integers(len(clusters[l]))]) for l in range(spec.num_clusters)}
    edges: List[SparseEdge] = []
    for k in range(spec.num_clusters):
        outbound = [l for (src, l) in pairs if src == k]
        num_sources = min(spec.n_out, len(outbound))
        for i, l in enumerate(outbound):
            source = int(clusters[k][i % num_sources])
            target = designated[l] if spec.inbound_targets else int(clusters[l][rng.integers(len(clusters[l]))])
            scale = rng.uniform(spec.sparse_low, 1.0)
            edges.append(SparseEdge(source, target, float(scale * spec.epsilon), k, l))

    n = p0.num_states
    sparse_part = sp.csr_matrix(
        ([e.probability for e in edges], ([e.source for e in edges], [e.target for e in edges])),
        shape=(n, n),
    )
    row_mass = np.asarray(sparse_part.sum(axis=1)).ravel()
    matrix = sp.diags(1.0 - row_mass) @ p0.matrix + sparse_part
    kernel = TransitionKernel(matrix, p0.partition, p0.dense_support, spec.epsilon, spec.seed)
    logger.info("planted %d sparse edges (eps=%g, topology=%s)", len(edges), spec.epsilon, spec.topology.value)
    return kernel, SparseEdgeSet(tuple(edges))


def build_kernel(spec: GraphSpec) -> Tuple[TransitionKernel, SparseEdgeSet]:
    """build_unperturbed seguido de plant_sparse_edges."""
    return plant_sparse_edges(build_unperturbed(spec), spec)


# VALIDACIÓN DE HIPÓTESIS

@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    measured: Dict[str, float] = field(default_factory=dict)
    detail: str = ""
    applicable: bool = True
    advisory: bool = False

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'passed': self.passed,
            'applicable': self.applicable,
            'advisory': self.advisory,
            'measured': {k: float(v) for k, v in self.measured.items()},
            'detail': self.detail,
        }


@dataclass(frozen=True)
class AssumptionReport:
    checks: Tuple[AssumptionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.applicable and not c.advisory)

    def failures(self) -> List[AssumptionCheck]:
        return [c for c in self.checks if c.applicable and not c.advisory and not c.passed]

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {'passed': self.passed, 'checks': [c.to_dict() for c in self.checks]}


@dataclass(frozen=True)
class AssumptionThresholds:
    """Cotas con que se juzgan los valores medidos."""
    rho_low: float = 0.2
    rho_high: float = 5.0
    gamma_min: float = 0.05
    escape_const: float = 0.05


def _structure_check(kernel: TransitionKernel, edges: SparseEdgeSet, spec: GraphSpec) -> AssumptionCheck:
    problems = []
    pair_counts: Dict[Tuple[int, int], int] = {}
    per_source: Dict[int, int] = {}
    sources_by_cluster: Dict[int, set] = {}
    for edge in edges:
        if edge.source_cluster == edge.target_cluster:
            problems.append(f"edge {edge.pair} stays inside cluster {edge.source_cluster}")
        pair = (edge.source_cluster, edge.target_cluster)
        pair_counts[pair] = pair_counts.get(pair, 0) + 1
        per_source[edge.source] = per_source.get(edge.source, 0) + 1
        sources_by_cluster.setdefault(edge.source_cluster, set()).add(edge.source)
    for pair, count in sorted(pair_counts.items()):
        if count > 1:
            problems.append(f"cluster pair {pair} has {count} sparse edges")
    for source, count in sorted(per_source.items()):
        if count > spec.d_out:
            problems.append(f"state {source} has {count} sparse edges > d_out={spec.d_out}")
    for k, sources in sorted(sources_by_cluster.items()):
        if len(sources) > spec.n_out:
            problems.append(f"cluster {k} has {len(sources)} sources > n_out={spec.n_out}")
    if len(edges) and kernel.num_clusters > 1:
        for k in range(kernel.num_clusters):
            if k not in sources_by_cluster:
                problems.append(f"cluster {k} has no outbound sparse edge")
    if edges.pairs() != kernel.sparse_pairs():
        problems.append("planted edge set differs from supp(p_eps) minus supp(p0)")
    return AssumptionCheck(
        'sparse_structure',
        not problems,
        {'num_edges': float(len(edges)), 'max_source_degree': float(max(per_source.values(), default=0))},
        "; ".join(problems),
    )


def validate_assumptions(
    kernel: TransitionKernel,
    edges: SparseEdgeSet,
    spec: GraphSpec,
    thresholds: AssumptionThresholds = AssumptionThresholds(),
) -> AssumptionReport:
    """
    Mide las hipótesis sobre el kernel. Nunca lanza por un fallo: cada
    chequeo lleva su valor medido y si pasó.
    """
    from . import oracle

    checks: List[AssumptionCheck] = []
    row_error = kernel.row_sum_error()
    checks.append(AssumptionCheck('row_stochastic', row_error <= ROW_TOLERANCE, {'max_row_error': row_error}))

    scaled_low, scaled_high, gap_min = math.inf, 0.0, math.inf
    for k, states in enumerate(kernel.clusters):
        complement = oracle.stochastic_complement(kernel, k)
        pi_k = oracle.stationary_vector(complement)
        scaled_low = min(scaled_low, float(pi_k.min() * len(states)))
        scaled_high = max(scaled_high, float(pi_k.max() * len(states)))
        gap_min = min(gap_min, oracle.pseudo_spectral_gap(complement, pi_k))
    checks.append(AssumptionCheck(
        'stationary_mass',
        thresholds.rho_low <= scaled_low and scaled_high <= thresholds.rho_high,
        {'min_scaled_mass': scaled_low, 'max_scaled_mass': scaled_high},
    ))
    checks.append(AssumptionCheck(
        'pseudo_spectral_gap', gap_min >= thresholds.gamma_min,
        {'min_gap': gap_min, 'threshold': thresholds.gamma_min},
    ))

    checks.append(_structure_check(kernel, edges, spec))

    if len(edges) == 0:
        checks.append(AssumptionCheck('meta_escape', True, detail="no sparse edges", applicable=False))
    else:
        qstar = oracle.meta_kernel_qstar(kernel).rows
        M = kernel.max_cluster_size
        ratios = [qstar[k, l] * M / kernel.epsilon for k, l in edges.meta_pairs()]
        low = min(ratios)
        checks.append(AssumptionCheck(
            'meta_escape', low >= thresholds.escape_const,
            {'min_scaled_qstar': float(low), 'threshold': thresholds.escape_const},
        ))

    checks.append(AssumptionCheck(
        'epsilon_regime', spec.epsilon <= spec.eps_max,
        {'epsilon': spec.epsilon, 'eps_max': spec.eps_max}, advisory=True,
    ))
    report = AssumptionReport(tuple(checks))
    for failure in report.failures():
        logger.warning("assumption check %s failed: %s %s", failure.name, failure.measured, failure.detail)
    return report


# TAREAS DE RAZONAMIENTO

@dataclass(frozen=True)
class Task:
    x_in: int
    x_out: int
    meta_distance: int


def meta_distances(edges: SparseEdgeSet, num_clusters: int) -> np.ndarray:
    """Distancias BFS en el meta-grafo (inf si no hay camino)."""
    adjacency = sp.csr_matrix(edges.meta_adjacency(num_clusters).astype(float))
    return shortest_path(adjacency, directed=True, unweighted=True)


def sample_task(
    kernel: TransitionKernel,
    edges: SparseEdgeSet,
    rng: np.random.Generator,
    difficulty: float = 0.5,
    policy: str = "farthest",
) -> Task:
    """
    Par (X_in, X_out) cuyos clusters están a distancia ≥ ⌈difficulty·K⌉
    en el meta-grafo. ``farthest`` elige entre los pares más lejanos;
    ``uniform`` entre todos los factibles.
    """
    K = kernel.num_clusters
    adjacency = sp.csr_matrix(edges.meta_adjacency(K))
    count, _ = connected_components(adjacency, directed=True, connection='strong')
    if count != 1:
        raise StructureError(f"meta-graph is not strongly connected ({count} components)")
    distances = meta_distances(edges, K)
    required = math.ceil(difficulty * K)
    feasible = [(k, l) for k in range(K) for l in range(K)
                if np.isfinite(distances[k, l]) and distances[k, l] >= required]
    if not feasible:
        raise InfeasibleTaskError(
            f"no cluster pair at meta-distance >= {required} (K={K}); topology too well connected"
        )
    if policy == "farthest":
        top = max(distances[k, l] for k, l in feasible)
        feasible = [(k, l) for k, l in feasible if distances[k, l] == top]
    elif policy != "uniform":
        raise ValidationError(f"unknown task policy {policy!r}")
    k, l = feasible[int(rng.integers(len(feasible)))]
    x_in = int(kernel.clusters[k][rng.integers(len(kernel.clusters[k]))])
    x_out = int(kernel.clusters[l][rng.integers(len(kernel.clusters[l]))])
    return Task(x_in, x_out, int(distances[k, l]))


# SERIALIZACIÓN

def kernel_to_text(kernel: TransitionKernel) -> str:
    """
    Formato de líneas: cabecera ``K M epsilon seed`` y una línea por
    entrada no nula ``src dst prob cluster_src cluster_dst is_sparse``.
    """
    dense_pairs = kernel.dense_pairs()
    lines = [f"{kernel.num_clusters} {kernel.max_cluster_size} {kernel.epsilon:.17g} {kernel.seed}"]
    coo = kernel.matrix.tocoo()
    for x, y, p in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
        sparse = 0 if (x, y) in dense_pairs else 1
        lines.append(f"{x} {y} {p:.17g} {kernel.partition[x]} {kernel.partition[y]} {sparse}")
    return "\n".join(lines) + "\n"


def kernel_from_text(text: str) -> Tuple[TransitionKernel, SparseEdgeSet]:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows or len(rows[0]) != 4:
        raise ValidationError("kernel file must start with 'K M epsilon seed'")
    _, _, epsilon, seed = rows[0]
    src, dst, prob, labels, sparse_flags = [], [], [], {}, []
    for fields in rows[1:]:
        if len(fields) != 6:
            raise ValidationError(f"malformed kernel line: {' '.join(fields)}")
        x, y = int(fields[0]), int(fields[1])
        src.append(x)
        dst.append(y)
        prob.append(float(fields[2]))
        labels[x], labels[y] = int(fields[3]), int(fields[4])
        sparse_flags.append(fields[5] == "1")
    n = max(labels) + 1
    partition = np.array([labels[x] for x in range(n)])
    matrix = sp.csr_matrix((prob, (src, dst)), shape=(n, n))
    dense_mask = [not s for s in sparse_flags]
    support = sp.csr_matrix(
        (np.ones(sum(dense_mask), dtype=bool),
         (np.array(src)[dense_mask], np.array(dst)[dense_mask])),
        shape=(n, n),
    )
    kernel = TransitionKernel(matrix, partition, support, float(epsilon), int(seed))
    if kernel.row_sum_error() > 1e-12:
        raise ValidationError("kernel file rows do not sum to 1")
    return kernel, SparseEdgeSet.from_pairs(kernel, kernel.sparse_pairs())


def io_save_kernel(path: str, kernel: TransitionKernel) -> IO[str]:
    return io_write_text(path, kernel_to_text(kernel))


def io_load_kernel(path: str) -> IO[Tuple[TransitionKernel, SparseEdgeSet]]:
    return io_read_text(path).map(kernel_from_text)
