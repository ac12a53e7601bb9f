"""
Cantidades exactas por álgebra lineal densa sobre instancias chicas.

Todas las funciones son puras: reciben un ``TransitionKernel`` (o una
matriz densa) inmutable y devuelven arrays nuevos. El tamaño está acotado
por ``MAX_DENSE_STATES``; más allá sólo quedan las estimaciones Monte
Carlo de ``metacot.dynamics``.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    NumericalInconsistencyError,
    ReachabilityError,
    SizeLimitError,
    StructureError,
    ValidationError,
)
from .kernel import TransitionKernel

logger = logging.getLogger(__name__)

MAX_DENSE_STATES = 4096
CLAMP_TOLERANCE = 1e-12
COUPLING_TOLERANCE = 1e-9
ROW_TOLERANCE = 1e-10


def _guard(n: int) -> None:
    if n > MAX_DENSE_STATES:
        raise SizeLimitError(
            f"{n} states exceed the dense oracle limit of {MAX_DENSE_STATES}; "
            f"use the Monte Carlo estimators in metacot.dynamics"
        )


def _as_dense(kernel) -> np.ndarray:
    if isinstance(kernel, TransitionKernel):
        _guard(kernel.num_states)
        return kernel.dense()
    matrix = np.asarray(kernel, dtype=np.float64)
    _guard(matrix.shape[0])
    return matrix


def clamp_probabilities(values: np.ndarray, renormalize: bool = True) -> np.ndarray:
    """
    Lleva a 0 negativos diminutos (> −1e-12) y renormaliza filas.
    Negativos mayores son un error numérico.
    """
    values = np.array(values, dtype=np.float64)
    if np.any(values < -CLAMP_TOLERANCE):
        raise NumericalInconsistencyError(f"probability {values.min():.3g} below -{CLAMP_TOLERANCE}")
    values[values < 0.0] = 0.0
    if renormalize:
        if values.ndim == 1:
            values /= values.sum()
        else:
            values /= values.sum(axis=1, keepdims=True)
    return values


def check_stochastic(matrix: np.ndarray, tolerance: float = ROW_TOLERANCE) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError("expected a square matrix")
    if np.any(matrix < -CLAMP_TOLERANCE) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > tolerance):
        raise ValidationError("matrix is not row-stochastic")
    return matrix


def states_reaching(matrix: np.ndarray, targets: Iterable[int]) -> np.ndarray:
    """Máscara de los estados desde los que se alcanza algún objetivo."""
    n = matrix.shape[0]
    targets = list(targets)
    # grafo invertido con un nodo extra que apunta a todos los objetivos
    rows, cols = np.nonzero(matrix)
    sources = np.concatenate([cols, np.full(len(targets), n)])
    sinks = np.concatenate([rows, np.asarray(targets, dtype=np.int64)])
    reverse = sp.csr_matrix((np.ones(len(sources), dtype=bool), (sources, sinks)), shape=(n + 1, n + 1))
    order = breadth_first_order(reverse, n, directed=True, return_predecessors=False)
    mask = np.zeros(n, dtype=bool)
    mask[order[order < n]] = True
    return mask


def is_irreducible(matrix: np.ndarray) -> bool:
    count, _ = connected_components(sp.csr_matrix(matrix > 0), directed=True, connection='strong')
    return count == 1


# ESTACIONARIA

def stationary_vector(matrix) -> np.ndarray:
    """
    π con πP = π, Σπ = 1, por LU sobre el sistema transpuesto con la
    última ecuación reemplazada por la normalización.
    """
    P = _as_dense(matrix)
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    if not is_irreducible(P):
        raise StructureError("chain is reducible; stationary distribution is not unique")
    system = P.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = la.lu_solve(la.lu_factor(system), rhs)
    except (la.LinAlgError, ValueError) as exc:
        raise StructureError(f"singular stationary system: {exc}") from exc
    return clamp_probabilities(pi)


@dataclass(frozen=True)
class StationaryDecomposition:
    """π^ε global, π_k^ε por cluster y acoplamiento ξ_k = π^ε(C_k)."""
    global_: np.ndarray
    per_cluster: Tuple[np.ndarray, ...]
    coupling: np.ndarray

    def coupling_error(self, clusters: Sequence[np.ndarray]) -> float:
        return max(
            float(np.max(np.abs(self.global_[states] - xi * pi_k)))
            for states, xi, pi_k in zip(clusters, self.coupling, self.per_cluster)
        )

    def residual(self, matrix: np.ndarray) -> float:
        return float(np.max(np.abs(self.global_ @ matrix - self.global_)))


def stationary(kernel: TransitionKernel) -> StationaryDecomposition:
    """
    Descomposición estacionaria. Para kernels diagonales por bloques
    (ε = 0) π no es única: se usa ξ_k = 1/K.
    """
    P = _as_dense(kernel)
    clusters = kernel.clusters
    if kernel.is_block_diagonal():
        per_cluster = tuple(stationary_vector(P[np.ix_(c, c)]) for c in clusters)
        coupling = np.full(len(clusters), 1.0 / len(clusters))
        pi = np.zeros(kernel.num_states)
        for states, xi, pi_k in zip(clusters, coupling, per_cluster):
            pi[states] = xi * pi_k
        return StationaryDecomposition(pi, per_cluster, coupling)

    pi = stationary_vector(P)
    per_cluster = tuple(stationary_vector(stochastic_complement(kernel, k)) for k in range(len(clusters)))
    coupling = np.array([pi[c].sum() for c in clusters])
    decomposition = StationaryDecomposition(pi, per_cluster, coupling)
    error = decomposition.coupling_error(clusters)
    if error > COUPLING_TOLERANCE:
        raise NumericalInconsistencyError(f"coupling identity violated by {error:.3g}")
    return decomposition


def unperturbed_stationary(kernel: TransitionKernel) -> Tuple[np.ndarray, ...]:
    """μ_k = π_k^0 a partir de los bloques renormalizados de p^0."""
    P0 = _as_dense(kernel.unperturbed())
    return tuple(stationary_vector(P0[np.ix_(c, c)]) for c in kernel.clusters)


# TIEMPOS DE LLEGADA Y ESCAPE

def expected_hitting_time(kernel, target: Iterable[int]) -> np.ndarray:
    """
    h(x) = E_x[τ_A], resolviendo (I − Q)h = 1 sobre los estados fuera de A.

    Con p(1|0) = 0.1 y objetivo {1}, h = (10, 0).
    """
    P = _as_dense(kernel)
    n = P.shape[0]
    target = sorted(set(int(t) for t in target))
    if not target:
        raise ValidationError("target set must be nonempty")
    reach = states_reaching(P, target)
    if not reach.all():
        raise ReachabilityError(f"{int((~reach).sum())} states never reach the target set")
    inside = np.zeros(n, dtype=bool)
    inside[target] = True
    free = np.flatnonzero(~inside)
    h = np.zeros(n)
    if len(free):
        Q = P[np.ix_(free, free)]
        try:
            h[free] = la.solve(np.eye(len(free)) - Q, np.ones(len(free)))
        except la.LinAlgError as exc:
            raise ReachabilityError(f"singular hitting-time system: {exc}") from exc
    return h


def _absorption(P: np.ndarray, absorbing: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Solución de u = Q u + rhs en los estados no absorbentes; los que no
    alcanzan el conjunto absorbente quedan en 0.
    """
    n = P.shape[0]
    reach = states_reaching(P, np.flatnonzero(absorbing))
    free = np.flatnonzero(~absorbing & reach)
    u = np.zeros((n,) + rhs.shape[1:])
    if len(free):
        system = np.eye(len(free)) - P[np.ix_(free, free)]
        try:
            u[free] = la.solve(system, rhs[free])
        except la.LinAlgError as exc:
            raise StructureError(f"singular absorption system: {exc}") from exc
    return u


def escape_probability(kernel, x: int, A: Iterable[int]) -> float:
    """
    P_x(τ̄_A < τ̄_x): primer paso desde x con x y A absorbentes.

    Example:
        >>> escape_probability([[0.7, 0.3], [0.4, 0.6]], 0, [1])
        0.3
    """
    P = _as_dense(kernel)
    A = sorted(set(int(a) for a in A))
    if x in A:
        raise ValidationError(f"state {x} lies in the target set")
    if not A:
        return 0.0
    absorbing = np.zeros(P.shape[0], dtype=bool)
    absorbing[A] = True
    absorbing[x] = True
    rhs = P[:, A].sum(axis=1)
    reach = states_reaching(P, np.flatnonzero(absorbing))
    successors = np.flatnonzero(P[x] > 0)
    if np.any(~reach[successors] & ~absorbing[successors]):
        raise StructureError(f"from state {x} the walk can avoid both {x} and the target set forever")
    u = _absorption(P, absorbing, rhs)
    value = P[x, A].sum() + P[x, ~absorbing] @ u[~absorbing]
    return float(clamp_probabilities(np.array([value]), renormalize=False)[0])


def detailed_balance_residual(kernel: TransitionKernel) -> float:
    """max_{x≠y} |π(x)P_x(τ̄_y<τ̄_x) − π(y)P_y(τ̄_x<τ̄_y)|."""
    P = _as_dense(kernel)
    pi = stationary(kernel).global_
    n = P.shape[0]
    worst = 0.0
    for x in range(n):
        for y in range(x + 1, n):
            forward = pi[x] * escape_probability(P, x, [y])
            backward = pi[y] * escape_probability(P, y, [x])
            worst = max(worst, abs(forward - backward))
    return worst


# COMPLEMENTO ESTOCÁSTICO Y BRECHAS

def stochastic_complement(kernel: TransitionKernel, k: int) -> np.ndarray:
    """
    S_kk = P_kk + P_k*(I − P_*)⁻¹P_*k: la cadena observada sólo en C_k.
    Si C_k no tiene salida devuelve P_kk tal cual.
    """
    P = _as_dense(kernel)
    inside = kernel.partition == k
    states, others = np.flatnonzero(inside), np.flatnonzero(~inside)
    block = P[np.ix_(states, states)].copy()
    exits = P[np.ix_(states, others)]
    if not np.any(exits > 0.0):
        return block
    try:
        through = la.solve(np.eye(len(others)) - P[np.ix_(others, others)], P[np.ix_(others, states)])
    except la.LinAlgError as exc:
        raise StructureError(f"I - P_* singular for cluster {k}: {exc}") from exc
    complement = block + exits @ through
    error = np.max(np.abs(complement.sum(axis=1) - 1.0))
    if error > ROW_TOLERANCE:
        raise NumericalInconsistencyError(f"stochastic complement of cluster {k} off by {error:.3g}")
    return clamp_probabilities(complement)


def time_reversal(matrix, pi: np.ndarray) -> np.ndarray:
    """P†_ij = π_j P_ji / π_i."""
    P = np.asarray(matrix, dtype=np.float64)
    return (P.T * pi[None, :]) / pi[:, None]


def multiplicative_reversiblization(matrix, pi: np.ndarray, power: int = 1) -> np.ndarray:
    """(P†)^m P^m, reversible respecto de π."""
    P = np.linalg.matrix_power(np.asarray(matrix, dtype=np.float64), power)
    return time_reversal(P, pi) @ P


def spectral_gap(matrix, pi: np.ndarray) -> float:
    """1 − λ₂ de una matriz reversible respecto de π, vía eigvalsh de D^½ P D^-½."""
    P = np.asarray(matrix, dtype=np.float64)
    if P.shape[0] == 1:
        return 1.0
    root = np.sqrt(pi)
    symmetric = root[:, None] * P / root[None, :]
    symmetric = 0.5 * (symmetric + symmetric.T)
    eigenvalues = la.eigvalsh(symmetric)
    return float(1.0 - eigenvalues[-2])


def pseudo_spectral_gap(matrix, pi: Optional[np.ndarray] = None, max_power: int = 8) -> float:
    """
    γ† ≈ max_{1≤m≤max_power} γ((P†)^m P^m)/m. Truncar m da una cota
    inferior de γ†.
    """
    P = check_stochastic(_as_dense(matrix))
    if pi is None:
        pi = stationary_vector(P)
    reversed_ = time_reversal(P, pi)
    forward_power, reversed_power = np.eye(P.shape[0]), np.eye(P.shape[0])
    best = 0.0
    for m in range(1, max_power + 1):
        forward_power = forward_power @ P
        reversed_power = reversed_power @ reversed_
        best = max(best, spectral_gap(reversed_power @ forward_power, pi) / m)
    return best


# META-KERNELS

@dataclass(frozen=True)
class MetaKernel:
    """Kernel K×K sobre clusters (q⋆) o representantes (q∘)."""
    labels: Tuple[int, ...]
    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.shape != (len(self.labels), len(self.labels)):
            raise ValidationError("meta-kernel shape does not match its labels")
        if np.any(rows < 0.0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > ROW_TOLERANCE):
            raise NumericalInconsistencyError("meta-kernel rows must be stochastic")
        rows.setflags(write=False)
        object.__setattr__(self, 'rows', rows)
        object.__setattr__(self, 'labels', tuple(int(l) for l in self.labels))

    @property
    def size(self) -> int:
        return len(self.labels)

    def off_diagonal(self) -> np.ndarray:
        return self.rows - np.diag(np.diag(self.rows))

    def to_text(self) -> str:
        """Mismo formato que los kernels, sin la columna is_sparse."""
        lines = [f"{self.size} 1 0 0"]
        for k in range(self.size):
            for l in range(self.size):
                if self.rows[k, l] > 0.0:
                    lines.append(f"{self.labels[k]} {self.labels[l]} {self.rows[k, l]:.17g} {k} {l}")
        return "\n".join(lines) + "\n"


def _fill_diagonal(off: np.ndarray, name: str) -> np.ndarray:
    off = clamp_probabilities(off, renormalize=False)
    np.fill_diagonal(off, 0.0)
    mass = off.sum(axis=1)
    if np.any(mass >= 1.0):
        raise NumericalInconsistencyError(f"{name} row {int(np.argmax(mass))} has off-diagonal mass {mass.max():.3g}")
    np.fill_diagonal(off, 1.0 - mass)
    return off


def meta_kernel_qstar(kernel: TransitionKernel) -> MetaKernel:
    """
    q⋆(C_l|C_k) = Σ_{x∈C_k} μ_k(x)² P_x(τ̄_{C_l} < τ̄_x), k ≠ l; la
    diagonal completa la fila.
    """
    K = kernel.num_clusters
    labels = tuple(range(K))
    if kernel.is_block_diagonal():
        return MetaKernel(labels, np.eye(K))
    P = _as_dense(kernel)
    mu = unperturbed_stationary(kernel)
    off = np.zeros((K, K))
    for k, states in enumerate(kernel.clusters):
        for l, target in enumerate(kernel.clusters):
            if l == k:
                continue
            off[k, l] = sum(
                mu[k][i] ** 2 * escape_probability(P, int(x), target) for i, x in enumerate(states)
            )
    logger.debug("q_star off-diagonal row masses: %s", off.sum(axis=1))
    return MetaKernel(labels, _fill_diagonal(off, "q_star"))


def check_representatives(kernel: TransitionKernel, representatives: Sequence[int]) -> List[int]:
    reps = [int(x) for x in representatives]
    clusters = [int(kernel.partition[x]) for x in reps]
    if sorted(clusters) != list(range(kernel.num_clusters)):
        raise ValidationError(f"representatives {reps} are not one state per cluster")
    # orden por cluster
    return [x for _, x in sorted(zip(clusters, reps))]


def first_return_distribution(kernel, representatives: Sequence[int]) -> np.ndarray:
    """
    Fila k: distribución de X en el primer retorno a S∘ (t ≥ 1) partiendo
    de x_k. Un único sistema con S∘ absorbente y K lados derechos.
    """
    P = _as_dense(kernel)
    reps = list(representatives)
    absorbing = np.zeros(P.shape[0], dtype=bool)
    absorbing[reps] = True
    u = _absorption(P, absorbing, P[:, reps])
    return np.array([P[x, reps] + P[x, ~absorbing] @ u[~absorbing] for x in reps])


def meta_kernel_qcirc(kernel: TransitionKernel, representatives: Sequence[int]) -> MetaKernel:
    """q∘(x_l|x_k) = π_k^ε(x_k)·P_{x_k}(X_{τ̄_{S∘}} = x_l), k ≠ l."""
    reps = check_representatives(kernel, representatives)
    K = len(reps)
    if K == 1:
        return MetaKernel(tuple(reps), np.ones((1, 1)))
    decomposition = stationary(kernel)
    weights = np.array([
        decomposition.per_cluster[k][np.searchsorted(kernel.clusters[k], x)] for k, x in enumerate(reps)
    ])
    exits = first_return_distribution(kernel, reps)
    return MetaKernel(tuple(reps), _fill_diagonal(weights[:, None] * exits, "q_circ"))


def qcirc_escape_ratios(kernel: TransitionKernel, representatives: Sequence[int]) -> np.ndarray:
    """
    Matriz K×K de P_{x_k}(τ̄∘_{x_l} < τ̄∘_{x_k}) / q⋆(C_l|C_k) con las
    escapadas calculadas sobre la cadena q∘; NaN en la diagonal y donde
    q⋆ se anula.
    """
    qcirc = meta_kernel_qcirc(kernel, representatives).rows
    qstar = meta_kernel_qstar(kernel).rows
    K = qcirc.shape[0]
    ratios = np.full((K, K), np.nan)
    for k in range(K):
        for l in range(K):
            if k != l and qstar[k, l] > 0.0:
                ratios[k, l] = escape_probability(qcirc, k, [l]) / qstar[k, l]
    return ratios


def qstar_reversibility_ratios(kernel: TransitionKernel) -> np.ndarray:
    """π(C_k)q⋆(l|k) / π(C_l)q⋆(k|l) para los pares con ambas entradas positivas."""
    qstar = meta_kernel_qstar(kernel).rows
    xi = stationary(kernel).coupling
    K = qstar.shape[0]
    ratios = np.full((K, K), np.nan)
    for k in range(K):
        for l in range(K):
            if k != l and qstar[k, l] > 0.0 and qstar[l, k] > 0.0:
                ratios[k, l] = xi[k] * qstar[k, l] / (xi[l] * qstar[l, k])
    return ratios


def metastability_ratio(kernel: TransitionKernel, representatives: Sequence[int]) -> float:
    """
    sup_{x∈S∘, y∉S∘} P_x(τ̄_{S∘∖{x}} < τ̄_x) / P_y(τ̄_{S∘} < τ̄_y).
    Valores chicos indican un sistema metaestable.
    """
    reps = check_representatives(kernel, representatives)
    P = _as_dense(kernel)
    numerator = max(escape_probability(P, x, [r for r in reps if r != x]) for x in reps)
    if numerator == 0.0:
        return 0.0
    outside = [y for y in range(P.shape[0]) if y not in set(reps)]
    if not outside:
        return 0.0
    denominator = min(escape_probability(P, y, reps) for y in outside)
    return float(numerator / denominator)


# CADENA REDUCIDA

@dataclass(frozen=True)
class ReducedChainEstimate:
    """Frecuencias empíricas de transición de la cadena observada en C_k."""
    frequencies: np.ndarray
    stderr: np.ndarray
    num_transitions: int


def reduced_chain_frequencies(
    kernel: TransitionKernel,
    k: int,
    num_steps: int,
    rng: np.random.Generator,
    num_batches: int = 20,
) -> ReducedChainEstimate:
    """
    Simula X durante ``num_steps`` pasos y cuenta las transiciones entre
    visitas consecutivas a C_k. El error estándar sale de medias por lotes.
    """
    from .dynamics import Walker

    states = kernel.clusters[k]
    local = {int(x): i for i, x in enumerate(states)}
    size = len(states)
    walker = Walker(kernel)
    batch_counts = np.zeros((num_batches, size, size))
    batch_length = max(1, num_steps // num_batches)
    x = int(states[0])
    previous = local[x]
    uniforms = rng.random(num_steps)
    for t in range(num_steps):
        x = walker.next_state(x, float(uniforms[t]))
        if x in local:
            batch = min(t // batch_length, num_batches - 1)
            batch_counts[batch, previous, local[x]] += 1.0
            previous = local[x]
    totals = batch_counts.sum(axis=0)
    frequencies = totals / np.maximum(totals.sum(axis=1, keepdims=True), 1.0)
    row_totals = batch_counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid='ignore', divide='ignore'):
        per_batch = np.where(row_totals > 0, batch_counts / row_totals, np.nan)
    spread = np.nanstd(per_batch, axis=0, ddof=1)
    valid = np.maximum(np.sum(row_totals > 0, axis=0), 1)
    stderr = np.nan_to_num(spread / np.sqrt(valid), nan=0.0)
    return ReducedChainEstimate(frequencies, stderr, int(totals.sum()))
