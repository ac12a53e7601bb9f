"""
Destilado de las transiciones entre clusters.

1. ``label_clusters`` elige representantes S∘ y asigna cada estado a uno.
2. ``population_ddist`` da la ley conjunta de (Y₀, Y₁) sobre S∘×S∘, exacta
   vía oráculo o contada en streaming con ``collect_ddist``.
3. ``train_distill`` ajusta un softmax K×K con umbral a mitad de camino.
4. ``rescale`` suma β a los logits fuera de la diagonal (Z⁺).
5. ``distilled_cot`` y ``lift_path`` generan caminos cortos entre clusters
   y los bajan a caminos válidos del kernel original.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from utils.rng import derive_rng, uniform_blocks

from .dynamics import Path, RngLike, master_seed, trajectory, walker_for
from .errors import SupportRecoveryError, ValidationError
from .kernel import SparseEdgeSet, TransitionKernel
from .oracle import MetaKernel, check_representatives, meta_kernel_qcirc, stationary
from .softmax import SoftmaxTable, masked_softmax

logger = logging.getLogger(__name__)

# objetivos por debajo de esto cuentan como transiciones ausentes
ABSENT_TARGET = 1e-12


# ETIQUETADO

@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """Representantes S∘ (en orden de descubrimiento) y ι: S → S∘."""
    representatives: Tuple[int, ...]
    iota: np.ndarray

    def __post_init__(self):
        iota = np.asarray(self.iota, dtype=np.int64).copy()
        iota.setflags(write=False)
        object.__setattr__(self, 'iota', iota)
        object.__setattr__(self, 'representatives', tuple(int(x) for x in self.representatives))
        for x in self.representatives:
            if iota[x] != x:
                raise ValidationError(f"representative {x} is not labelled with itself")

    @property
    def size(self) -> int:
        return len(self.representatives)

    def is_transversal(self, kernel: TransitionKernel) -> bool:
        clusters = sorted(int(kernel.partition[x]) for x in self.representatives)
        return clusters == list(range(kernel.num_clusters))

    def matches_partition(self, kernel: TransitionKernel) -> bool:
        """Cierto si ι es constante exactamente sobre cada cluster verdadero."""
        if not self.is_transversal(kernel):
            return False
        return all(len(set(self.iota[c].tolist())) == 1 for c in kernel.clusters)

    def ordered(self, kernel: TransitionKernel) -> 'ClusterLabeling':
        """Representantes ordenados por cluster verdadero."""
        return ClusterLabeling(tuple(check_representatives(kernel, self.representatives)), self.iota)

    @staticmethod
    def from_representatives(kernel: TransitionKernel, representatives: Sequence[int]) -> 'ClusterLabeling':
        """Etiquetado exacto: cada estado va al representante de su cluster."""
        reps = check_representatives(kernel, representatives)
        return ClusterLabeling(tuple(reps), np.array(reps)[kernel.partition])


def label_clusters(kernel: TransitionKernel, T0: int, rng: RngLike,
                   inbound_targets: Optional[Dict[int, int]] = None) -> ClusterLabeling:
    """
    Mientras queden estados sin etiqueta: toma uno al azar como
    representante y etiqueta con él los estados sin etiqueta que visita un
    rollout de T₀ pasos. Con ``inbound_targets`` (cluster → x_k) los
    representantes se reemplazan por esos puntos.
    """
    seed = master_seed(rng)
    walker = walker_for(kernel)
    iota = np.full(kernel.num_states, -1, dtype=np.int64)
    representatives: List[int] = []
    draw = 0
    while np.any(iota < 0):
        unlabeled = np.flatnonzero(iota < 0)
        x = int(unlabeled[derive_rng(seed, draw, 0).integers(len(unlabeled))])
        representatives.append(x)
        iota[x] = x
        for y in _walk_steps(walker, x, T0, derive_rng(seed, draw, 1)):
            if iota[y] < 0:
                iota[y] = x
        draw += 1
    logger.debug("labelled %d states with %d representatives", kernel.num_states, len(representatives))
    labeling = ClusterLabeling(tuple(representatives), iota)
    if inbound_targets:
        labeling = _override_representatives(kernel, labeling, inbound_targets)
    return labeling


def _walk_steps(walker, x0: int, steps: int, rng: np.random.Generator):
    states = walker.walk(x0, uniform_blocks(rng, block=1024))
    next(states)
    for _ in range(steps):
        yield next(states)


def _override_representatives(kernel: TransitionKernel, labeling: ClusterLabeling,
                              targets: Dict[int, int]) -> ClusterLabeling:
    replacement = {}
    for x in labeling.representatives:
        k = int(kernel.partition[x])
        replacement[x] = targets.get(k, x)
    iota = np.array([replacement[int(r)] for r in labeling.iota])
    for new in replacement.values():
        iota[new] = new
    return ClusterLabeling(tuple(replacement[x] for x in labeling.representatives), iota)


# DATOS DE DESTILADO

def population_ddist(kernel: TransitionKernel, labeling: ClusterLabeling) -> np.ndarray:
    """
    Ley exacta J[k, l] = ξ_k·q∘(x_l|x_k) con los representantes ordenados
    por cluster.
    """
    if not labeling.is_transversal(kernel):
        raise ValidationError("exact D_dist needs one representative per true cluster")
    reps = check_representatives(kernel, labeling.representatives)
    qcirc = meta_kernel_qcirc(kernel, reps).rows
    xi = stationary(kernel).coupling
    return xi[:, None] * qcirc


@dataclass(frozen=True, eq=False)
class DistillCounts:
    """Contadores O(K²) por lote; sumables entre cadenas."""
    representatives: Tuple[int, ...]
    batches: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.batches.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.total, 1)

    def stderr(self) -> np.ndarray:
        """Error estándar de ``frequencies`` por medias de lotes."""
        totals = self.batches.sum(axis=(1, 2))
        valid = totals > 0
        per_batch = self.batches[valid] / totals[valid, None, None]
        if len(per_batch) < 2:
            return np.zeros(self.batches.shape[1:])
        return per_batch.std(axis=0, ddof=1) / math.sqrt(len(per_batch))

    def merge(self, other: 'DistillCounts') -> 'DistillCounts':
        if self.representatives != other.representatives:
            raise ValidationError("cannot merge counts over different representatives")
        return DistillCounts(self.representatives, np.concatenate([self.batches, other.batches]))


def collect_ddist(
    kernel: TransitionKernel,
    labeling: ClusterLabeling,
    num_steps: int,
    rng: RngLike,
    num_batches: int = 20,
    chain: int = 0,
) -> DistillCounts:
    """
    Corre la cadena ``num_steps`` pasos y aplica las reglas de
    recolección: en cada visita a S∘ se registra (retorno previo, X_t);
    fuera de S∘ se registra (ι(X_t), ι(X_t)). El prefijo anterior a la
    primera visita a S∘ se descarta.
    """
    reps = list(labeling.representatives)
    if kernel.num_clusters == len(reps) and labeling.is_transversal(kernel):
        reps = check_representatives(kernel, reps)
    index = {x: i for i, x in enumerate(reps)}
    iota_index = np.array([index[int(r)] for r in labeling.iota])
    K = len(reps)
    batches = np.zeros((num_batches, K, K))
    batch_length = max(1, num_steps // num_batches)
    walker = walker_for(kernel)
    seed = master_seed(rng)
    states = walker.walk(reps[0], uniform_blocks(derive_rng(seed, chain), block=4096))
    previous: Optional[int] = None
    for t, x in zip(range(num_steps), states):
        batch = min(t // batch_length, num_batches - 1)
        if x in index:
            if previous is not None:
                batches[batch, previous, index[x]] += 1
            previous = index[x]
        elif previous is not None:
            label = iota_index[x]
            batches[batch, label, label] += 1
    return DistillCounts(tuple(reps), batches)


# ENTRENAMIENTO

@dataclass(frozen=True)
class DistillSchedule:
    T_dist: Optional[int] = None
    T_thres: Optional[int] = None
    eta: Optional[float] = None
    beta: Optional[float] = None
    c_thres: float = 0.1
    c_beta: float = 1.0
    c_dist: float = 80.0

    def resolve(self, epsilon: float, cluster_size: int, weights: np.ndarray) -> 'DistillSchedule':
        """T_thres = ⌈2M/(c_thres·ε)⌉, T_dist = T_thres + ⌈c_dist·M/ε⌉, β = ln(c_β·M/ε)."""
        if epsilon <= 0.0:
            raise ValidationError("distillation needs epsilon > 0")
        T_thres = self.T_thres if self.T_thres is not None else math.ceil(2 * cluster_size / (self.c_thres * epsilon))
        T_dist = self.T_dist if self.T_dist is not None else T_thres + math.ceil(self.c_dist * cluster_size / epsilon)
        resolved = replace(
            self,
            T_thres=T_thres,
            T_dist=T_dist,
            eta=self.eta if self.eta is not None else float(1.0 / weights.max()),
            beta=self.beta if self.beta is not None else math.log(self.c_beta * cluster_size / epsilon),
        )
        return resolved.validate()

    def validate(self) -> 'DistillSchedule':
        if not 0.0 < self.c_thres < 1.0:
            raise ValidationError("c_thres must lie in (0, 1)")
        if self.T_thres is not None and self.T_dist is not None and self.T_thres >= self.T_dist:
            raise ValidationError(f"T_thres={self.T_thres} must be below T_dist={self.T_dist}")
        if self.beta is not None and self.beta <= 0.0:
            raise ValidationError("beta must be positive")
        return self


class DistillResult(NamedTuple):
    model: SoftmaxTable
    errors: np.ndarray
    schedule: DistillSchedule


def train_distill(ddist: np.ndarray, schedule: DistillSchedule, epsilon: float, cluster_size: int) -> DistillResult:
    """
    Descenso por gradiente sobre la entropía cruzada poblacional desde
    Z = 0, con μ = marginal de Y₀ y objetivo q = D_dist normalizada por
    filas. En T_thres se enmascaran las entradas con q̂ < c_thres·ε/M.
    """
    ddist = np.asarray(ddist, dtype=np.float64)
    weights = ddist.sum(axis=1)
    if np.any(weights <= 0.0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValidationError("D_dist must be a joint distribution with positive row marginals")
    target = ddist / weights[:, None]
    schedule = schedule.resolve(epsilon, cluster_size, weights)
    threshold = schedule.c_thres * epsilon / cluster_size
    K = ddist.shape[0]
    logits = np.zeros((K, K))
    mask = np.zeros((K, K), dtype=bool)
    errors = np.empty(schedule.T_dist)
    Q = masked_softmax(logits, mask)
    for t in range(schedule.T_dist):
        if t == schedule.T_thres:
            below = Q < threshold
            lost = below & (target > ABSENT_TARGET)
            if lost.any():
                k, l = np.argwhere(lost)[0]
                raise SupportRecoveryError(
                    f"distillation threshold {threshold:.3g} masks ({k}, {l}) with target {target[k, l]:.3g}",
                    (int(k), int(l)), float(target[k, l]), float(Q[k, l]),
                )
            mask = below
            Q = masked_softmax(logits, mask)
        gradient = weights[:, None] * (Q - target)
        gradient[mask] = 0.0
        logits -= schedule.eta * gradient
        Q = masked_softmax(logits, mask)
        errors[t] = np.max(np.abs(Q - target))
    logger.info("distillation: K=%d T_thres=%d T_dist=%d final error %.3g",
                K, schedule.T_thres, schedule.T_dist, errors[-1] if len(errors) else float('nan'))
    return DistillResult(SoftmaxTable(logits, mask), errors, schedule)


def rescale(model: SoftmaxTable, beta: float) -> SoftmaxTable:
    """Z⁺: β sumado a cada logit no enmascarado fuera de la diagonal."""
    shift = np.full(model.shape, beta)
    np.fill_diagonal(shift, 0.0)
    return model.with_logits(model.logits + np.where(model.mask, 0.0, shift))


def laziness_factors(qcirc: np.ndarray, model_plus: SoftmaxTable) -> np.ndarray:
    """λ_k = (1 − q∘(k|k)) / (1 − q̂⁺(k|k))."""
    plus = model_plus.probabilities()
    return (1.0 - np.diag(qcirc)) / (1.0 - np.diag(plus))


def laziness_residual(qcirc: np.ndarray, model_plus: SoftmaxTable) -> float:
    """max |q∘ − (λ·q̂⁺ + (1 − λ)·I)|."""
    lam = laziness_factors(qcirc, model_plus)
    lazy = lam[:, None] * model_plus.probabilities() + np.diag(1.0 - lam)
    return float(np.max(np.abs(qcirc - lazy)))


def distilled_kernel(model_plus: SoftmaxTable) -> TransitionKernel:
    """q̂⁺ como kernel sobre K estados, un cluster por estado."""
    K = model_plus.shape[0]
    return TransitionKernel.from_dense(model_plus.probabilities(), np.arange(K))


# CAMINOS DESTILADOS

@dataclass(frozen=True)
class ClusterPath:
    clusters: Tuple[int, ...]
    representatives: Tuple[int, ...] = ()
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.clusters) - 1


def distilled_cot(model_plus: SoftmaxTable, k: int, l: int, horizon: int, rng: RngLike,
                  representatives: Sequence[int] = ()) -> ClusterPath:
    """Rollout de q̂⁺ desde el cluster k hasta tocar l."""
    kernel = distilled_kernel(model_plus)
    clusters = tuple(trajectory(kernel, k, rng).take_until(lambda c: c == l).take(horizon + 1).to_list())
    truncated = clusters[-1] != l
    if truncated:
        logger.warning("distilled path from %d truncated after %d steps", k, horizon)
    reps = tuple(representatives[c] for c in clusters) if representatives else ()
    return ClusterPath(clusters, reps, truncated)


def lift_path(
    kernel: TransitionKernel,
    cluster_path: ClusterPath,
    edges: SparseEdgeSet,
    rng: RngLike,
    x_in: Optional[int] = None,
    x_out: Optional[int] = None,
    horizon_per_hop: int = 100_000,
) -> Path:
    """
    Baja un camino de clusters a uno de estados: dentro de cada cluster
    camina con p^0 hasta el origen de la arista plantada hacia el cluster
    siguiente y la cruza.
    """
    seed = master_seed(rng)
    inner = kernel.unperturbed()
    planted = {(e.source_cluster, e.target_cluster): e for e in edges}
    clusters = cluster_path.clusters
    x = x_in if x_in is not None else int(kernel.clusters[clusters[0]][0])
    if kernel.partition[x] != clusters[0]:
        raise ValidationError(f"start state {x} is not in cluster {clusters[0]}")
    states: List[int] = [x]
    truncated = cluster_path.truncated

    def walk_to(start: int, goal: int, hop: int) -> bool:
        segment = trajectory(inner, start, derive_rng(seed, hop)) \
            .take_until(lambda y: y == goal).take(horizon_per_hop + 1).to_list()
        states.extend(segment[1:])
        return segment[-1] == goal

    hops = [(k, l) for k, l in zip(clusters[:-1], clusters[1:]) if k != l]
    for hop, (k, l) in enumerate(hops):
        edge = planted.get((k, l))
        if edge is None:
            raise ValidationError(f"no planted sparse edge from cluster {k} to {l}")
        if not walk_to(states[-1], edge.source, hop):
            truncated = True
            break
        states.append(edge.target)
    if not truncated and x_out is not None:
        truncated = not walk_to(states[-1], x_out, len(clusters))
    return Path.from_states(states, edges.pairs(), truncated)


def distilled_to_dict(model_plus: SoftmaxTable, representatives: Sequence[int], beta: float) -> dict:
    """MetaKernel de q̂⁺ más β y la máscara."""
    meta = MetaKernel(tuple(representatives), model_plus.probabilities())
    return {
        'meta_kernel': meta.to_text(),
        'beta': beta,
        'mask': model_plus.mask.astype(int).tolist(),
    }
