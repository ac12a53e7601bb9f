"""
Tarea lógica sobre caminos válidos.

Cada arista lleva una acción de un grupo finito G; sólo las aristas
dispersas actúan (el resto vale e_G). El valor lógico de un camino es
r_T = α(X_{T−1}, X_T) ∘ … ∘ α(X_0, X_1) ∘ ψ(X_0) y la etiqueta es φ(r_T).
El espacio lógico es el propio G actuando por la izquierda.

También viven aquí las construcciones combinatorias de la familia
ortogonal: empujes por desplazamientos cíclicos dentro de cada cluster y
códigos greedy con distancia de Hamming mínima.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from utils.operators import fold_left
from utils.rng import derive_rng

from .dynamics import Path, RngLike, generate_valid_path, master_seed
from .errors import ReachabilityError, UndefinedResultError, ValidationError
from .kernel import SparseEdge, SparseEdgeSet, TransitionKernel

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]

EXHAUSTIVE_LIMIT = 2 ** 20
AXIOM_EXHAUSTIVE_ORDER = 24


# GRUPOS

@dataclass(frozen=True, eq=False)
class FiniteGroup:
    """
    Grupo finito por tablas: ``table[a, b] = a ∘ b``. Los elementos son
    0..n−1 y ``labels`` guarda su nombre legible.
    """
    name: str
    table: np.ndarray
    identity: int
    inverse: np.ndarray = field(default=None)
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.int64)
        table.setflags(write=False)
        object.__setattr__(self, 'table', table)
        if self.inverse is None:
            inverse = np.argmax(table == self.identity, axis=1)
        else:
            inverse = np.asarray(self.inverse, dtype=np.int64)
        inverse.setflags(write=False)
        object.__setattr__(self, 'inverse', inverse)
        if not self.labels:
            object.__setattr__(self, 'labels', tuple(str(g) for g in range(self.order)))

    @property
    def order(self) -> int:
        return self.table.shape[0]

    def compose(self, a: int, b: int) -> int:
        return int(self.table[a, b])

    def product(self, elements: Iterable[int]) -> int:
        """g_n ∘ … ∘ g_1 para la secuencia g_1, …, g_n (la última actúa al final)."""
        result = self.identity
        for g in elements:
            result = int(self.table[g, result])
        return result

    def check_axioms(self, rng: RngLike = 0, samples: int = 20_000) -> 'FiniteGroup':
        """
        Clausura, identidad e inversos exactos; asociatividad exhaustiva
        hasta orden 24 y por muestreo por encima.
        """
        n = self.order
        if self.table.shape != (n, n) or self.table.min() < 0 or self.table.max() >= n:
            raise ValidationError(f"{self.name}: table is not closed")
        elements = np.arange(n)
        if not (np.array_equal(self.table[self.identity], elements)
                and np.array_equal(self.table[:, self.identity], elements)):
            raise ValidationError(f"{self.name}: {self.identity} is not an identity")
        if not (np.all(self.table[elements, self.inverse] == self.identity)
                and np.all(self.table[self.inverse, elements] == self.identity)):
            raise ValidationError(f"{self.name}: inverse table is wrong")
        if n <= AXIOM_EXHAUSTIVE_ORDER:
            a, b, c = np.meshgrid(elements, elements, elements, indexing='ij')
        else:
            a, b, c = derive_rng(master_seed(rng)).integers(n, size=(3, samples))
        if not np.array_equal(self.table[self.table[a, b], c], self.table[a, self.table[b, c]]):
            raise ValidationError(f"{self.name}: composition is not associative")
        return self

    def to_dict(self) -> dict:
        return {'name': self.name}


def cyclic_group(q: int) -> FiniteGroup:
    """Z_q con la suma módulo q."""
    if q < 1:
        raise ValidationError("q must be positive")
    elements = np.arange(q)
    return FiniteGroup(f"Z{q}", (elements[:, None] + elements[None, :]) % q, 0)


def symmetric_group(n: int) -> FiniteGroup:
    """S_n (n ≤ 4) con (a ∘ b)(i) = a(b(i)); el elemento 0 es la identidad."""
    if not 1 <= n <= 4:
        raise ValidationError("symmetric preset supports 1 <= n <= 4")
    perms = list(itertools.permutations(range(n)))
    index = {p: i for i, p in enumerate(perms)}
    table = [[index[tuple(a[b[i]] for i in range(n))] for b in perms] for a in perms]
    return FiniteGroup(f"S{n}", table, 0, labels=tuple("".join(map(str, p)) for p in perms))


def permutation_parity(group: FiniteGroup) -> np.ndarray:
    """+1 en las permutaciones pares de un preset S_n, −1 en las impares."""
    if not group.name.startswith('S'):
        raise ValidationError(f"parity classifier needs a symmetric group, got {group.name}")
    signs = []
    for label in group.labels:
        perm = [int(c) for c in label]
        inversions = sum(1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j])
        signs.append(1 if inversions % 2 == 0 else -1)
    return np.array(signs, dtype=np.int64)


GROUP_PRESETS: Dict[str, Callable[[int], FiniteGroup]] = {
    'cyclic': cyclic_group,
    'symmetric': symmetric_group,
}


def group_from_preset(name: str) -> FiniteGroup:
    """'Z4', 'S3', 'cyclic:4' o 'symmetric:3'."""
    if ':' in name:
        kind, _, size = name.partition(':')
    else:
        kind, size = {'Z': 'cyclic', 'S': 'symmetric'}.get(name[:1], name), name[1:]
    if kind not in GROUP_PRESETS or not size.isdigit():
        raise ValidationError(f"unknown group preset {name!r}")
    return GROUP_PRESETS[kind](int(size))


# CLASIFICADORES

def half_classifier(group: FiniteGroup) -> np.ndarray:
    """+1 en la primera mitad de los elementos, −1 en el resto (orden par)."""
    if group.order % 2:
        raise ValidationError(f"{group.name} has odd order; no zero-mean ±1 classifier exists")
    return np.where(np.arange(group.order) < group.order // 2, 1, -1)


CLASSIFIER_PRESETS: Dict[str, Callable[[FiniteGroup], np.ndarray]] = {
    'half': half_classifier,
    'parity': permutation_parity,
}


def zero_mean_residuals(group: FiniteGroup, phi: np.ndarray) -> np.ndarray:
    """Σ_g φ(g·r) para cada r de ℛ = G."""
    return np.asarray(phi)[group.table].sum(axis=0)


# INSTANCIAS

@dataclass(frozen=True, eq=False)
class LogicInstance:
    """
    Grupo, tabla de acciones 𝒜 sobre aristas, máscara E_s, inmersión ψ
    (estado → elemento) y clasificador φ (elemento → ±1).
    """
    group: FiniteGroup
    actions: Mapping[Edge, int]
    mask: FrozenSet[Edge]
    psi: np.ndarray
    phi: np.ndarray
    seed: int = 0
    classifier: str = 'half'
    mask_source: str = 'planted'

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.int64)
        if phi.shape != (self.group.order,) or not np.all(np.abs(phi) == 1):
            raise ValidationError("phi must map every group element to +1 or -1")
        if np.any(zero_mean_residuals(self.group, phi) != 0):
            raise ValidationError(f"classifier {self.classifier!r} is not zero-mean on {self.group.name}")
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'psi', np.asarray(self.psi, dtype=np.int64))
        object.__setattr__(self, 'mask', frozenset(self.mask))

    def alpha(self, edge: Edge) -> int:
        """α(e) = 𝒜(e) sobre E_s, e_G fuera."""
        if edge not in self.mask:
            return self.group.identity
        try:
            return int(self.actions[edge])
        except KeyError:
            raise ValidationError(f"no action assigned to sparse edge {edge}") from None

    def with_actions(self, actions: Mapping[Edge, int]) -> 'LogicInstance':
        return replace(self, actions=actions)

    def with_mask(self, mask: Iterable[Edge], source: str = 'planted') -> 'LogicInstance':
        return replace(self, mask=frozenset(mask), mask_source=source)

    def to_dict(self) -> dict:
        return {
            'group': self.group.name,
            'seed': self.seed,
            'mask_source': self.mask_source,
            'classifier': self.classifier,
            'mask': [list(e) for e in sorted(self.mask)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def draw_actions(group: FiniteGroup, edges: Iterable[Edge], rng: RngLike) -> Dict[Edge, int]:
    """Acciones i.i.d. uniformes en G, una por arista en orden creciente."""
    edges = sorted(set(edges))
    values = derive_rng(master_seed(rng)).integers(group.order, size=len(edges))
    return {edge: int(g) for edge, g in zip(edges, values)}


def make_instance(
    group: FiniteGroup,
    kernel: TransitionKernel,
    seed: int = 0,
    classifier: str = 'half',
    mask: Optional[Iterable[Edge]] = None,
    psi: Optional[np.ndarray] = None,
) -> LogicInstance:
    """
    Instancia con 𝒜 uniforme sobre la máscara. Sin ``mask`` se usa E_s
    plantado; con ella (p. ej. el 𝕄_s de una búsqueda) la fuente es
    'searched'. ψ por defecto es e_G en todos los estados.
    """
    if classifier not in CLASSIFIER_PRESETS:
        raise ValidationError(f"unknown classifier preset {classifier!r}")
    source = 'planted' if mask is None else 'searched'
    mask = kernel.sparse_pairs() if mask is None else frozenset(mask)
    psi = np.full(kernel.num_states, group.identity) if psi is None else psi
    return LogicInstance(group, draw_actions(group, mask, seed), frozenset(mask), psi,
                         CLASSIFIER_PRESETS[classifier](group), seed, classifier, source)


def instance_from_dict(payload: dict, kernel: TransitionKernel) -> LogicInstance:
    mask = None if payload.get('mask_source', 'planted') == 'planted' else [tuple(e) for e in payload['mask']]
    return make_instance(group_from_preset(payload['group']), kernel, payload.get('seed', 0),
                         payload.get('classifier', 'half'), mask)


# EVALUACIÓN

def path_logic(instance: LogicInstance, path: Path, kernel: Optional[TransitionKernel] = None,
               crossings_only: bool = False) -> Tuple[int, int]:
    """
    (r_T, φ(r_T)) plegando las acciones a lo largo del camino. Con
    ``crossings_only`` actúan sólo las aristas marcadas en el propio
    camino en lugar de las de la máscara.
    """
    if kernel is not None and not path.is_valid(kernel):
        bad = next(e for e in path.edges() if not kernel.contains_edge(*e))
        raise ValidationError(f"path edge {bad} is not an edge of the kernel")
    if crossings_only:
        instance = instance.with_mask(path.sparse_edges(), instance.mask_source)
    table = instance.group.table
    r = fold_left(lambda acc, edge: int(table[instance.alpha(edge), acc]),
                  int(instance.psi[path.start]), path.edges())
    return r, int(instance.phi[r])


def make_simple(states: Sequence[int]) -> List[int]:
    """Borra los lazos: al repetir un estado se vuelve a su primera aparición."""
    simple: List[int] = []
    position: Dict[int, int] = {}
    for x in states:
        if x in position:
            cut = position[x] + 1
            for dropped in simple[cut:]:
                del position[dropped]
            del simple[cut:]
        else:
            position[x] = len(simple)
            simple.append(x)
    return simple


def shortest_valid_path(kernel: TransitionKernel, x_in: int, x_out: int) -> Path:
    """
    Camino canónico: mínimo número de aristas dispersas y, entre esos, de
    pasos. Dijkstra con peso |S|+1 por arista dispersa y 1 por densa.
    """
    sparse_pairs = kernel.sparse_pairs()
    coo = kernel.matrix.tocoo()
    heavy = kernel.num_states + 1.0
    weights = np.array([heavy if (x, y) in sparse_pairs else 1.0
                        for x, y in zip(coo.row.tolist(), coo.col.tolist())])
    off_loop = coo.row != coo.col
    graph = sp.csr_matrix((weights[off_loop], (coo.row[off_loop], coo.col[off_loop])), shape=kernel.matrix.shape)
    distances, predecessors = dijkstra(graph, directed=True, indices=x_in, return_predecessors=True)
    if not np.isfinite(distances[x_out]):
        raise ReachabilityError(f"state {x_out} is unreachable from {x_in}")
    states = [x_out]
    while states[-1] != x_in:
        states.append(int(predecessors[states[-1]]))
    return Path.from_states(states[::-1], sparse_pairs)


PathPolicy = Callable[[TransitionKernel, int, int, RngLike], Path]


def canonical_policy(kernel: TransitionKernel, x_in: int, x_out: int, rng: RngLike = 0) -> Path:
    return shortest_valid_path(kernel, x_in, x_out)


def rollout_policy(horizon: int) -> PathPolicy:
    """Rollout de p^ε hasta x_out, hecho simple por borrado de lazos."""

    def policy(kernel: TransitionKernel, x_in: int, x_out: int, rng: RngLike) -> Path:
        path = generate_valid_path(kernel, x_in, x_out, horizon, rng)
        return Path.from_states(make_simple(path.states), kernel.sparse_pairs(), path.truncated)

    return policy


def concept_eval(
    instance: LogicInstance,
    kernel: TransitionKernel,
    x_in: int,
    x_out: int,
    path_policy: PathPolicy = canonical_policy,
    rng: RngLike = 0,
    mode: str = 'full-search',
) -> int:
    """
    h_p(x_in, x_out, 𝒜) = φ(r_T) sobre el camino de ``path_policy``.
    'full-search' usa la máscara de la instancia; 'path-only' sólo los
    cruces dispersos marcados en el camino.
    """
    if mode not in ('full-search', 'path-only'):
        raise ValidationError(f"unknown evaluation mode {mode!r}")
    path = path_policy(kernel, x_in, x_out, rng)
    if path.truncated or path.end != x_out:
        raise UndefinedResultError(f"no complete path from {x_in} to {x_out}; concept undefined")
    _, label = path_logic(instance, path, crossings_only=(mode == 'path-only'))
    return label


# PRODUCTO INTERNO

@dataclass(frozen=True)
class InnerProductEstimate:
    value: float
    stderr: float
    num_samples: int
    exhaustive: bool


def inner_product(
    group: FiniteGroup,
    first: TransitionKernel,
    second: TransitionKernel,
    tasks: Sequence[Tuple[int, int]],
    num_samples: int = 10_000,
    rng: RngLike = 0,
    classifier: str = 'half',
    exhaustive: bool = False,
) -> InnerProductEstimate:
    """
    E_{(x_in, x_out), 𝒜}[h_{p1}·h_{p2}] con tareas uniformes sobre
    ``tasks`` y caminos canónicos. El modo exhaustivo enumera 𝒜 sobre la
    unión de aristas dispersas cruzadas (|G|^n ≤ 2²⁰).
    """
    if first.num_states != second.num_states:
        raise ValidationError("both kernels must share the state space")
    if not tasks:
        raise ValidationError("task list is empty")
    phi = CLASSIFIER_PRESETS[classifier](group)
    paths = [
        (shortest_valid_path(first, x_in, x_out).sparse_edges(), shortest_valid_path(second, x_in, x_out).sparse_edges())
        for x_in, x_out in tasks
    ]
    crossed = sorted({e for pair in paths for side in pair for e in side})
    slot = {e: i for i, e in enumerate(crossed)}

    def labels(values: np.ndarray, task: int) -> int:
        left, right = paths[task]
        return int(phi[group.product(values[slot[e]] for e in left)]
                   * phi[group.product(values[slot[e]] for e in right)])

    if exhaustive:
        total = group.order ** len(crossed)
        if total * len(tasks) > EXHAUSTIVE_LIMIT:
            raise ValidationError(f"exhaustive inner product needs {total * len(tasks)} evaluations (> 2^20)")
        products = [labels(np.array(values, dtype=np.int64), task)
                    for values in itertools.product(range(group.order), repeat=len(crossed))
                    for task in range(len(tasks))]
        return InnerProductEstimate(float(np.mean(products)), 0.0, len(products), True)

    seed = master_seed(rng)
    samples = np.empty(num_samples)
    for s in range(num_samples):
        draw = derive_rng(seed, s)
        task = int(draw.integers(len(tasks)))
        samples[s] = labels(draw.integers(group.order, size=len(crossed)), task)
    stderr = float(samples.std(ddof=1) / math.sqrt(num_samples)) if num_samples > 1 else 0.0
    logger.debug("inner product over %d crossed edges: %.4f ± %.4f", len(crossed), samples.mean(), stderr)
    return InnerProductEstimate(float(samples.mean()), stderr, num_samples, False)


# FAMILIA DE EMPUJES

def shift_permutation(kernel: TransitionKernel, v: Sequence[int], n_out: int) -> np.ndarray:
    """σ(x): dentro del cluster k, desplazamiento cíclico de v_k·n_out posiciones."""
    sigma = np.arange(kernel.num_states)
    for k, states in enumerate(kernel.clusters):
        shift = (int(v[k]) * n_out) % len(states)
        sigma[states] = np.roll(states, -shift)
    return sigma


def pushforward_family(kernel: TransitionKernel, v: Sequence[int], q: int, n_out: int = 1) -> TransitionKernel:
    """
    v♯p con (v♯p)(σ(y)|σ(x)) = p(y|x), σ el desplazamiento de
    ``shift_permutation``; la partición no cambia.
    """
    v = np.asarray(v, dtype=np.int64)
    if v.shape != (kernel.num_clusters,):
        raise ValidationError(f"shift vector needs {kernel.num_clusters} entries")
    if np.any((v < 0) | (v >= q)):
        raise ValidationError(f"shift entries must lie in Z_{q}")
    if q * n_out > min(kernel.cluster_sizes):
        raise ValidationError(f"q*n_out={q * n_out} exceeds the smallest cluster size {min(kernel.cluster_sizes)}")
    sigma = shift_permutation(kernel, v, n_out)

    def permuted(matrix):
        coo = matrix.tocoo()
        return sp.csr_matrix((coo.data, (sigma[coo.row], sigma[coo.col])), shape=matrix.shape)

    return TransitionKernel(permuted(kernel.matrix), kernel.partition, permuted(kernel.dense_support),
                            kernel.epsilon, kernel.seed)


def pushforward_edges(kernel: TransitionKernel, edges: SparseEdgeSet, v: Sequence[int], n_out: int = 1) -> SparseEdgeSet:
    sigma = shift_permutation(kernel, v, n_out)
    return SparseEdgeSet(tuple(
        SparseEdge(int(sigma[e.source]), int(sigma[e.target]), e.probability, e.source_cluster, e.target_cluster)
        for e in edges
    ))


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    return int(np.sum(np.asarray(a) != np.asarray(b)))


def greedy_codebook(K: int, q: int, min_distance: int, rng: Optional[RngLike] = None,
                    max_candidates: int = EXHAUSTIVE_LIMIT) -> List[Tuple[int, ...]]:
    """
    Código greedy en Z_q^K: recorre candidatos (orden aleatorio sembrado
    si se da ``rng``) y acepta los que quedan a distancia ≥ d de todos
    los aceptados.
    """
    if min_distance < 1:
        raise ValidationError("minimum distance must be at least 1")
    total = q ** K
    if total <= max_candidates:
        candidates = np.array(list(itertools.product(range(q), repeat=K)), dtype=np.int64).reshape(total, K)
        if rng is not None:
            candidates = candidates[derive_rng(master_seed(rng)).permutation(total)]
    else:
        candidates = derive_rng(master_seed(rng or 0)).integers(q, size=(max_candidates, K))
    accepted = np.empty((0, K), dtype=np.int64)
    for candidate in candidates:
        if len(accepted) == 0 or np.min(np.sum(accepted != candidate, axis=1)) >= min_distance:
            accepted = np.vstack([accepted, candidate])
    logger.info("greedy code: %d words in Z_%d^%d at distance %d (GV bound %.1f)",
                len(accepted), q, K, min_distance, gilbert_varshamov_bound(K, q, min_distance))
    return [tuple(int(c) for c in word) for word in accepted]


def gilbert_varshamov_bound(K: int, q: int, min_distance: int) -> float:
    """q^K / Vol_q(K, d−1); informativo, el greedy no lo garantiza con orden aleatorio."""
    if min_distance <= 1:
        return float(q ** K)
    if min_distance > K:
        return 1.0
    volume = sum(math.comb(K, i) * (q - 1) ** i for i in range(min_distance))
    return q ** K / volume


def overlap_bound(v: Sequence[int], w: Sequence[int], n_out: int, d_out: int) -> int:
    """n_out·d_out·(K − Hamming(v, w))."""
    return n_out * d_out * (len(v) - hamming(v, w))


def family_tasks(kernel: TransitionKernel, pairs: Iterable[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Tareas (x_in, x_out) con x_in el primer estado del cluster de origen y x_out el último del de destino."""
    return [(int(kernel.clusters[k][0]), int(kernel.clusters[l][-1])) for k, l in pairs]
