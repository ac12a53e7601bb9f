"""
Tests para el destilado sobre representantes de clusters.
"""

import math

import numpy as np
import pytest

from metacot import oracle
from metacot.distill import (
    ClusterLabeling,
    ClusterPath,
    DistillSchedule,
    collect_ddist,
    distilled_cot,
    distilled_kernel,
    distilled_to_dict,
    label_clusters,
    laziness_factors,
    laziness_residual,
    lift_path,
    population_ddist,
    rescale,
    train_distill,
)
from metacot.errors import SupportRecoveryError, ValidationError
from metacot.kernel import GraphSpec, build_kernel
from metacot.softmax import SoftmaxTable

EPSILON = 0.01
M = 4


@pytest.fixture(scope="module")
def planted():
    kernel, edges = build_kernel(GraphSpec(num_clusters=3, cluster_size=M, epsilon=EPSILON, seed=5,
                                           inbound_targets=True))
    targets = edges.inbound_targets()
    labeling = ClusterLabeling.from_representatives(kernel, [targets[k] for k in range(3)])
    return kernel, edges, labeling


@pytest.fixture(scope="module")
def distilled(planted):
    kernel, _, labeling = planted
    ddist = population_ddist(kernel, labeling)
    return ddist, train_distill(ddist, DistillSchedule(), EPSILON, M)


class TestLabeling:
    """Tests para el etiquetado de clusters."""

    def test_separated_clusters_are_recovered(self):
        """Con ε diminuto cada rollout cubre su cluster y ι coincide con la partición."""
        kernel, _ = build_kernel(GraphSpec(num_clusters=3, cluster_size=4, epsilon=1e-6, seed=2))
        labeling = label_clusters(kernel, 300, 4)
        assert labeling.size == 3
        assert labeling.matches_partition(kernel)

    def test_inbound_targets_replace_representatives(self):
        """Con inbound_targets los representantes son los puntos de llegada."""
        kernel, edges = build_kernel(GraphSpec(num_clusters=3, cluster_size=4, epsilon=1e-5, seed=5,
                                               inbound_targets=True))
        targets = edges.inbound_targets()
        labeling = label_clusters(kernel, 300, 4, inbound_targets=targets)
        assert sorted(labeling.representatives) == sorted(targets.values())
        for x in labeling.representatives:
            assert labeling.iota[x] == x

    def test_from_representatives(self, planted):
        """El etiquetado exacto manda cada estado al representante de su cluster."""
        kernel, _, labeling = planted
        for x in range(kernel.num_states):
            assert kernel.partition[labeling.iota[x]] == kernel.partition[x]
        assert labeling.matches_partition(kernel)

    def test_representative_must_label_itself(self):
        """Un representante con otra etiqueta es inválido."""
        with pytest.raises(ValidationError):
            ClusterLabeling((0,), np.array([1, 1]))

    def test_ordered(self, planted):
        """ordered ordena los representantes por cluster."""
        kernel, _, labeling = planted
        shuffled = ClusterLabeling(tuple(reversed(labeling.representatives)), labeling.iota)
        reps = shuffled.ordered(kernel).representatives
        assert [int(kernel.partition[x]) for x in reps] == [0, 1, 2]


class TestDistillData:
    """Tests para D_dist exacta y contada."""

    def test_population_is_joint_law(self, planted, distilled):
        """D_dist suma 1 y su marginal de filas es el acoplamiento ξ."""
        kernel, _, _ = planted
        ddist, _ = distilled
        assert ddist.sum() == pytest.approx(1.0)
        assert np.allclose(ddist.sum(axis=1), oracle.stationary(kernel).coupling)

    def test_conditionals_are_qcirc(self, planted, distilled):
        """Las condicionales por fila son q∘."""
        kernel, _, labeling = planted
        ddist, _ = distilled
        qcirc = oracle.meta_kernel_qcirc(kernel, labeling.representatives).rows
        assert np.allclose(ddist / ddist.sum(axis=1, keepdims=True), qcirc, atol=1e-12)

    def test_population_needs_transversal(self, planted):
        """Sin un representante por cluster la ley exacta no existe."""
        kernel, _, _ = planted
        labeling = ClusterLabeling((0, 1), np.array([0, 1] + [0] * 10))
        with pytest.raises(ValidationError):
            population_ddist(kernel, labeling)

    def test_collect_counts_every_step(self):
        """Empezando en S∘ cada paso posterior deja exactamente un registro."""
        kernel, _ = build_kernel(GraphSpec(num_clusters=2, cluster_size=3, epsilon=0.05, seed=1))
        labeling = ClusterLabeling.from_representatives(kernel, [0, 3])
        counts = collect_ddist(kernel, labeling, 50_000, 2, num_batches=10)
        assert counts.total == 50_000 - 1
        assert counts.counts[0, 1] > 0 and counts.counts[1, 0] > 0
        assert counts.counts[0, 1] < counts.counts[0, 0]
        assert counts.frequencies().sum() == pytest.approx(1.0)
        assert counts.stderr().shape == (2, 2)

    def test_collect_is_deterministic(self):
        """La misma semilla da los mismos contadores."""
        kernel, _ = build_kernel(GraphSpec(num_clusters=2, cluster_size=3, epsilon=0.05, seed=1))
        labeling = ClusterLabeling.from_representatives(kernel, [0, 3])
        a = collect_ddist(kernel, labeling, 5000, 9)
        b = collect_ddist(kernel, labeling, 5000, 9)
        assert np.array_equal(a.batches, b.batches)

    def test_merge(self):
        """Los contadores de dos cadenas se suman."""
        kernel, _ = build_kernel(GraphSpec(num_clusters=2, cluster_size=3, epsilon=0.05, seed=1))
        labeling = ClusterLabeling.from_representatives(kernel, [0, 3])
        a = collect_ddist(kernel, labeling, 2000, 1, chain=0)
        b = collect_ddist(kernel, labeling, 2000, 1, chain=1)
        assert a.merge(b).total == a.total + b.total
        other = ClusterLabeling.from_representatives(kernel, [1, 3])
        with pytest.raises(ValidationError):
            a.merge(collect_ddist(kernel, other, 100, 1))


class TestSchedule:
    """Tests para los horizontes del destilado."""

    def test_defaults(self):
        """T_thres = ⌈2M/(c_thres·ε)⌉, T_dist = T_thres + ⌈80M/ε⌉, β = ln(M/ε)."""
        schedule = DistillSchedule().resolve(0.5, 4, np.array([0.5, 0.5]))
        assert (schedule.T_thres, schedule.T_dist) == (160, 800)
        assert schedule.beta == pytest.approx(math.log(8.0))
        assert schedule.eta == pytest.approx(2.0)

    def test_zero_epsilon(self):
        """El destilado necesita ε > 0."""
        with pytest.raises(ValidationError):
            DistillSchedule().resolve(0.0, 4, np.array([1.0]))

    def test_threshold_after_end(self):
        """T_thres ≥ T_dist es inválido."""
        with pytest.raises(ValidationError):
            DistillSchedule(T_thres=10, T_dist=10).validate()


class TestTraining:
    """Tests para train_distill y el reescalado."""

    def test_fits_qcirc(self, distilled):
        """El softmax destilado reproduce las condicionales de D_dist."""
        ddist, result = distilled
        target = ddist / ddist.sum(axis=1, keepdims=True)
        assert np.max(np.abs(result.model.probabilities() - target)) < 1e-6
        assert result.errors[-1] < 1e-6

    def test_threshold_masks_absent_transitions(self, distilled):
        """El umbral enmascara exactamente las transiciones ausentes."""
        ddist, result = distilled
        target = ddist / ddist.sum(axis=1, keepdims=True)
        threshold = 0.1 * EPSILON / M
        assert np.array_equal(result.model.mask, target < threshold)

    def test_threshold_never_masks_a_positive_target(self):
        """Enmascarar una entrada con objetivo positivo, aunque sea chico, es una falla de recuperación del soporte."""
        ddist = np.array([[0.5 * (1.0 - 1e-9), 0.5e-9], [0.25, 0.25]])
        schedule = DistillSchedule(T_thres=20_000, T_dist=20_001)
        with pytest.raises(SupportRecoveryError) as info:
            train_distill(ddist, schedule, EPSILON, M)
        assert info.value.entry == (0, 1)
        assert info.value.target == pytest.approx(1e-9)

    def test_invalid_ddist(self):
        """Una D_dist que no suma 1 es inválida."""
        with pytest.raises(ValidationError):
            train_distill(np.array([[0.5, 0.0], [0.0, 0.2]]), DistillSchedule(), EPSILON, M)

    def test_rescale_shifts_off_diagonal(self):
        """rescale suma β fuera de la diagonal y deja quietas las entradas enmascaradas."""
        model = SoftmaxTable(np.zeros((2, 2)), np.array([[False, False], [False, True]]))
        plus = rescale(model, 2.0)
        assert plus.logits[0, 1] == 2.0 and plus.logits[1, 0] == 2.0
        assert plus.logits[0, 0] == 0.0 and plus.mask[1, 1]

    def test_laziness_identity(self, planted):
        """q∘ es una versión perezosa exacta de su propio reescalado."""
        kernel, _, labeling = planted
        qcirc = oracle.meta_kernel_qcirc(kernel, labeling.representatives).rows
        plus = rescale(SoftmaxTable.from_probabilities(qcirc), math.log(M / EPSILON))
        assert laziness_residual(qcirc, plus) < 1e-12
        assert np.all(laziness_factors(qcirc, plus) > 0.0)


class TestDistilledPaths:
    """Tests para los caminos destilados y su elevación."""

    def test_cluster_path_follows_cycle(self, planted, distilled):
        """El camino destilado llega al destino moviéndose por el ciclo."""
        _, _, labeling = planted
        _, result = distilled
        plus = rescale(result.model, result.schedule.beta)
        path = distilled_cot(plus, 0, 2, 1000, 3, labeling.representatives)
        assert path.clusters[0] == 0 and path.clusters[-1] == 2
        assert not path.truncated
        moves = [(a, b) for a, b in zip(path.clusters, path.clusters[1:]) if a != b]
        assert all(b == (a + 1) % 3 for a, b in moves)
        assert path.representatives == tuple(labeling.representatives[c] for c in path.clusters)

    def test_distilled_kernel_is_stochastic(self, distilled):
        """q̂⁺ es un kernel válido sobre K estados."""
        _, result = distilled
        kernel = distilled_kernel(rescale(result.model, result.schedule.beta))
        assert kernel.num_states == 3
        assert kernel.row_sum_error() < 1e-12

    def test_lift_path(self, planted):
        """Elevar (0, 1, 2) da un camino válido que cruza dos aristas dispersas."""
        kernel, edges, labeling = planted
        x_in, x_out = labeling.representatives[0], labeling.representatives[2]
        path = lift_path(kernel, ClusterPath((0, 1, 2)), edges, 6, x_in=x_in, x_out=x_out)
        assert not path.truncated
        assert (path.start, path.end) == (x_in, x_out)
        assert path.is_valid(kernel)
        assert len(path.sparse_crossings) == 2

    def test_lift_path_with_repeated_clusters(self, planted):
        """Un cluster repetido en el camino destilado no es un salto: se cruzan sólo las aristas entre clusters distintos."""
        kernel, edges, labeling = planted
        x_in, x_out = labeling.representatives[0], labeling.representatives[2]
        path = lift_path(kernel, ClusterPath((0, 0, 1, 1, 2)), edges, 6, x_in=x_in, x_out=x_out)
        assert not path.truncated
        assert (path.start, path.end) == (x_in, x_out)
        assert path.is_valid(kernel)
        assert len(path.sparse_crossings) == 2

    def test_lift_needs_planted_edge(self, planted):
        """Sin arista plantada entre clusters consecutivos no hay elevación."""
        kernel, edges, _ = planted
        with pytest.raises(ValidationError):
            lift_path(kernel, ClusterPath((0, 2)), edges, 1)

    def test_to_dict(self, planted, distilled):
        """El volcado incluye el meta-kernel, β y la máscara."""
        _, _, labeling = planted
        _, result = distilled
        payload = distilled_to_dict(result.model, labeling.representatives, 1.5)
        assert payload['beta'] == 1.5
        assert len(payload['mask']) == 3
        assert payload['meta_kernel'].startswith("3")
