"""
Tests para la tarea lógica y la familia de empujes.
"""

import numpy as np
import pytest

from metacot.dynamics import Path
from metacot.errors import ReachabilityError, UndefinedResultError, ValidationError
from metacot.kernel import GraphSpec, build_kernel
from metacot.logic import (
    FiniteGroup,
    LogicInstance,
    canonical_policy,
    concept_eval,
    cyclic_group,
    draw_actions,
    family_tasks,
    gilbert_varshamov_bound,
    greedy_codebook,
    group_from_preset,
    half_classifier,
    hamming,
    inner_product,
    instance_from_dict,
    make_instance,
    make_simple,
    overlap_bound,
    path_logic,
    permutation_parity,
    pushforward_edges,
    pushforward_family,
    rollout_policy,
    shift_permutation,
    shortest_valid_path,
    symmetric_group,
    zero_mean_residuals,
)


@pytest.fixture(scope="module")
def cycle():
    return build_kernel(GraphSpec(num_clusters=3, cluster_size=4, epsilon=0.01, seed=5))


@pytest.fixture(scope="module")
def frozen():
    kernel, _ = build_kernel(GraphSpec(num_clusters=2, cluster_size=3, epsilon=0.0, seed=1))
    return kernel


class TestGroups:
    """Tests para los grupos finitos."""

    def test_cyclic_axioms(self):
        """Z_q satisface los axiomas."""
        group = cyclic_group(5).check_axioms()
        assert group.order == 5
        assert group.compose(3, 4) == 2
        assert group.inverse[2] == 3

    def test_symmetric_axioms(self):
        """S₃ satisface los axiomas y no es abeliano."""
        group = symmetric_group(3).check_axioms()
        assert group.order == 6
        assert not np.array_equal(group.table, group.table.T)

    def test_product_order(self):
        """product aplica el último elemento al final."""
        group = symmetric_group(3)
        assert group.product([1, 2]) == group.compose(2, 1)
        assert group.product([]) == group.identity

    def test_broken_table(self):
        """Una tabla sin inversos no es un grupo."""
        with pytest.raises(ValidationError):
            FiniteGroup("bad", [[0, 1], [1, 1]], 0).check_axioms()

    def test_presets(self):
        """Los presets aceptan las dos sintaxis."""
        assert group_from_preset("Z4").order == 4
        assert group_from_preset("S3").order == 6
        assert group_from_preset("cyclic:7").name == "Z7"
        assert group_from_preset("symmetric:2").order == 2
        with pytest.raises(ValidationError):
            group_from_preset("Q8")

    def test_symmetric_limit(self):
        """El preset simétrico llega hasta n = 4."""
        with pytest.raises(ValidationError):
            symmetric_group(5)


class TestClassifiers:
    """Tests para los clasificadores ±1."""

    def test_half_is_zero_mean(self):
        """El clasificador por mitades tiene media cero en cada órbita."""
        group = cyclic_group(4)
        assert np.all(zero_mean_residuals(group, half_classifier(group)) == 0)

    def test_parity_is_zero_mean(self):
        """La paridad de S₃ tiene media cero."""
        group = symmetric_group(3)
        phi = permutation_parity(group)
        assert sorted(phi.tolist()) == [-1, -1, -1, 1, 1, 1]
        assert np.all(zero_mean_residuals(group, phi) == 0)

    def test_odd_order_has_no_half(self):
        """Con orden impar no hay clasificador de media cero."""
        with pytest.raises(ValidationError):
            half_classifier(cyclic_group(3))

    def test_parity_needs_permutations(self):
        """La paridad sólo aplica a presets simétricos."""
        with pytest.raises(ValidationError):
            permutation_parity(cyclic_group(4))

    def test_instance_rejects_biased_phi(self, cycle):
        """Un φ constante no tiene media cero."""
        kernel, _ = cycle
        with pytest.raises(ValidationError):
            LogicInstance(cyclic_group(2), {}, frozenset(), np.zeros(kernel.num_states), np.array([1, 1]))


class TestInstances:
    """Tests para instancias y evaluación de caminos."""

    def test_draw_actions(self):
        """Las acciones son reproducibles y pertenecen a G."""
        edges = [(3, 1), (0, 5)]
        actions = draw_actions(cyclic_group(4), edges, 2)
        assert actions == draw_actions(cyclic_group(4), edges, 2)
        assert set(actions) == set(edges)
        assert all(0 <= g < 4 for g in actions.values())

    def test_single_crossing(self, cycle):
        """Un camino con una arista dispersa vale 𝒜(e)."""
        kernel, edges = cycle
        instance = make_instance(cyclic_group(4), kernel, seed=3)
        e = next(iter(edges))
        path = Path.from_states([e.source, e.target], kernel.sparse_pairs())
        r, label = path_logic(instance, path, kernel)
        assert r == instance.actions[(e.source, e.target)]
        assert label == instance.phi[r]

    def test_dense_edges_act_trivially(self, cycle):
        """α vale e_G fuera de E_s."""
        kernel, _ = cycle
        instance = make_instance(cyclic_group(4), kernel, seed=3)
        assert instance.alpha((0, 0)) == 0

    def test_missing_action(self, cycle):
        """Una arista de la máscara sin acción es inválida."""
        kernel, _ = cycle
        instance = make_instance(cyclic_group(4), kernel, seed=3).with_actions({})
        e = next(iter(instance.mask))
        with pytest.raises(ValidationError):
            instance.alpha(e)

    def test_invalid_path(self, cycle):
        """Un camino que usa una no-arista es inválido."""
        kernel, _ = cycle
        instance = make_instance(cyclic_group(4), kernel)
        with pytest.raises(ValidationError):
            path_logic(instance, Path.from_states([1, 5], frozenset()), kernel)

    def test_path_only_mode(self, cycle):
        """En modo path-only actúan sólo los cruces del camino."""
        kernel, _ = cycle
        instance = make_instance(cyclic_group(4), kernel, seed=1)
        x_in, x_out = int(kernel.clusters[0][0]), int(kernel.clusters[2][-1])
        full = concept_eval(instance, kernel, x_in, x_out)
        assert concept_eval(instance, kernel, x_in, x_out, mode='path-only') == full

    def test_unknown_classifier(self, cycle):
        """Un clasificador desconocido es inválido."""
        with pytest.raises(ValidationError):
            make_instance(cyclic_group(4), cycle[0], classifier="random")

    def test_dict_round_trip_with_searched_mask(self, cycle):
        """instance_from_dict reconstruye una máscara buscada."""
        kernel, edges = cycle
        mask = sorted(edges.pairs())[:2]
        instance = make_instance(cyclic_group(4), kernel, seed=9, mask=mask)
        restored = instance_from_dict(instance.to_dict(), kernel)
        assert restored.mask_source == "searched"
        assert restored.mask == instance.mask
        assert restored.actions == instance.actions


class TestPaths:
    """Tests para caminos canónicos y simples."""

    def test_make_simple(self):
        """El borrado de lazos vuelve a la primera aparición."""
        assert make_simple([0, 1, 2, 1, 3]) == [0, 1, 3]
        assert make_simple([0, 1, 0, 2]) == [0, 2]
        assert make_simple([4]) == [4]

    def test_shortest_path_crossings(self, cycle):
        """De C_0 a C_2 en el ciclo hacen falta dos aristas dispersas."""
        kernel, _ = cycle
        x_in, x_out = int(kernel.clusters[0][0]), int(kernel.clusters[2][-1])
        path = shortest_valid_path(kernel, x_in, x_out)
        assert (path.start, path.end) == (x_in, x_out)
        assert path.is_valid(kernel)
        assert len(path.sparse_crossings) == 2
        assert canonical_policy(kernel, x_in, x_out).states == path.states

    def test_unreachable(self, frozen):
        """Sin aristas dispersas otro cluster es inalcanzable."""
        with pytest.raises(ReachabilityError):
            shortest_valid_path(frozen, 0, 4)

    def test_truncated_rollout_is_undefined(self, frozen):
        """Un camino truncado no tiene concepto definido."""
        instance = make_instance(cyclic_group(2), frozen)
        with pytest.raises(UndefinedResultError):
            concept_eval(instance, frozen, 0, 4, rollout_policy(20))

    def test_rollout_policy_is_simple(self, cycle):
        """La política de rollout devuelve un camino sin estados repetidos."""
        kernel, _ = cycle
        x_out = int(kernel.clusters[1][-1])
        path = rollout_policy(1_000_000)(kernel, 0, x_out, 4)
        assert len(set(path.states)) == len(path.states)
        assert path.end == x_out and path.is_valid(kernel)

    def test_unknown_mode(self, cycle):
        """Un modo de evaluación desconocido es inválido."""
        kernel, _ = cycle
        with pytest.raises(ValidationError):
            concept_eval(make_instance(cyclic_group(2), kernel), kernel, 0, 1, mode='other')


class TestInnerProduct:
    """Tests para el producto interno entre kernels."""

    def test_self_product_is_one(self, cycle):
        """⟨h_p, h_p⟩ = 1."""
        kernel, _ = cycle
        tasks = family_tasks(kernel, [(0, 2), (1, 0)])
        assert inner_product(cyclic_group(2), kernel, kernel, tasks, exhaustive=True).value == 1.0
        sampled = inner_product(cyclic_group(2), kernel, kernel, tasks, num_samples=50, rng=1)
        assert sampled.value == 1.0 and not sampled.exhaustive

    def test_disjoint_shifts_are_orthogonal(self, cycle):
        """Empujes con todas las coordenadas distintas no comparten aristas y son ortogonales."""
        kernel, _ = cycle
        other = pushforward_family(kernel, [1, 1, 1], q=2)
        assert not (kernel.sparse_pairs() & other.sparse_pairs())
        tasks = family_tasks(kernel, [(0, 2)])
        estimate = inner_product(cyclic_group(2), kernel, other, tasks, exhaustive=True)
        assert estimate.value == 0.0
        assert estimate.num_samples == 16

    def test_requires_tasks(self, cycle):
        """Sin tareas no hay producto interno."""
        kernel, _ = cycle
        with pytest.raises(ValidationError):
            inner_product(cyclic_group(2), kernel, kernel, [])


class TestPushforward:
    """Tests para la familia de empujes y los códigos."""

    def test_shift_stays_in_cluster(self, cycle):
        """σ es una permutación que respeta la partición."""
        kernel, _ = cycle
        sigma = shift_permutation(kernel, [1, 0, 2], 1)
        assert sorted(sigma.tolist()) == list(range(kernel.num_states))
        assert np.array_equal(kernel.partition[sigma], kernel.partition)

    def test_probabilities_are_transported(self, cycle):
        """(v♯p)(σ(y)|σ(x)) = p(y|x)."""
        kernel, edges = cycle
        v = [1, 0, 1]
        sigma = shift_permutation(kernel, v, 1)
        pushed = pushforward_family(kernel, v, q=2)
        assert np.allclose(pushed.dense()[np.ix_(sigma, sigma)], kernel.dense())
        assert pushforward_edges(kernel, edges, v).pairs() == pushed.sparse_pairs()

    def test_invalid_shift_vectors(self, cycle):
        """Longitud, rango y tamaño de cluster se validan."""
        kernel, _ = cycle
        with pytest.raises(ValidationError):
            pushforward_family(kernel, [0, 1], q=2)
        with pytest.raises(ValidationError):
            pushforward_family(kernel, [0, 2, 0], q=2)
        with pytest.raises(ValidationError):
            pushforward_family(kernel, [0, 1, 0], q=5)

    def test_greedy_repetition_code(self):
        """En orden lexicográfico Z₂³ a distancia 3 da el código de repetición."""
        assert greedy_codebook(3, 2, 3) == [(0, 0, 0), (1, 1, 1)]

    def test_greedy_random_order_respects_distance(self):
        """Con orden aleatorio todas las palabras quedan a distancia ≥ d."""
        code = greedy_codebook(5, 3, 3, rng=4)
        assert len(code) >= 2
        assert all(hamming(a, b) >= 3 for i, a in enumerate(code) for b in code[i + 1:])

    def test_gilbert_varshamov(self):
        """q^K / Vol_q(K, d−1) con los casos borde."""
        assert gilbert_varshamov_bound(3, 2, 3) == pytest.approx(8 / 7)
        assert gilbert_varshamov_bound(3, 2, 1) == 8.0
        assert gilbert_varshamov_bound(3, 2, 4) == 1.0

    def test_overlap_bound(self):
        """n_out·d_out·(K − Hamming)."""
        assert overlap_bound((0, 1, 2), (0, 1, 0), 1, 1) == 2
        assert overlap_bound((0, 1), (1, 0), 2, 2) == 0
