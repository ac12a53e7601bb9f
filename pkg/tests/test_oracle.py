"""
Tests para el oráculo exacto.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from metacot import oracle
from metacot.errors import (
    NumericalInconsistencyError,
    ReachabilityError,
    SizeLimitError,
    ValidationError,
)
from metacot.kernel import GraphSpec, TransitionKernel, build_kernel
from utils.rng import derive_rng

TWO_STATE = [[0.7, 0.3], [0.4, 0.6]]


@pytest.fixture(scope="module")
def small():
    kernel, edges = build_kernel(GraphSpec(num_clusters=2, cluster_size=3, epsilon=0.05, seed=1))
    return kernel, edges


@pytest.fixture(scope="module")
def cycle():
    kernel, edges = build_kernel(GraphSpec(num_clusters=3, cluster_size=8, epsilon=2e-3, seed=2))
    return kernel, edges


class TestHittingTimes:
    """Tests para tiempos de llegada y probabilidades de escape."""

    def test_two_state_hitting_time(self):
        """Con p(1|0) = 0.1 el tiempo esperado es 10."""
        h = oracle.expected_hitting_time(np.array([[0.9, 0.1], [0.0, 1.0]]), [1])
        assert np.allclose(h, [10.0, 0.0])

    def test_target_state_is_zero(self, small):
        """h vale 0 sobre el conjunto objetivo."""
        kernel, _ = small
        h = oracle.expected_hitting_time(kernel, [4])
        assert h[4] == 0.0
        assert np.all(h[np.arange(6) != 4] >= 1.0)

    def test_unreachable_target(self):
        """Un objetivo inalcanzable es ReachabilityError."""
        with pytest.raises(ReachabilityError):
            oracle.expected_hitting_time(np.array([[1.0, 0.0], [0.5, 0.5]]), [1])

    def test_empty_target(self, small):
        """Un objetivo vacío es inválido."""
        with pytest.raises(ValidationError):
            oracle.expected_hitting_time(small[0], [])

    def test_size_guard(self):
        """Más de 4096 estados superan el oráculo denso."""
        n = oracle.MAX_DENSE_STATES + 1
        identity = sp.identity(n, format="csr")
        kernel = TransitionKernel(identity, np.zeros(n, dtype=int), identity)
        with pytest.raises(SizeLimitError):
            oracle.expected_hitting_time(kernel, [0])

    def test_escape_probability_first_step(self):
        """Desde 0 el único camino al objetivo es el primer paso."""
        assert oracle.escape_probability(TWO_STATE, 0, [1]) == pytest.approx(0.3)

    def test_escape_from_target_is_invalid(self):
        """x no puede estar en A."""
        with pytest.raises(ValidationError):
            oracle.escape_probability(TWO_STATE, 1, [1])


class TestStationary:
    """Tests para la distribución estacionaria y el acoplamiento."""

    def test_two_state_vector(self):
        """π = (4/7, 3/7) para la cadena de dos estados."""
        assert np.allclose(oracle.stationary_vector(TWO_STATE), [4 / 7, 3 / 7])

    def test_residual(self, small):
        """πP = π."""
        kernel, _ = small
        decomposition = oracle.stationary(kernel)
        assert decomposition.residual(kernel.dense()) < 1e-12

    def test_coupling_identity(self, cycle):
        """π^ε restringida a C_k es ξ_k·π_k^ε."""
        kernel, _ = cycle
        decomposition = oracle.stationary(kernel)
        assert decomposition.coupling_error(kernel.clusters) < 1e-9
        assert decomposition.coupling.sum() == pytest.approx(1.0)

    def test_block_diagonal_uses_uniform_coupling(self):
        """Con ε = 0 el acoplamiento es 1/K."""
        kernel, _ = build_kernel(GraphSpec(num_clusters=3, cluster_size=4, epsilon=0.0))
        assert np.allclose(oracle.stationary(kernel).coupling, 1 / 3)

    def test_detailed_balance(self, small):
        """π(x)P_x(τ̄_y<τ̄_x) = π(y)P_y(τ̄_x<τ̄_y) para todo par."""
        assert oracle.detailed_balance_residual(small[0]) < 1e-10


class TestComplement:
    """Tests para el complemento estocástico."""

    def test_rows_sum_to_one(self, cycle):
        """Cada complemento es estocástico."""
        kernel, _ = cycle
        for k in range(3):
            assert np.allclose(oracle.stochastic_complement(kernel, k).sum(axis=1), 1.0, atol=1e-10)

    def test_stationary_matches_conditional(self, cycle):
        """La estacionaria del complemento es π^ε condicionada a C_k."""
        kernel, _ = cycle
        pi = oracle.stationary(kernel).global_
        states = kernel.clusters[1]
        complement = oracle.stochastic_complement(kernel, 1)
        assert np.allclose(oracle.stationary_vector(complement), pi[states] / pi[states].sum(), atol=1e-10)

    def test_block_without_exits(self):
        """Sin salidas el complemento es el propio bloque."""
        kernel, _ = build_kernel(GraphSpec(num_clusters=2, cluster_size=3, epsilon=0.0))
        block = kernel.dense()[:3, :3]
        assert np.array_equal(oracle.stochastic_complement(kernel, 0), block)

    def test_reduced_chain_frequencies(self, small):
        """La cadena observada en C_0 reproduce el complemento dentro de 5 errores estándar."""
        kernel, _ = small
        exact = oracle.stochastic_complement(kernel, 0)
        estimate = oracle.reduced_chain_frequencies(kernel, 0, 200_000, derive_rng(11))
        assert np.all(np.abs(estimate.frequencies - exact) <= 5 * estimate.stderr + 0.01)
        assert estimate.num_transitions > 50_000


class TestGaps:
    """Tests para reversión temporal y brechas espectrales."""

    def test_spectral_gap_two_state(self):
        """Los autovalores son 1 y 0.3: brecha 0.7."""
        pi = oracle.stationary_vector(TWO_STATE)
        assert oracle.spectral_gap(TWO_STATE, pi) == pytest.approx(0.7)

    def test_reversible_block_equals_reversal(self, small):
        """Un bloque de p^0 es reversible: P† = P."""
        kernel, _ = small
        block = kernel.unperturbed().dense()[:3, :3]
        pi = oracle.stationary_vector(block)
        assert np.allclose(oracle.time_reversal(block, pi), block)

    def test_reversiblization_is_reversible(self):
        """(P†)P es reversible respecto de π."""
        P = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        pi = oracle.stationary_vector(P)
        R = oracle.multiplicative_reversiblization(P, pi)
        flows = pi[:, None] * R
        assert np.allclose(flows, flows.T)

    def test_pseudo_gap_positive(self, cycle):
        """Los complementos tienen brecha pseudo-espectral positiva."""
        kernel, _ = cycle
        complement = oracle.stochastic_complement(kernel, 0)
        assert oracle.pseudo_spectral_gap(complement) > 0.05


class TestMetaKernels:
    """Tests para q⋆ y q∘."""

    def test_qstar_is_stochastic(self, cycle):
        """q⋆ es estocástico y su soporte fuera de la diagonal sigue al ciclo."""
        kernel, _ = cycle
        rows = oracle.meta_kernel_qstar(kernel).rows
        assert np.allclose(rows.sum(axis=1), 1.0)
        off = oracle.meta_kernel_qstar(kernel).off_diagonal()
        assert off[0, 1] > 0 and off[1, 2] > 0 and off[2, 0] > 0

    def test_qstar_identity_without_edges(self):
        """Sin aristas dispersas q⋆ es la identidad."""
        kernel, _ = build_kernel(GraphSpec(num_clusters=2, cluster_size=3, epsilon=0.0))
        assert np.array_equal(oracle.meta_kernel_qstar(kernel).rows, np.eye(2))

    def test_qcirc_orders_representatives(self, cycle):
        """Los representantes se ordenan por cluster."""
        kernel, _ = cycle
        reps = [int(kernel.clusters[k][1]) for k in (2, 0, 1)]
        meta = oracle.meta_kernel_qcirc(kernel, reps)
        assert meta.labels == tuple(sorted(reps))
        assert np.allclose(meta.rows.sum(axis=1), 1.0)

    def test_qcirc_rejects_two_per_cluster(self, cycle):
        """Dos representantes en un mismo cluster son inválidos."""
        kernel, _ = cycle
        with pytest.raises(ValidationError):
            oracle.meta_kernel_qcirc(kernel, [0, 1, 16])

    def test_escape_ratios_near_one(self, cycle):
        """En el régimen metaestable las razones de escape son cercanas a 1."""
        kernel, edges = cycle
        reps = [int(c[0]) for c in kernel.clusters]
        ratios = oracle.qcirc_escape_ratios(kernel, reps)
        finite = ratios[np.isfinite(ratios)]
        assert len(finite) == 6
        assert np.all(finite > 0.0)

    def test_reversibility_ratios_are_reciprocal(self, cycle):
        """La razón de (k, l) es la inversa de la de (l, k); la diagonal queda en NaN."""
        kernel, _ = cycle
        ratios = oracle.qstar_reversibility_ratios(kernel)
        off = ~np.eye(3, dtype=bool)
        assert np.all(np.isnan(np.diag(ratios)))
        assert np.all(ratios[off] > 0.0)
        assert np.allclose((ratios * ratios.T)[off], 1.0)

    def test_metastability_ratio_small(self, cycle):
        """Escapar de un representante es mucho más difícil que volver a S∘."""
        kernel, _ = cycle
        reps = [int(c[0]) for c in kernel.clusters]
        assert oracle.metastability_ratio(kernel, reps) < 0.5

    def test_meta_kernel_text(self):
        """to_text lista las entradas positivas."""
        meta = oracle.MetaKernel((3, 7), np.array([[0.9, 0.1], [0.0, 1.0]]))
        assert meta.to_text().splitlines()[1] == "3 3 0.90000000000000002 0 0"


class TestClamp:
    """Tests para el recorte de probabilidades."""

    def test_tiny_negatives(self):
        """Negativos diminutos pasan a 0."""
        values = oracle.clamp_probabilities(np.array([-1e-15, 1.0]))
        assert values[0] == 0.0

    def test_large_negative(self):
        """Un negativo grande es una inconsistencia numérica."""
        with pytest.raises(NumericalInconsistencyError):
            oracle.clamp_probabilities(np.array([-1e-6, 1.0]))
