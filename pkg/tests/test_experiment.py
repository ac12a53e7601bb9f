"""
Tests para el pipeline, el barrido de escala, los reportes y la CLI.
"""

import csv
import json
import math
import os

import numpy as np
import pytest

from metacot.cli import EXIT_CONFIG, EXIT_OK, main
from metacot.config import parse_config
from metacot.dynamics import ESTIMATE_COLUMNS
from metacot.errors import ValidationError
from metacot.experiment import (
    SWEEP_COLUMNS,
    distilled_invariance,
    fit_slopes,
    loglog_slope,
    run_pipeline,
    run_scaling_sweep,
    run_stages,
    to_json_value,
)
from metacot.ppo import TRACE_COLUMNS as PPO_TRACE_COLUMNS
from metacot.pretrain import TRACE_COLUMNS as PRETRAIN_TRACE_COLUMNS
from metacot.report import csv_text, io_write_pipeline, svg_line_chart, sweep_charts

SMOKE = """
graph.K = 2
graph.M = 4
graph.eps = 0.1
graph.inbound_targets = true
pretrain.T1 = 600
pretrain.T2 = 600
logic.samples = 500
run.seed = 7
"""

FROZEN = """
graph.K = 2
graph.M = 4
graph.eps = 0
search.c_T = 20
pretrain.T1 = 400
pretrain.T2 = 400
run.seed = 7
"""

SWEEP = SMOKE + """
sweep.epsilon = 0.05, 0.1
sweep.rollouts = 100
sweep.distilled_rollouts = 100
"""


def _config(text):
    return parse_config(text).get_or_raise()


def _csv_rows(path, columns):
    with open(path, encoding="utf-8") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    assert tuple(reader.fieldnames) == tuple(columns)
    return rows


def _write(tmp_path, text, name="exp.conf"):
    path = os.path.join(tmp_path, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


@pytest.fixture(scope="module")
def smoke_report():
    return run_pipeline(_config(SMOKE))


class TestPipeline:
    """Tests para run_pipeline y run_stages."""

    def test_all_stages_pass(self, smoke_report):
        """La instancia chica pasa todas las etapas."""
        assert smoke_report.passed, smoke_report.to_dict()
        assert [s.name for s in smoke_report.stages] == [
            'build', 'pretrain', 'search', 'guidance', 'distill', 'evaluate', 'logic']
        assert all(s.status == 'passed' for s in smoke_report.stages)
        assert smoke_report.stop_reason is None

    def test_measurements(self, smoke_report):
        """Cada etapa deja sus mediciones principales."""
        assert smoke_report.stage('build').measurements['num_states'] == 8
        assert smoke_report.stage('pretrain').measurements['support_recovered']
        assert smoke_report.stage('distill').measurements['support_matches_meta_graph']
        assert smoke_report.stage('evaluate').measurements['lifted_path']['valid']
        assert smoke_report.stage('logic').measurements['mask_property']

    def test_distill_reports_reversibility(self, smoke_report):
        """distill reporta las razones de reversibilidad de q⋆ entre clusters."""
        ratios = np.array(smoke_report.stage('distill').measurements['qstar_reversibility'])
        assert ratios.shape == (2, 2)
        assert np.isnan(ratios[0, 0]) and np.isnan(ratios[1, 1])
        assert ratios[0, 1] * ratios[1, 0] == pytest.approx(1.0)
        assert smoke_report.stage('distill').to_dict()['measurements']['qstar_reversibility'][0][0] is None

    def test_report_is_json(self, smoke_report):
        """El reporte se serializa sin NaN ni tipos numpy."""
        payload = smoke_report.to_dict()
        text = json.dumps(payload, allow_nan=False)
        assert json.loads(text)['acceptance_version'] == payload['acceptance_version']

    def test_deterministic(self, smoke_report):
        """La misma semilla reproduce el mismo reporte."""
        assert run_pipeline(_config(SMOKE)).to_dict() == smoke_report.to_dict()

    def test_rl_mode(self):
        """En modo RL la guía usa el modelo ajustado y re-correr PPO no lo mueve."""
        report = run_pipeline(_config(SMOKE + "search.mode = rl\n"))
        assert report.passed, report.to_dict()
        assert report.stage('guidance').measurements['rerun_logit_delta'] == 0.0

    def test_no_sparse_edges_stops(self):
        """Con ε = 0 la corrida se detiene tras la búsqueda sin fallar."""
        report = run_pipeline(_config(FROZEN))
        assert report.passed
        assert report.stop_reason == "no sparse edges"
        statuses = {s.name: s.status for s in report.stages}
        assert statuses['search'] == 'passed'
        assert all(statuses[n] == 'skipped' for n in ('guidance', 'distill', 'evaluate', 'logic'))

    def test_stages_need_build(self):
        """Sin build las demás etapas quedan salteadas."""
        report, state = run_stages(_config(SMOKE), ('pretrain', 'search'))
        assert [s.status for s in report.stages] == ['skipped', 'skipped']
        assert state.kernel is None

    def test_guidance_needs_search(self):
        """La guía sin búsqueda previa queda salteada con motivo."""
        report, _ = run_stages(_config(SMOKE), ('build', 'guidance'))
        assert report.stage('guidance').status == 'skipped'
        assert report.stage('guidance').error == "requires the search stage"

    def test_unknown_stage(self):
        """Una etapa desconocida es un error de validación."""
        with pytest.raises(ValidationError):
            run_stages(_config(SMOKE), ('build', 'paint'))

    def test_failure_halts(self):
        """Una etapa que falla marca el reporte y saltea las siguientes."""
        report = run_pipeline(_config(SMOKE + "acceptance.search_min_recall = 1.5\n"))
        assert not report.passed
        assert report.failed_stage == 'search'
        assert 'AcceptanceError' in report.stage('search').error
        assert report.stage('guidance').status == 'skipped'


class TestHelpers:
    """Tests para conversiones y ajustes del barrido."""

    def test_to_json_value(self):
        """numpy, tuplas y no finitos pasan a tipos JSON."""
        value = to_json_value({'a': np.float64(1.5), 'b': (np.int64(2), math.nan), 3: np.array([True])})
        assert value == {'a': 1.5, 'b': [2, None], '3': [True]}
        assert isinstance(value['b'][0], int)

    def test_loglog_slope(self):
        """y = x² tiene pendiente 2."""
        x = np.array([1.0, 2.0, 4.0, 8.0])
        assert loglog_slope(x, x ** 2) == pytest.approx(2.0)

    def test_fit_slopes(self):
        """Con tiempos ∝ 1/ε la pendiente contra 1/ε es 1."""
        rows = [{'K': 2, 'M': 4, 'epsilon': e, 'base_mean': 3.0 / e} for e in (0.01, 0.02, 0.04)]
        slopes = fit_slopes(rows)
        assert len(slopes['epsilon']) == 1
        assert slopes['epsilon'][0]['slope'] == pytest.approx(1.0)
        assert slopes['epsilon'][0]['points'] == 3
        assert slopes['K'] == [] and slopes['M'] == []

    def test_distilled_invariance(self):
        """max/min del tiempo destilado por (K, M), ignorando los ausentes."""
        rows = [
            {'K': 2, 'M': 4, 'distilled_mean': 2.0},
            {'K': 2, 'M': 4, 'distilled_mean': 3.0},
            {'K': 2, 'M': 4, 'distilled_mean': None},
            {'K': 3, 'M': 4, 'distilled_mean': 5.0},
        ]
        assert distilled_invariance(rows) == [{'K': 2, 'M': 4, 'ratio': 1.5}]


class TestSweep:
    """Tests para run_scaling_sweep."""

    @pytest.fixture(scope="class")
    def sweep(self):
        return run_scaling_sweep(_config(SWEEP))

    def test_rows(self, sweep):
        """Un punto por ε con tiempos base, guiados y destilados."""
        assert [r['epsilon'] for r in sweep.rows] == [0.05, 0.1]
        for row in sweep.rows:
            assert set(SWEEP_COLUMNS) <= set(row)
            assert row['base_mean'] > 0
            assert row['distilled_mean'] is not None

    def test_slopes_and_invariance(self, sweep):
        """Hay una pendiente contra 1/ε y un cociente de invariancia."""
        assert len(sweep.slopes['epsilon']) == 1
        assert len(sweep.invariance) == 1
        json.dumps(sweep.to_dict(), allow_nan=False)

    def test_charts(self, sweep):
        """Sólo el eje que varía tiene gráfico."""
        assert list(sweep_charts(sweep)) == ['hitting_vs_epsilon.svg']

    def test_deterministic(self, sweep):
        """El barrido no depende de la cantidad de hilos."""
        again = run_scaling_sweep(_config(SWEEP + "run.threads = 2\n"))
        assert again.to_dict() == sweep.to_dict()

    def test_empty_grid_uses_graph(self):
        """Sin ejes de barrido la grilla es el punto de graph."""
        result = run_scaling_sweep(_config(SMOKE + "sweep.rollouts = 50\nsweep.distilled_rollouts = 50\n"))
        assert len(result.rows) == 1


class TestReport:
    """Tests para CSV, SVG y escritura del pipeline."""

    def test_csv_text(self):
        """Encabezado fijo; None y NaN quedan vacíos."""
        text = csv_text([{'a': 1, 'b': None}, {'a': math.nan, 'b': 0.5}], ('a', 'b'))
        assert text == "a,b\n1,\n,0.5\n"

    def test_svg_line_chart(self):
        """El SVG tiene una polilínea por serie y descarta puntos no positivos."""
        svg = svg_line_chart({'base': [(1.0, 10.0), (10.0, 100.0), (0.0, 5.0)]}, 'title <x>', 'x', 'y')
        assert svg.startswith('<svg')
        assert svg.count('<polyline') == 1
        assert svg.count('<circle') == 2
        assert 'title &lt;x&gt;' in svg

    def test_empty_chart(self):
        """Sin puntos sólo quedan los ejes."""
        svg = svg_line_chart({}, 't', 'x', 'y')
        assert '<polyline' not in svg and svg.rstrip().endswith('</svg>')

    def test_write_pipeline_csv(self, tmp_path, smoke_report):
        """Con formato csv se escribe además una fila por etapa."""
        io_write_pipeline(str(tmp_path), smoke_report, 'csv').run()
        with open(os.path.join(tmp_path, 'pipeline.csv'), encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        assert [r['stage'] for r in rows][0] == 'build'
        assert all(r['status'] == 'passed' for r in rows)
        with open(os.path.join(tmp_path, 'pipeline.json'), encoding='utf-8') as f:
            assert json.load(f)['passed'] is True


class TestCli:
    """Tests para los subcomandos y sus códigos de salida."""

    def test_generate(self, tmp_path):
        """generate escribe el kernel y el grafo."""
        out = os.path.join(tmp_path, 'out')
        assert main(['generate', '--config', _write(tmp_path, SMOKE), '--out', out]) == EXIT_OK
        assert os.path.exists(os.path.join(out, 'kernel.txt'))
        with open(os.path.join(out, 'graph.json'), encoding='utf-8') as f:
            assert json.load(f)['num_states'] == 8

    def test_validate(self, tmp_path):
        """validate pasa sobre un kernel bien formado."""
        out = os.path.join(tmp_path, 'out')
        assert main(['validate', '--config', _write(tmp_path, SMOKE), '--out', out]) == EXIT_OK
        assert os.path.exists(os.path.join(out, 'validate.json'))

    def test_invalid_config(self, tmp_path):
        """Una clave desconocida termina con código 3."""
        path = _write(tmp_path, SMOKE + "graph.colour = red\n")
        assert main(['generate', '--config', path, '--out', str(tmp_path)]) == EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        """Un archivo inexistente termina con código 3."""
        assert main(['generate', '--config', os.path.join(tmp_path, 'nada.conf')]) == EXIT_CONFIG

    def test_pipeline(self, tmp_path, capsys):
        """pipeline escribe el reporte y los artefactos y resume en stdout."""
        out = os.path.join(tmp_path, 'out')
        code = main(['pipeline', '--config', _write(tmp_path, SMOKE), '--out', out, '--format', 'csv'])
        assert code == EXIT_OK
        for name in ('pipeline.json', 'pipeline.csv', 'model.json', 'distilled.json', 'logic_instance.json',
                     'estimates.csv', 'error_trace.csv'):
            assert os.path.exists(os.path.join(out, name)), name
        assert not os.path.exists(os.path.join(out, 'ppo_trace.csv'))
        rows = _csv_rows(os.path.join(out, 'estimates.csv'), ESTIMATE_COLUMNS)
        assert [r['experiment_id'] for r in rows] == ['base', 'guided', 'distilled']
        assert capsys.readouterr().out.strip() == "pipeline: passed"

    def test_pretrain_writes_error_trace(self, tmp_path):
        """pretrain escribe la traza de error con una fila por paso."""
        out = os.path.join(tmp_path, 'out')
        assert main(['pretrain', '--config', _write(tmp_path, SMOKE), '--out', out]) == EXIT_OK
        rows = _csv_rows(os.path.join(out, 'error_trace.csv'), PRETRAIN_TRACE_COLUMNS)
        assert len(rows) == 1200
        assert float(rows[-1]['sup_error']) <= float(rows[0]['sup_error'])

    def test_simulate_writes_estimates(self, tmp_path):
        """simulate escribe la estimación base del tiempo de llegada."""
        out = os.path.join(tmp_path, 'out')
        assert main(['simulate', '--config', _write(tmp_path, SMOKE), '--out', out]) == EXIT_OK
        (row,) = _csv_rows(os.path.join(out, 'estimates.csv'), ESTIMATE_COLUMNS)
        assert row['experiment_id'] == 'base'
        assert (row['K'], row['M']) == ('2', '4')
        assert float(row['mean']) > 0.0

    def test_ppo_writes_trace(self, tmp_path):
        """ppo escribe la traza de PPO aunque no haya pasos."""
        out = os.path.join(tmp_path, 'out')
        assert main(['ppo', '--config', _write(tmp_path, SMOKE), '--out', out]) == EXIT_OK
        _csv_rows(os.path.join(out, 'ppo_trace.csv'), PPO_TRACE_COLUMNS)

    def test_search_without_sparse_edges(self, tmp_path, capsys):
        """search con ε = 0 termina bien y dice por qué se detuvo."""
        out = os.path.join(tmp_path, 'out')
        assert main(['search', '--config', _write(tmp_path, FROZEN), '--out', out]) == EXIT_OK
        assert "no sparse edges" in capsys.readouterr().out

    def test_sweep(self, tmp_path):
        """sweep escribe CSV, JSON y gráficos."""
        out = os.path.join(tmp_path, 'out')
        assert main(['sweep', '--config', _write(tmp_path, SWEEP), '--out', out]) == EXIT_OK
        with open(os.path.join(out, 'sweep.csv'), encoding='utf-8') as f:
            header = f.readline().strip().split(',')
        assert tuple(header) == SWEEP_COLUMNS
        assert os.path.exists(os.path.join(out, 'sweep.json'))
        assert os.path.exists(os.path.join(out, 'hitting_vs_epsilon.svg'))
