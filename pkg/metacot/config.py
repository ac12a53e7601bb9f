"""
Configuración de experimentos.

Formato de texto plano, una clave por línea con secciones punteadas::

    # instancia chica
    graph.K = 2
    graph.M = 4
    graph.epsilon = 0.05
    search.mode = rl
    sweep.epsilon = 0.001, 0.002, 0.004

Un archivo ``.json`` con la misma estructura (anidada o con claves
punteadas) también se acepta. ``parse_config`` nunca lanza: devuelve
``Either[ConfigError, ExperimentConfig]``.
"""

import json
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

from core.either import Either
from core.io_monad import IO, io_read_text

from .acceptance import AcceptanceThresholds
from .distill import DistillSchedule
from .errors import ConfigError, MetaChainError
from .kernel import GraphSpec
from .ppo import PpoSchedule
from .pretrain import SourceDistribution, TrainSchedule
from .search import SearchMode, SearchSchedule, default_schedule

logger = logging.getLogger(__name__)

STAGES = ('build', 'pretrain', 'search', 'guidance', 'distill', 'evaluate', 'logic')


@dataclass(frozen=True)
class SearchOptions:
    """Constantes de ``default_schedule`` más sobreescrituras explícitas."""
    mode: SearchMode = SearchMode.PRM
    source_dist: SourceDistribution = SourceDistribution.UNIFORM
    c_R: float = 4.0
    c_N: float = 4.0
    c_T: float = 2.0
    c_X: float = 8.0
    R: Optional[int] = None
    N: Optional[int] = None
    T0: Optional[int] = None
    Tmax: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'mode', SearchMode(self.mode))
        object.__setattr__(self, 'source_dist', SourceDistribution(self.source_dist))

    def schedule(self, K: int, M: int, epsilon: float) -> SearchSchedule:
        base = default_schedule(K, M, epsilon, self.c_R, self.c_N, self.c_T, self.c_X,
                                SearchMode(self.mode), self.source_dist)
        overrides = {name: getattr(self, name) for name in ('R', 'N', 'T0', 'Tmax') if getattr(self, name) is not None}
        return replace(base, **overrides).validate()


@dataclass(frozen=True)
class DistillOptions:
    mode: str = 'exact'
    mc_steps: int = 1_000_000
    c_thres: float = 0.1
    c_beta: float = 1.0
    c_dist: float = 80.0
    T_dist: Optional[int] = None
    T_thres: Optional[int] = None
    eta: Optional[float] = None
    beta: Optional[float] = None

    def schedule(self) -> DistillSchedule:
        return DistillSchedule(self.T_dist, self.T_thres, self.eta, self.beta,
                               self.c_thres, self.c_beta, self.c_dist).validate()


@dataclass(frozen=True)
class LogicOptions:
    group: str = 'Z2'
    classifier: str = 'half'
    samples: int = 10_000
    mask_source: str = 'planted'


@dataclass(frozen=True)
class SweepAxes:
    K: Tuple[int, ...] = ()
    M: Tuple[int, ...] = ()
    epsilon: Tuple[float, ...] = ()
    rollouts: int = 400
    horizon: Optional[int] = None
    distilled_rollouts: int = 1000


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    out: str = 'out'
    threads: int = 1
    rollouts: int = 400
    horizon: Optional[int] = None
    format: str = 'json'
    raw_samples: bool = False
    task_difficulty: float = 0.5
    stages: Tuple[str, ...] = STAGES
    charts: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    graph: GraphSpec
    pretrain: TrainSchedule = TrainSchedule()
    search: SearchOptions = SearchOptions()
    ppo: PpoSchedule = PpoSchedule()
    distill: DistillOptions = DistillOptions()
    logic: LogicOptions = LogicOptions()
    sweep: SweepAxes = SweepAxes()
    run: RunOptions = RunOptions()
    acceptance: AcceptanceThresholds = AcceptanceThresholds()
    graph_seed_pinned: bool = False

    def validate(self) -> 'ExperimentConfig':
        """Lanza ConfigError con el primer problema."""
        try:
            self.graph.validate()
            self.pretrain.validate()
            self.ppo.validate()
            self.distill.schedule()
        except MetaChainError as e:
            raise ConfigError(str(e)) from e
        unknown = [s for s in self.run.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; choose from {list(STAGES)}")
        if self.run.threads < 1 or self.run.rollouts < 1:
            raise ConfigError("run.threads and run.rollouts must be positive")
        if self.run.format not in ('csv', 'json'):
            raise ConfigError(f"run.format must be csv or json, got {self.run.format!r}")
        if self.distill.mode not in ('exact', 'mc'):
            raise ConfigError(f"distill.mode must be exact or mc, got {self.distill.mode!r}")
        for axis in ('K', 'M', 'epsilon'):
            if any(v <= 0 for v in getattr(self.sweep, axis)):
                raise ConfigError(f"sweep.{axis} values must be positive")
        return self

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       threads: Optional[int] = None, format: Optional[str] = None) -> 'ExperimentConfig':
        """Banderas del CLI por encima del archivo."""
        run = self.run
        graph = self.graph
        if seed is not None:
            run = replace(run, seed=seed)
            if not self.graph_seed_pinned:
                graph = replace(graph, seed=seed)
        if out is not None:
            run = replace(run, out=out)
        if threads is not None:
            run = replace(run, threads=threads)
        if format is not None:
            run = replace(run, format=format)
        return replace(self, graph=graph, run=run)

    def sweep_grid(self) -> Tuple[Tuple[int, int, float], ...]:
        """Producto (K, M, ε); un eje vacío toma el valor de ``graph``."""
        Ks = self.sweep.K or (self.graph.num_clusters,)
        Ms = self.sweep.M or (self.graph.cluster_size,)
        epsilons = self.sweep.epsilon or (self.graph.epsilon,)
        return tuple((K, M, eps) for K in Ks for M in Ms for eps in epsilons)


SECTIONS = {
    'graph': GraphSpec,
    'pretrain': TrainSchedule,
    'search': SearchOptions,
    'ppo': PpoSchedule,
    'distill': DistillOptions,
    'logic': LogicOptions,
    'sweep': SweepAxes,
    'run': RunOptions,
    'acceptance': AcceptanceThresholds,
}

# nombres cortos de la notación habitual
ALIASES = {
    ('graph', 'K'): 'num_clusters',
    ('graph', 'M'): 'cluster_size',
    ('graph', 'eps'): 'epsilon',
    ('graph', 'sparse_topology'): 'topology',
    ('pretrain', 'source'): 'source_dist',
    ('search', 'source'): 'source_dist',
    ('ppo', 'source'): 'source_dist',
}

TUPLE_KEYS = {('sweep', 'K'), ('sweep', 'M'), ('sweep', 'epsilon'), ('run', 'stages'), ('graph', 'cluster_sizes')}


def parse_value(text: str) -> Any:
    """bool, int, float, lista separada por comas o string."""
    text = text.strip()
    if ',' in text:
        return [parse_value(part) for part in text.split(',') if part.strip()]
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on'):
        return True
    if lowered in ('false', 'no', 'off'):
        return False
    if lowered in ('none', 'null', ''):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_edges(value: Any) -> Tuple[Tuple[int, int], ...]:
    """'0-1, 1-2' o [[0, 1], [1, 2]]."""
    items = value if isinstance(value, list) else [value]
    edges = []
    for item in items:
        if isinstance(item, (list, tuple)):
            edges.append((int(item[0]), int(item[1])))
        else:
            source, _, target = str(item).partition('-')
            edges.append((int(source), int(target)))
    return tuple(edges)


def parse_text(text: str) -> Dict[str, Any]:
    """Líneas ``seccion.clave = valor`` a un dict plano."""
    entries: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep or '.' not in key:
            raise ConfigError(f"line {number}: expected 'section.key = value', got {raw.strip()!r}")
        entries[key.strip()] = parse_value(value)
    return entries


def flatten_json(payload: Dict[str, Any], prefix: str = '') -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in payload.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            flat.update(flatten_json(value, dotted))
        else:
            flat[dotted] = value
    return flat


def build_config(entries: Dict[str, Any]) -> ExperimentConfig:
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    for dotted, value in entries.items():
        section, _, key = dotted.partition('.')
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r} in key {dotted!r}")
        name = ALIASES.get((section, key), key)
        known = {f.name for f in fields(SECTIONS[section])}
        if name not in known:
            raise ConfigError(f"unknown key {dotted!r}")
        if (section, key) in TUPLE_KEYS or (section, name) in TUPLE_KEYS:
            value = tuple(value) if isinstance(value, list) else (value,)
        elif name == 'explicit_edges':
            value = parse_edges(value)
        sections[section][name] = value

    if 'num_clusters' not in sections['graph'] or 'cluster_size' not in sections['graph']:
        raise ConfigError("graph.K and graph.M are required")
    sections['graph'].setdefault('epsilon', 0.0)
    run = RunOptions(**sections['run'])
    pinned = 'seed' in sections['graph']
    sections['graph'].setdefault('seed', run.seed)
    try:
        config = ExperimentConfig(
            graph=GraphSpec(**sections['graph']),
            pretrain=TrainSchedule(**sections['pretrain']),
            search=SearchOptions(**sections['search']),
            ppo=PpoSchedule(**sections['ppo']),
            distill=DistillOptions(**sections['distill']),
            logic=LogicOptions(**sections['logic']),
            sweep=SweepAxes(**sections['sweep']),
            run=run,
            acceptance=AcceptanceThresholds(**sections['acceptance']),
            graph_seed_pinned=pinned,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration value: {e}") from e
    return config.validate()


def parse_config(text: str, is_json: bool = False) -> Either[ConfigError, ExperimentConfig]:
    """Texto de configuración a ExperimentConfig validado, o Left(ConfigError)."""

    def parse():
        if is_json:
            try:
                return flatten_json(json.loads(text))
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON config: {e}") from e
        return parse_text(text)

    return (Either.attempt(parse)
            .bind(lambda entries: Either.attempt(build_config, entries))
            .map_left(_as_config_error))


def _as_config_error(error: Exception) -> ConfigError:
    return error if isinstance(error, ConfigError) else ConfigError(str(error))


def io_load_config(path: str) -> IO[Either[ConfigError, ExperimentConfig]]:
    """IO que lee y valida; los errores de lectura también quedan en Left."""
    return io_read_text(path).attempt().map(
        lambda read: read.map_left(lambda e: ConfigError(f"cannot read {path}: {e}"))
        .bind(lambda text: parse_config(text, is_json=path.endswith('.json')))
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    """Volcado plano (claves punteadas) para los reportes."""
    payload = {}
    for section in SECTIONS:
        value = getattr(config, section)
        for f in fields(value):
            item = getattr(value, f.name)
            if hasattr(item, 'value'):
                item = item.value
            elif isinstance(item, tuple):
                item = [list(x) if isinstance(x, tuple) else x for x in item]
            payload[f"{section}.{f.name}"] = item
    return payload
