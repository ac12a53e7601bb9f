"""
metacot - simulador de cadenas de Markov metaestables como modelo de CoT.

Los estados se agrupan en clusters densos unidos por aristas dispersas de
probabilidad Θ(ε). El paquete genera esas cadenas, calcula sus
cantidades exactas, las simula, entrena modelos softmax tabulares sobre
ellas (pretraining, PPO, destilado) y evalúa la tarea lógica sobre
caminos.
"""

from .errors import (
    AcceptanceError,
    ConfigError,
    MetaChainError,
    ValidationError,
)
from .kernel import GraphSpec, SparseEdgeSet, Task, TransitionKernel, build_kernel, epsilon_max, sample_task
from .config import ExperimentConfig, parse_config
from .experiment import PipelineReport, SweepResult, run_pipeline, run_scaling_sweep

__version__ = '0.1.0'

__all__ = [
    'AcceptanceError',
    'ConfigError',
    'MetaChainError',
    'ValidationError',
    'GraphSpec',
    'SparseEdgeSet',
    'Task',
    'TransitionKernel',
    'build_kernel',
    'epsilon_max',
    'sample_task',
    'ExperimentConfig',
    'parse_config',
    'PipelineReport',
    'SweepResult',
    'run_pipeline',
    'run_scaling_sweep',
]
