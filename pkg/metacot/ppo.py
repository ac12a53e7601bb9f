"""
PPO-Clip con ventaja indicadora sobre las aristas descubiertas Ê.

La política vieja queda fija en p^ε. Cada paso suma ±μ_x·α a los logits
de la fila x según el signo del gradiente del objetivo recortado: las
entradas de Ê suben, el resto baja en bloque y conserva sus cocientes.
Una fila deja de moverse cuando su cociente de masa sobre Ê llega a
c_clip.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ValidationError
from .kernel import TransitionKernel, epsilon_max
from .pretrain import SourceDistribution, source_weights
from .softmax import SoftmaxTable, masked_softmax

logger = logging.getLogger(__name__)


class GradientMode(str, Enum):
    SIGN = "sign"
    PLAIN = "plain"


@dataclass(frozen=True)
class PpoSchedule:
    T_ppo: Optional[int] = None
    alpha: Optional[float] = None
    c_clip: Optional[float] = None
    epsilon_max: Optional[float] = None
    alpha_scale: float = 0.05
    gradient: GradientMode = GradientMode.SIGN
    source_dist: SourceDistribution = SourceDistribution.UNIFORM

    def __post_init__(self):
        object.__setattr__(self, 'gradient', GradientMode(self.gradient))
        object.__setattr__(self, 'source_dist', SourceDistribution(self.source_dist))

    def resolve(self, kernel: TransitionKernel, weights: np.ndarray, edge_probabilities: np.ndarray) -> 'PpoSchedule':
        """
        α = alpha_scale/max μ, c_clip = (ε_max/ε)·e^{−2α·max μ} y
        T_PPO = ⌈ln(2ε_max/ε)/(2·min μ·α)⌉ (modo signo).
        """
        if kernel.epsilon <= 0.0:
            raise ValidationError("PPO needs a kernel with epsilon > 0")
        eps_max = self.epsilon_max if self.epsilon_max is not None else epsilon_max(kernel.max_cluster_size)
        ratio = eps_max / kernel.epsilon
        alpha = self.alpha if self.alpha is not None else self.alpha_scale / float(weights.max())
        c_clip = self.c_clip if self.c_clip is not None else ratio * math.exp(-2.0 * alpha * float(weights.max()))
        if self.T_ppo is not None:
            steps = self.T_ppo
        elif ratio <= 1.0:
            steps = 0
        elif self.gradient is GradientMode.SIGN:
            steps = math.ceil(math.log(2.0 * ratio) / (2.0 * float(weights.min()) * alpha))
        else:
            smallest = float(edge_probabilities.min()) if len(edge_probabilities) else kernel.epsilon
            steps = math.ceil(1.0 / (smallest * float(weights.min()) * alpha))
        resolved = replace(self, T_ppo=steps, alpha=alpha, c_clip=c_clip, epsilon_max=eps_max)
        return resolved.validate(kernel)

    def validate(self, kernel: Optional[TransitionKernel] = None) -> 'PpoSchedule':
        if self.alpha is not None and self.alpha <= 0.0:
            raise ValidationError("alpha must be positive")
        if self.T_ppo is not None and self.T_ppo < 0:
            raise ValidationError("T_ppo must be non-negative")
        if self.T_ppo and self.c_clip is not None and self.c_clip <= 1.0:
            raise ValidationError(f"c_clip={self.c_clip:.3g} must exceed 1")
        if (self.gradient is GradientMode.PLAIN and kernel is not None and self.epsilon_max is not None
                and kernel.epsilon < self.epsilon_max ** 2):
            raise ValidationError(
                f"plain-gradient PPO needs epsilon >= eps_max^2 ({self.epsilon_max ** 2:.3g})"
            )
        return self


def _advantage(shape: Tuple[int, int], edges) -> np.ndarray:
    indicator = np.zeros(shape, dtype=bool)
    for x, y in edges:
        indicator[x, y] = True
    return indicator


def _check_edges(model: SoftmaxTable, edges) -> None:
    for x, y in edges:
        if model.mask[x, y]:
            raise ValidationError(f"edge ({x}, {y}) is outside the model support")


def ppo_objective(model: SoftmaxTable, old_kernel: TransitionKernel, edges, weights: np.ndarray,
                  c_clip: float) -> float:
    """Σ_x μ(x) Σ_{y:(x,y)∈Ê} p^ε(y|x)·min{p̂(y|x)/p^ε(y|x), c_clip}."""
    P = old_kernel.dense()
    Q = model.probabilities()
    total = 0.0
    for x, y in sorted(edges):
        if P[x, y] <= 0.0:
            raise ValidationError(f"edge ({x}, {y}) is not in the old policy support")
        total += weights[x] * P[x, y] * min(Q[x, y] / P[x, y], c_clip)
    return float(total)


def ppo_gradient(model: SoftmaxTable, old_kernel: TransitionKernel, edges, weights: np.ndarray,
                 c_clip: float) -> np.ndarray:
    """Gradiente exacto de ``ppo_objective`` (recorte entrada por entrada)."""
    P = old_kernel.dense()
    Q = model.probabilities()
    active = _advantage(Q.shape, edges) & (Q < c_clip * P)
    weighted = np.where(active, Q, 0.0)
    gradient = weights[:, None] * (weighted - Q * weighted.sum(axis=1, keepdims=True))
    gradient[model.mask] = 0.0
    return gradient


def row_ratios(Q: np.ndarray, P: np.ndarray, advantage: np.ndarray) -> np.ndarray:
    """Cociente de masa sobre Ê por fila (NaN en filas sin Ê)."""
    new = np.where(advantage, Q, 0.0).sum(axis=1)
    old = np.where(advantage, P, 0.0).sum(axis=1)
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(old > 0.0, new / old, np.nan)


class PpoTracePoint(NamedTuple):
    step: int
    row: int
    edge_mass: float
    clipped: bool


class PpoResult(NamedTuple):
    model: SoftmaxTable
    trace: Tuple[PpoTracePoint, ...]
    steps: int


def run_ppo_traced(model: SoftmaxTable, old_kernel: TransitionKernel, edges,
                   schedule: PpoSchedule = PpoSchedule()) -> PpoResult:
    edges = sorted(set(edges))
    _check_edges(model, edges)
    if not edges:
        return PpoResult(model, (), 0)
    weights = source_weights(old_kernel, schedule.source_dist)
    P = old_kernel.dense()
    advantage = _advantage(P.shape, edges)
    schedule = schedule.resolve(old_kernel, weights, P[advantage])
    rows = np.flatnonzero(advantage.any(axis=1))
    logger.info("PPO on %d edges: T=%d alpha=%.3g c_clip=%.3g mode=%s",
                len(edges), schedule.T_ppo, schedule.alpha, schedule.c_clip, schedule.gradient.value)

    logits = np.array(model.logits)
    trace: List[PpoTracePoint] = []
    taken = 0
    for t in range(schedule.T_ppo):
        Q = masked_softmax(logits, model.mask)
        ratios = row_ratios(Q, P, advantage)
        open_rows = rows[ratios[rows] < schedule.c_clip]
        for x in rows:
            trace.append(PpoTracePoint(t, int(x), float(Q[x, advantage[x]].sum()), x not in open_rows))
        if not len(open_rows):
            break
        edge_mass = np.where(advantage[open_rows], Q[open_rows], 0.0).sum(axis=1, keepdims=True)
        gradient = weights[open_rows, None] * (np.where(advantage[open_rows], Q[open_rows], 0.0)
                                               - Q[open_rows] * edge_mass)
        gradient[model.mask[open_rows]] = 0.0
        if schedule.gradient is GradientMode.SIGN:
            logits[open_rows] += weights[open_rows, None] * schedule.alpha * np.sign(gradient)
        else:
            logits[open_rows] += schedule.alpha * gradient
        taken = t + 1
    logger.debug("PPO finished after %d steps", taken)
    return PpoResult(model.with_logits(logits), tuple(trace), taken)


def run_ppo(model: SoftmaxTable, old_kernel: TransitionKernel, edges,
            schedule: PpoSchedule = PpoSchedule()) -> SoftmaxTable:
    return run_ppo_traced(model, old_kernel, edges, schedule).model


def tv_change(before, after) -> float:
    """sup_x ‖p̂_before(·|x) − p̂_after(·|x)‖_TV."""
    P = before.probabilities() if isinstance(before, SoftmaxTable) else np.asarray(before)
    Q = after.probabilities() if isinstance(after, SoftmaxTable) else np.asarray(after)
    return float(0.5 * np.abs(P - Q).sum(axis=1).max())


TRACE_COLUMNS = ('step', 'row', 'edge_mass', 'clipped')


def trace_rows(trace) -> List[dict]:
    return [{'step': p.step, 'row': p.row, 'edge_mass': repr(p.edge_mass), 'clipped': int(p.clipped)}
            for p in trace]
