"""
Tabla softmax lineal por filas con máscara explícita.

Es el modelo de bigramas del pretraining (W sobre S×S), el que ajusta PPO
y el destilado sobre representantes (Z, Z⁺ sobre K×K). Las entradas
enmascaradas valen −∞: probabilidad exactamente 0 y gradiente 0.
"""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from .errors import ValidationError


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """softmax por filas con las entradas de ``mask`` en −∞."""
    return softmax(np.where(mask, -np.inf, logits), axis=1)


@dataclass(frozen=True, eq=False)
class SoftmaxTable:
    logits: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if logits.shape != mask.shape or logits.ndim != 2:
            raise ValidationError("logits and mask must be matrices of the same shape")
        if np.any(mask.all(axis=1)):
            raise ValidationError("every row needs at least one unmasked entry")
        if np.any(~np.isfinite(logits[~mask])):
            raise ValidationError("unmasked logits must be finite")
        logits[mask] = 0.0
        logits.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, 'logits', logits)
        object.__setattr__(self, 'mask', mask)

    @property
    def shape(self):
        return self.logits.shape

    @staticmethod
    def zeros(rows: int, cols: Optional[int] = None) -> 'SoftmaxTable':
        cols = rows if cols is None else cols
        return SoftmaxTable(np.zeros((rows, cols)), np.zeros((rows, cols), dtype=bool))

    @staticmethod
    def from_probabilities(probabilities: np.ndarray) -> 'SoftmaxTable':
        """Logits log p sobre el soporte; el resto queda enmascarado."""
        probabilities = np.asarray(probabilities, dtype=np.float64)
        mask = probabilities <= 0.0
        with np.errstate(divide='ignore'):
            logits = np.where(mask, 0.0, np.log(np.where(mask, 1.0, probabilities)))
        return SoftmaxTable(logits, mask)

    def probabilities(self) -> np.ndarray:
        return masked_softmax(self.logits, self.mask)

    def with_logits(self, logits: np.ndarray) -> 'SoftmaxTable':
        return SoftmaxTable(logits, self.mask)

    def masked(self, extra: np.ndarray) -> 'SoftmaxTable':
        return SoftmaxTable(self.logits, self.mask | np.asarray(extra, dtype=bool))

    def support(self) -> np.ndarray:
        return ~self.mask

    def to_dict(self) -> dict:
        """Volcado con ``null`` en las entradas enmascaradas."""
        return {
            'shape': list(self.shape),
            'logits': [
                [None if masked else float(value) for value, masked in zip(row, row_mask)]
                for row, row_mask in zip(self.logits, self.mask)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(payload: dict) -> 'SoftmaxTable':
        rows = payload['logits']
        mask = np.array([[value is None for value in row] for row in rows], dtype=bool)
        logits = np.array([[0.0 if value is None else value for value in row] for row in rows])
        return SoftmaxTable(logits, mask)
