"""
Jerarquía de errores del simulador.

Las funciones de librería lanzan estas excepciones; el pipeline y el CLI
las transportan como ``Either.left`` y las traducen a códigos de salida.
"""

from typing import Optional, Tuple


class MetaChainError(Exception):
    """Raíz de todos los errores de dominio."""


class ValidationError(MetaChainError):
    """Entrada con forma o valores inválidos."""


class ConstraintError(ValidationError):
    """Topología de aristas dispersas que viola un tope estructural."""

    def __init__(self, message: str, pair: Optional[Tuple[int, int]] = None):
        super().__init__(message)
        self.pair = pair


class InfeasibleTaskError(MetaChainError):
    """Ningún par de clusters alcanza la separación pedida."""


class SizeLimitError(MetaChainError):
    """Instancia demasiado grande para el oráculo denso."""


class StructureError(MetaChainError):
    """Cadena reducible o sistema lineal singular."""


class ReachabilityError(StructureError):
    """Algún estado no alcanza el conjunto objetivo."""


class NumericalInconsistencyError(MetaChainError):
    """Probabilidades fuera de rango más allá de la tolerancia numérica."""


class SupportRecoveryError(MetaChainError):
    """El umbralizado enmascaró una entrada verdadera."""

    def __init__(self, message: str, entry: Tuple[int, int], target: float, estimate: float):
        super().__init__(message)
        self.entry = entry
        self.target = target
        self.estimate = estimate


class UndefinedResultError(MetaChainError):
    """La lógica de un camino truncado no está definida."""


class ConfigError(MetaChainError):
    """Archivo de configuración ilegible o con claves desconocidas."""


class AcceptanceError(MetaChainError):
    """Una etapa no alcanzó su umbral de aceptación."""

    def __init__(self, message: str, stage: str):
        super().__init__(message)
        self.stage = stage
