"""
Utils - operadores funcionales y flujos aleatorios deterministas.
"""

from .operators import fold_left, tap
from .rng import derive_rng, derive_seed, uniform_blocks

__all__ = [
    'fold_left',
    'tap',
    'derive_rng',
    'derive_seed',
    'uniform_blocks',
]
