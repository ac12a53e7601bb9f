"""
Core - bloques funcionales del simulador.

Either para resultados de etapas, IO para efectos de archivo y Stream
para trayectorias perezosas.
"""

from .monad import Monad
from .either import Either
from .io_monad import (
    IO,
    dumps_stable,
    io_print,
    io_read_text,
    io_write_json,
    io_write_text,
)
from .stream import Stream

__version__ = '2.0.0'

__all__ = [
    'Monad',
    'Either',
    'IO',
    'dumps_stable',
    'io_print',
    'io_read_text',
    'io_write_json',
    'io_write_text',
    'Stream',
]
