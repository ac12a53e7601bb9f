import json
import os
from typing import TypeVar, Generic, Callable, Any, Iterable, Sequence
from .monad import Monad
from .either import Either

A = TypeVar('A')
B = TypeVar('B')


class IO(Monad[A], Generic[A]):
    """
    Efecto diferido (lectura de configuraciones, escritura de reportes).

    Construir un IO no toca el disco; los efectos ocurren sólo en ``run``.
    El CLI arma todas las salidas de un comando como un único IO y lo
    ejecuta al final, de modo que los cálculos se mantienen puros.
    """

    def __init__(self, effect: Callable[[], A]):
        self._effect = effect

    def run(self) -> A:
        """Ejecuta el efecto. Único punto impuro."""
        return self._effect()

    def map(self, f: Callable[[A], B]) -> 'IO[B]':
        return IO(lambda: f(self._effect()))

    def bind(self, f: Callable[[A], 'IO[B]']) -> 'IO[B]':
        return IO(lambda: f(self._effect()).run())

    @staticmethod
    def pure(value: A) -> 'IO[A]':
        return IO(lambda: value)

    def attempt(self) -> 'IO[Either[Exception, A]]':
        """Convierte fallos del efecto (p. ej. OSError) en Left."""

        def effect():
            try:
                return Either.right(self._effect())
            except Exception as e:
                return Either.left(e)

        return IO(effect)

    @staticmethod
    def sequence(actions: Sequence['IO[A]']) -> 'IO[list[A]]':
        """Ejecuta los efectos en orden y junta sus resultados."""
        return IO(lambda: [action.run() for action in actions])

    @staticmethod
    def traverse(items: Iterable[A], f: Callable[[A], 'IO[B]']) -> 'IO[list[B]]':
        return IO.sequence([f(item) for item in items])

    def __repr__(self) -> str:
        return "IO(<effect>)"


# CONSTRUCTORES DE IO SOBRE ARCHIVOS

def _ensure_parent(filepath: str) -> None:
    parent = os.path.dirname(os.path.abspath(filepath))
    os.makedirs(parent, exist_ok=True)


def io_read_text(filepath: str, encoding: str = 'utf-8') -> IO[str]:
    """IO que lee un archivo de texto completo."""

    def effect():
        with open(filepath, 'r', encoding=encoding) as f:
            return f.read()

    return IO(effect)


def io_write_text(filepath: str, content: str, encoding: str = 'utf-8') -> IO[str]:
    """IO que escribe ``content`` (creando directorios) y devuelve la ruta."""

    def effect():
        _ensure_parent(filepath)
        with open(filepath, 'w', encoding=encoding, newline='\n') as f:
            f.write(content)
        return filepath

    return IO(effect)


def io_write_json(filepath: str, payload: Any) -> IO[str]:
    """
    IO que serializa ``payload`` como JSON estable (claves ordenadas),
    de modo que dos ejecuciones con la misma semilla producen bytes iguales.
    """
    return IO(lambda: dumps_stable(payload)).bind(
        lambda text: io_write_text(filepath, text)
    )


def dumps_stable(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def io_print(message: str) -> IO[None]:
    """IO que imprime en stdout."""
    return IO(lambda: print(message))
