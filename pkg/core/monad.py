from typing import TypeVar, Generic, Callable
from abc import ABC, abstractmethod

A = TypeVar('A')
B = TypeVar('B')


class Monad(ABC, Generic[A]):
    """
    Contrato común de Either, IO y Stream.

    Las tres estructuras del simulador (resultados de etapas, efectos de
    archivo y trayectorias perezosas) se encadenan con la misma interfaz:
    - pure(a).bind(f) == f(a)
    - m.bind(pure) == m
    - m.bind(f).bind(g) == m.bind(lambda x: f(x).bind(g))
    """

    @abstractmethod
    def bind(self, f: Callable[[A], 'Monad[B]']) -> 'Monad[B]':
        """Encadena un cómputo que devuelve otra estructura del mismo tipo."""

    @abstractmethod
    def map(self, f: Callable[[A], B]) -> 'Monad[B]':
        """Aplica una función pura al contenido."""

    @staticmethod
    @abstractmethod
    def pure(value: A) -> 'Monad[A]':
        """Envuelve un valor ya calculado."""

    def __rshift__(self, other: 'Monad[B]') -> 'Monad[B]':
        """m >> n: ejecuta m, descarta su valor y continúa con n."""
        return self.bind(lambda _: other)
