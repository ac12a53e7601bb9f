from typing import TypeVar, Generic, Callable, Iterator, Iterable, Optional
from .monad import Monad
import itertools

A = TypeVar('A')
B = TypeVar('B')


class Stream(Monad[A], Generic[A]):
    """
    Secuencia perezosa, posiblemente infinita.

    Una trayectoria de la cadena de Markov es un Stream infinito de
    estados (``Stream.iterate``); las rutinas de dinámica la recortan con
    ``take`` / ``take_until`` y la consumen una sola vez.

    Cada materialización vuelve a llamar a ``source``: un Stream que
    envuelve un generador con estado aleatorio debe consumirse una vez.
    """

    def __init__(self, source: Callable[[], Iterator[A]]):
        self._source = source

    def __iter__(self) -> Iterator[A]:
        return self._source()

    # CONSTRUCTORES

    @staticmethod
    def pure(value: A) -> 'Stream[A]':
        return Stream(lambda: iter([value]))

    @staticmethod
    def of(*values: A) -> 'Stream[A]':
        return Stream(lambda: iter(values))

    @staticmethod
    def from_iterable(iterable: Iterable[A]) -> 'Stream[A]':
        return Stream(lambda: iter(iterable))

    @staticmethod
    def iterate(seed: A, f: Callable[[A], A]) -> 'Stream[A]':
        """seed, f(seed), f(f(seed)), ... (infinito)."""

        def new_source():
            current = seed
            while True:
                yield current
                current = f(current)

        return Stream(new_source)

    @staticmethod
    def range(start: int, stop: Optional[int] = None, step: int = 1) -> 'Stream[int]':
        if stop is None:
            return Stream(lambda: itertools.count(start, step))
        return Stream(lambda: iter(range(start, stop, step)))

    # TRANSFORMACIONES

    def map(self, f: Callable[[A], B]) -> 'Stream[B]':
        return Stream(lambda: map(f, self._source()))

    def bind(self, f: Callable[[A], 'Stream[B]']) -> 'Stream[B]':
        def new_source():
            for item in self._source():
                yield from f(item)

        return Stream(new_source)

    def filter(self, predicate: Callable[[A], bool]) -> 'Stream[A]':
        return Stream(lambda: filter(predicate, self._source()))

    def take(self, n: int) -> 'Stream[A]':
        return Stream(lambda: itertools.islice(self._source(), n))

    def take_while(self, predicate: Callable[[A], bool]) -> 'Stream[A]':
        return Stream(lambda: itertools.takewhile(predicate, self._source()))

    def take_until(self, predicate: Callable[[A], bool]) -> 'Stream[A]':
        """Como take_while negado, pero incluye el primer elemento que cumple."""

        def new_source():
            for item in self._source():
                yield item
                if predicate(item):
                    return

        return Stream(new_source)

    def pairwise(self) -> 'Stream[tuple[A, A]]':
        """Pares consecutivos (x0, x1), (x1, x2), ...: las transiciones de una trayectoria."""
        return Stream(lambda: itertools.pairwise(self._source()))

    def scan(self, f: Callable[[B, A], B], initial: B) -> 'Stream[B]':
        """Acumulados parciales: initial, f(initial, a0), ..."""
        return Stream(lambda: itertools.accumulate(self._source(), f, initial=initial))

    def chunk(self, size: int) -> 'Stream[list[A]]':
        """Agrupa en bloques consecutivos de ``size`` (el último puede ser menor)."""

        def new_source():
            it = self._source()
            while True:
                block = list(itertools.islice(it, size))
                if not block:
                    return
                yield block

        return Stream(new_source)

    def zip(self, other: 'Stream[B]') -> 'Stream[tuple[A, B]]':
        return Stream(lambda: zip(self._source(), other._source()))

    # OPERACIONES TERMINALES

    def reduce(self, f: Callable[[B, A], B], initial: B) -> B:
        result = initial
        for item in self._source():
            result = f(result, item)
        return result

    def to_list(self) -> list[A]:
        return list(self._source())

    def count(self) -> int:
        return sum(1 for _ in self._source())

    def last(self, default: Optional[A] = None) -> Optional[A]:
        item = default
        for item in self._source():
            pass
        return item

    def __repr__(self) -> str:
        return "Stream(<lazy>)"
