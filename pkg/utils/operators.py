"""
Operadores funcionales usados por el pipeline y la lógica de grupos.
"""

from functools import reduce
from typing import Any, Callable, Iterable, TypeVar

A = TypeVar('A')
B = TypeVar('B')


def fold_left(f: Callable[[B, A], B], initial: B, items: Iterable[A]) -> B:
    """
    reduce con el acumulador primero, como Stream.reduce.

    Example:
        >>> fold_left(lambda acc, x: acc * 10 + x, 0, [1, 2, 3])
        123
    """
    return reduce(f, items, initial)


def tap(f: Callable[[A], Any]) -> Callable[[A], A]:
    """
    Ejecuta ``f`` por su efecto (normalmente un log) y devuelve el valor,
    para poder meterlo en un ``map`` sin cortar la cadena.
    """
    def tapped(x: A) -> A:
        f(x)
        return x
    return tapped
