from typing import TypeVar, Generic, Callable, Iterable, Union
from .monad import Monad

A = TypeVar('A')
B = TypeVar('B')
E = TypeVar('E')
C = TypeVar('C')


class Either(Monad[A], Generic[E, A]):
    """
    Resultado de una etapa que puede fallar.

    - Left(error): la etapa falló; el error es normalmente una
      excepción de ``metacot.errors``.
    - Right(value): la etapa terminó y produjo ``value``.

    Las etapas del pipeline (construcción, preentrenamiento, búsqueda,
    PPO, destilación) se componen con ``bind`` y el primer fallo se
    propaga sin ejecutar las siguientes.
    """

    def __init__(self, value: Union[E, A], is_right: bool):
        self._value = value
        self._is_right = is_right

    @property
    def is_right(self) -> bool:
        return self._is_right

    @property
    def is_left(self) -> bool:
        return not self._is_right

    @property
    def value(self) -> A:
        """Valor de un Right; falla si es Left."""
        if not self._is_right:
            raise ValueError(f"Left has no value: {self._value!r}")
        return self._value

    @property
    def error(self) -> E:
        """Error de un Left; falla si es Right."""
        if self._is_right:
            raise ValueError("Right has no error")
        return self._value

    def bind(self, f: Callable[[A], 'Either[E, B]']) -> 'Either[E, B]':
        if self._is_right:
            return f(self._value)
        return Either(self._value, False)

    def map(self, f: Callable[[A], B]) -> 'Either[E, B]':
        """
        Transforma un Right. Una excepción dentro de ``f`` se convierte
        en Left, igual que en ``attempt``.
        """
        if self._is_right:
            try:
                return Either(f(self._value), True)
            except Exception as e:
                return Either(e, False)
        return Either(self._value, False)

    def map_left(self, f: Callable[[E], C]) -> 'Either[C, A]':
        """Transforma el error de un Left."""
        if self._is_right:
            return Either(self._value, True)
        return Either(f(self._value), False)

    @staticmethod
    def pure(value: A) -> 'Either[E, A]':
        return Either(value, True)

    @staticmethod
    def left(error: E) -> 'Either[E, A]':
        return Either(error, False)

    @staticmethod
    def right(value: A) -> 'Either[E, A]':
        return Either(value, True)

    @staticmethod
    def attempt(f: Callable[..., A], *args, **kwargs) -> 'Either[Exception, A]':
        """Ejecuta ``f`` y captura cualquier excepción como Left."""
        try:
            return Either(f(*args, **kwargs), True)
        except Exception as e:
            return Either(e, False)

    @staticmethod
    def sequence(items: Iterable['Either[E, A]']) -> 'Either[E, list[A]]':
        """Lista de Either -> Either de lista; se queda con el primer Left."""
        values = []
        for item in items:
            if item.is_left:
                return Either(item._value, False)
            values.append(item._value)
        return Either(values, True)

    def fold(self, on_left: Callable[[E], C], on_right: Callable[[A], C]) -> C:
        """Reduce ambos casos a un único tipo."""
        return on_right(self._value) if self._is_right else on_left(self._value)

    def get_or_raise(self) -> A:
        """Devuelve el valor o relanza el error (si es una excepción)."""
        if self._is_right:
            return self._value
        if isinstance(self._value, BaseException):
            raise self._value
        raise ValueError(str(self._value))

    def recover(self, f: Callable[[E], A]) -> 'Either[E, A]':
        """Convierte un Left en Right aplicando ``f`` al error."""
        if self.is_left:
            try:
                return Either(f(self._value), True)
            except Exception as e:
                return Either(e, False)
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Either):
            return NotImplemented
        return self._is_right == other._is_right and self._value == other._value

    def __repr__(self) -> str:
        if self._is_right:
            return f"Right({self._value!r})"
        return f"Left({self._value!r})"
