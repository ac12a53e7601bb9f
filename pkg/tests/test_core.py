"""
Tests para los bloques funcionales: Either, IO, Stream y utilidades.

Verifica las leyes monádicas y los helpers que usa el simulador.
"""

import json
import os

import pytest

from core.either import Either
from core.io_monad import IO, dumps_stable, io_read_text, io_write_json, io_write_text
from core.stream import Stream
from utils.operators import fold_left, tap
from utils.rng import derive_rng, derive_seed, uniform_blocks


class TestEitherMonad:
    """Tests para Either."""

    def test_right_creation(self):
        """Right expone su valor."""
        result = Either.right(42)
        assert result.is_right
        assert result.value == 42

    def test_left_creation(self):
        """Left expone su error."""
        result = Either.left("error")
        assert result.is_left
        assert result.error == "error"

    def test_left_identity(self):
        """Ley de identidad izquierda."""
        f = lambda x: Either.right(x * 2)
        assert Either.pure(5).bind(f) == f(5)

    def test_right_identity(self):
        """Ley de identidad derecha."""
        m = Either.right(42)
        assert m.bind(Either.pure) == m

    def test_associativity(self):
        """Ley de asociatividad."""
        m = Either.right(3)
        f = lambda x: Either.right(x + 1)
        g = lambda x: Either.right(x * 10)
        assert m.bind(f).bind(g) == m.bind(lambda x: f(x).bind(g))

    def test_left_short_circuits(self):
        """Un Left no ejecuta los pasos siguientes."""
        calls = []
        result = Either.left("boom").bind(lambda x: Either.right(calls.append(x)))
        assert result.is_left
        assert calls == []

    def test_attempt_captures_exception(self):
        """attempt convierte la excepción en Left."""
        result = Either.attempt(lambda: 1 / 0)
        assert result.is_left
        assert isinstance(result.error, ZeroDivisionError)

    def test_map_captures_exception(self):
        """Una excepción dentro de map también termina en Left."""
        result = Either.right(0).map(lambda x: 1 / x)
        assert isinstance(result.error, ZeroDivisionError)

    def test_map_left(self):
        """map_left transforma sólo el error."""
        assert Either.left(2).map_left(lambda e: e * 3).error == 6
        assert Either.right(2).map_left(lambda e: e * 3).value == 2

    def test_sequence_keeps_first_left(self):
        """sequence se queda con el primer Left."""
        items = [Either.right(1), Either.left("a"), Either.left("b")]
        assert Either.sequence(items).error == "a"
        assert Either.sequence([Either.right(1), Either.right(2)]).value == [1, 2]

    def test_fold_and_recover(self):
        """fold reduce ambos casos y recover repara un Left."""
        assert Either.left("x").fold(len, str) == 1
        assert Either.left("x").recover(lambda e: e + "!").value == "x!"

    def test_get_or_raise(self):
        """get_or_raise relanza la excepción guardada."""
        with pytest.raises(ValueError):
            Either.left(ValueError("bad")).get_or_raise()

    def test_value_of_left_fails(self):
        """Pedir el valor de un Left falla."""
        with pytest.raises(ValueError):
            Either.left("e").value


class TestStream:
    """Tests para Stream."""

    def test_iterate_and_take(self):
        """iterate es infinito y take lo recorta."""
        assert Stream.iterate(1, lambda x: 2 * x).take(5).to_list() == [1, 2, 4, 8, 16]

    def test_take_until_includes_match(self):
        """take_until incluye el primer elemento que cumple."""
        assert Stream.range(0).take_until(lambda x: x == 3).to_list() == [0, 1, 2, 3]

    def test_take_until_then_take(self):
        """take después de take_until corta si el predicado nunca se cumple."""
        assert Stream.range(0).take_until(lambda x: x < 0).take(4).to_list() == [0, 1, 2, 3]

    def test_pairwise(self):
        """pairwise produce las transiciones consecutivas."""
        assert Stream.of(1, 2, 3).pairwise().to_list() == [(1, 2), (2, 3)]

    def test_scan(self):
        """scan produce los acumulados parciales."""
        assert Stream.of(1, 2, 3).scan(lambda a, x: a + x, 0).to_list() == [0, 1, 3, 6]

    def test_chunk(self):
        """chunk agrupa en bloques; el último puede ser menor."""
        assert Stream.range(0, 5).chunk(2).to_list() == [[0, 1], [2, 3], [4]]

    def test_bind_flattens(self):
        """bind aplana los streams internos."""
        assert Stream.of(1, 2).bind(lambda x: Stream.of(x, x)).to_list() == [1, 1, 2, 2]

    def test_filter_map_reduce(self):
        """Pipeline filter → map → reduce."""
        total = Stream.range(0, 10).filter(lambda x: x % 2 == 0).map(lambda x: x * x).reduce(lambda a, x: a + x, 0)
        assert total == 120

    def test_last_and_count(self):
        """last y count consumen el stream."""
        assert Stream.of(4, 5, 6).last() == 6
        assert Stream.of().last("vacío") == "vacío"
        assert Stream.range(0, 7).count() == 7

    def test_zip(self):
        """zip termina con el stream más corto."""
        assert Stream.range(0).zip(Stream.of("a", "b")).to_list() == [(0, "a"), (1, "b")]

    def test_rematerialization(self):
        """Un stream sin estado se puede recorrer dos veces."""
        stream = Stream.range(0, 3).map(lambda x: x + 1)
        assert stream.to_list() == stream.to_list() == [1, 2, 3]


class TestIO:
    """Tests para IO y sus constructores de archivos."""

    def test_io_is_lazy(self):
        """Construir un IO no ejecuta el efecto."""
        calls = []
        action = IO(lambda: calls.append(1))
        assert calls == []
        action.run()
        assert calls == [1]

    def test_map_and_bind(self):
        """map y bind encadenan efectos."""
        assert IO.pure(2).map(lambda x: x + 1).bind(lambda x: IO.pure(x * 10)).run() == 30

    def test_attempt(self):
        """attempt convierte fallos del efecto en Left."""
        result = IO(lambda: 1 / 0).attempt().run()
        assert result.is_left

    def test_sequence_runs_in_order(self):
        """sequence ejecuta en orden y junta resultados."""
        order = []
        actions = [IO(lambda i=i: order.append(i) or i) for i in range(3)]
        assert IO.sequence(actions).run() == [0, 1, 2]
        assert order == [0, 1, 2]

    def test_write_and_read_text(self, tmp_path):
        """io_write_text crea directorios y io_read_text lee lo escrito."""
        path = os.path.join(tmp_path, "a", "b", "file.txt")
        assert io_write_text(path, "hola\n").run() == path
        assert io_read_text(path).run() == "hola\n"

    def test_read_missing_file(self, tmp_path):
        """Leer un archivo inexistente termina en Left con attempt."""
        result = io_read_text(os.path.join(tmp_path, "nada.txt")).attempt().run()
        assert isinstance(result.error, FileNotFoundError)

    def test_write_json_is_stable(self, tmp_path):
        """El JSON sale con claves ordenadas."""
        path = os.path.join(tmp_path, "r.json")
        io_write_json(path, {"b": 1, "a": [1, 2]}).run()
        with open(path, encoding="utf-8") as f:
            text = f.read()
        assert text == dumps_stable({"a": [1, 2], "b": 1})
        assert json.loads(text) == {"a": [1, 2], "b": 1}


class TestOperators:
    """Tests para fold_left y tap."""

    def test_fold_left(self):
        """fold_left respeta el orden del acumulador."""
        assert fold_left(lambda acc, x: acc + [x], [], [1, 2, 3]) == [1, 2, 3]

    def test_tap_returns_value(self):
        """tap ejecuta el efecto y devuelve el valor intacto."""
        seen = []
        assert tap(seen.append)(7) == 7
        assert seen == [7]


class TestRng:
    """Tests para la derivación de flujos aleatorios."""

    def test_derive_rng_is_deterministic(self):
        """La misma posición da el mismo flujo."""
        assert derive_rng(7, 3).random() == derive_rng(7, 3).random()

    def test_derive_rng_paths_differ(self):
        """Posiciones distintas dan flujos distintos."""
        assert derive_rng(7, 3).random() != derive_rng(7, 4).random()

    def test_derive_seed_range(self):
        """derive_seed devuelve un entero de 64 bits reproducible."""
        seed = derive_seed(1, 2, 3)
        assert 0 <= seed < 2 ** 64
        assert seed == derive_seed(1, 2, 3)

    def test_uniform_blocks(self):
        """uniform_blocks produce uniformes en [0, 1) sin cortar entre bloques."""
        values = [u for _, u in zip(range(10), uniform_blocks(derive_rng(0), block=3))]
        assert len(values) == 10
        assert all(0.0 <= u < 1.0 for u in values)
