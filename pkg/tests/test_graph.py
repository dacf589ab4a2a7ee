import numpy as np
import pytest

from vlatrainer.errors import GraphError, NumericError, ShapeError
from vlatrainer.nn.graph import Graph


def _build(graph: Graph) -> int:
    x = graph.input("x")
    hidden = graph.tanh(graph.add(graph.matmul(x, graph.param("w")), graph.param("b")))
    hidden = graph.add(hidden, graph.gather(graph.param("table"), graph.index("rows")))
    ce = graph.softmax_cross_entropy(graph.matmul(hidden, graph.param("out")), graph.index("targets"))
    return graph.sum(graph.scale(ce, 0.5))


def _loss(params: dict[str, np.ndarray], inputs: dict[str, np.ndarray]) -> float:
    graph = Graph()
    _build(graph)
    return float(graph.forward({**inputs, **params}))


def test_gradients_match_central_differences():
    rng = np.random.default_rng(0)
    params = {
        "w": rng.normal(size=(4, 5)),
        "b": rng.normal(size=5),
        "table": rng.normal(size=(3, 5)),
        "out": rng.normal(size=(5, 6)),
    }
    inputs = {"x": rng.normal(size=(7, 4)), "rows": rng.integers(0, 3, size=7), "targets": rng.integers(0, 6, size=7)}

    graph = Graph()
    _build(graph)
    graph.forward({**inputs, **params})
    grads = graph.backward()

    for _ in range(20):
        direction = {name: rng.normal(size=value.shape) for name, value in params.items()}
        h = 1e-6
        plus = _loss({n: v + h * direction[n] for n, v in params.items()}, inputs)
        minus = _loss({n: v - h * direction[n] for n, v in params.items()}, inputs)
        numeric = (plus - minus) / (2 * h)
        analytic = sum(float(np.sum(grads[n] * direction[n])) for n in params)
        assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric))


def test_unreached_params_get_zero_gradients():
    graph = Graph()
    used = graph.matmul(graph.input("x"), graph.param("w"))
    graph.param("unused")
    graph.forward({"x": np.ones((2, 3)), "w": np.ones((3, 1)), "unused": np.ones(4)}, root=used)

    grads = graph.backward({used: np.ones((2, 1))})

    assert np.array_equal(grads["unused"], np.zeros(4))
    assert np.array_equal(grads["w"], np.full((3, 1), 2.0))


def test_bound_sources_are_consulted_in_order():
    graph = Graph()
    root = graph.add(graph.input("a"), graph.input("b"))
    graph.bind({"a": np.array([1.0])})
    graph.bind({"a": np.array([100.0]), "b": np.array([2.0])})

    assert graph.forward(root=root)[0] == 3.0


def test_unbound_leaf_names_the_node():
    graph = Graph()
    graph.tanh(graph.input("x"))

    with pytest.raises(GraphError) as error:
        graph.forward({})

    assert error.value.node_id == 0


def test_matmul_shape_mismatch():
    graph = Graph()
    graph.matmul(graph.input("a"), graph.input("b"))

    with pytest.raises(ShapeError):
        graph.forward({"a": np.ones((2, 3)), "b": np.ones((2, 3))})


def test_gather_requires_index_leaf():
    graph = Graph()
    table = graph.param("table")

    with pytest.raises(GraphError):
        graph.gather(table, graph.input("rows"))


def test_non_finite_output_raises():
    graph = Graph()
    graph.scale(graph.input("x"), 1e308)

    with pytest.raises(NumericError):
        graph.forward({"x": np.array([10.0])})


def test_backward_before_forward():
    graph = Graph()
    graph.tanh(graph.param("w"))

    with pytest.raises(GraphError):
        graph.backward()
