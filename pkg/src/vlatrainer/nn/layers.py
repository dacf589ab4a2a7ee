import numpy as np
from numpy.typing import NDArray

from vlatrainer.nn.graph import Graph
from vlatrainer.nn.params import ParamStore


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> NDArray[np.float64]:
    """Orthogonal init: rows (or columns, whichever are fewer) are orthonormal, times `gain`."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * np.ascontiguousarray(q[:rows, :cols])


def add_dense(store: ParamStore, rng: np.random.Generator, prefix: str, fan_in: int, fan_out: int,
              gain: float = 1.0, zero: bool = False) -> None:
    weight = np.zeros((fan_in, fan_out)) if zero else orthogonal(rng, fan_in, fan_out, gain)
    store.add(f"{prefix}.weight", weight)
    store.add(f"{prefix}.bias", np.zeros(fan_out))


def add_embedding(store: ParamStore, rng: np.random.Generator, name: str, rows: int, width: int,
                  std: float = 0.02) -> None:
    store.add(name, std * rng.standard_normal((rows, width)))


def dense(graph: Graph, x: int, prefix: str) -> int:
    return graph.add(graph.matmul(x, graph.param(f"{prefix}.weight")), graph.param(f"{prefix}.bias"))


def tanh_dense(graph: Graph, x: int, prefix: str) -> int:
    return graph.tanh(dense(graph, x, prefix))


def instruction_multi_hot(tokens: NDArray[np.int64], front_size: int, pad_id: int) -> NDArray[np.float64]:
    """
    Position-tagged multi-hot encoding of instruction token ids.

    Column `pos * front_size + id` is set for every non-pad token, so an all-pad
    instruction encodes to zeros.
    """
    batch, length = tokens.shape
    encoded = np.zeros((batch, length * front_size))
    rows, cols = np.nonzero(tokens != pad_id)
    encoded[rows, cols * front_size + tokens[rows, cols]] = 1.0
    return encoded
