"""
Reverse-mode differentiation over a fixed set of dense ops.

Nodes are appended in topological order: an op may only reference nodes created
before it, so the node list itself is a valid evaluation order and its reverse a
valid backward order.
"""
from collections.abc import Mapping
from dataclasses import dataclass
from enum import StrEnum
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlatrainer.errors import GraphError, NumericError, ShapeError
from vlatrainer.nn.functional import log_softmax


class OpKind(StrEnum):
    MATMUL = "matmul"
    ADD = "add"
    TANH = "tanh"
    SOFTMAX_CE = "softmax-cross-entropy"
    GATHER = "gather"
    SCALE = "scale"
    SUM = "sum"


class LeafKind(StrEnum):
    PARAM = "param"
    INPUT = "input"
    INDEX = "index"


@dataclass
class GraphNode:
    node_id: int
    op: Optional[OpKind] = None
    inputs: tuple[int, ...] = ()
    leaf: Optional[LeafKind] = None
    name: Optional[str] = None
    factor: float = 1.0
    requires_grad: bool = False
    value: Optional[NDArray[Any]] = None
    grad: Optional[NDArray[np.float64]] = None
    probs: Optional[NDArray[np.float64]] = None


def _unbroadcast(grad: NDArray[np.float64], shape: tuple[int, ...]) -> NDArray[np.float64]:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Graph:

    def __init__(self) -> None:
        self.nodes: list[GraphNode] = []
        self._leaves: dict[str, int] = {}
        self._sources: list[Mapping[str, Any]] = []

    # -- construction -------------------------------------------------------

    def _leaf(self, kind: LeafKind, name: str) -> int:
        if name in self._leaves:
            node = self.nodes[self._leaves[name]]
            if node.leaf != kind:
                raise GraphError(f"Leaf {name!r} already declared as {node.leaf}", node.node_id)
            return node.node_id
        node = GraphNode(node_id=len(self.nodes), leaf=kind, name=name, requires_grad=kind == LeafKind.PARAM)
        self.nodes.append(node)
        self._leaves[name] = node.node_id
        return node.node_id

    def param(self, name: str) -> int:
        return self._leaf(LeafKind.PARAM, name)

    def input(self, name: str) -> int:
        return self._leaf(LeafKind.INPUT, name)

    def index(self, name: str) -> int:
        return self._leaf(LeafKind.INDEX, name)

    def _op(self, op: OpKind, *inputs: int, factor: float = 1.0) -> int:
        for input_id in inputs:
            if not 0 <= input_id < len(self.nodes):
                raise GraphError(f"{op} references unknown node {input_id}", len(self.nodes))
        node = GraphNode(
            node_id=len(self.nodes),
            op=op,
            inputs=tuple(inputs),
            factor=factor,
            requires_grad=any(self.nodes[i].requires_grad for i in inputs),
        )
        self.nodes.append(node)
        return node.node_id

    def matmul(self, a: int, b: int) -> int:
        return self._op(OpKind.MATMUL, a, b)

    def add(self, a: int, b: int) -> int:
        return self._op(OpKind.ADD, a, b)

    def tanh(self, a: int) -> int:
        return self._op(OpKind.TANH, a)

    def softmax_cross_entropy(self, logits: int, targets: int) -> int:
        self._require_index(targets, OpKind.SOFTMAX_CE)
        return self._op(OpKind.SOFTMAX_CE, logits, targets)

    def gather(self, table: int, indices: int) -> int:
        self._require_index(indices, OpKind.GATHER)
        return self._op(OpKind.GATHER, table, indices)

    def scale(self, a: int, factor: float) -> int:
        return self._op(OpKind.SCALE, a, factor=factor)

    def sum(self, a: int) -> int:
        return self._op(OpKind.SUM, a)

    def _require_index(self, node_id: int, op: OpKind) -> None:
        if self.nodes[node_id].leaf != LeafKind.INDEX:
            raise GraphError(f"{op} expects an index leaf", node_id)

    # -- evaluation ---------------------------------------------------------

    def bind(self, inputs: Mapping[str, Any]) -> None:
        """Register a source of leaf values, consulted after earlier sources."""
        self._sources.append(inputs)

    def forward(self, inputs: Optional[Mapping[str, Any]] = None, root: Optional[int] = None) -> NDArray[Any]:
        """
        Evaluate `root` (default: the last node) and every ancestor not yet cached.

        Bindings accumulate across calls; later mappings shadow earlier ones only for
        leaves that have not been evaluated yet.
        """
        if not self.nodes:
            raise GraphError("Empty graph")
        if inputs is not None:
            self._sources.insert(0, inputs)
        root_id = len(self.nodes) - 1 if root is None else root
        pending = self._ancestors(root_id)
        for node_id in pending:
            self._evaluate(self.nodes[node_id])
        value = self.nodes[root_id].value
        assert value is not None
        return value

    def value(self, node_id: int) -> NDArray[Any]:
        value = self.nodes[node_id].value
        if value is None:
            raise GraphError("Node has not been evaluated", node_id)
        return value

    def _ancestors(self, root_id: int) -> list[int]:
        needed: set[int] = set()
        stack = [root_id]
        while stack:
            node_id = stack.pop()
            if node_id in needed or self.nodes[node_id].value is not None:
                continue
            needed.add(node_id)
            stack.extend(self.nodes[node_id].inputs)
        return sorted(needed)

    def _lookup(self, node: GraphNode) -> NDArray[Any]:
        assert node.name is not None
        for source in self._sources:
            if node.name in source:
                if node.leaf == LeafKind.INDEX:
                    return np.asarray(source[node.name], dtype=np.int64)
                return np.asarray(source[node.name], dtype=np.float64)
        raise GraphError(f"Unbound {node.leaf} {node.name!r}", node.node_id)

    def _evaluate(self, node: GraphNode) -> None:
        if node.op is None:
            node.value = self._lookup(node)
            return
        args = [self.nodes[i].value for i in node.inputs]
        node.value = self._apply(node, args)
        if not np.isfinite(node.value).all():
            raise NumericError(f"Non-finite output at node {node.node_id} ({node.op})")

    def _apply(self, node: GraphNode, args: list[Any]) -> NDArray[np.float64]:
        op = node.op
        if op == OpKind.MATMUL:
            a, b = args
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise ShapeError(f"matmul {a.shape} @ {b.shape}", node.node_id)
            result: NDArray[np.float64] = a @ b
            return result
        if op == OpKind.ADD:
            a, b = args
            try:
                shape = np.broadcast_shapes(a.shape, b.shape)
            except ValueError:
                raise ShapeError(f"add {a.shape} + {b.shape}", node.node_id) from None
            if shape not in (a.shape, b.shape):
                raise ShapeError(f"add {a.shape} + {b.shape}", node.node_id)
            return np.asarray(a + b)
        if op == OpKind.TANH:
            return np.tanh(args[0])
        if op == OpKind.SOFTMAX_CE:
            logits, targets = args
            if logits.ndim != 2 or targets.shape != (logits.shape[0],):
                raise ShapeError(f"cross-entropy {logits.shape} vs targets {targets.shape}", node.node_id)
            if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
                raise ShapeError("cross-entropy target out of range", node.node_id)
            log_p = log_softmax(logits)
            node.probs = np.exp(log_p)
            return np.asarray(-log_p[np.arange(len(targets)), targets])
        if op == OpKind.GATHER:
            table, indices = args
            if table.ndim != 2 or indices.ndim != 1:
                raise ShapeError(f"gather {table.shape} by {indices.shape}", node.node_id)
            if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
                raise ShapeError("gather index out of range", node.node_id)
            return np.asarray(table[indices])
        if op == OpKind.SCALE:
            return np.asarray(node.factor * args[0])
        if op == OpKind.SUM:
            return np.asarray(np.sum(args[0]))
        raise GraphError(f"Unknown op {op}", node.node_id)

    # -- differentiation ----------------------------------------------------

    def backward(self, seeds: Optional[Mapping[int, ArrayLike]] = None) -> dict[str, NDArray[np.float64]]:
        """
        Propagate vector-Jacobian products from `seeds` (node id -> upstream gradient).

        Without seeds the last node is differentiated with a gradient of ones, which
        for a scalar loss yields the plain gradient.

        Returns:
            Gradient per parameter leaf; parameters the seeds do not reach get zeros.
        """
        if not self.nodes:
            raise GraphError("Empty graph")
        if seeds is None:
            root = self.nodes[-1]
            if root.value is None:
                raise GraphError("backward called before forward", root.node_id)
            seeds = {root.node_id: np.ones_like(root.value, dtype=np.float64)}

        for node in self.nodes:
            node.grad = None
        for node_id, seed in seeds.items():
            node = self.nodes[node_id]
            if node.value is None:
                raise GraphError("backward called before forward", node_id)
            grad = np.asarray(seed, dtype=np.float64)
            if grad.shape != node.value.shape:
                raise ShapeError(f"seed {grad.shape} for value {node.value.shape}", node_id)
            node.grad = grad.copy()

        for node_id in range(max(seeds), -1, -1):
            node = self.nodes[node_id]
            if node.op is None or node.grad is None or not node.requires_grad:
                continue
            self._propagate(node)

        grads: dict[str, NDArray[np.float64]] = {}
        for node in self.nodes:
            if node.leaf != LeafKind.PARAM:
                continue
            assert node.name is not None
            if node.grad is not None:
                grads[node.name] = node.grad
            else:
                value = node.value if node.value is not None else self._lookup(node)
                grads[node.name] = np.zeros_like(value, dtype=np.float64)
        return grads

    def _accumulate(self, node_id: int, grad: NDArray[np.float64]) -> None:
        target = self.nodes[node_id]
        if not target.requires_grad:
            return
        target.grad = grad if target.grad is None else target.grad + grad

    def _propagate(self, node: GraphNode) -> None:
        g = node.grad
        assert g is not None
        inputs = [self.nodes[i] for i in node.inputs]
        op = node.op
        if op == OpKind.MATMUL:
            a, b = inputs
            if a.requires_grad:
                self._accumulate(a.node_id, g @ b.value.T)
            if b.requires_grad:
                self._accumulate(b.node_id, a.value.T @ g)
        elif op == OpKind.ADD:
            for operand in inputs:
                if operand.requires_grad:
                    self._accumulate(operand.node_id, _unbroadcast(g, operand.value.shape))
        elif op == OpKind.TANH:
            assert node.value is not None
            self._accumulate(inputs[0].node_id, g * (1.0 - node.value ** 2))
        elif op == OpKind.SOFTMAX_CE:
            logits, targets = inputs
            assert node.probs is not None
            local = node.probs.copy()
            local[np.arange(len(targets.value)), targets.value] -= 1.0
            self._accumulate(logits.node_id, local * g[:, None])
        elif op == OpKind.GATHER:
            table, indices = inputs
            table_grad = np.zeros_like(table.value, dtype=np.float64)
            np.add.at(table_grad, indices.value, g)
            self._accumulate(table.node_id, table_grad)
        elif op == OpKind.SCALE:
            self._accumulate(inputs[0].node_id, node.factor * g)
        elif op == OpKind.SUM:
            self._accumulate(inputs[0].node_id, np.full_like(inputs[0].value, float(g), dtype=np.float64))
