"""
Auto-regressive token-action policy with a value head.

An observation is encoded into a context vector (feature projection plus a
position-tagged instruction embedding, then a tanh trunk). Action step i feeds
context + step embedding + the embeddings of the tokens already emitted through a
shared token head, so step i's logits condition on tokens 0..i-1.
"""
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlatrainer.env.sim import FEATURE_DIM, Observation
from vlatrainer.errors import ShapeError, TokenizerError
from vlatrainer.nn.functional import categorical_entropy, log_softmax, softmax
from vlatrainer.nn.graph import Graph
from vlatrainer.nn.layers import add_dense, add_embedding, dense, instruction_multi_hot, tanh_dense
from vlatrainer.nn.params import ParamStore, TensorBuffer
from vlatrainer.policy.tokenizer import TokenSequence, Vocabulary
from vlatrainer.utils.constants import ACTION_DIMS, BINS_PER_DIM

logger = logging.getLogger(__name__)

TRUNK_LAYERS = 2
EMBEDDING_STD = 0.1


@dataclass(frozen=True)
class PolicyShape:
    """Sizes of the network. `front_size` is the number of ids below the action range."""

    feature_dim: int
    instruction_length: int
    front_size: int
    pad_id: int
    width: int = 256
    action_steps: int = ACTION_DIMS
    bins: int = BINS_PER_DIM

    @classmethod
    def for_vocab(cls, vocab: Vocabulary, width: int = 256, feature_dim: int = FEATURE_DIM) -> "PolicyShape":
        return cls(
            feature_dim=feature_dim,
            instruction_length=vocab.instruction_length,
            front_size=vocab.action_token_base,
            pad_id=vocab.pad_id,
            width=width,
            bins=vocab.bins_per_dim,
        )


@dataclass(frozen=True)
class ObservationBatch:
    features: NDArray[np.float64]
    instruction: NDArray[np.float64]

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @classmethod
    def from_arrays(cls, features: ArrayLike, instruction_tokens: ArrayLike, shape: PolicyShape) -> "ObservationBatch":
        feats = np.asarray(features, dtype=np.float64)
        tokens = np.asarray(instruction_tokens, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[1] != shape.feature_dim:
            raise ShapeError(f"Expected features of width {shape.feature_dim}, got {feats.shape}")
        if tokens.shape != (feats.shape[0], shape.instruction_length):
            raise ShapeError(f"Expected instruction tokens {(feats.shape[0], shape.instruction_length)}, got {tokens.shape}")
        return cls(feats, instruction_multi_hot(tokens, shape.front_size, shape.pad_id))

    @classmethod
    def stack(cls, observations: Sequence[Observation], shape: PolicyShape) -> "ObservationBatch":
        return cls.from_arrays(
            [obs.features for obs in observations],
            [obs.instruction_tokens for obs in observations],
            shape,
        )


def add_encoder_params(store: ParamStore, rng: np.random.Generator, shape: PolicyShape) -> None:
    add_dense(store, rng, "feature_proj", shape.feature_dim, shape.width)
    add_embedding(store, rng, "instr_embed", shape.instruction_length * shape.front_size, shape.width, EMBEDDING_STD)
    for layer in range(TRUNK_LAYERS):
        add_dense(store, rng, f"trunk.{layer}", shape.width, shape.width)


def encoder_context(graph: Graph) -> int:
    projected = graph.add(
        graph.matmul(graph.input("features"), graph.param("feature_proj.weight")),
        graph.matmul(graph.input("instruction"), graph.param("instr_embed")),
    )
    x = graph.add(projected, graph.param("feature_proj.bias"))
    for layer in range(TRUNK_LAYERS):
        x = tanh_dense(graph, x, f"trunk.{layer}")
    return x


def token_index(step: int, bins: NDArray[np.int64], shape: PolicyShape) -> NDArray[np.int64]:
    """Row of the position-tagged token embedding table for `bins` emitted at `step`."""
    return step * shape.bins + np.asarray(bins, dtype=np.int64)


class PolicyGraph:
    """
    Differentiable graph over one observation batch.

    Token steps are appended on demand so the same construction serves sequential
    sampling (bind step i's token, then extend to step i+1) and teacher forcing.
    """

    def __init__(self, shape: PolicyShape, params: Mapping[str, TensorBuffer], batch: ObservationBatch):
        self.shape = shape
        self.batch = batch
        self.graph = Graph()
        self.logits: list[int] = []
        self.cross_entropy: list[int] = []
        self._carry: Optional[int] = None
        self._bindings: dict[str, Any] = {"features": batch.features, "instruction": batch.instruction}
        self.graph.bind(self._bindings)
        self.graph.bind(params)
        self.context = encoder_context(self.graph)
        self.value = dense(self.graph, self.context, "value_head")

    def extend(self) -> int:
        """Append the next action step and return its logits node."""
        g = self.graph
        step = len(self.logits)
        if step >= self.shape.action_steps:
            raise ValueError(f"All {self.shape.action_steps} action steps already built")
        self._bindings[f"step_{step}"] = np.full(self.batch.size, step, dtype=np.int64)
        z = g.add(self.context, g.gather(g.param("step_embed"), g.index(f"step_{step}")))
        if step > 0:
            emitted = g.gather(g.param("token_embed"), g.index(f"prev_{step - 1}"))
            self._carry = emitted if self._carry is None else g.add(self._carry, emitted)
            z = g.add(z, self._carry)
        logits = dense(g, tanh_dense(g, z, "token_head.hidden"), "token_head.out")
        self.logits.append(logits)
        return logits

    def bind_token(self, step: int, bins: NDArray[np.int64]) -> None:
        self._bindings[f"prev_{step}"] = token_index(step, bins, self.shape)

    def evaluate(self, node_id: int) -> NDArray[np.float64]:
        return self.graph.forward(root=node_id)

    def teacher_force(self, bins: NDArray[np.int64]) -> list[int]:
        """Build every step conditioned on `bins` (batch x steps) and attach cross-entropy nodes."""
        for step in range(self.shape.action_steps):
            logits = self.extend()
            self._bindings[f"target_{step}"] = bins[:, step]
            self.cross_entropy.append(self.graph.softmax_cross_entropy(logits, self.graph.index(f"target_{step}")))
            if step + 1 < self.shape.action_steps:
                self.bind_token(step, bins[:, step])
        return self.cross_entropy

    def forward_all(self) -> None:
        for node_id in (*self.cross_entropy, self.value):
            self.evaluate(node_id)

    def backward(self, seeds: Mapping[int, ArrayLike]) -> dict[str, NDArray[np.float64]]:
        return self.graph.backward(seeds)


@dataclass(frozen=True)
class DecodeResult:
    bins: NDArray[np.int64]
    log_probs: NDArray[np.float64]
    entropy: NDArray[np.float64]
    values: NDArray[np.float64]


def select_bins(logits: NDArray[np.float64], temperature: float, rngs: Sequence[np.random.Generator]) -> NDArray[np.int64]:
    """
    Pick one bin per row. Temperature 0 is greedy; otherwise every row draws a single
    uniform from its own generator and inverts the tempered CDF.
    """
    if temperature == 0.0:
        return np.argmax(logits, axis=1).astype(np.int64)
    probs = softmax(logits / temperature)
    cdf = np.cumsum(probs, axis=1)
    picks = np.empty(logits.shape[0], dtype=np.int64)
    for row, rng in enumerate(rngs):
        picks[row] = min(int(np.searchsorted(cdf[row], rng.random(), side="right")), logits.shape[1] - 1)
    return picks


class PolicyNetwork:

    def __init__(self, shape: PolicyShape):
        self.shape = shape

    @property
    def token_base(self) -> int:
        return self.shape.front_size

    def init_params(self, rng: np.random.Generator) -> ParamStore:
        """Orthogonal hidden layers with gain 1; zero-initialized token output and value head."""
        shape = self.shape
        store = ParamStore()
        add_encoder_params(store, rng, shape)
        add_embedding(store, rng, "token_embed", shape.action_steps * shape.bins, shape.width, EMBEDDING_STD)
        add_embedding(store, rng, "step_embed", shape.action_steps, shape.width, EMBEDDING_STD)
        add_dense(store, rng, "token_head.hidden", shape.width, shape.width)
        add_dense(store, rng, "token_head.out", shape.width, shape.bins, zero=True)
        add_dense(store, rng, "value_head", shape.width, 1, zero=True)
        logger.debug(f"Initialized policy with {store.num_parameters()} parameters")
        return store

    def batch(self, observations: Sequence[Observation]) -> ObservationBatch:
        return ObservationBatch.stack(observations, self.shape)

    def graph(self, params: Mapping[str, TensorBuffer], batch: ObservationBatch) -> PolicyGraph:
        return PolicyGraph(self.shape, params, batch)

    def tokens_to_bins(self, tokens: ArrayLike) -> NDArray[np.int64]:
        ids = np.asarray(tokens, dtype=np.int64)
        bins = ids - self.token_base
        bad = np.argwhere((bins < 0) | (bins >= self.shape.bins))
        if bad.size:
            raise TokenizerError(f"Token {int(ids[tuple(bad[0])])} outside the action range", int(bad[0][-1]))
        return bins

    def forward_context(self, params: Mapping[str, TensorBuffer], obs: Observation) -> NDArray[np.float64]:
        graph = self.graph(params, self.batch([obs]))
        return graph.evaluate(graph.context)[0]

    def decode(
        self,
        params: Mapping[str, TensorBuffer],
        batch: ObservationBatch,
        temperature: float,
        rngs: Sequence[np.random.Generator],
    ) -> DecodeResult:
        """
        Sample all action steps for a batch, one generator per row.

        Stored log-probs and the path-conditional entropy use untempered logits;
        the temperature only shapes which token is picked.
        """
        if temperature < 0:
            raise ValueError(f"Temperature must be non-negative, got {temperature}")
        if len(rngs) != batch.size:
            raise ValueError(f"Expected {batch.size} generators, got {len(rngs)}")
        graph = self.graph(params, batch)
        steps = self.shape.action_steps
        bins = np.zeros((batch.size, steps), dtype=np.int64)
        log_probs = np.zeros((batch.size, steps))
        entropy = np.zeros(batch.size)
        rows = np.arange(batch.size)
        for step in range(steps):
            logits = graph.evaluate(graph.extend())
            picked = select_bins(logits, temperature, rngs)
            bins[:, step] = picked
            log_probs[:, step] = log_softmax(logits)[rows, picked]
            entropy += categorical_entropy(logits)
            graph.bind_token(step, picked)
        values = graph.evaluate(graph.value)[:, 0]
        return DecodeResult(bins=bins, log_probs=log_probs, entropy=entropy, values=values.copy())

    def sample_action_tokens(
        self,
        params: Mapping[str, TensorBuffer],
        obs: Observation,
        temperature: float,
        rng: np.random.Generator,
    ) -> tuple[TokenSequence, NDArray[np.float64]]:
        result = self.decode(params, self.batch([obs]), temperature, [rng])
        return self.token_base + result.bins[0], result.log_probs[0]

    def token_log_probs(self, params: Mapping[str, TensorBuffer], batch: ObservationBatch, bins: NDArray[np.int64]) -> NDArray[np.float64]:
        """Teacher-forced per-token log-probs, batch x steps."""
        graph = self.graph(params, batch)
        nodes = graph.teacher_force(bins)
        return np.stack([-graph.evaluate(node) for node in nodes], axis=1)

    def action_log_prob(self, params: Mapping[str, TensorBuffer], obs: Observation, tokens: ArrayLike) -> float:
        """Sum of the teacher-forced token log-probs of one action."""
        bins = self.tokens_to_bins(tokens).reshape(1, -1)
        if bins.shape[1] != self.shape.action_steps:
            raise TokenizerError(f"Expected {self.shape.action_steps} action tokens, got {bins.shape[1]}")
        return float(self.token_log_probs(params, self.batch([obs]), bins).sum())

    def entropy(self, params: Mapping[str, TensorBuffer], obs: Observation, tokens: Optional[ArrayLike] = None) -> float:
        """
        Path-conditional entropy: the sum over steps of the step distribution's entropy
        along `tokens`, or along the greedy path when no tokens are given.
        """
        batch = self.batch([obs])
        if tokens is None:
            return float(self.decode(params, batch, 0.0, [np.random.default_rng(0)]).entropy[0])
        bins = self.tokens_to_bins(tokens).reshape(1, -1)
        graph = self.graph(params, batch)
        graph.teacher_force(bins)
        return float(sum(categorical_entropy(graph.evaluate(node))[0] for node in graph.logits))

    def value(self, params: Mapping[str, TensorBuffer], obs: Observation) -> float:
        graph = self.graph(params, self.batch([obs]))
        return float(graph.evaluate(graph.value)[0, 0])

    def values(self, params: Mapping[str, TensorBuffer], batch: ObservationBatch) -> NDArray[np.float64]:
        graph = self.graph(params, batch)
        return graph.evaluate(graph.value)[:, 0].copy()
