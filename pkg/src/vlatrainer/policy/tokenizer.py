from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlatrainer.errors import TokenizerError
from vlatrainer.utils.constants import ACTION_DIMS, BINS_PER_DIM, END_TOKEN, INSTRUCTION_LENGTH, PAD_TOKEN

ActionVector = NDArray[np.float64]
TokenSequence = NDArray[np.int64]

BIN_WIDTH = 2.0 / BINS_PER_DIM
HALF_BIN_WIDTH = BIN_WIDTH / 2.0


def as_action_vector(values: ArrayLike) -> ActionVector:
    """Validate a 7-component action and clamp it into [-1, 1]."""
    action = np.asarray(values, dtype=np.float64).reshape(-1)
    if action.shape != (ACTION_DIMS,):
        raise TokenizerError(f"Action must have {ACTION_DIMS} components, got {action.shape[0]}")
    bad = np.flatnonzero(~np.isfinite(action))
    if bad.size:
        raise TokenizerError("Non-finite action component", int(bad[0]))
    return np.clip(action, -1.0, 1.0)


def action_to_bins(values: ArrayLike) -> NDArray[np.int64]:
    """bin(x) = min(255, floor((x + 1) / 2 * 256)) after clamping; works on any array shape."""
    x = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.minimum(BINS_PER_DIM - 1, np.floor((x + 1.0) / 2.0 * BINS_PER_DIM)).astype(np.int64)


def bins_to_action(bins: ArrayLike) -> NDArray[np.float64]:
    """Bin centers: -1 + (bin + 0.5) * 2/256."""
    return -1.0 + (np.asarray(bins, dtype=np.float64) + 0.5) * BIN_WIDTH


@dataclass(frozen=True)
class Vocabulary:
    """
    Closed instruction vocabulary followed by the action-token range.

    Ids 0 and 1 are the pad and end markers, instruction words follow in sorted
    order, and the last `bins_per_dim` ids are action tokens.
    """

    words: dict[str, int] = field(default_factory=dict)
    bins_per_dim: int = BINS_PER_DIM
    instruction_length: int = INSTRUCTION_LENGTH

    @classmethod
    def from_instructions(cls, instructions: Iterable[str], instruction_length: int = INSTRUCTION_LENGTH) -> "Vocabulary":
        unique = sorted({word for text in instructions for word in text.split()})
        words = {PAD_TOKEN: 0, END_TOKEN: 1}
        for offset, word in enumerate(unique):
            words[word] = offset + 2
        return cls(words=words, instruction_length=instruction_length)

    @property
    def pad_id(self) -> int:
        return self.words[PAD_TOKEN]

    @property
    def end_id(self) -> int:
        return self.words[END_TOKEN]

    @property
    def action_token_base(self) -> int:
        return max(self.words.values()) + 1

    @property
    def vocab_size(self) -> int:
        return self.action_token_base + self.bins_per_dim

    def to_tsv(self) -> str:
        return "".join(f"{word}\t{idx}\n" for word, idx in sorted(self.words.items()))

    @classmethod
    def from_tsv(cls, text: str, instruction_length: int = INSTRUCTION_LENGTH) -> "Vocabulary":
        words: dict[str, int] = {}
        for line_number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            word, _, idx = line.partition("\t")
            if not idx.strip().isdigit():
                raise ValueError(f"Malformed vocabulary line {line_number}: {line!r}")
            words[word] = int(idx)
        if len(set(words.values())) != len(words):
            raise ValueError("Vocabulary ids collide")
        if words.get(PAD_TOKEN) != 0 or words.get(END_TOKEN) != 1:
            raise ValueError("Vocabulary must reserve ids 0 and 1 for pad and end markers")
        return cls(words=words, instruction_length=instruction_length)


def encode_action(action: ArrayLike, vocab: Vocabulary) -> TokenSequence:
    """
    Map a continuous action to 7 action tokens.

    Example:
        >>> encode_action([-1, 0, 1, 0, 0, 0, 0], vocab) - vocab.action_token_base
        array([  0, 128, 255, 128, 128, 128, 128])
    """
    return vocab.action_token_base + action_to_bins(as_action_vector(action))


def decode_tokens(tokens: Sequence[int] | TokenSequence, vocab: Vocabulary) -> ActionVector:
    """Post-process 7 action tokens into the continuous action at the bin centers."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if ids.shape != (ACTION_DIMS,):
        raise TokenizerError(f"Expected {ACTION_DIMS} action tokens, got {ids.shape[0]}")
    bins = ids - vocab.action_token_base
    bad = np.flatnonzero((bins < 0) | (bins >= vocab.bins_per_dim))
    if bad.size:
        raise TokenizerError(f"Token {int(ids[bad[0]])} outside the action range", int(bad[0]))
    return bins_to_action(bins)


def tokenize_instruction(text: str, vocab: Vocabulary) -> TokenSequence:
    ids = []
    for position, word in enumerate(text.split()):
        if word not in vocab.words or word in (PAD_TOKEN, END_TOKEN):
            raise TokenizerError(f"Unknown instruction word {word!r}", position)
        ids.append(vocab.words[word])
    ids = ids[: vocab.instruction_length]
    ids.extend([vocab.pad_id] * (vocab.instruction_length - len(ids)))
    return np.asarray(ids, dtype=np.int64)
