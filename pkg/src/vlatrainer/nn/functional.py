import numpy as np
from numpy.typing import NDArray


def log_softmax(logits: NDArray[np.float64], axis: int = -1) -> NDArray[np.float64]:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits: NDArray[np.float64], axis: int = -1) -> NDArray[np.float64]:
    """
    Numerically stable softmax.

    Example:
        >>> softmax(np.array([0.0, 0.0]))
        array([0.5, 0.5])
    """
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    result: NDArray[np.float64] = exp / np.sum(exp, axis=axis, keepdims=True)
    return result


def categorical_entropy(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row-wise entropy of softmax(logits), in nats."""
    log_p = log_softmax(logits)
    result: NDArray[np.float64] = -np.sum(np.exp(log_p) * log_p, axis=-1)
    return result


def entropy_logit_grad(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    """d entropy / d logits, row-wise: -p * (log p + H)."""
    log_p = log_softmax(logits)
    p = np.exp(log_p)
    h = -np.sum(p * log_p, axis=-1, keepdims=True)
    result: NDArray[np.float64] = -p * (log_p + h)
    return result
