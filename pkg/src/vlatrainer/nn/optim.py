from collections.abc import Collection, Mapping

import numpy as np
from numpy.typing import NDArray

from vlatrainer.nn.params import ParamStore

Grads = Mapping[str, NDArray[np.float64]]


def adam_step(
    store: ParamStore,
    grads: Grads,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    frozen: Collection[str] = (),
) -> ParamStore:
    """
    Apply one bias-corrected adaptive-moment update.

    Entries named in `frozen` keep their values and their moment accumulators.

    Example:
        param 0.0, grad 1.0, lr 0.1 on the first step gives m_hat = v_hat = 1,
        so the param moves to -0.1 / (1 + eps).
    """
    if set(grads) != set(store):
        missing = sorted(set(store) - set(grads))
        extra = sorted(set(grads) - set(store))
        raise ValueError(f"Gradient names do not match parameters (missing={missing}, extra={extra})")

    store.step_count += 1
    t = store.step_count
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name in store:
        if name in frozen:
            continue
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != store[name].shape:
            raise ValueError(f"Gradient shape {grad.shape} does not match {name} {store[name].shape}")
        m = beta1 * store.first_moment[name] + (1.0 - beta1) * grad
        v = beta2 * store.second_moment[name] + (1.0 - beta2) * grad * grad
        store.first_moment[name] = m
        store.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        store.set(name, store[name] - lr * m_hat / (np.sqrt(v_hat) + eps))
    return store


def global_norm(grads: Grads, names: Collection[str] | None = None) -> float:
    selected = grads.keys() if names is None else names
    return float(np.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in selected)))


def clip_grad_norm(grads: Grads, max_norm: float, frozen: Collection[str] = ()) -> tuple[dict[str, NDArray[np.float64]], float]:
    """Scale trainable gradients so their joint norm is at most `max_norm`."""
    trainable = [n for n in grads if n not in frozen]
    norm = global_norm(grads, trainable)
    scale = max_norm / (norm + 1e-12) if norm > max_norm else 1.0
    clipped = {n: (g * scale if n not in frozen else g) for n, g in grads.items()}
    return clipped, norm
