"""
Learning phase: generalized advantage estimation and the clipped PPO update.

Gradients are obtained by seeding the policy graph directly: each token's
cross-entropy node receives -dL/dlogp, each logits node the entropy-bonus
gradient and the value node the regression gradient.
"""
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlatrainer.errors import NumericError
from vlatrainer.nn.functional import categorical_entropy, entropy_logit_grad
from vlatrainer.nn.optim import adam_step, clip_grad_norm
from vlatrainer.nn.params import ParamStore, TensorBuffer
from vlatrainer.policy.network import ObservationBatch, PolicyNetwork
from vlatrainer.services.rollout_service import RolloutBuffer
from vlatrainer.services.sft_service import VALUE_HEAD_PREFIX, complete_grads
from vlatrainer.utils.config import PpoConfig
from vlatrainer.utils.rng import StreamPurpose, generator_state, restore_generator, stream

logger = logging.getLogger(__name__)

ADVANTAGE_EPS = 1e-8


def compute_gae(
    rewards: ArrayLike,
    values: ArrayLike,
    dones: ArrayLike,
    next_done: ArrayLike,
    bootstrap_values: ArrayLike,
    gamma: float,
    lambda_gae: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Advantages and return targets for an M x N rollout.

    `dones[t]` flags that observation t started a new episode, so the transition at t
    is terminal when `dones[t + 1]` (or `next_done` for the last step) is set and
    neither the bootstrap value nor later advantages leak across it.

    Example:
        Two steps, gamma 0.9, lambda 0.95, r = (0, 1), V = (0.5, 0.4), bootstrap 0.2:
        delta_1 = 0.78, delta_0 = -0.14, so A_0 = -0.14 + 0.855 * 0.78 = 0.5269.

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if r.ndim == 1:
        r, v, d = r[:, None], v[:, None], d[:, None]
    if not r.shape == v.shape == d.shape:
        raise ValueError(f"Mismatched rollout shapes: rewards {r.shape}, values {v.shape}, dones {d.shape}")
    last_done = np.asarray(next_done, dtype=np.float64).reshape(r.shape[1])
    last_value = np.asarray(bootstrap_values, dtype=np.float64).reshape(r.shape[1])

    advantages = np.zeros_like(r)
    running = np.zeros(r.shape[1])
    for t in reversed(range(r.shape[0])):
        if t == r.shape[0] - 1:
            nonterminal = 1.0 - last_done
            next_values = last_value
        else:
            nonterminal = 1.0 - d[t + 1]
            next_values = v[t + 1]
        delta = r[t] + gamma * next_values * nonterminal - v[t]
        running = delta + gamma * lambda_gae * nonterminal * running
        advantages[t] = running
    returns = advantages + v
    if np.asarray(rewards).ndim == 1:
        return advantages[:, 0], returns[:, 0]
    return advantages, returns


def gae_for_buffer(buffer: RolloutBuffer, config: PpoConfig) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    return compute_gae(
        buffer.rewards, buffer.values, buffer.dones, buffer.next_done, buffer.bootstrap_values,
        config.gamma, config.lambda_gae,
    )


def normalize_advantages(advantages: NDArray[np.float64]) -> NDArray[np.float64]:
    return (advantages - advantages.mean()) / (advantages.std() + ADVANTAGE_EPS)


def clipped_surrogate(ratio: ArrayLike, advantages: ArrayLike, clip_eps: float) -> NDArray[np.float64]:
    """
    Per-sample min(r * A, clip(r, 1 - eps, 1 + eps) * A).

    Example:
        >>> clipped_surrogate([2.0], [2.0], 0.2)
        array([2.4])
        >>> clipped_surrogate([0.5], [-1.0], 0.2)
        array([-0.8])
    """
    r = np.asarray(ratio, dtype=np.float64)
    a = np.asarray(advantages, dtype=np.float64)
    result: NDArray[np.float64] = np.minimum(r * a, np.clip(r, 1.0 - clip_eps, 1.0 + clip_eps) * a)
    return result


@dataclass(frozen=True)
class Minibatch:
    observations: ObservationBatch
    bins: NDArray[np.int64]
    old_log_probs: NDArray[np.float64]
    old_values: NDArray[np.float64]
    advantages: NDArray[np.float64]
    returns: NDArray[np.float64]

    @property
    def size(self) -> int:
        return int(self.bins.shape[0])


@dataclass(frozen=True)
class LossTerms:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_frac: float

    @property
    def finite(self) -> bool:
        return bool(np.isfinite([self.policy_loss, self.value_loss, self.entropy, self.approx_kl]).all())


@dataclass(frozen=True)
class PpoStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_frac: float
    epochs_run: int
    early_stopped: bool


def ppo_loss_and_grads(
    network: PolicyNetwork,
    params: Mapping[str, TensorBuffer],
    minibatch: Minibatch,
    config: PpoConfig,
    value_only: bool = False,
) -> tuple[LossTerms, dict[str, NDArray[np.float64]]]:
    """
    Loss terms of one minibatch and the gradient of
    policy_loss + value_coef * value_loss - entropy_coef * entropy.

    With `value_only` only the value regression is seeded.
    """
    size = minibatch.size
    graph = network.graph(params, minibatch.observations)
    ce_nodes = graph.teacher_force(minibatch.bins)
    graph.forward_all()

    log_probs = -np.sum([graph.evaluate(node) for node in ce_nodes], axis=0)
    log_ratio = log_probs - minibatch.old_log_probs
    ratio = np.exp(log_ratio)
    adv = minibatch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv
    policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > config.clip_eps))
    approx_kl = float(np.mean((ratio - 1.0) - log_ratio))

    values = graph.evaluate(graph.value)[:, 0]
    error = values - minibatch.returns
    if config.value_clip is None:
        value_losses = error ** 2
        value_grad = 2.0 * error
    else:
        delta = values - minibatch.old_values
        clipped_values = minibatch.old_values + np.clip(delta, -config.value_clip, config.value_clip)
        clipped_error = clipped_values - minibatch.returns
        value_losses = np.maximum(error ** 2, clipped_error ** 2)
        inside = np.abs(delta) < config.value_clip
        value_grad = np.where(error ** 2 >= clipped_error ** 2, 2.0 * error, np.where(inside, 2.0 * clipped_error, 0.0))
    value_loss = float(np.mean(value_losses))

    entropy = float(np.mean(np.sum([categorical_entropy(graph.evaluate(node)) for node in graph.logits], axis=0)))

    seeds: dict[int, Any] = {graph.value: (config.value_coef * value_grad / size)[:, None]}
    if not value_only:
        active = unclipped <= clipped
        # d loss / d logp = -A * r * [unclipped branch] / B and logp = -sum(CE)
        ce_seed = adv * ratio * active / size
        for node in ce_nodes:
            seeds[node] = ce_seed
        if config.entropy_coef > 0:
            for node in graph.logits:
                seeds[node] = -(config.entropy_coef / size) * entropy_logit_grad(graph.evaluate(node))
    grads = graph.backward(seeds)
    terms = LossTerms(policy_loss=policy_loss, value_loss=value_loss, entropy=entropy, approx_kl=approx_kl, clip_frac=clip_frac)
    return terms, grads


class PpoService:
    """Sole writer of the learner parameters during RL."""

    def __init__(self, network: PolicyNetwork, config: PpoConfig, master_seed: int):
        self.network = network
        self.config = config
        self.rng = stream(master_seed, int(StreamPurpose.LEARNER), 2)

    def policy_names(self, params: ParamStore) -> list[str]:
        return [name for name in params if not name.startswith(VALUE_HEAD_PREFIX)]

    def _minibatch(self, buffer: RolloutBuffer, advantages: NDArray[np.float64], returns: NDArray[np.float64],
                   rows: NDArray[np.int64]) -> Minibatch:
        return Minibatch(
            observations=ObservationBatch.from_arrays(buffer.flat("features")[rows], buffer.flat("instruction")[rows], self.network.shape),
            bins=buffer.flat("bins")[rows],
            old_log_probs=buffer.flat("log_probs")[rows],
            old_values=buffer.flat("values")[rows],
            advantages=advantages[rows],
            returns=returns[rows],
        )

    def ppo_update(
        self,
        params: ParamStore,
        buffer: RolloutBuffer,
        advantages: NDArray[np.float64],
        returns: NDArray[np.float64],
        value_only: bool = False,
    ) -> PpoStats:
        """
        Run the configured epochs of minibatch updates over one rollout.

        Advantages are normalized over the whole rollout first. An epoch whose mean
        approximate KL exceeds `target_kl` ends the update early.

        Raises:
            NumericError: On a non-finite loss
        """
        config = self.config
        flat_adv = normalize_advantages(np.asarray(advantages, dtype=np.float64).reshape(-1))
        flat_ret = np.asarray(returns, dtype=np.float64).reshape(-1)
        frozen = self.policy_names(params) if value_only else []
        total = len(buffer)

        history: list[LossTerms] = []
        epochs_run = 0
        early_stopped = False
        for epoch in range(config.epochs):
            order = self.rng.permutation(total)
            epoch_terms: list[LossTerms] = []
            for start in range(0, total, config.minibatch_size):
                rows = order[start:start + config.minibatch_size]
                terms, grads = ppo_loss_and_grads(self.network, params, self._minibatch(buffer, flat_adv, flat_ret, rows), config, value_only)
                if not terms.finite:
                    raise NumericError(f"Non-finite PPO loss at epoch {epoch}: {terms}")
                clipped, norm = clip_grad_norm(complete_grads(params, grads), config.max_grad_norm, frozen)
                adam_step(params, clipped, config.lr, frozen=frozen)
                epoch_terms.append(terms)
                logger.debug(f"PPO epoch {epoch} rows {start}: policy {terms.policy_loss:.4f}, value {terms.value_loss:.4f}, grad norm {norm:.3f}")
            history.extend(epoch_terms)
            epochs_run += 1
            mean_kl = float(np.mean([t.approx_kl for t in epoch_terms]))
            if not value_only and mean_kl > config.target_kl and epoch + 1 < config.epochs:
                logger.warning(f"Early stop after epoch {epoch}: approx KL {mean_kl:.4f} above {config.target_kl}")
                early_stopped = True
                break

        return PpoStats(
            policy_loss=float(np.mean([t.policy_loss for t in history])),
            value_loss=float(np.mean([t.value_loss for t in history])),
            entropy=float(np.mean([t.entropy for t in history])),
            approx_kl=float(np.mean([t.approx_kl for t in history])),
            clip_frac=float(np.mean([t.clip_frac for t in history])),
            epochs_run=epochs_run,
            early_stopped=early_stopped,
        )

    def value_update(self, params: ParamStore, buffer: RolloutBuffer) -> PpoStats:
        """
        Value regression only; every non-value parameter must come out bitwise unchanged.

        Raises:
            NumericError: When a policy tensor moved
        """
        before = params.copy()
        advantages, returns = gae_for_buffer(buffer, self.config)
        stats = self.ppo_update(params, buffer, advantages, returns, value_only=True)
        drifted = [name for name in self.policy_names(params) if not np.array_equal(before[name], params[name])]
        if drifted:
            raise NumericError(f"Policy parameters changed during critic warmup: {drifted}")
        return stats

    def state_dict(self) -> dict[str, Any]:
        return {"rng": generator_state(self.rng)}

    def load_state_dict(self, state: Optional[dict[str, Any]]) -> None:
        if state is not None:
            self.rng = restore_generator(state["rng"])
