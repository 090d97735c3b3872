"""Soft actor-critic: twin critics, Polyak targets, automatic temperature.

One `sac_update` performs a critic + actor + temperature update on the real
batch and, when a generated batch is supplied, an additional critic + actor
update on it whose loss carries the batch-balancing coefficient
|B_gen| / |B| so every sample weighs the same under mean-reduced losses.
"""

from __future__ import annotations

import math

import numpy as np

from .nets import GaussianPolicy, Mlp, NumericalError, actor_loss_grads, critic_loss_grads


def llm_batch_size(proportion: float, batch_size: int) -> int:
    """Generated-batch size for a data proportion (ceil of the fraction)."""
    if not 0.0 <= proportion <= 1.0:
        raise ValueError(f"proportion must lie in [0, 1], got {proportion}")
    return math.ceil(proportion * batch_size)


def llm_loss_coefficient(llm_batch: int, batch: int) -> float:
    """Loss weight that equalizes per-sample influence across the batches."""
    if batch < 1 or llm_batch < 0:
        raise ValueError("batch sizes must be positive")
    return llm_batch / batch


class SacAgent:
    """Actor, twin critics and their targets, and the entropy temperature."""

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        action_scale=1.0,
        action_bias=0.0,
        hidden=(256, 256),
        lr: float = 3e-4,
        gamma: float = 0.99,
        tau: float = 0.005,
        target_entropy: float | None = None,
        seed: int = 0,
    ):
        seeds = np.random.SeedSequence(seed).generate_state(3)
        self.actor = GaussianPolicy(
            obs_dim, action_dim, hidden=hidden, action_scale=action_scale, action_bias=action_bias, seed=int(seeds[0])
        )
        self.q1 = Mlp([obs_dim + action_dim, *hidden, 1], "relu", seed=int(seeds[1]))
        self.q2 = Mlp([obs_dim + action_dim, *hidden, 1], "relu", seed=int(seeds[2]))
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.lr = lr
        self.gamma = gamma
        self.tau = tau
        self.target_entropy = -float(action_dim) if target_entropy is None else target_entropy
        self.log_alpha = 0.0
        self._alpha_m = 0.0
        self._alpha_v = 0.0
        self._alpha_step = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def act(self, obs, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if deterministic:
            return self.actor.mean_action(obs)[0]
        eps = rng.standard_normal((obs.shape[0], self.actor.action_dim))
        action, _ = self.actor.sample(obs, eps)
        return action[0]

    def _alpha_update(self, mean_log_pi: float) -> float:
        loss = -self.log_alpha * (mean_log_pi + self.target_entropy)
        grad = -(mean_log_pi + self.target_entropy)
        self._alpha_step += 1
        t = self._alpha_step
        self._alpha_m = 0.9 * self._alpha_m + 0.1 * grad
        self._alpha_v = 0.999 * self._alpha_v + 0.001 * grad * grad
        m_hat = self._alpha_m / (1 - 0.9**t)
        v_hat = self._alpha_v / (1 - 0.999**t)
        self.log_alpha -= self.lr * m_hat / (math.sqrt(v_hat) + 1e-8)
        return loss

    def _batch_update(self, batch: dict, rng: np.random.Generator, loss_scale: float, update_alpha: bool) -> dict:
        obs = batch["obs"]
        n = obs.shape[0]
        d_a = self.actor.action_dim

        # bootstrap targets from the frozen target critics
        eps_next = rng.standard_normal((n, d_a))
        next_action, next_log_pi = self.actor.sample(batch["next_obs"], eps_next)
        sa_next = np.concatenate([batch["next_obs"], next_action], axis=1)
        q_next = np.minimum(self.q1_target.forward(sa_next)[:, 0], self.q2_target.forward(sa_next)[:, 0])
        targets = batch["rewards"] + self.gamma * (1.0 - batch["dones"]) * (q_next - self.alpha * next_log_pi)

        sa = np.concatenate([obs, batch["actions"]], axis=1)
        q1_loss, g1 = critic_loss_grads(self.q1, sa, targets)
        q2_loss, g2 = critic_loss_grads(self.q2, sa, targets)
        if not (np.isfinite(q1_loss) and np.isfinite(q2_loss)):
            raise NumericalError(f"critic loss not finite: {q1_loss}, {q2_loss}")
        if loss_scale != 1.0:
            g1 = [g * loss_scale for g in g1]
            g2 = [g * loss_scale for g in g2]
        self.q1.adam_update(g1, self.lr)
        self.q2.adam_update(g2, self.lr)

        eps = rng.standard_normal((n, d_a))
        actor_loss, ga, mean_log_pi = actor_loss_grads(self.actor, obs, eps, self.q1, self.q2, self.alpha)
        if not np.isfinite(actor_loss):
            raise NumericalError(f"actor loss not finite: {actor_loss}")
        if loss_scale != 1.0:
            ga = [g * loss_scale for g in ga]
        self.actor.net.adam_update(ga, self.lr)

        alpha_loss = self._alpha_update(mean_log_pi) if update_alpha else 0.0
        return {
            "critic_loss": 0.5 * (q1_loss + q2_loss) * loss_scale,
            "actor_loss": actor_loss * loss_scale,
            "alpha_loss": alpha_loss,
            "alpha": self.alpha,
        }

    def polyak(self) -> None:
        self.q1_target.polyak_from(self.q1, self.tau)
        self.q2_target.polyak_from(self.q2, self.tau)


def sac_update(agent: SacAgent, batch: dict, rng: np.random.Generator, llm_batch: dict | None = None) -> dict:
    """One SAC update round: real batch (with temperature), then optionally
    the generated batch with the balancing coefficient, then target Polyak."""
    losses = agent._batch_update(batch, rng, loss_scale=1.0, update_alpha=True)
    if llm_batch is not None and llm_batch["obs"].shape[0] > 0:
        coef = llm_loss_coefficient(llm_batch["obs"].shape[0], batch["obs"].shape[0])
        llm_losses = agent._batch_update(llm_batch, rng, loss_scale=coef, update_alpha=False)
        losses = {**losses, "llm_critic_loss": llm_losses["critic_loss"], "llm_actor_loss": llm_losses["actor_loss"]}
    agent.polyak()
    return losses
