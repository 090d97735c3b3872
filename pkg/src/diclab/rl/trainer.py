"""Off-policy training loop with forecaster-generated replay data.

Every environment step stores the real transition plus an auxiliary action
drawn from the current policy. Periodically a stored state window is
forecast position-by-position and the synthetic transitions
(s_i, aux_a_i, r_i, predicted s_{i+1}) for i in [min_context, max_context)
are pushed to a second buffer, from which every update round draws a small
balanced batch alongside the real one. With llm_proportion = 0 the loop is
bit-identical to plain SAC under the same seed: all generated-data work is
keyed to its own rng streams and skipped entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dicl import DiclMethod, positionwise_forecast
from .buffers import ReplayBuffer
from .sac import SacAgent, llm_batch_size, sac_update


@dataclass
class DiclSacConfig:
    """Training hyperparameters (flat, file-mappable)."""

    total_steps: int = 10_000
    episode_length: int = 200
    batch_size: int = 64
    update_frequency: int = 200
    updates_per_round: int | None = None  # defaults to update_frequency
    learning_starts: int = 1_000
    gamma: float = 0.99
    lr: float = 3e-4
    tau: float = 0.005
    hidden: tuple = (256, 256)
    llm_proportion: float = 0.0  # share of generated data per update
    llm_learning_starts: int = 2_000
    llm_learning_frequency: int = 16
    min_context: int = 1
    max_context: int = 198
    buffer_capacity: int = 100_000
    llm_buffer_capacity: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.llm_proportion <= 1.0:
            raise ValueError(f"llm_proportion must lie in [0, 1], got {self.llm_proportion}")
        if self.min_context > self.max_context:
            raise ValueError("min_context must be <= max_context")
        if self.max_context + 1 > self.episode_length + 1:
            raise ValueError("max_context window cannot exceed the episode length")


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    llm_audit: list = field(default_factory=list)  # (episode, step-in-episode) per synthetic transition
    n_llm_transitions: int = 0
    n_generation_failures: int = 0
    agent: object = None


class _EpisodeStore:
    """Per-episode arrays used for window sampling and auditing."""

    def __init__(self, first_obs):
        self.obs = [np.asarray(first_obs, dtype=float)]
        self.actions = []
        self.rewards = []
        self.aux_actions = []

    def push(self, action, reward, next_obs, aux_action):
        self.actions.append(np.asarray(action, dtype=float))
        self.rewards.append(float(reward))
        self.aux_actions.append(None if aux_action is None else np.asarray(aux_action, dtype=float))
        self.obs.append(np.asarray(next_obs, dtype=float))

    def __len__(self):
        return len(self.actions)


def _generate_llm_data(
    episodes, cfg: DiclSacConfig, method: DiclMethod, buffer: ReplayBuffer, rng: np.random.Generator, log: TrainingLog
) -> int:
    """Forecast one stored window and push its synthetic transitions."""
    window_len = cfg.max_context + 1
    candidates = [i for i, ep in enumerate(episodes) if len(ep) >= window_len]
    if not candidates:
        return 0
    ep_idx = candidates[int(rng.integers(len(candidates)))]
    ep = episodes[ep_idx]
    start = int(rng.integers(0, len(ep) - window_len + 1))
    window = np.stack(ep.obs[start : start + window_len])
    positions = list(range(cfg.min_context, cfg.max_context))
    try:
        preds = positionwise_forecast(window, method, positions, rng=rng)
    except Exception:
        log.n_generation_failures += 1
        return 0
    added = 0
    for row, i in enumerate(positions):
        g = start + i
        buffer.add(ep.obs[g], ep.aux_actions[g], ep.rewards[g], preds[row], 0.0)
        log.llm_audit.append((ep_idx, g))
        added += 1
    return added


def dicl_sac_train(env, cfg: DiclSacConfig, method: DiclMethod | None = None) -> TrainingLog:
    """Run the training loop; method=None gives the plain SAC baseline."""
    ss = np.random.SeedSequence(cfg.seed).spawn(5)
    env_rng, action_rng, update_rng, gen_rng, aux_rng = (np.random.default_rng(s) for s in ss)

    scale = (env.action_high - env.action_low) / 2.0
    bias = (env.action_high + env.action_low) / 2.0
    agent = SacAgent(
        obs_dim=env.obs_dim,
        action_dim=env.action_dim,
        action_scale=scale,
        action_bias=bias,
        hidden=cfg.hidden,
        lr=cfg.lr,
        gamma=cfg.gamma,
        tau=cfg.tau,
        seed=cfg.seed,
    )
    buffer = ReplayBuffer(cfg.buffer_capacity, env.obs_dim, env.action_dim)
    llm_buffer = ReplayBuffer(cfg.llm_buffer_capacity, env.obs_dim, env.action_dim)
    log = TrainingLog()
    log.agent = agent

    use_llm = method is not None and cfg.llm_proportion > 0.0
    llm_bs = llm_batch_size(cfg.llm_proportion, cfg.batch_size) if use_llm else 0
    updates_per_round = cfg.updates_per_round if cfg.updates_per_round is not None else cfg.update_frequency

    obs = env.reset(env_rng)
    episodes = [_EpisodeStore(obs)]
    ep_return = 0.0
    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.learning_starts:
            action = action_rng.uniform(env.action_low, env.action_high, size=env.action_dim)
        else:
            action = agent.act(obs, action_rng)
        aux_action = agent.act(obs, aux_rng) if method is not None else None
        next_obs, reward = env.step(action)
        buffer.add(obs, action, reward, next_obs, 0.0)
        episodes[-1].push(action, reward, next_obs, aux_action)
        ep_return += reward
        obs = next_obs

        row = {"step": step, "episodic_return": "", "critic_loss": "", "actor_loss": "", "alpha": "", "llm_buffer": len(llm_buffer)}

        if len(episodes[-1]) >= cfg.episode_length:
            row["episodic_return"] = ep_return
            log.episode_returns.append(ep_return)
            ep_return = 0.0
            obs = env.reset(env_rng)
            episodes.append(_EpisodeStore(obs))

        if use_llm and step >= cfg.llm_learning_starts and step % cfg.llm_learning_frequency == 0:
            log.n_llm_transitions += _generate_llm_data(episodes, cfg, method, llm_buffer, gen_rng, log)
            row["llm_buffer"] = len(llm_buffer)

        if step >= cfg.learning_starts and step % cfg.update_frequency == 0:
            for _ in range(updates_per_round):
                batch = buffer.sample(cfg.batch_size, update_rng)
                llm_batch = None
                if use_llm and step >= cfg.llm_learning_starts and len(llm_buffer) >= llm_bs and llm_bs > 0:
                    llm_batch = llm_buffer.sample(llm_bs, update_rng)
                losses = sac_update(agent, batch, update_rng, llm_batch)
            row.update(
                critic_loss=losses["critic_loss"],
                actor_loss=losses["actor_loss"],
                alpha=losses["alpha"],
            )
        log.rows.append(row)
    return log


def sac_train(env, cfg: DiclSacConfig) -> TrainingLog:
    """Plain SAC baseline: the same loop with generation disabled."""
    return dicl_sac_train(env, cfg, method=None)
