"""Hybrid online/model-based policy evaluation.

The value of a fixed episode is re-estimated by keeping the first T and the
last L - (T + k) rewards real and forecasting the k rewards in between with
a reward-aware prediction method.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dicl import DiclMethod, rollout
from .trajdata import Trajectory


@dataclass(frozen=True)
class HybridEvalSpec:
    """Context length T, model horizon k, episode length L, discounting."""

    context_len: int
    model_horizon: int
    episode_len: int = 1000
    gamma: float | None = None  # None = undiscounted sum

    def __post_init__(self):
        if self.context_len < 2:
            raise ValueError("context_len must be >= 2")
        if self.model_horizon < 0:
            raise ValueError("model_horizon must be >= 0")
        if self.context_len + self.model_horizon > self.episode_len:
            raise ValueError("context_len + model_horizon must be <= episode_len")


@dataclass(frozen=True)
class HybridValue:
    v_hat: float
    v_true: float
    rel_err: float
    abs_err: float
    degenerate: bool  # true value was 0; rel_err reported as absolute


def hybrid_value(traj: Trajectory, spec: HybridEvalSpec, method: DiclMethod, rng=None) -> HybridValue:
    """Splice real and forecast rewards over one episode and compare values."""
    if traj.rewards is None:
        raise ValueError("hybrid evaluation needs rewards")
    L, T, k = spec.episode_len, spec.context_len, spec.model_horizon
    if traj.t_len < L:
        raise ValueError(f"episode must contain at least {L} steps, got {traj.t_len}")
    if not method.include_reward:
        method = replace(method, include_reward=True)

    weights = np.ones(L) if spec.gamma is None else spec.gamma ** np.arange(L)
    rewards = traj.rewards[:L]
    v_true = float(weights @ rewards)

    if k == 0:
        predicted = np.empty(0)
    else:
        context = traj.window(0, T)
        steps = rollout(context, k, method, rng=rng)
        predicted = np.array([r.reward for r in steps])

    spliced = np.concatenate([rewards[:T], predicted, rewards[T + k :]])
    v_hat = float(weights @ spliced)
    abs_err = abs(v_hat - v_true)
    degenerate = v_true == 0.0
    rel_err = abs_err if degenerate else abs_err / abs(v_true)
    return HybridValue(v_hat=v_hat, v_true=v_true, rel_err=rel_err, abs_err=abs_err, degenerate=degenerate)
