"""Ground-truth dynamics for desk-scale experiments.

Exact finite MDPs (used as oracles for the return-bound lab) and a native
frictionless pendulum matching the standard Gym control task constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ROW_TOL = 1e-12


def _check_stochastic(mat: np.ndarray, name: str, axis: int = -1) -> None:
    if np.any(mat < 0):
        raise ValueError(f"{name} has negative entries")
    sums = mat.sum(axis=axis)
    if not np.allclose(sums, 1.0, atol=_ROW_TOL, rtol=0.0):
        raise ValueError(f"{name} rows must sum to 1 within {_ROW_TOL}")


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP <S, A, P, r, mu0, gamma> with P[s, a, s'] and r[s, a]."""

    P: np.ndarray
    r: np.ndarray
    mu0: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.ascontiguousarray(self.P, dtype=float)
        r = np.ascontiguousarray(self.r, dtype=float)
        mu0 = np.ascontiguousarray(self.mu0, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"P must be [S x A x S], got {P.shape}")
        S, A = P.shape[0], P.shape[1]
        if r.shape != (S, A):
            raise ValueError(f"r must be [S x A] = {(S, A)}, got {r.shape}")
        if mu0.shape != (S,):
            raise ValueError(f"mu0 must be [S] = {(S,)}, got {mu0.shape}")
        _check_stochastic(P, "P")
        _check_stochastic(mu0[None, :], "mu0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        for a in (P, r, mu0):
            a.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "mu0", mu0)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.r)))


@dataclass(frozen=True)
class TabularPolicy:
    """Row-stochastic action distribution per state."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.ascontiguousarray(self.pi, dtype=float)
        if pi.ndim != 2:
            raise ValueError(f"pi must be [S x A], got {pi.shape}")
        _check_stochastic(pi, "pi")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)


def random_mdp(seed: int, n_states: int = 4, n_actions: int = 2, gamma: float = 0.9, r_max: float = 1.0) -> TabularMDP:
    """Dirichlet(1) transition rows, rewards uniform on [0, r_max]."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(0.0, r_max, size=(n_states, n_actions))
    mu0 = rng.dirichlet(np.ones(n_states))
    return TabularMDP(P=P, r=r, mu0=mu0, gamma=gamma)


def random_policy(seed: int, n_states: int, n_actions: int) -> TabularPolicy:
    rng = np.random.default_rng(seed)
    return TabularPolicy(pi=rng.dirichlet(np.ones(n_actions), size=n_states))


def uniform_policy(n_states: int, n_actions: int) -> TabularPolicy:
    return TabularPolicy(pi=np.full((n_states, n_actions), 1.0 / n_actions))


def policy_transition(P: np.ndarray, pi: TabularPolicy) -> np.ndarray:
    """State-to-state kernel under the policy: P^pi[s, s'] = sum_a pi[s,a] P[s,a,s']."""
    return np.einsum("sa,sat->st", pi.pi, np.asarray(P, dtype=float))


def policy_reward(mdp: TabularMDP, pi: TabularPolicy) -> np.ndarray:
    """Expected one-step reward per state under the policy."""
    return np.einsum("sa,sa->s", pi.pi, mdp.r)


def exact_return(mdp: TabularMDP, pi: TabularPolicy) -> float:
    """Closed-form discounted return mu0^T (I - gamma P^pi)^{-1} r^pi."""
    p_pi = policy_transition(mdp.P, pi)
    r_pi = policy_reward(mdp, pi)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    return float(mdp.mu0 @ v)


def value_iteration_return(mdp: TabularMDP, pi: TabularPolicy, tol: float = 1e-12, max_iter: int = 100000) -> float:
    """Fixed-point policy evaluation, the independent check on exact_return."""
    p_pi = policy_transition(mdp.P, pi)
    r_pi = policy_reward(mdp, pi)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        v_new = r_pi + mdp.gamma * (p_pi @ v)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    return float(mdp.mu0 @ v)


def _wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = (theta + np.pi) % (2.0 * np.pi) - np.pi
    if wrapped == -np.pi:
        wrapped = np.pi
    return wrapped


class PendulumEnv:
    """Frictionless torque-controlled pendulum, semi-implicit Euler.

    Constants match the standard Gym task: g=10, m=1, l=1, dt=0.05,
    torque clipped to [-2, 2], angular velocity clipped to [-8, 8],
    reward -(theta^2 + 0.1 theta_dot^2 + 0.001 a^2) of the pre-step state.
    Observation is (cos theta, sin theta, theta_dot).
    """

    g = 10.0
    m = 1.0
    l = 1.0
    dt = 0.05
    max_torque = 2.0
    max_speed = 8.0

    obs_dim = 3
    action_dim = 1
    action_low = -2.0
    action_high = 2.0

    def __init__(self):
        self.theta = 0.0
        self.theta_dot = 0.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.theta = float(rng.uniform(-np.pi, np.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))
        return self.observation()

    def set_state(self, theta: float, theta_dot: float) -> None:
        self.theta = _wrap_angle(float(theta))
        self.theta_dot = float(np.clip(theta_dot, -self.max_speed, self.max_speed))

    def observation(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])

    def step(self, action) -> tuple[np.ndarray, float]:
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -self.max_torque, self.max_torque))
        th, thd = self.theta, self.theta_dot
        reward = -(th**2 + 0.1 * thd**2 + 0.001 * a**2)
        thd_new = thd + (3.0 * self.g / (2.0 * self.l) * np.sin(th) + 3.0 / (self.m * self.l**2) * a) * self.dt
        thd_new = float(np.clip(thd_new, -self.max_speed, self.max_speed))
        th_new = _wrap_angle(th + thd_new * self.dt)
        self.theta, self.theta_dot = th_new, thd_new
        return self.observation(), reward


def pendulum_step(state, action) -> tuple[np.ndarray, float]:
    """Pure transition on (theta, theta_dot); returns ((theta', theta_dot'), reward)."""
    env = PendulumEnv()
    env.set_state(state[0], state[1])
    _, reward = env.step(action)
    return np.array([env.theta, env.theta_dot]), reward


def collect_rollout(env: PendulumEnv, policy, n_steps: int, seed: int):
    """Roll a policy for n_steps from a seeded reset.

    policy(observation, rng) -> action. Returns a Trajectory of
    (observation, action, reward) triples.
    """
    from .trajdata import Trajectory

    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    rng = np.random.default_rng(seed)
    obs = env.reset(rng)
    states, actions, rewards = [], [], []
    for _ in range(n_steps):
        action = np.asarray(policy(obs, rng), dtype=float).reshape(-1)
        next_obs, reward = env.step(action)
        states.append(obs)
        actions.append(action)
        rewards.append(reward)
        obs = next_obs
    return Trajectory(states=np.array(states), actions=np.array(actions), rewards=np.array(rewards))


def random_torque_policy(obs, rng: np.random.Generator):
    return rng.uniform(-PendulumEnv.max_torque, PendulumEnv.max_torque, size=1)
