"""Return-gap laboratory on exact tabular MDPs.

Provides total-variation distances, the exact multi-step error inequality
check, Monte Carlo estimation of the multi-branch rollout return (a rollout
follows the true kernel and, from step T on, spawns a k-step model branch
with probability p at each step; rewards at a timestep spanned by branches
average over those branches), and the verification of the return bound

    |eta - eta_branch| <= 2 gamma^T / (1 - gamma) * r_max * k^2 * p * eps(T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import TabularMDP, TabularPolicy, exact_return, policy_reward, policy_transition

_CHUNK = 200_000


def tv_distance(p, q) -> float:
    """Total variation distance between two probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or not np.isclose(v.sum(), 1.0, atol=1e-9):
            raise ValueError(f"{name} is not a probability vector")
    return float(0.5 * np.sum(np.abs(p - q)))


@dataclass(frozen=True)
class ModelPair:
    """True kernel (inside mdp) plus a model kernel over the same spaces."""

    mdp: TabularMDP
    P_hat: np.ndarray

    def __post_init__(self):
        P_hat = np.ascontiguousarray(self.P_hat, dtype=float)
        if P_hat.shape != self.mdp.P.shape:
            raise ValueError(f"P_hat shape {P_hat.shape} != P shape {self.mdp.P.shape}")
        if np.any(P_hat < 0) or not np.allclose(P_hat.sum(axis=-1), 1.0, atol=1e-12, rtol=0.0):
            raise ValueError("P_hat rows must be stochastic within 1e-12")
        P_hat.setflags(write=False)
        object.__setattr__(self, "P_hat", P_hat)


def random_pair(seed: int, n_states: int = 4, n_actions: int = 2, gamma: float = 0.9, r_max: float = 1.0) -> ModelPair:
    """Independent Dirichlet(1) true and model kernels sharing r, mu0, gamma."""
    from .envs import random_mdp

    mdp = random_mdp(seed, n_states, n_actions, gamma=gamma, r_max=r_max)
    rng = np.random.default_rng((seed, 0x9A1))  # separate stream from the mdp
    P_hat = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return ModelPair(mdp=mdp, P_hat=P_hat)


@dataclass(frozen=True)
class BranchConfig:
    """Parameters of the multi-branch rollout scheme.

    horizon=None picks the smallest H with gamma^H r_max / (1-gamma) below
    truncation_tol.
    """

    p: float
    k: int
    T: int
    n_rollouts: int = 100_000
    seed: int = 0
    horizon: int | None = None
    truncation_tol: float = 1e-4

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.k < 0 or self.T < 0:
            raise ValueError("k and T must be >= 0")
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")

    def resolve_horizon(self, gamma: float, r_max: float) -> int:
        if self.horizon is not None:
            return self.horizon
        if r_max == 0.0:
            return max(self.T + self.k, 1)
        h = math.ceil(math.log(self.truncation_tol * (1 - gamma) / r_max) / math.log(gamma))
        return max(h, self.T + self.k, 1)


def epsilon_llm(pair: ModelPair, pi: TabularPolicy, T: int, horizon: int) -> float:
    """Largest state-distribution-weighted one-step TV over t in [T, horizon].

    The state distribution at t follows the true kernel from mu0 under pi.
    """
    mdp = pair.mdp
    tv_sa = 0.5 * np.sum(np.abs(mdp.P - pair.P_hat), axis=-1)  # [S x A]
    per_state = np.einsum("sa,sa->s", pi.pi, tv_sa)
    p_pi = policy_transition(mdp.P, pi)
    d = mdp.mu0.copy()
    for _ in range(T):
        d = d @ p_pi
    best = 0.0
    for _ in range(T, horizon + 1):
        best = max(best, float(d @ per_state))
        d = d @ p_pi
    return best


@dataclass(frozen=True)
class LemmaB2Report:
    eps: np.ndarray  # multi-step TV per t
    xi: np.ndarray  # one-step expected TV per t
    holds: bool


def lemma_b2_check(pair: ModelPair, pi: TabularPolicy, t_max: int, tol: float = 1e-12) -> LemmaB2Report:
    """Exact check that the multi-step error is bounded by the summed
    one-step errors: eps_t <= sum_{i<=t} xi_i for all t <= t_max."""
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    mdp = pair.mdp
    p_true = policy_transition(mdp.P, pi)
    p_model = policy_transition(pair.P_hat, pi)
    tv_rows = 0.5 * np.sum(np.abs(p_true - p_model), axis=1)  # per-state one-step TV
    d_true = mdp.mu0.copy()
    d_model = mdp.mu0.copy()
    eps = np.zeros(t_max + 1)
    xi = np.zeros(t_max + 1)
    for t in range(1, t_max + 1):
        xi[t] = float(d_true @ tv_rows)
        d_true = d_true @ p_true
        d_model = d_model @ p_model
        eps[t] = 0.5 * float(np.sum(np.abs(d_true - d_model)))
    holds = bool(np.all(eps <= np.cumsum(xi) + tol))
    return LemmaB2Report(eps=eps, xi=xi, holds=holds)


def _cumcols(kernel: np.ndarray) -> list[np.ndarray]:
    """Cumulative row sums of a stochastic matrix, stored column-wise for
    fast per-column gathers during sampling (the final column is dropped:
    it is 1 and never exceeded)."""
    c = np.cumsum(kernel, axis=1)
    return [np.ascontiguousarray(c[:, j]) for j in range(kernel.shape[1] - 1)]


def _step(cum_cols, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Advance every chain one step by inverse-CDF sampling of its row."""
    u = rng.random(states.shape[0])
    nxt = np.zeros(states.shape[0], dtype=states.dtype)
    for col in cum_cols:
        nxt += u > col[states]
    return nxt


class _SharedChains:
    """True chain and branch chains of one rollout batch.

    b[i][t] holds the state of the branch started at t-i after i model
    steps, so the cells (b[1][t0+1], ..., b[k][t0+k]) trace the branch
    started at t0; every branch is simulated independently from its branch
    point on the persistent true chain. The chains are independent of the
    branching probability and the minimal context length, so one batch can
    serve several (p, T) evaluations with fresh indicator draws.
    """

    def __init__(self, pair: ModelPair, pi: TabularPolicy, k_max: int, horizon: int, n: int, rng: np.random.Generator):
        mdp = pair.mdp
        cum_true = _cumcols(policy_transition(mdp.P, pi))
        cum_model = _cumcols(policy_transition(pair.P_hat, pi))
        self.rpi = policy_reward(mdp, pi)
        self.gamma = mdp.gamma
        self.horizon = horizon
        self.n = n
        dtype = np.int16

        s = np.empty((horizon + 1, n), dtype=dtype)
        mu0_cols = [np.full(1, v) for v in np.cumsum(mdp.mu0)[:-1]]
        u = rng.random(n)
        init = np.zeros(n, dtype=dtype)
        for col in mu0_cols:
            init += u > col[0]
        s[0] = init
        for t in range(1, horizon + 1):
            s[t] = _step(cum_true, s[t - 1], rng)
        self.s = s

        self.b: list = [None]
        for i in range(1, k_max + 1):
            bi = np.zeros((horizon + 1, n), dtype=dtype)
            src = s if i == 1 else self.b[i - 1]
            for t in range(i, horizon + 1):
                bi[t] = _step(cum_model, src[t - 1], rng)
            self.b.append(bi)

        self.rpi32 = self.rpi.astype(np.float32)

    def returns(self, p: float, k: int, T: int, rng: np.random.Generator) -> np.ndarray:
        """Per-rollout discounted returns for one (p, k, T) setting."""
        if k > len(self.b) - 1:
            raise ValueError(f"chains were simulated for k <= {len(self.b) - 1}, got {k}")
        horizon, n, rpi = self.horizon, self.n, self.rpi32
        x = np.zeros((horizon + 1, n), dtype=np.float32)
        for t in range(T, horizon + 1):
            x[t] = rng.random(n) < p
        acc = np.zeros(n)
        cnt = np.empty(n, dtype=np.float32)
        branch_r = np.empty(n, dtype=np.float32)
        discount = 1.0
        for t in range(horizon + 1):
            true_r = rpi[self.s[t]]
            n_off = min(k, t - T)
            if n_off <= 0:
                acc += discount * true_r
            else:
                np.multiply(x[t - 1], rpi[self.b[1][t]], out=branch_r)
                cnt[:] = x[t - 1]
                for i in range(2, n_off + 1):
                    xi = x[t - i]
                    cnt += xi
                    branch_r += xi * rpi[self.b[i][t]]
                none_spanned = cnt == 0
                acc += discount * (
                    branch_r / np.maximum(cnt, np.float32(1.0)) + none_spanned * true_r
                )
            discount *= self.gamma
        return acc


def _simulate_chunk(pair: ModelPair, pi: TabularPolicy, p: float, k: int, T: int, horizon: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-rollout discounted returns of the multi-branch scheme."""
    chains = _SharedChains(pair, pi, k_max=k, horizon=horizon, n=n, rng=rng)
    return chains.returns(p, k, T, rng)


@dataclass(frozen=True)
class ReturnEstimate:
    eta_hat: float
    stderr: float
    horizon: int
    truncation_bias_bound: float


def multibranch_return(pair: ModelPair, pi: TabularPolicy, cfg: BranchConfig) -> ReturnEstimate:
    """Monte Carlo estimate of the multi-branch rollout return.

    k=0 branches contribute nothing, so the exact true-dynamics return is
    returned with zero error; p=0 falls back to plain true-chain Monte Carlo.
    Deterministic for a fixed seed; chunk reductions use exact summation.
    """
    mdp = pair.mdp
    gamma, r_max = mdp.gamma, mdp.r_max
    horizon = cfg.resolve_horizon(gamma, r_max)
    bias = gamma ** (horizon + 1) * r_max / (1 - gamma)
    if cfg.k == 0:
        return ReturnEstimate(eta_hat=exact_return(mdp, pi), stderr=0.0, horizon=horizon, truncation_bias_bound=0.0)

    seeds = np.random.SeedSequence(cfg.seed).spawn(math.ceil(cfg.n_rollouts / _CHUNK))
    total = 0.0
    total_sq = 0.0
    done = 0
    for i, ss in enumerate(seeds):
        n = min(_CHUNK, cfg.n_rollouts - done)
        rng = np.random.default_rng(ss)
        returns = _simulate_chunk(pair, pi, cfg.p, cfg.k, cfg.T, horizon, n, rng)
        total = math.fsum([total, math.fsum(returns)])
        total_sq = math.fsum([total_sq, math.fsum(returns * returns)])
        done += n
    mean = total / done
    if done > 1:
        var = max(0.0, (total_sq - done * mean * mean) / (done - 1))
        stderr = math.sqrt(var / done)
    else:
        stderr = float("inf")
    return ReturnEstimate(eta_hat=mean, stderr=stderr, horizon=horizon, truncation_bias_bound=bias)


def exact_multibranch_return(pair: ModelPair, pi: TabularPolicy, cfg: BranchConfig) -> float:
    """Closed-form truncated value of the multi-branch return.

    Uses exact chain marginals and the exchangeability of the i.i.d. branch
    indicators: conditioned on at least one of n candidate branches spanning
    a step, each contributes with equal weight (1 - (1-p)^n) / n.
    """
    mdp = pair.mdp
    gamma = mdp.gamma
    horizon = cfg.resolve_horizon(gamma, mdp.r_max)
    p_true = policy_transition(mdp.P, pi)
    p_model = policy_transition(pair.P_hat, pi)
    rpi = policy_reward(mdp, pi)

    d = mdp.mu0.copy()
    marginals = [d]
    for _ in range(horizon):
        d = d @ p_true
        marginals.append(d)
    m_true = np.array([d @ rpi for d in marginals])

    # m_branch[t0, i]: expected reward i model steps after branching at t0
    m_branch = np.zeros((horizon + 1, cfg.k + 1))
    for t0 in range(cfg.T, horizon + 1):
        vec = marginals[t0].copy()
        for i in range(1, cfg.k + 1):
            vec = vec @ p_model
            m_branch[t0, i] = vec @ rpi

    eta = 0.0
    discount = 1.0
    for t in range(horizon + 1):
        n_off = min(cfg.k, t - cfg.T)
        if n_off <= 0:
            eta += discount * m_true[t]
        else:
            q = (1.0 - cfg.p) ** n_off
            avg_branch = np.mean([m_branch[t - i, i] for i in range(1, n_off + 1)])
            eta += discount * ((1.0 - q) * avg_branch + q * m_true[t])
        discount *= gamma
    return float(eta)


def theorem_bound_rhs(gamma: float, T: int, r_max: float, k: int, p: float, eps: float) -> float:
    return 2.0 * gamma**T / (1.0 - gamma) * r_max * k**2 * p * eps


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    slack: float
    eta: float
    eta_hat: float
    stderr: float
    eps: float
    horizon: int

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "holds": self.holds,
            "slack": self.slack,
            "eta": self.eta,
            "eta_hat": self.eta_hat,
            "stderr": self.stderr,
            "eps": self.eps,
            "horizon": self.horizon,
        }


def theorem1_check(pair: ModelPair, pi: TabularPolicy, cfg: BranchConfig) -> BoundReport:
    """Compare the observed return gap against the multi-branch bound."""
    mdp = pair.mdp
    est = multibranch_return(pair, pi, cfg)
    eta = exact_return(mdp, pi)
    eps = epsilon_llm(pair, pi, cfg.T, est.horizon)
    rhs = theorem_bound_rhs(mdp.gamma, cfg.T, mdp.r_max, cfg.k, cfg.p, eps)
    lhs = abs(eta - est.eta_hat)
    holds = lhs - 3.0 * est.stderr <= rhs
    return BoundReport(
        lhs=lhs,
        rhs=rhs,
        holds=bool(holds),
        slack=rhs - (lhs - 3.0 * est.stderr),
        eta=eta,
        eta_hat=est.eta_hat,
        stderr=est.stderr,
        eps=eps,
        horizon=est.horizon,
    )


def theorem1_sweep(
    n_seeds: int = 50,
    p_grid=(0.1, 0.5),
    k_grid=(1, 3),
    T_grid=(0, 2),
    n_states: int = 4,
    n_actions: int = 2,
    gamma: float = 0.9,
    r_max: float = 1.0,
    n_rollouts: int = 200_000,
    base_seed: int = 0,
) -> list[dict]:
    """Bound check over a grid of seeded random pairs; one dict per cell.

    Within one seed the chain simulation is shared across the (p, k, T)
    cells (the chains do not depend on them); only the branch indicators
    are redrawn, so every cell remains an unbiased estimate with a valid
    standard error over independent rollouts.
    """
    from .envs import random_policy

    cells = []
    for seed_idx in range(n_seeds):
        pair_seed = base_seed + 1000 * seed_idx
        pair = random_pair(pair_seed, n_states, n_actions, gamma=gamma, r_max=r_max)
        pi = random_policy(pair_seed + 1, n_states, n_actions)
        mdp = pair.mdp
        eta = exact_return(mdp, pi)
        probe = BranchConfig(p=p_grid[0], k=max(k_grid), T=min(T_grid), n_rollouts=n_rollouts, seed=pair_seed + 2)
        horizon = probe.resolve_horizon(mdp.gamma, mdp.r_max)
        eps_by_T = {T: epsilon_llm(pair, pi, T, horizon) for T in T_grid}

        n_chunks = math.ceil(n_rollouts / _CHUNK)
        chain_seeds = np.random.SeedSequence((pair_seed, 2)).spawn(n_chunks)
        sums = {(p, k, T): [] for p in p_grid for k in k_grid for T in T_grid}
        sums_sq = {key: [] for key in sums}
        done = 0
        for ci, ss in enumerate(chain_seeds):
            n = min(_CHUNK, n_rollouts - done)
            rng = np.random.default_rng(ss)
            chains = _SharedChains(pair, pi, k_max=max(k_grid), horizon=horizon, n=n, rng=rng)
            for key in sums:
                p, k, T = key
                returns = chains.returns(p, k, T, rng)
                sums[key].append(math.fsum(returns))
                sums_sq[key].append(math.fsum(returns * returns))
            done += n

        for (p, k, T), chunk_sums in sums.items():
            total = math.fsum(chunk_sums)
            total_sq = math.fsum(sums_sq[(p, k, T)])
            mean = total / done
            var = max(0.0, (total_sq - done * mean * mean) / (done - 1))
            stderr = math.sqrt(var / done)
            eps = eps_by_T[T]
            rhs = theorem_bound_rhs(mdp.gamma, T, mdp.r_max, k, p, eps)
            lhs = abs(eta - mean)
            cells.append(
                {
                    "seed": pair_seed,
                    "p": p,
                    "k": k,
                    "T": T,
                    "lhs": lhs,
                    "rhs": rhs,
                    "holds": bool(lhs - 3.0 * stderr <= rhs),
                    "slack": rhs - (lhs - 3.0 * stderr),
                    "eta": eta,
                    "eta_hat": mean,
                    "stderr": stderr,
                    "eps": eps,
                    "horizon": horizon,
                }
            )
    return cells
