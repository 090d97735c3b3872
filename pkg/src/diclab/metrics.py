"""Forecast quality metrics: multi-step MSE, quantile calibration,
Kolmogorov-Smirnov statistic, state coverage, and one-at-a-time sensitivity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dicl import DiclMethod, rollout
from .forecaster import NextValueDistribution
from .trajdata import ScalerPipeline, Trajectory, transform


@dataclass(frozen=True)
class MultiStepMseReport:
    """Per-dimension, per-horizon MSE in scaled space."""

    mse: np.ndarray  # [d x len(horizons)]
    horizons: tuple[int, ...]
    n_samples: int

    def average(self) -> float:
        return float(self.mse.mean())


def multistep_mse(predictions, truths, scaler: ScalerPipeline, horizons=None) -> MultiStepMseReport:
    """MSE between prediction and truth windows, computed in scaled space.

    predictions/truths: [N x h_max x d] stacks of h_max-step forecasts and
    their ground truth (N = trajectories x start points). Averaging is over
    the N windows, per dimension and horizon.
    """
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape or p.ndim != 3:
        raise ValueError(f"predictions/truths must share shape [N x h x d], got {p.shape} vs {t.shape}")
    n, h_max, d = p.shape
    if horizons is None:
        horizons = tuple(range(1, h_max + 1))
    horizons = tuple(int(h) for h in horizons)
    for h in horizons:
        if not 1 <= h <= h_max:
            raise ValueError(f"horizon {h} outside [1, {h_max}]")
    ps = transform(scaler, p.reshape(-1, d)).reshape(p.shape)
    ts = transform(scaler, t.reshape(-1, d)).reshape(t.shape)
    sq = (ps - ts) ** 2
    mse = np.stack([sq[:, h - 1, :].mean(axis=0) for h in horizons], axis=1)
    return MultiStepMseReport(mse=mse, horizons=horizons, n_samples=n)


def rollout_windows(traj: Trajectory, method: DiclMethod, h: int, starts, rng=None):
    """Slide the forecaster over a trajectory: for every start index s the
    context is steps [0, s) and the prediction window is steps [s, s+h).

    Returns (predictions, truths), both [len(starts) x h x d_s].
    """
    starts = [int(s) for s in starts]
    for s in starts:
        if not 2 <= s <= traj.t_len - h:
            raise ValueError(f"start {s} needs context >= 2 and {h} truth steps")
    preds = np.empty((len(starts), h, traj.d_s))
    truths = np.empty_like(preds)
    for j, s in enumerate(starts):
        context = traj.window(0, s)
        results = rollout(context, h, method, rng=rng)
        preds[j] = np.stack([r.state for r in results])
        truths[j] = traj.states[s : s + h]
    return preds, truths


@dataclass(frozen=True)
class CalibrationReport:
    """Empirical coverage of the forecast quantiles on a grid of levels."""

    grid: np.ndarray
    frequencies: np.ndarray
    ks: float
    n: int


def truth_quantiles(dists, truths) -> np.ndarray:
    """CDF of each distribution evaluated at its ground truth (atom mass
    included), the u-values whose uniformity defines calibration."""
    truths = np.asarray(truths, dtype=float)
    if len(dists) != truths.shape[0] or truths.shape[0] < 1:
        raise ValueError("need one truth per distribution, at least one pair")
    return np.array([d.cdf(y) for d, y in zip(dists, truths)])


def ks_statistic(quantiles_of_truth) -> float:
    """Largest gap between the empirical CDF of the u-values and the uniform
    CDF, evaluated at the data points."""
    u = np.sort(np.asarray(quantiles_of_truth, dtype=float))
    n = u.shape[0]
    if n == 0:
        raise ValueError("empty input")
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("quantiles of truth must lie in [0, 1]")
    ecdf = np.arange(1, n + 1) / n
    return float(np.max(np.abs(ecdf - u)))


def reliability_diagram(
    dists: list[NextValueDistribution], truths, grid=None
) -> CalibrationReport:
    """Fraction of truths at or below each forecast quantile: the empirical
    version of P(y <= F^{-1}(p)), which approaches p for a calibrated
    forecaster. The attached KS statistic summarizes the u = F(y) values."""
    if grid is None:
        grid = np.round(np.arange(0.05, 0.951, 0.05), 10)
    grid = np.asarray(grid, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if len(dists) != truths.shape[0] or truths.shape[0] < 1:
        raise ValueError("need one truth per distribution, at least one pair")
    hits = np.zeros(grid.shape[0])
    for d, y in zip(dists, truths):
        hits += y <= d.quantiles(grid)
    freqs = hits / truths.shape[0]
    u = truth_quantiles(dists, truths)
    return CalibrationReport(grid=grid, frequencies=freqs, ks=ks_statistic(u), n=truths.shape[0])


def state_coverage(states) -> float:
    """Maximum pairwise Euclidean distance between visited states."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need >= 2 states, got {n}")
    best = 0.0
    # row-blocked pairwise distances to bound memory on large datasets
    block = max(1, int(2**22) // max(1, x.shape[0]))
    for i in range(0, n, block):
        chunk = x[i : i + block]
        d2 = np.sum((chunk[:, None, :] - x[None, :, :]) ** 2, axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def sensitivity_matrix(step_fn, ref_state, ref_action, scales, perturbation: float = 0.10) -> np.ndarray:
    """One-at-a-time response magnitudes of a deterministic transition.

    Entry (k, i) is |f(x + e_i)_k - f(x)_k| where e_i perturbs input i (state
    dims first, then action dims) by perturbation * scales[i].

    step_fn(state, action) must return the next state and be deterministic.
    """
    s = np.asarray(ref_state, dtype=float)
    a = np.asarray(ref_action, dtype=float)
    scales = np.asarray(scales, dtype=float)
    d_s, d_a = s.shape[0], a.shape[0]
    if scales.shape[0] != d_s + d_a:
        raise ValueError(f"need {d_s + d_a} scales, got {scales.shape[0]}")
    base = np.asarray(step_fn(s, a), dtype=float)
    again = np.asarray(step_fn(s, a), dtype=float)
    if not np.array_equal(base, again):
        raise ValueError("step_fn is stochastic; OAT sensitivity needs a deterministic transition")
    out = np.empty((base.shape[0], d_s + d_a))
    for i in range(d_s + d_a):
        eps = perturbation * scales[i]
        sp, ap = s.copy(), a.copy()
        if i < d_s:
            sp[i] += eps
        else:
            ap[i - d_s] += eps
        out[:, i] = np.abs(np.asarray(step_fn(sp, ap), dtype=float) - base)
    return out
