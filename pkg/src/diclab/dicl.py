"""Next-state prediction methods and autoregressive multi-step rollout.

Three methods share one engine:

* ``vicl``    -- independent in-context forecast of every raw state dimension.
* ``dicl_s``  -- forecast in the disentangled (PCA) space of the states.
* ``dicl_sa`` -- same, over the joint state-action features; actions are
  forecast alongside states, so the rollout models the behavior policy too.

With ``include_reward`` the reward joins the feature set before the
transform, enabling reward forecasting for policy evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .disentangle import PcaDisentangler, fit_disentangler
from .forecaster import NextValueDistribution, icl_forecast
from .tokenizer import NumericEncoding, fit_rescale
from .trajdata import Trajectory

_KINDS = ("vicl", "dicl_s", "dicl_sa")
_SAMPLING = ("mean", "mode", "sample")


@dataclass(frozen=True)
class DiclMethod:
    """Configuration of one prediction method."""

    kind: str
    backend: object
    include_reward: bool = False
    n_components: int | None = None
    sampling: str = "mode"
    quantiles: tuple[float, float] = (0.05, 0.95)
    standardize: bool = True
    enc: NumericEncoding = field(default_factory=NumericEncoding)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.sampling not in _SAMPLING:
            raise ValueError(f"sampling must be one of {_SAMPLING}, got {self.sampling!r}")
        lo, hi = self.quantiles
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"quantiles must satisfy 0 <= lo <= hi <= 1, got {self.quantiles}")


@dataclass(frozen=True)
class ForecastResult:
    """One predicted step in source units.

    lower/upper come from per-series quantiles mapped back through the
    feature transform; they bracket each other but need not sandwich the
    mean for skewed bins.
    """

    state: np.ndarray
    state_mean: np.ndarray
    state_mode: np.ndarray
    state_lower: np.ndarray
    state_upper: np.ndarray
    action: np.ndarray | None = None
    reward: float | None = None
    reward_mean: float | None = None
    reward_lower: float | None = None
    reward_upper: float | None = None
    distributions: tuple[NextValueDistribution, ...] = ()

    def to_dict(self) -> dict:
        out = {
            "state": self.state.tolist(),
            "state_mean": self.state_mean.tolist(),
            "state_mode": self.state_mode.tolist(),
            "state_lower": self.state_lower.tolist(),
            "state_upper": self.state_upper.tolist(),
        }
        if self.action is not None:
            out["action"] = self.action.tolist()
        if self.reward is not None:
            out["reward"] = self.reward
            out["reward_mean"] = self.reward_mean
            out["reward_lower"] = self.reward_lower
            out["reward_upper"] = self.reward_upper
        return out


def _assemble_features(traj: Trajectory, method: DiclMethod):
    """Stack the method's feature columns: states [| actions] [| reward]."""
    blocks = [traj.states]
    d_s = traj.d_s
    action_slice = None
    if method.kind == "dicl_sa":
        if traj.actions is None:
            raise ValueError("dicl_sa requires actions in the context trajectory")
        blocks.append(traj.actions)
        action_slice = slice(d_s, d_s + traj.d_a)
    reward_index = None
    if method.include_reward:
        if traj.rewards is None:
            raise ValueError("include_reward requires rewards in the context trajectory")
        blocks.append(traj.rewards[:, None])
        reward_index = sum(b.shape[1] for b in blocks) - 1
    return np.concatenate(blocks, axis=1), slice(0, d_s), action_slice, reward_index


class _Rollout:
    """Mutable engine behind predict_next/rollout.

    The feature transform (for dicl_s/dicl_sa) and the per-series rescales
    are fit once on the initial context; a series' rescale is refit only
    when a prediction escapes its padded range.
    """

    def __init__(self, traj: Trajectory, method: DiclMethod, rng=None):
        if traj.t_len < 2:
            raise ValueError("context must contain at least 2 steps")
        self.method = method
        self.rng = rng
        self.enc = method.enc
        features, self.state_slice, self.action_slice, self.reward_index = _assemble_features(
            traj, method
        )
        self.features = features  # grows along axis 0
        if method.kind == "vicl":
            self.phi: PcaDisentangler | None = None
            self.series = features.copy()
        else:
            self.phi = fit_disentangler(
                features, c=method.n_components, standardize=method.standardize
            )
            self.series = self.phi.transform(features)
        self.rescales = [fit_rescale(self.series[:, i], self.enc) for i in range(self.series.shape[1])]

    def _forecast_series(self):
        dists = []
        for i in range(self.series.shape[1]):
            d = icl_forecast(
                self.series[:, i],
                backend=self.method.backend,
                enc=self.enc,
                positions="last",
                rescale=self.rescales[i],
            )[0]
            dists.append(d)
        return dists

    def step(self) -> ForecastResult:
        dists = self._forecast_series()
        lo_q, hi_q = self.method.quantiles
        chosen = np.array([d.pick(self.method.sampling, self.rng) for d in dists])
        mean = np.array([d.mean() for d in dists])
        mode = np.array([d.mode() for d in dists])
        q_lo = np.array([d.quantile(lo_q) for d in dists])
        q_hi = np.array([d.quantile(hi_q) for d in dists])

        if self.phi is None:
            feat_chosen, feat_mean, feat_mode = chosen, mean, mode
            feat_lo, feat_hi = q_lo, q_hi
        else:
            inv = self.phi.inverse_transform
            feat_chosen = inv(chosen[None, :])[0]
            feat_mean = inv(mean[None, :])[0]
            feat_mode = inv(mode[None, :])[0]
            a = inv(q_lo[None, :])[0]
            b = inv(q_hi[None, :])[0]
            feat_lo, feat_hi = np.minimum(a, b), np.maximum(a, b)

        # grow the context and refit any rescale whose prediction escaped
        new_series = chosen if self.phi is None else self.phi.transform(feat_chosen[None, :])[0]
        self.features = np.vstack([self.features, feat_chosen])
        self.series = np.vstack([self.series, new_series])
        for i, r in enumerate(self.rescales):
            if not r.source_min <= new_series[i] <= r.source_max:
                self.rescales[i] = fit_rescale(self.series[:, i], self.enc)

        s = self.state_slice
        result = ForecastResult(
            state=feat_chosen[s],
            state_mean=feat_mean[s],
            state_mode=feat_mode[s],
            state_lower=feat_lo[s],
            state_upper=feat_hi[s],
            action=feat_chosen[self.action_slice] if self.action_slice is not None else None,
            reward=float(feat_chosen[self.reward_index]) if self.reward_index is not None else None,
            reward_mean=float(feat_mean[self.reward_index]) if self.reward_index is not None else None,
            reward_lower=float(feat_lo[self.reward_index]) if self.reward_index is not None else None,
            reward_upper=float(feat_hi[self.reward_index]) if self.reward_index is not None else None,
            distributions=tuple(dists),
        )
        return result

    def override_last_actions(self, action) -> None:
        """Replace the just-appended action features (oracle-action mode)."""
        if self.action_slice is None:
            raise ValueError("oracle actions only apply to dicl_sa")
        self.features[-1, self.action_slice] = action
        if self.phi is None:
            self.series[-1] = self.features[-1]
        else:
            self.series[-1] = self.phi.transform(self.features[-1][None, :])[0]


def positionwise_forecast(states, method: DiclMethod, positions, rng=None) -> np.ndarray:
    """Non-autoregressive per-position predictions over a state window.

    For every requested position i the returned row predicts the value at
    i + 1 conditioned on the real window values 0..i. Supports the
    states-only methods (vicl, dicl_s) used for replay-buffer augmentation.
    """
    if method.kind == "dicl_sa" or method.include_reward:
        raise ValueError("positionwise forecasting operates on states only")
    window = np.atleast_2d(np.asarray(states, dtype=float))
    positions = [int(i) for i in positions]
    if method.kind == "vicl":
        series_matrix = window
        phi = None
    else:
        phi = fit_disentangler(window, c=method.n_components, standardize=method.standardize)
        series_matrix = phi.transform(window)
    picks = np.empty((len(positions), series_matrix.shape[1]))
    for j in range(series_matrix.shape[1]):
        dists = icl_forecast(
            series_matrix[:, j], backend=method.backend, enc=method.enc, positions=positions
        )
        picks[:, j] = [d.pick(method.sampling, rng) for d in dists]
    if phi is None:
        return picks
    return phi.inverse_transform(picks)


def predict_next(traj: Trajectory, method: DiclMethod, rng=None) -> ForecastResult:
    """One-step prediction from the context trajectory."""
    return _Rollout(traj, method, rng).step()


def rollout(
    traj: Trajectory,
    h: int,
    method: DiclMethod,
    rng=None,
    oracle_actions=None,
) -> list[ForecastResult]:
    """Autoregressive h-step forecast; each step's pick (per the sampling
    rule) is appended to the context before the next step.

    oracle_actions ([h x d_a], dicl_sa only) substitutes known actions into
    the appended context instead of the forecast ones.
    """
    if h < 1:
        raise ValueError(f"horizon must be >= 1, got {h}")
    engine = _Rollout(traj, method, rng)
    if oracle_actions is not None:
        oracle_actions = np.atleast_2d(np.asarray(oracle_actions, dtype=float))
        if oracle_actions.shape[0] < h:
            raise ValueError(f"need {h} oracle actions, got {oracle_actions.shape[0]}")
    results = []
    for j in range(h):
        results.append(engine.step())
        if oracle_actions is not None:
            engine.override_last_actions(oracle_actions[j])
    return results
