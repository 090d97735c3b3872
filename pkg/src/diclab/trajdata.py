"""Trajectory containers, offline dataset ingestion, and feature scaling.

Datasets are CSV (or JSONL) files with a JSON sidecar manifest naming the
state/action/reward columns and the episode-id column. The scaler is the
two-stage pipeline used before error metrics: min-max to [0, 1], then
standardization to zero mean and unit variance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """Dimensions, manifest keys, or invariants do not line up."""


class ParseError(ValueError):
    """A data row could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """One episode: states [T x d_s], optional actions [T x d_a], optional
    rewards [T] where rewards[t] is the reward of the transition taken at t.
    Arrays are immutable after construction."""

    states: np.ndarray
    actions: np.ndarray | None = None
    rewards: np.ndarray | None = None

    def __post_init__(self):
        states = _readonly(np.atleast_2d(np.asarray(self.states, dtype=float)))
        object.__setattr__(self, "states", states)
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise SchemaError(f"states must be [T x d_s] with T, d_s >= 1, got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise SchemaError("states contain NaN/Inf")
        t_len = states.shape[0]
        if self.actions is not None:
            actions = np.asarray(self.actions, dtype=float)
            if actions.ndim == 1:
                actions = actions[:, None]
            actions = _readonly(actions)
            object.__setattr__(self, "actions", actions)
            if actions.shape[0] != t_len:
                raise SchemaError(f"actions length {actions.shape[0]} != states length {t_len}")
            if not np.all(np.isfinite(actions)):
                raise SchemaError("actions contain NaN/Inf")
        if self.rewards is not None:
            rewards = _readonly(np.asarray(self.rewards, dtype=float).reshape(-1))
            object.__setattr__(self, "rewards", rewards)
            if rewards.shape[0] != t_len:
                raise SchemaError(f"rewards length {rewards.shape[0]} != states length {t_len}")
            if not np.all(np.isfinite(rewards)):
                raise SchemaError("rewards contain NaN/Inf")

    @property
    def t_len(self) -> int:
        return self.states.shape[0]

    @property
    def d_s(self) -> int:
        return self.states.shape[1]

    @property
    def d_a(self) -> int:
        return 0 if self.actions is None else self.actions.shape[1]

    def window(self, start: int, stop: int) -> "Trajectory":
        """Sub-trajectory over [start, stop)."""
        return Trajectory(
            states=self.states[start:stop],
            actions=None if self.actions is None else self.actions[start:stop],
            rewards=None if self.rewards is None else self.rewards[start:stop],
        )


@dataclass(frozen=True)
class Dataset:
    """A list of trajectories agreeing on d_s and d_a."""

    trajectories: tuple[Trajectory, ...]
    source: str = ""
    policy: str = ""

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if not trajs:
            raise SchemaError("dataset contains no trajectories")
        d_s, d_a = trajs[0].d_s, trajs[0].d_a
        for i, tr in enumerate(trajs):
            if tr.d_s != d_s or tr.d_a != d_a:
                raise SchemaError(
                    f"trajectory {i} has dims (d_s={tr.d_s}, d_a={tr.d_a}), expected ({d_s}, {d_a})"
                )

    @property
    def d_s(self) -> int:
        return self.trajectories[0].d_s

    @property
    def d_a(self) -> int:
        return self.trajectories[0].d_a

    def stacked_states(self) -> np.ndarray:
        return np.concatenate([tr.states for tr in self.trajectories], axis=0)


def _load_manifest(path: Path, manifest_path: Path | None) -> dict:
    mp = manifest_path if manifest_path is not None else path.with_suffix(path.suffix + ".manifest.json")
    if not mp.exists():
        raise SchemaError(f"manifest not found: {mp}")
    with open(mp, encoding="utf-8") as f:
        manifest = json.load(f)
    for key in ("state_cols", "episode_col"):
        if key not in manifest:
            raise SchemaError(f"manifest missing required key {key!r}")
    return manifest


def _rows_from_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise SchemaError("csv file has no header row")
        for i, row in enumerate(reader, start=2):
            yield i, row


def _rows_from_jsonl(path: Path):
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield i, json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid json: {e.msg}", i) from e


def load_dataset(
    path,
    format: str = "csv",
    manifest_path=None,
    source: str = "",
    policy: str = "",
) -> Dataset:
    """Load trajectories from a CSV/JSONL file plus its JSON sidecar manifest.

    Manifest keys: state_cols, action_cols (optional), reward_col (optional),
    episode_col. Episode boundaries come only from the episode-id column;
    consecutive rows sharing an id form one trajectory.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format not in ("csv", "jsonl"):
        raise SchemaError(f"unknown format {format!r}")
    manifest = _load_manifest(path, Path(manifest_path) if manifest_path else None)
    state_cols = list(manifest["state_cols"])
    action_cols = list(manifest.get("action_cols") or [])
    reward_col = manifest.get("reward_col")
    episode_col = manifest["episode_col"]

    rows = _rows_from_csv(path) if format == "csv" else _rows_from_jsonl(path)
    episodes: dict[str, dict[str, list]] = {}
    order: list[str] = []
    for line_no, row in rows:
        try:
            ep = str(row[episode_col])
            state = [float(row[c]) for c in state_cols]
            action = [float(row[c]) for c in action_cols] if action_cols else None
            reward = float(row[reward_col]) if reward_col else None
        except KeyError as e:
            raise ParseError(f"missing column {e.args[0]!r}", line_no) from e
        except (TypeError, ValueError) as e:
            raise ParseError(f"bad numeric value ({e})", line_no) from e
        if not all(np.isfinite(state)):
            raise SchemaError(f"line {line_no}: non-finite state value")
        if action is not None and not all(np.isfinite(action)):
            raise SchemaError(f"line {line_no}: non-finite action value")
        if reward is not None and not np.isfinite(reward):
            raise SchemaError(f"line {line_no}: non-finite reward value")
        if ep not in episodes:
            episodes[ep] = {"states": [], "actions": [], "rewards": []}
            order.append(ep)
        episodes[ep]["states"].append(state)
        if action is not None:
            episodes[ep]["actions"].append(action)
        if reward is not None:
            episodes[ep]["rewards"].append(reward)

    if not order:
        raise SchemaError("file contains no data rows")
    trajectories = []
    for ep in order:
        e = episodes[ep]
        trajectories.append(
            Trajectory(
                states=np.array(e["states"]),
                actions=np.array(e["actions"]) if e["actions"] else None,
                rewards=np.array(e["rewards"]) if e["rewards"] else None,
            )
        )
    return Dataset(trajectories=tuple(trajectories), source=source or str(path), policy=policy)


def save_dataset(dataset: Dataset, path, manifest_path=None) -> None:
    """Write a dataset as CSV + sidecar manifest (inverse of load_dataset)."""
    path = Path(path)
    d_s, d_a = dataset.d_s, dataset.d_a
    has_reward = dataset.trajectories[0].rewards is not None
    state_cols = [f"s{i}" for i in range(d_s)]
    action_cols = [f"a{i}" for i in range(d_a)]
    header = ["episode"] + state_cols + action_cols + (["r"] if has_reward else [])
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for ep_id, tr in enumerate(dataset.trajectories):
            for t in range(tr.t_len):
                row = [str(ep_id)] + [repr(float(v)) for v in tr.states[t]]
                if d_a:
                    row += [repr(float(v)) for v in tr.actions[t]]
                if has_reward:
                    row.append(repr(float(tr.rewards[t])))
                writer.writerow(row)
    manifest = {
        "state_cols": state_cols,
        "action_cols": action_cols,
        "reward_col": "r" if has_reward else None,
        "episode_col": "episode",
    }
    mp = Path(manifest_path) if manifest_path else path.with_suffix(path.suffix + ".manifest.json")
    with open(mp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass(frozen=True)
class ScalerPipeline:
    """Two-stage per-dimension scaler: min-max to [0, 1], then standardize.

    Constant dimensions map to 0 in stage 1 and pass through stage 2
    unchanged (flagged in `constant`).
    """

    data_min: np.ndarray
    data_max: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool per dimension

    def __post_init__(self):
        for name in ("data_min", "data_max", "mean", "std"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        flags = np.asarray(self.constant, dtype=bool)
        flags.setflags(write=False)
        object.__setattr__(self, "constant", flags)

    @property
    def n_dims(self) -> int:
        return self.data_min.shape[0]


def fit_scaler(data, dims=None) -> ScalerPipeline:
    """Fit the two-stage pipeline on a sample matrix (or Dataset of states).

    dims selects a subset of feature columns; default all.
    """
    if isinstance(data, Dataset):
        data = data.stacked_states()
    x = np.atleast_2d(np.asarray(data, dtype=float))
    if dims is not None:
        x = x[:, list(dims)]
    if x.shape[0] < 2:
        raise SchemaError(f"need >= 2 samples to fit a scaler, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise SchemaError("scaler input contains NaN/Inf")
    data_min = x.min(axis=0)
    data_max = x.max(axis=0)
    span = data_max - data_min
    constant = span == 0.0
    safe_span = np.where(constant, 1.0, span)
    stage1 = (x - data_min) / safe_span
    mean = stage1.mean(axis=0)
    std = stage1.std(axis=0)  # population std: two points map to {-1, +1}
    # stage 2 is the identity for constant dims
    mean = np.where(constant, 0.0, mean)
    std = np.where(constant | (std == 0.0), 1.0, std)
    return ScalerPipeline(data_min=data_min, data_max=data_max, mean=mean, std=std, constant=constant)


def transform(scaler: ScalerPipeline, matrix) -> np.ndarray:
    x = np.atleast_2d(np.asarray(matrix, dtype=float))
    if x.shape[1] != scaler.n_dims:
        raise SchemaError(f"expected {scaler.n_dims} dims, got {x.shape[1]}")
    span = np.where(scaler.constant, 1.0, scaler.data_max - scaler.data_min)
    stage1 = (x - scaler.data_min) / span
    return (stage1 - scaler.mean) / scaler.std


def inverse(scaler: ScalerPipeline, matrix) -> np.ndarray:
    z = np.atleast_2d(np.asarray(matrix, dtype=float))
    if z.shape[1] != scaler.n_dims:
        raise SchemaError(f"expected {scaler.n_dims} dims, got {z.shape[1]}")
    stage1 = z * scaler.std + scaler.mean
    span = np.where(scaler.constant, 1.0, scaler.data_max - scaler.data_min)
    return stage1 * span + scaler.data_min
