"""Batch operator surface: forecasts, metric suites, bound checks, training,
policy evaluation, and sensitivity matrices, all emitting plot-ready files.

Exit codes: 0 success, 2 config error, 3 backend/transport error,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import boundlab, metrics, policyeval
from .dicl import DiclMethod, rollout
from .envs import PendulumEnv, collect_rollout, pendulum_step, random_torque_policy
from .forecaster import TransportError, icl_forecast, make_backend
from .rl import DiclSacConfig, NumericalError, dicl_sac_train, sac_train
from .trajdata import ParseError, SchemaError, fit_scaler, load_dataset


class ConfigError(Exception):
    """Invalid or missing configuration."""


# key -> (type, required, default); bool must be checked before int
_COMMON_METHOD_KEYS = {
    "method": (str, False, "vicl"),
    "backend": (str, False, "markov_bin"),
    "backend_url": (str, False, ""),
    "smoothing": (float, False, 0.0),
    "window": (int, False, 0),
    "n_components": (int, False, 0),
    "sampling": (str, False, "mode"),
    "include_reward": (bool, False, False),
    "standardize": (bool, False, True),
}

SCHEMAS: dict[str, dict] = {
    "forecast": {
        "dataset": (str, True, None),
        "format": (str, False, "csv"),
        "trajectory": (int, False, 0),
        "context": (int, False, 100),
        "horizon": (int, False, 20),
        "seed": (int, False, 0),
        **_COMMON_METHOD_KEYS,
    },
    "metrics": {
        "dataset": (str, True, None),
        "format": (str, False, "csv"),
        "burn_in": (int, False, 30),
        "n_starts": (int, False, 5),
        "h_max": (int, False, 20),
        "seed": (int, False, 0),
        **_COMMON_METHOD_KEYS,
    },
    "boundcheck": {
        "n_seeds": (int, False, 50),
        "p_grid": (list, False, [0.1, 0.5]),
        "k_grid": (list, False, [1, 3]),
        "T_grid": (list, False, [0, 2]),
        "n_states": (int, False, 4),
        "n_actions": (int, False, 2),
        "gamma": (float, False, 0.9),
        "r_max": (float, False, 1.0),
        "n_rollouts": (int, False, 200_000),
        "seed": (int, False, 0),
    },
    "train": {
        "algorithm": (str, False, "sac"),
        "total_steps": (int, False, 10_000),
        "episode_length": (int, False, 200),
        "batch_size": (int, False, 64),
        "update_frequency": (int, False, 200),
        "learning_starts": (int, False, 1_000),
        "gamma": (float, False, 0.99),
        "lr": (float, False, 3e-4),
        "tau": (float, False, 0.005),
        "llm_proportion": (float, False, 0.0),
        "llm_learning_starts": (int, False, 2_000),
        "llm_learning_frequency": (int, False, 16),
        "min_context": (int, False, 1),
        "max_context": (int, False, 198),
        "seed": (int, False, 0),
        **_COMMON_METHOD_KEYS,
    },
    "policyeval": {
        "dataset": (str, True, None),
        "format": (str, False, "csv"),
        "trajectory": (int, False, 0),
        "context_len": (int, False, 500),
        "model_horizons": (list, False, [100, 200, 500]),
        "episode_len": (int, False, 1000),
        "seed": (int, False, 0),
        **_COMMON_METHOD_KEYS,
    },
    "sensitivity": {
        "ref_state": (list, False, [0.0, 0.0]),
        "ref_action": (list, False, [0.0]),
        "perturbation": (float, False, 0.10),
        "scale_steps": (int, False, 200),
        "seed": (int, False, 0),
    },
}


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        return json.loads(text)
    try:
        import tomllib  # py>=3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text)


def validate_config(command: str, raw: dict) -> dict:
    schema = SCHEMAS[command]
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r} for command {command!r}")
    resolved = {}
    for key, (typ, required, default) in schema.items():
        if key in raw:
            value = raw[key]
            if typ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if typ is int and isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be {typ.__name__}, got bool")
            if not isinstance(value, typ):
                raise ConfigError(f"config key {key!r} must be {typ.__name__}, got {type(value).__name__}")
            resolved[key] = value
        elif required:
            raise ConfigError(f"missing required config key {key!r} for command {command!r}")
        else:
            resolved[key] = default
    return resolved


def _build_method(cfg: dict) -> DiclMethod:
    settings = {}
    if cfg["backend"] == "markov_bin":
        settings["smoothing"] = cfg["smoothing"]
    elif cfg["backend"] == "gaussian_context":
        if cfg["window"]:
            settings["window"] = cfg["window"]
    elif cfg["backend"] == "llm_http":
        if not cfg["backend_url"]:
            raise ConfigError("missing required config key 'backend_url' for the llm_http backend")
        settings["endpoint"] = cfg["backend_url"]
    else:
        raise ConfigError(f"unknown backend {cfg['backend']!r}")
    backend = make_backend(cfg["backend"], **settings)
    return DiclMethod(
        kind=cfg["method"],
        backend=backend,
        include_reward=cfg["include_reward"],
        n_components=cfg["n_components"] or None,
        sampling=cfg["sampling"],
        standardize=cfg["standardize"],
    )


def _write_resolved(cfg: dict, out: Path, command: str) -> None:
    with open(out / "resolved_config.json", "w", encoding="utf-8") as f:
        json.dump({"command": command, **cfg}, f, sort_keys=True, indent=2)
        f.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def cmd_forecast(cfg: dict, out: Path) -> int:
    dataset = load_dataset(cfg["dataset"], format=cfg["format"])
    traj = dataset.trajectories[cfg["trajectory"]]
    context_len = min(cfg["context"], traj.t_len)
    if context_len < 2:
        raise ConfigError("config key 'context' must leave at least 2 context steps")
    method = _build_method(cfg)
    rng = np.random.default_rng(cfg["seed"])
    results = rollout(traj.window(0, context_len), cfg["horizon"], method, rng=rng)

    d_s = traj.d_s
    header = ["step"]
    for tag in ("pred", "mean", "lower", "upper"):
        header += [f"{tag}_s{j}" for j in range(d_s)]
    rows = []
    for i, r in enumerate(results):
        row = [context_len + i]
        for vec in (r.state, r.state_mean, r.state_lower, r.state_upper):
            row += [float(v) for v in vec]
        rows.append(row)
    _write_csv(out / "predictions.csv", header, rows)

    dists = [
        {
            "step": context_len + i,
            "series": [
                {"mean": d.mean(), "mode": d.mode(), "variance": d.variance(), "probs": d.probs.tolist()}
                for d in r.distributions
            ],
        }
        for i, r in enumerate(results)
    ]
    with open(out / "distributions.json", "w", encoding="utf-8") as f:
        json.dump(dists, f, sort_keys=True)
        f.write("\n")
    print(f"forecast: wrote {len(rows)} steps to {out}")
    return 0


def cmd_metrics(cfg: dict, out: Path) -> int:
    dataset = load_dataset(cfg["dataset"], format=cfg["format"])
    method = _build_method(cfg)
    h_max, burn_in = cfg["h_max"], cfg["burn_in"]
    rng = np.random.default_rng(cfg["seed"])

    all_preds, all_truths = [], []
    per_dim_dists: list[list] = [[] for _ in range(dataset.d_s)]
    per_dim_truths: list[list] = [[] for _ in range(dataset.d_s)]
    for traj in dataset.trajectories:
        last_start = traj.t_len - h_max
        if last_start <= burn_in:
            raise ConfigError(
                f"config key 'burn_in'/'h_max' leave no start points in a trajectory of length {traj.t_len}"
            )
        starts = np.unique(np.linspace(burn_in, last_start, cfg["n_starts"], dtype=int))
        preds, truths = metrics.rollout_windows(traj, method, h_max, starts, rng=rng)
        all_preds.append(preds)
        all_truths.append(truths)
        for j in range(traj.d_s):
            positions = list(range(burn_in, traj.t_len - 1))
            dists = icl_forecast(traj.states[:, j], backend=method.backend, enc=method.enc, positions=positions)
            per_dim_dists[j].extend(dists)
            per_dim_truths[j].extend(traj.states[np.array(positions) + 1, j])

    scaler = fit_scaler(dataset.stacked_states())
    report = metrics.multistep_mse(np.concatenate(all_preds), np.concatenate(all_truths), scaler)
    _write_csv(
        out / "mse.csv",
        ["dim"] + [f"h{h}" for h in report.horizons],
        [[j] + [float(v) for v in report.mse[j]] for j in range(report.mse.shape[0])],
    )

    rel_rows = []
    ks_values = {}
    for j in range(dataset.d_s):
        rel = metrics.reliability_diagram(per_dim_dists[j], np.array(per_dim_truths[j]))
        ks_values[f"s{j}"] = rel.ks
        for p, freq in zip(rel.grid, rel.frequencies):
            rel_rows.append([j, float(p), float(freq)])
    _write_csv(out / "reliability.csv", ["dim", "p", "frequency"], rel_rows)
    ks_values["mean"] = float(np.mean(list(ks_values.values())))
    with open(out / "ks.json", "w", encoding="utf-8") as f:
        json.dump(ks_values, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"metrics: wrote mse.csv, reliability.csv, ks.json to {out}")
    return 0


def cmd_boundcheck(cfg: dict, out: Path) -> int:
    cells = boundlab.theorem1_sweep(
        n_seeds=cfg["n_seeds"],
        p_grid=tuple(cfg["p_grid"]),
        k_grid=tuple(int(k) for k in cfg["k_grid"]),
        T_grid=tuple(int(t) for t in cfg["T_grid"]),
        n_states=cfg["n_states"],
        n_actions=cfg["n_actions"],
        gamma=cfg["gamma"],
        r_max=cfg["r_max"],
        n_rollouts=cfg["n_rollouts"],
        base_seed=cfg["seed"],
    )
    with open(out / "bound_report.json", "w", encoding="utf-8") as f:
        json.dump({"cells": cells, "all_hold": all(c["holds"] for c in cells)}, f, sort_keys=True)
        f.write("\n")
    print(f"{'seed':>6} {'p':>5} {'k':>3} {'T':>3} {'lhs':>10} {'rhs':>10} {'slack':>10} hold")
    for c in cells:
        print(
            f"{c['seed']:>6} {c['p']:>5.2f} {c['k']:>3d} {c['T']:>3d} "
            f"{c['lhs']:>10.5f} {c['rhs']:>10.5f} {c['slack']:>10.5f} {c['holds']}"
        )
    n_bad = sum(not c["holds"] for c in cells)
    print(f"boundcheck: {len(cells) - n_bad}/{len(cells)} cells hold")
    return 0


def cmd_train(cfg: dict, out: Path) -> int:
    if cfg["algorithm"] not in ("sac", "dicl_sac"):
        raise ConfigError(f"config key 'algorithm' must be 'sac' or 'dicl_sac', got {cfg['algorithm']!r}")
    train_cfg = DiclSacConfig(
        total_steps=cfg["total_steps"],
        episode_length=cfg["episode_length"],
        batch_size=cfg["batch_size"],
        update_frequency=cfg["update_frequency"],
        learning_starts=cfg["learning_starts"],
        gamma=cfg["gamma"],
        lr=cfg["lr"],
        tau=cfg["tau"],
        llm_proportion=cfg["llm_proportion"],
        llm_learning_starts=cfg["llm_learning_starts"],
        llm_learning_frequency=cfg["llm_learning_frequency"],
        min_context=cfg["min_context"],
        max_context=cfg["max_context"],
        seed=cfg["seed"],
    )
    env = PendulumEnv()
    if cfg["algorithm"] == "dicl_sac":
        method = _build_method(cfg)
        log = dicl_sac_train(env, train_cfg, method)
    else:
        log = sac_train(env, train_cfg)

    _write_csv(
        out / "training_log.csv",
        ["step", "episodic_return", "critic_loss", "actor_loss", "alpha", "llm_buffer"],
        [
            [r["step"], r["episodic_return"], r["critic_loss"], r["actor_loss"], r["alpha"], r["llm_buffer"]]
            for r in log.rows
        ],
    )
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    agent = log.agent
    for name, net in (("actor", agent.actor.net), ("q1", agent.q1), ("q2", agent.q2)):
        np.save(ckpt / f"{name}.npy", net.get_flat())
    returns = log.episode_returns
    tail = float(np.mean(returns[-10:])) if returns else float("nan")
    print(f"train: {len(returns)} episodes, final 10-episode mean return {tail:.1f}")
    return 0


def cmd_policyeval(cfg: dict, out: Path) -> int:
    dataset = load_dataset(cfg["dataset"], format=cfg["format"])
    traj = dataset.trajectories[cfg["trajectory"]]
    method = _build_method(cfg)
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for k in cfg["model_horizons"]:
        spec = policyeval.HybridEvalSpec(
            context_len=cfg["context_len"], model_horizon=int(k), episode_len=cfg["episode_len"]
        )
        res = policyeval.hybrid_value(traj, spec, method, rng=rng)
        rows.append([cfg["context_len"], int(k), res.v_hat, res.v_true, res.rel_err, res.degenerate])
    _write_csv(out / "policyeval.csv", ["T", "k", "v_hat", "v_true", "rel_err", "degenerate"], rows)
    print(f"policyeval: wrote {len(rows)} rows to {out}")
    return 0


def cmd_sensitivity(cfg: dict, out: Path) -> int:
    traj = collect_rollout(PendulumEnv(), random_torque_policy, cfg["scale_steps"], seed=cfg["seed"])
    # physical-state transition: inputs (theta, theta_dot, torque)
    thetas = np.arctan2(traj.states[:, 1], traj.states[:, 0])
    state_matrix = np.column_stack([thetas, traj.states[:, 2]])
    scales = np.concatenate([state_matrix.std(axis=0), traj.actions.std(axis=0)])

    def step_fn(s, a):
        return pendulum_step(s, a)[0]

    matrix = metrics.sensitivity_matrix(
        step_fn, np.asarray(cfg["ref_state"], dtype=float), np.asarray(cfg["ref_action"], dtype=float),
        scales, perturbation=cfg["perturbation"],
    )
    header = ["output"] + [f"in_s{j}" for j in range(len(cfg["ref_state"]))] + [
        f"in_a{j}" for j in range(len(cfg["ref_action"]))
    ]
    _write_csv(out / "sensitivity.csv", header, [[i] + [float(v) for v in matrix[i]] for i in range(matrix.shape[0])])
    print(f"sensitivity: wrote {matrix.shape} matrix to {out}")
    return 0


_COMMANDS = {
    "forecast": cmd_forecast,
    "metrics": cmd_metrics,
    "boundcheck": cmd_boundcheck,
    "train": cmd_train,
    "policyeval": cmd_policyeval,
    "sensitivity": cmd_sensitivity,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="diclab", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="worker cap for parallel sections")
    parser.add_argument("--backend-url", help="override the llm_http endpoint")
    args = parser.parse_args(argv)

    try:
        raw = load_config(args.config) if args.config else {}
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.backend_url is not None:
            raw["backend_url"] = args.backend_url
        cfg = validate_config(args.command, raw)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_resolved(cfg, out, args.command)
        return _COMMANDS[args.command](cfg, out)
    except (ConfigError, SchemaError, ParseError, FileNotFoundError, KeyError, IndexError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TransportError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
