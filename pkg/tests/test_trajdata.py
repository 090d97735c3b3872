import json

import numpy as np
import pytest

from diclab.trajdata import (
    Dataset,
    ParseError,
    SchemaError,
    ScalerPipeline,
    Trajectory,
    fit_scaler,
    inverse,
    load_dataset,
    save_dataset,
    transform,
)


def write_csv(tmp_path, rows, manifest, name="data.csv"):
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    mpath = tmp_path / (name + ".manifest.json")
    mpath.write_text(json.dumps(manifest), encoding="utf-8")
    return path


MANIFEST = {
    "state_cols": ["s0", "s1"],
    "action_cols": ["a0"],
    "reward_col": "r",
    "episode_col": "episode",
}


def test_two_row_csv(tmp_path):
    path = write_csv(
        tmp_path,
        ["episode,s0,s1,a0,r", "0,1.0,2.0,0.5,1.0", "0,1.1,2.1,0.6,0.9"],
        MANIFEST,
    )
    ds = load_dataset(path)
    assert len(ds.trajectories) == 1
    tr = ds.trajectories[0]
    assert tr.t_len == 2 and tr.d_s == 2 and tr.d_a == 1
    np.testing.assert_allclose(tr.states, [[1.0, 2.0], [1.1, 2.1]])
    np.testing.assert_allclose(tr.rewards, [1.0, 0.9])


def test_nan_state_rejected(tmp_path):
    path = write_csv(tmp_path, ["episode,s0,s1,a0,r", "0,nan,2.0,0.5,1.0"], MANIFEST)
    with pytest.raises(SchemaError):
        load_dataset(path)


def test_malformed_row_reports_line(tmp_path):
    path = write_csv(
        tmp_path,
        ["episode,s0,s1,a0,r", "0,1.0,2.0,0.5,1.0", "0,oops,2.0,0.5,1.0"],
        MANIFEST,
    )
    with pytest.raises(ParseError) as err:
        load_dataset(path)
    assert err.value.line == 3


def test_missing_manifest(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("episode,s0\n0,1.0\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_dataset(path)


def test_episode_splitting(tmp_path):
    rows = ["episode,s0,s1,a0,r"]
    for ep in range(3):
        for t in range(4):
            rows.append(f"{ep},{t}.0,{t}.5,0.1,0.2")
    path = write_csv(tmp_path, rows, MANIFEST)
    ds = load_dataset(path)
    assert len(ds.trajectories) == 3
    assert all(tr.t_len == 4 for tr in ds.trajectories)


def test_large_export_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    traj = Trajectory(
        states=rng.standard_normal((1000, 17)),
        actions=rng.standard_normal((1000, 6)),
        rewards=rng.standard_normal(1000),
    )
    ds = Dataset(trajectories=(traj,))
    path = tmp_path / "big.csv"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.d_s == 17 and loaded.d_a == 6
    np.testing.assert_array_equal(loaded.trajectories[0].states, traj.states)
    np.testing.assert_array_equal(loaded.trajectories[0].actions, traj.actions)
    np.testing.assert_array_equal(loaded.trajectories[0].rewards, traj.rewards)


def test_jsonl_loading(tmp_path):
    path = tmp_path / "data.jsonl"
    lines = [json.dumps({"episode": 0, "s0": float(t), "s1": 2.0, "a0": 0.1, "r": 0.5}) for t in range(3)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (tmp_path / "data.jsonl.manifest.json").write_text(json.dumps(MANIFEST), encoding="utf-8")
    ds = load_dataset(path, format="jsonl")
    assert ds.trajectories[0].t_len == 3


def test_load_determinism(tmp_path):
    rng = np.random.default_rng(3)
    traj = Trajectory(states=rng.standard_normal((50, 3)))
    path = tmp_path / "d.csv"
    save_dataset(Dataset(trajectories=(traj,)), path)
    a = load_dataset(path)
    b = load_dataset(path)
    np.testing.assert_array_equal(a.trajectories[0].states, b.trajectories[0].states)


def test_dataset_dim_mismatch():
    t1 = Trajectory(states=np.zeros((3, 2)))
    t2 = Trajectory(states=np.zeros((3, 4)))
    with pytest.raises(SchemaError):
        Dataset(trajectories=(t1, t2))


def test_trajectory_validation():
    with pytest.raises(SchemaError):
        Trajectory(states=np.array([[np.inf, 1.0]]))
    with pytest.raises(SchemaError):
        Trajectory(states=np.zeros((3, 2)), rewards=np.zeros(2))
    tr = Trajectory(states=np.zeros((3, 2)))
    with pytest.raises(ValueError):
        tr.states[0, 0] = 5.0  # immutable


def test_trajectory_window():
    tr = Trajectory(states=np.arange(12.0).reshape(6, 2), rewards=np.arange(6.0))
    w = tr.window(1, 4)
    assert w.t_len == 3
    np.testing.assert_allclose(w.rewards, [1.0, 2.0, 3.0])


def test_two_point_scaler():
    scaler = fit_scaler(np.array([[0.0], [10.0]]))
    assert scaler.data_min[0] == 0.0 and scaler.data_max[0] == 10.0
    scaled = transform(scaler, np.array([[0.0], [10.0]]))
    np.testing.assert_allclose(scaled[:, 0], [-1.0, 1.0])


def test_midpoint_maps_to_zero():
    scaler = fit_scaler(np.array([[0.0], [10.0]]))
    assert transform(scaler, np.array([[5.0]]))[0, 0] == pytest.approx(0.0)


def test_constant_dimension_flagged():
    scaler = fit_scaler(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
    assert scaler.constant[0] and not scaler.constant[1]
    z = transform(scaler, np.array([[5.0, 2.0]]))
    back = inverse(scaler, z)
    np.testing.assert_allclose(back, [[5.0, 2.0]], atol=1e-12)


def test_round_trip_identity():
    rng = np.random.default_rng(1)
    data = rng.uniform(-5, 5, size=(100, 5))
    scaler = fit_scaler(data)
    np.testing.assert_allclose(inverse(scaler, transform(scaler, data)), data, atol=1e-10)


def test_scaled_moments():
    rng = np.random.default_rng(2)
    data = rng.uniform(0, 100, size=(500, 4))
    scaler = fit_scaler(data)
    z = transform(scaler, data)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1.0) < 1e-9)


def test_scaler_requires_two_samples():
    with pytest.raises(SchemaError):
        fit_scaler(np.array([[1.0, 2.0]]))


def test_scaler_dim_selector():
    data = np.array([[0.0, 5.0, 9.0], [10.0, 6.0, 11.0]])
    scaler = fit_scaler(data, dims=[0, 2])
    assert scaler.n_dims == 2
    with pytest.raises(SchemaError):
        transform(scaler, data)
