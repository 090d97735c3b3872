"""One-step MLP dynamics model fit on a context trajectory.

A 4x128 ReLU net maps (s_t, a_t) to s_{t+1}, trained with Adam for up to
150 epochs with early stopping on a held-out 10% split.
"""

from __future__ import annotations

import numpy as np

from ..trajdata import Trajectory, fit_scaler, inverse, transform
from .nets import Mlp, mse_loss_grads


class DynamicsModel:
    """Fitted one-step model; predict() works in source units."""

    def __init__(self, net: Mlp, in_scaler, out_scaler, d_s: int, d_a: int):
        self.net = net
        self.in_scaler = in_scaler
        self.out_scaler = out_scaler
        self.d_s = d_s
        self.d_a = d_a

    def predict(self, states, actions) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        x = transform(self.in_scaler, np.concatenate([s, a], axis=1))
        return inverse(self.out_scaler, self.net.forward(x))


def mlp_dynamics_baseline(
    context: Trajectory,
    seed: int = 0,
    epochs: int = 150,
    patience: int = 10,
    hidden=(128, 128, 128, 128),
    lr: float = 1e-3,
    batch_size: int = 64,
    val_fraction: float = 0.1,
) -> DynamicsModel:
    """Fit the dynamics baseline on the transitions of a context trajectory."""
    if context.actions is None:
        raise ValueError("dynamics baseline needs actions in the context")
    n = context.t_len - 1
    if n < 10:
        raise ValueError(f"need at least 10 transitions to split off validation data, got {n}")
    inputs = np.concatenate([context.states[:-1], context.actions[:-1]], axis=1)
    targets = context.states[1:]

    in_scaler = fit_scaler(inputs)
    out_scaler = fit_scaler(targets)
    x = transform(in_scaler, inputs)
    y = transform(out_scaler, targets)

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    net = Mlp([inputs.shape[1], *hidden, targets.shape[1]], "relu", seed=seed)
    best_val = np.inf
    best_params = net.get_flat()
    stale = 0
    for _ in range(epochs):
        perm = rng.permutation(x_train.shape[0])
        for lo in range(0, x_train.shape[0], batch_size):
            idx = perm[lo : lo + batch_size]
            _, grads = mse_loss_grads(net, x_train[idx], y_train[idx])
            net.adam_update(grads, lr)
        val_loss = float(np.mean((net.forward(x_val) - y_val) ** 2))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = net.get_flat()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    net.set_flat(best_params)
    return DynamicsModel(net=net, in_scaler=in_scaler, out_scaler=out_scaler, d_s=context.d_s, d_a=context.d_a)
