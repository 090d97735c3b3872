"""Small dense networks in float64 numpy with hand-derived gradients.

Keeping the nets and their Adam state explicit makes training runs exactly
reproducible and lets every loss gradient be checked against central finite
differences.
"""

from __future__ import annotations

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_SQUASH_EPS = 1e-6


class NumericalError(RuntimeError):
    """A loss or gradient became non-finite."""


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (x > 0.0).astype(float)
    if name == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if name == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Dense net with hidden activations and a linear head.

    Weights, biases, and the Adam moments (m, v, step) are plain arrays.
    """

    def __init__(self, sizes, activation: str = "relu", seed: int = 0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        _act(activation, np.zeros(1))  # validate the tag
        self.sizes = sizes
        self.activation = activation
        rng = np.random.default_rng(seed)
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.W.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.b.append(rng.uniform(-bound, bound, size=fan_out))
        self.m = [np.zeros_like(p) for p in self.W + self.b]
        self.v = [np.zeros_like(p) for p in self.W + self.b]
        self.step = 0

    @property
    def n_layers(self) -> int:
        return len(self.W)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping pre-activations for backprop."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pre = []
        post = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.W[i] + self.b[i]
            pre.append(z)
            h = _act(self.activation, z) if i < self.n_layers - 1 else z
            post.append(h)
        return h, (pre, post)

    def backward(self, cache, grad_out: np.ndarray):
        """Backprop a gradient at the output; returns (param_grads, grad_in).

        param_grads matches the W + b layout used by adam_update.
        """
        pre, post = cache
        gW = [None] * self.n_layers
        gb = [None] * self.n_layers
        g = np.asarray(grad_out, dtype=float)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * _act_grad(self.activation, pre[i])
            gW[i] = post[i].T @ g
            gb[i] = g.sum(axis=0)
            g = g @ self.W[i].T
        return gW + gb, g

    def params(self) -> list[np.ndarray]:
        return self.W + self.b

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.params():
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def adam_update(self, grads, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.step += 1
        t = self.step
        for p, g, m, v in zip(self.params(), grads, self.m, self.v):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            m_hat = m / (1 - beta1**t)
            v_hat = v / (1 - beta2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes, self.activation, seed=0)
        for dst, src in zip(other.params(), self.params()):
            dst[...] = src
        other.m = [a.copy() for a in self.m]
        other.v = [a.copy() for a in self.v]
        other.step = self.step
        return other

    def polyak_from(self, source: "Mlp", tau: float) -> None:
        for dst, src in zip(self.params(), source.params()):
            dst *= 1.0 - tau
            dst += tau * src


def mse_loss_grads(net: Mlp, x, y):
    """Mean squared error over all output elements."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    pred, cache = net.forward_cached(x)
    diff = pred - y
    loss = float(np.mean(diff**2))
    grads, _ = net.backward(cache, 2.0 * diff / diff.size)
    return loss, grads


def critic_loss_grads(critic: Mlp, inputs, targets):
    """MSE between Q(inputs) and the (fixed) bootstrap targets."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 1)
    q, cache = critic.forward_cached(inputs)
    diff = q - targets
    loss = float(np.mean(diff**2))
    grads, _ = critic.backward(cache, 2.0 * diff / diff.size)
    return loss, grads


class GaussianPolicy:
    """Squashed-Gaussian actor: the net emits [mu | log_std_raw] and actions
    are tanh(mu + std * eps) scaled to the control bounds."""

    def __init__(self, obs_dim: int, action_dim: int, hidden=(256, 256), action_scale=1.0, action_bias=0.0, seed: int = 0):
        self.net = Mlp([obs_dim, *hidden, 2 * action_dim], "relu", seed=seed)
        self.action_dim = action_dim
        self.action_scale = np.broadcast_to(np.asarray(action_scale, dtype=float), (action_dim,)).copy()
        self.action_bias = np.broadcast_to(np.asarray(action_bias, dtype=float), (action_dim,)).copy()

    def _heads(self, obs):
        out, cache = self.net.forward_cached(obs)
        mu = out[:, : self.action_dim]
        raw = out[:, self.action_dim :]
        # smooth clamp keeps log_std in [LOG_STD_MIN, LOG_STD_MAX]
        log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (np.tanh(raw) + 1.0)
        return mu, raw, log_std, cache

    def sample(self, obs, eps):
        """Actions and log-probs for fixed standard-normal draws eps."""
        mu, _, log_std, _ = self._heads(obs)
        std = np.exp(log_std)
        u = mu + std * eps
        t = np.tanh(u)
        action = t * self.action_scale + self.action_bias
        log_prob = (
            -0.5 * eps**2
            - log_std
            - 0.5 * np.log(2.0 * np.pi)
            - np.log(self.action_scale * (1.0 - t**2) + _SQUASH_EPS)
        ).sum(axis=1)
        return action, log_prob

    def mean_action(self, obs):
        mu, _, _, _ = self._heads(obs)
        return np.tanh(mu) * self.action_scale + self.action_bias


def actor_loss_grads(policy: GaussianPolicy, obs, eps, critic1: Mlp, critic2: Mlp, alpha: float):
    """SAC policy objective mean(alpha * log_pi - min Q) with fixed critics
    and fixed noise; returns (loss, grads, mean_log_pi)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    n = obs.shape[0]
    scale = policy.action_scale

    mu, raw, log_std, cache = policy._heads(obs)
    std = np.exp(log_std)
    u = mu + std * eps
    t = np.tanh(u)
    one_m_t2 = 1.0 - t * t
    action = t * scale + policy.action_bias

    log_prob = (
        -0.5 * eps**2 - log_std - 0.5 * np.log(2.0 * np.pi) - np.log(scale * one_m_t2 + _SQUASH_EPS)
    ).sum(axis=1)

    sa = np.concatenate([obs, action], axis=1)
    q1, cache1 = critic1.forward_cached(sa)
    q2, cache2 = critic2.forward_cached(sa)
    q1 = q1[:, 0]
    q2 = q2[:, 0]
    q_min = np.minimum(q1, q2)
    loss = float(np.mean(alpha * log_prob - q_min))

    # dQ_min/da via the active critic's input gradient
    take1 = (q1 <= q2).astype(float)[:, None]
    _, gin1 = critic1.backward(cache1, take1)
    _, gin2 = critic2.backward(cache2, 1.0 - take1)
    dq_da = (gin1 + gin2)[:, obs.shape[1] :]

    # d log_pi / du through the squash correction
    dlogpi_du = 2.0 * scale * t * one_m_t2 / (scale * one_m_t2 + _SQUASH_EPS)
    da_du = scale * one_m_t2

    g_u = (alpha * dlogpi_du - dq_da * da_du) / n
    g_mu = g_u
    g_log_std = g_u * std * eps + (alpha * -1.0) / n  # -1 from the entropy term
    g_raw = g_log_std * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - np.tanh(raw) ** 2)

    grad_out = np.concatenate([g_mu, g_raw], axis=1)
    grads, _ = policy.net.backward(cache, grad_out)
    return loss, grads, float(np.mean(log_prob))


def mlp_train_step(net, batch, loss: str, lr: float = 3e-4) -> float:
    """One Adam step for the given loss kind; returns the loss value.

    loss kinds:
      * "mse":        net is an Mlp, batch = (x, y)
      * "sac_critic": net is an Mlp over [obs | action], batch = (inputs, targets)
      * "sac_actor":  net is a GaussianPolicy,
                      batch = (obs, eps, critic1, critic2, alpha)
    """
    if loss == "mse":
        x, y = batch
        value, grads = mse_loss_grads(net, x, y)
        target_net = net
    elif loss == "sac_critic":
        inputs, targets = batch
        value, grads = critic_loss_grads(net, inputs, targets)
        target_net = net
    elif loss == "sac_actor":
        obs, eps, critic1, critic2, alpha = batch
        value, grads, _ = actor_loss_grads(net, obs, eps, critic1, critic2, alpha)
        target_net = net.net
    else:
        raise ValueError(f"unknown loss kind {loss!r}")
    if not np.isfinite(value):
        raise NumericalError(f"{loss} loss is not finite: {value}")
    target_net.adam_update(grads, lr)
    return value
