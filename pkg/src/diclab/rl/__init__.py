"""Minimal neural SAC, replay buffers, dynamics baseline, and the
data-augmented training loop."""

from .baseline import DynamicsModel, mlp_dynamics_baseline
from .buffers import ReplayBuffer
from .nets import (
    GaussianPolicy,
    Mlp,
    NumericalError,
    actor_loss_grads,
    critic_loss_grads,
    mlp_train_step,
    mse_loss_grads,
)
from .sac import SacAgent, llm_batch_size, llm_loss_coefficient, sac_update
from .trainer import DiclSacConfig, TrainingLog, dicl_sac_train, sac_train

__all__ = [
    "DynamicsModel",
    "mlp_dynamics_baseline",
    "ReplayBuffer",
    "GaussianPolicy",
    "Mlp",
    "NumericalError",
    "actor_loss_grads",
    "critic_loss_grads",
    "mlp_train_step",
    "mse_loss_grads",
    "SacAgent",
    "llm_batch_size",
    "llm_loss_coefficient",
    "sac_update",
    "DiclSacConfig",
    "TrainingLog",
    "dicl_sac_train",
    "sac_train",
]
