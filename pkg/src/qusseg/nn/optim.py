"""Adam and the training hyperparameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser, schedule and stopping settings.

    ``frozen`` lists parameter-name prefixes excluded from updates; their
    batch-norm running statistics are frozen too.
    """
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    lr_drop_factor: float = 0.5
    lr_patience_epochs: int = 4
    early_stop_epochs: int = 20
    max_epochs: int = 200
    rng_seed: int = 0
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 < self.lr_drop_factor < 1:
            raise ConfigError("lr_drop_factor must lie in (0, 1)")
        if self.lr_patience_epochs < 1 or self.early_stop_epochs < 1:
            raise ConfigError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("Adam betas must lie in [0, 1)")

    def is_frozen(self, name):
        return any(name.startswith(prefix) for prefix in self.frozen)


def adam_step(params, grads, state, t, cfg: TrainConfig, lr=None):
    """One bias-corrected Adam update, in place; returns ``(params, state)``.

    ``state`` maps parameter names to ``(m, v)`` pairs and is filled lazily.
    Parameters without a gradient entry are left alone.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.beta1, cfg.beta2
    for name, g in grads.items():
        if cfg.is_frozen(name):
            continue
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m, v = state.get(name, (np.zeros_like(p), np.zeros_like(p)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)
        state[name] = (m, v)
    return params, state
