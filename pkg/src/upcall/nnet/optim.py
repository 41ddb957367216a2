from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 100
    lr: float = 0.001
    decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    folds: int = 5
    val_fraction: float = 0.15

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.folds < 1:
            raise ValueError("batch_size, epochs and folds must be positive")
        if not (self.lr > 0 and self.decay >= 0 and self.eps > 0):
            raise ValueError("lr and eps must be positive, decay non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, weights: dict) -> AdamState:
        return cls({k: np.zeros_like(a) for k, a in weights.items()},
                   {k: np.zeros_like(a) for k, a in weights.items()}, 0)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Inverse-time decay: lr / (1 + decay * step), with step counted from 0."""
    return cfg.lr / (1.0 + cfg.decay * step)


def adam_step(weights: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; ``weights`` and ``state`` are updated in place and returned."""
    if set(grads) != set(weights):
        raise DataError("gradient keys do not match parameters")
    if not state.m:
        state.m = {k: np.zeros_like(a) for k, a in weights.items()}
        state.v = {k: np.zeros_like(a) for k, a in weights.items()}
    lr = learning_rate(cfg, state.step)
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, w in weights.items():
        g = grads[k]
        if g.shape != w.shape:
            raise DataError(f"gradient for {k} has shape {g.shape}, parameter {w.shape}")
        m, v = state.m[k], state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        w -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(w.dtype, copy=False)
    return weights, state
