"""AdamW with decoupled weight decay and the cosine warm-restart schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mmvp.blocks import Params
from mmvp.errors import OptimizerError


def lr_schedule(epoch: int, cfg) -> float:
    """Cosine decay from lr_max to lr_min, restarting every ``restart_period`` epochs."""
    t = epoch % cfg.restart_period
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t / cfg.restart_period))


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def adamw_step(params: Params, state: AdamState, lr: float, cfg) -> None:
    """One update of every parameter from its ``.grad``.

    theta <- theta - lr * wd * theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise OptimizerError(f"no gradient for parameter {missing[0]!r}")

    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        update = lr * cfg.weight_decay * p.data + lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        p.data = (p.data - update).astype(p.data.dtype)
        state.m[name] = m.astype(p.data.dtype)
        state.v[name] = v.astype(p.data.dtype)


def zero_grads(params: Params) -> None:
    for p in params.values():
        p.zero_grad()
