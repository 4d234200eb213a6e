"""AdamW over a flat ``name -> array`` parameter mapping, updated in place."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_LR = 2e-5
DEFAULT_WEIGHT_DECAY = 0.05


@dataclass
class AdamWConfig:
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    log_scale_bounds: tuple = (math.log(1e-3), math.log(1.0))
    # decay would pull these toward meaningless targets (unit-length scales, zero quaternion)
    no_decay_suffixes: tuple = ("/log_scales", "/quats")


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def apply_update(params, grads, state, lr=None, config=None):
    """One AdamW step with decoupled weight decay.

    Canonical quaternions are renormalised and log-scales clamped afterwards.
    Parameters without a gradient entry are left alone. Returns ``params``.
    """
    config = config or AdamWConfig()
    lr = config.lr if lr is None else lr
    b1, b2 = config.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        if name not in grads:
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        m = state.m.setdefault(name, np.zeros(p.shape))
        v = state.v.setdefault(name, np.zeros(p.shape))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay and not name.endswith(config.no_decay_suffixes):
            p *= 1.0 - lr * config.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        if name.endswith("/quats"):
            p /= np.linalg.norm(p, axis=-1, keepdims=True)
        elif name.endswith("/log_scales"):
            np.clip(p, *config.log_scale_bounds, out=p)
    return params
