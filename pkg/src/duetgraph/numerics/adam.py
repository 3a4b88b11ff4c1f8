from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Parameter


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Parameter], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update with decoupled weight decay.

    Parameters missing from ``grads`` are treated as having zero gradient.
    Values are updated in place; the same objects are returned.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = grads.get(p.name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ContractError(f"gradient for {p.name} has shape {g.shape}, expected {p.data.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        if m.shape != p.data.shape:
            raise ContractError(f"moment for {p.name} has shape {m.shape}, expected {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        p.data -= state.lr * update
    return params, state
