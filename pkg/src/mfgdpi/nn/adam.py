"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, weight_decay: float = 0.0
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; weight decay acts on the parameters directly.

    ``params`` is updated in place and also returned.
    """
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1**state.step)
    v_hat = state.v / (1 - b2**state.step)
    if weight_decay:
        params -= lr * weight_decay * params
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
