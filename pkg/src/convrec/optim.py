"""Adam with the AMSGrad correction, written against plain ndarray params.

A module-level step counter records every parameter update made anywhere in
the process; serving code paths are asserted to leave it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

STEP_COUNT = 0


def step_count() -> int:
    """Total optimizer steps taken in this process."""
    return STEP_COUNT


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    v_hat_max: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            v_hat_max={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_amsgrad_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place update. The second-moment estimate is replaced by its
    elementwise running max before the denominator (AMSGrad)."""
    global STEP_COUNT
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError("betas must lie in [0, 1)")
    if set(params) != set(grads):
        missing = set(params).symmetric_difference(grads)
        raise ShapeError(f"params/grads key mismatch: {sorted(missing)}")
    state.t += 1
    t = state.t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {theta.shape} "
                             f"for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        np.maximum(state.v_hat_max[name], v_hat, out=state.v_hat_max[name])
        theta -= lr * m_hat / (np.sqrt(state.v_hat_max[name]) + eps)
    STEP_COUNT += 1


class AdamAmsgrad:
    """Stateful wrapper around adam_amsgrad_step."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.for_params(params)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        adam_amsgrad_step(self.params, grads, self.state, self.lr,
                          self.beta1, self.beta2, self.eps)
