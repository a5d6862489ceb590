"""Adam over flat parameter vectors.

This is the only fitting engine in the package; both the deterrence models
and the GAM minimize through :func:`minimize`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class OptimizationError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iterations: int = 20_000
    tolerance: float = 1e-9
    # loss change is measured between iterates this many steps apart
    window: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.beta1 < 1:
            raise ValueError("beta1 must lie in [0, 1)")
        if not 0 <= self.beta2 < 1:
            raise ValueError("beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class AdamState:
    x: np.ndarray
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    t: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        for name in ("m", "v"):
            val = getattr(self, name)
            val = np.zeros_like(x) if val is None else np.array(val, dtype=float)
            if val.shape != x.shape:
                raise ValueError(f"{name} has shape {val.shape}, expected {x.shape}")
            object.__setattr__(self, name, val)
        if self.t < 0:
            raise ValueError("t must be >= 0")


def adam_step(state: AdamState, gradient, config: AdamConfig) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    g = np.asarray(gradient, dtype=float)
    if g.shape != state.x.shape:
        raise ValueError(f"gradient has shape {g.shape}, expected {state.x.shape}")
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise OptimizationError(
            f"non-finite gradient entry at index {bad} (step {state.t + 1})",
            iteration=state.t + 1,
        )
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    x = state.x - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return AdamState(x=x, m=m, v=v, t=t)


def minimize(
    loss_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    x0,
    config: AdamConfig | None = None,
    callback: Callable[[AdamState], None] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Run Adam from ``x0`` until ``max_iterations`` or convergence.

    Convergence is declared once the loss changed by less than
    ``config.tolerance`` over the last ``config.window`` iterations.

    Returns
    -------
    x : ndarray
        Final iterate.
    trace : list of float
        Loss at ``x0`` followed by the loss after every step.
    """
    config = config or AdamConfig()
    state = AdamState(x=np.asarray(x0, dtype=float))
    loss = float(loss_fn(state.x))
    if not np.isfinite(loss):
        raise OptimizationError("loss is not finite at the initial point", iteration=0)
    trace = [loss]
    w = config.window
    for it in range(1, config.max_iterations + 1):
        state = adam_step(state, grad_fn(state.x), config)
        loss = float(loss_fn(state.x))
        if not np.isfinite(loss):
            raise OptimizationError(f"loss became non-finite at iteration {it}", iteration=it)
        trace.append(loss)
        if callback is not None:
            callback(state)
        if len(trace) > w and abs(trace[-1 - w] - trace[-1]) < config.tolerance:
            break
    return state.x, trace
