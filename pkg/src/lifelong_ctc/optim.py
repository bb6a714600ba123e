"""First-order optimizers over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METHODS = ("sgd", "sgd-momentum", "adam")


@dataclass
class OptimizerConfig:
    method: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = 5.0  # global-norm clipping; None disables

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown optimizer method {self.method!r}, expected one of {METHODS}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")


@dataclass
class OptimizerState:
    step: int = 0
    velocity: np.ndarray | None = None  # sgd-momentum
    m: np.ndarray | None = None  # adam first moment
    v: np.ndarray | None = None  # adam second moment


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def optimizer_step(
    theta: np.ndarray,
    grad: np.ndarray,
    config: OptimizerConfig,
    state: OptimizerState | None = None,
) -> tuple[np.ndarray, OptimizerState]:
    """One update on the flat vector; returns the new vector and carried state."""
    if config.lr <= 0:
        raise ValueError(f"lr must be positive, got {config.lr}")
    if theta.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {theta.shape}")
    state = state or OptimizerState()
    if config.clip_norm is not None:
        grad = clip_by_global_norm(grad, config.clip_norm)

    state.step += 1
    if config.method == "sgd":
        new = theta - config.lr * grad
    elif config.method == "sgd-momentum":
        if state.velocity is None:
            state.velocity = np.zeros_like(theta)
        state.velocity = config.momentum * state.velocity + grad
        new = theta - config.lr * state.velocity
    else:  # adam
        b1, b2 = config.betas
        if state.m is None:
            state.m = np.zeros_like(theta)
            state.v = np.zeros_like(theta)
        state.m = b1 * state.m + (1.0 - b1) * grad
        state.v = b2 * state.v + (1.0 - b2) * grad * grad
        m_hat = state.m / (1.0 - b1 ** state.step)
        v_hat = state.v / (1.0 - b2 ** state.step)
        new = theta - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return new, state
