"""GECO: reconstruction-constrained training with a multiplicative Lagrange multiplier.

Errors are per pixel-channel negative log-likelihoods; the goal uses the same
unit. ``beta`` weights the KL term, so it shrinks while the moving-average
error sits above the goal and grows once the goal is met.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import torch

DEFAULT_GOAL = 0.5655
DEFAULT_EMA_DECAY = 0.99
# 1e-5 per unit of summed 3x64x64 error, rescaled to per pixel-channel error
DEFAULT_STEP_SIZE = 1e-5 * 3 * 64 * 64
DEFAULT_BETA_MIN = 1e-10
DEFAULT_BETA_MAX = 1e2


class TrainingDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GecoState:
    goal: float
    ema_decay: float
    step_size: float
    beta: float = 1.0
    err_ema: float | None = None
    beta_min: float = DEFAULT_BETA_MIN
    beta_max: float = DEFAULT_BETA_MAX
    steps_to_goal: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GecoState":
        return cls(**d)


def geco_init(
    goal: float = DEFAULT_GOAL,
    ema_decay: float = DEFAULT_EMA_DECAY,
    step_size: float = DEFAULT_STEP_SIZE,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
) -> GecoState:
    if not math.isfinite(goal):
        raise ValueError("goal must be finite")
    if not 0.0 < ema_decay < 1.0:
        raise ValueError("ema_decay must lie in (0, 1)")
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if not 0 < beta_min <= 1.0 <= beta_max:
        raise ValueError("need 0 < beta_min <= 1 <= beta_max")
    return GecoState(goal, ema_decay, step_size, beta_min=beta_min, beta_max=beta_max)


def geco_step(state: GecoState, batch_err: float, step: int) -> GecoState:
    """Fold one batch error into the moving average and update ``beta``."""
    batch_err = float(batch_err)
    if not math.isfinite(batch_err):
        raise TrainingDivergenceError(f"non-finite reconstruction error at step {step}")
    if state.err_ema is None:
        ema = batch_err
    else:
        ema = state.ema_decay * state.err_ema + (1.0 - state.ema_decay) * batch_err
    beta = state.beta * math.exp(state.step_size * (state.goal - ema))
    beta = min(max(beta, state.beta_min), state.beta_max)
    steps_to_goal = state.steps_to_goal
    if steps_to_goal is None and ema <= state.goal:
        steps_to_goal = step
    return replace(state, beta=beta, err_ema=ema, steps_to_goal=steps_to_goal)


def total_loss(nll_per_pixel, kl_mask, kl_component, state: GecoState):
    """``nll + beta * (kl_mask + kl_component)`` with beta held constant."""
    beta = state.beta
    if isinstance(beta, torch.Tensor):
        beta = beta.detach()
    return nll_per_pixel + beta * (kl_mask + kl_component)
