# models/optim.py

"""Adam with decoupled weight decay."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from errors import DivergenceError
from models.params import GradientBuffer, ModelParams

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    step: int
    m: ModelParams
    v: ModelParams

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(step=0, m=params.zeros_like(), v=params.zeros_like())


def optimizer_step(
    params: ModelParams,
    grads: GradientBuffer,
    state: Optional[AdamState] = None,
    lr: float = 1e-4,
    weight_decay: float = 1e-4,
) -> Tuple[ModelParams, AdamState]:
    """
    One AdamW update.

    Weight decay shrinks the parameters by (1 - lr * weight_decay) before the
    bias-corrected moment step and never enters the moment estimates.

    Returns:
        (new_params, new_state); the inputs are left untouched

    Raises:
        DivergenceError: If any gradient entry is not finite
    """
    bad = grads.first_non_finite()
    if bad is not None:
        step = state.step + 1 if state is not None else 1
        logger.error("non-finite gradient in %s", bad)
        raise DivergenceError("diverged", step=step)
    if state is None:
        state = AdamState.zeros_like(params)

    t = state.step + 1
    new_params = params.copy()
    new_m = state.m.copy()
    new_v = state.v.copy()
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for name, g in grads.items():
        m = BETA1 * state.m[name] + (1.0 - BETA1) * g
        v = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        new_m[name] = m
        new_v[name] = v
        p = params[name] * (1.0 - lr * weight_decay)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + EPS)
    return new_params, AdamState(step=t, m=new_m, v=new_v)
