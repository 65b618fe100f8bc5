# gradcheck.py

"""
Finite-difference check of the full model gradient.

The matching is computed once at the starting parameters and then held
fixed, so the loss is a smooth function of the parameters around that point.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from assignment import Assignment
from core import HyperParams, Scene
from models.network import backward
from models.params import GradientBuffer, ModelParams
from synth import SynthConfig, generate_scene
from train import scene_loss

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
TOLERANCE = 1e-4
COMPONENTS = ("l_v", "l_s", "l_u", "l_c", "l_b", "l_o", "l_a")
_LAMBDAS = {"l_v": "lambda_v", "l_s": "lambda_s", "l_u": "lambda_u", "l_c": "lambda_c",
            "l_b": "lambda_b", "l_o": "lambda_o", "l_a": "lambda_a"}


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)


def gradcheck_setup(seed: int = 0) -> Tuple[HyperParams, ModelParams, List[Scene]]:
    """Small model (D_emb=8, N_q=4) and a two-scene batch that fits it."""
    hp = HyperParams.desk(D_emb=8, N_q=4)
    cfg = SynthConfig.from_hyper_params(hp, group_size_range=(2, 3), n_distractors_range=(0, 1), noise_sigma=0.05)
    rng = np.random.default_rng(seed)
    scenes = [generate_scene(rng, cfg) for _ in range(2)]
    return hp, ModelParams.init(hp, seed), scenes


def _batch_loss(params: ModelParams, scenes: Sequence[Scene], hp: HyperParams, assignments, grads: Optional[GradientBuffer] = None) -> float:
    total = 0.0
    for scene, fixed in zip(scenes, assignments):
        loss, fwd, _ = scene_loss(params, scene, hp, fixed)
        total += loss.total
        if grads is not None:
            backward(params, fwd, loss, grads)
    return total


def check_component(
    params: ModelParams,
    scenes: Sequence[Scene],
    hp: HyperParams,
    assignments: Sequence[Tuple[Assignment, Assignment]],
    n_points: int,
    rng: np.random.Generator,
) -> float:
    """Largest relative error over n_points random parameter coordinates."""
    grads = GradientBuffer.like(params)
    _batch_loss(params, scenes, hp, assignments, grads)
    names = params.names()
    worst = 0.0
    for _ in range(n_points):
        name = names[int(rng.integers(len(names)))]
        index = tuple(int(rng.integers(d)) for d in params[name].shape)
        original = params[name][index]
        params[name][index] = original + FD_STEP
        up = _batch_loss(params, scenes, hp, assignments)
        params[name][index] = original - FD_STEP
        down = _batch_loss(params, scenes, hp, assignments)
        params[name][index] = original
        numeric = (up - down) / (2 * FD_STEP)
        err = relative_error(float(grads[name][index]), numeric)
        if err > worst:
            worst = err
            logger.debug("%s%s analytic %.8g numeric %.8g", name, list(index), grads[name][index], numeric)
    return worst


def run_gradcheck(seed: int = 0, n_points: int = 30) -> Dict[str, float]:
    """
    Max relative gradient error per loss component, and for the weighted total.

    Each component is checked with its lambda set to 1 and every other lambda to 0.
    """
    hp, params, scenes = gradcheck_setup(seed)
    assignments = [scene_loss(params, scene, hp)[2] for scene in scenes]
    rng = np.random.default_rng(seed)
    errors = {}
    for component in COMPONENTS:
        weights = {lam: 0.0 for lam in _LAMBDAS.values()}
        weights[_LAMBDAS[component]] = 1.0
        errors[component] = check_component(params, scenes, hp.model_copy(update=weights), assignments, n_points, rng)
    errors["total"] = check_component(params, scenes, hp, assignments, n_points, rng)
    return errors
