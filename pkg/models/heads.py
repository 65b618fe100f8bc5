# models/heads.py

"""
Detection heads on top of the decoder embeddings.

Group heads predict activity probabilities, the normalized group size and M
member points; individual heads predict the person score, box and action
probabilities. Points and box centres are offsets in logit space from the
query's reference logits, squashed by a sigmoid.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core import GroupOutputs, GroupPrediction, IndividualOutputs, IndividualPrediction
from errors import InputError
from losses import GroupGrads, IndividualGrads
from models.params import GradientBuffer, ModelParams


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _linear_forward(params: ModelParams, prefix: str, x: np.ndarray) -> np.ndarray:
    return x @ params[f"{prefix}_w"] + params[f"{prefix}_b"]


def _mlp_forward(params: ModelParams, prefix: str, x: np.ndarray):
    """Three linear layers with ReLU between them; returns the last pre-activation and the layer inputs."""
    inputs = [x]
    z1 = x @ params[f"{prefix}_w1"] + params[f"{prefix}_b1"]
    a1 = np.maximum(z1, 0.0)
    inputs.append(a1)
    z2 = a1 @ params[f"{prefix}_w2"] + params[f"{prefix}_b2"]
    a2 = np.maximum(z2, 0.0)
    inputs.append(a2)
    z3 = a2 @ params[f"{prefix}_w3"] + params[f"{prefix}_b3"]
    return z3, inputs


def _mlp_backward(params: ModelParams, prefix: str, inputs: List[np.ndarray], dz: np.ndarray, grads: GradientBuffer) -> np.ndarray:
    x, a1, a2 = inputs
    grads.accumulate(f"{prefix}_w3", a2.T @ dz)
    grads.accumulate(f"{prefix}_b3", dz.sum(axis=0))
    dz2 = (dz @ params[f"{prefix}_w3"].T) * (a2 > 0)
    grads.accumulate(f"{prefix}_w2", a1.T @ dz2)
    grads.accumulate(f"{prefix}_b2", dz2.sum(axis=0))
    dz1 = (dz2 @ params[f"{prefix}_w2"].T) * (a1 > 0)
    grads.accumulate(f"{prefix}_w1", x.T @ dz1)
    grads.accumulate(f"{prefix}_b1", dz1.sum(axis=0))
    return dz1 @ params[f"{prefix}_w1"].T


@dataclass
class HeadsCache:
    embeddings: np.ndarray
    individual_embeddings: np.ndarray
    group: GroupOutputs
    individual: IndividualOutputs
    mlp_inputs: Dict[str, List[np.ndarray]] = field(default_factory=dict)


def _check_inputs(params: ModelParams, embeddings: np.ndarray, ref_logits: np.ndarray) -> None:
    if embeddings.ndim != 2 or embeddings.shape[1] != params["ffn_w1"].shape[0]:
        raise InputError(f"embedding shape {embeddings.shape} does not match D_emb")
    if ref_logits.shape != (embeddings.shape[0], 2):
        raise InputError(f"reference logits shape {ref_logits.shape} does not match {embeddings.shape[0]} queries")


def heads_forward(
    params: ModelParams,
    embeddings: np.ndarray,
    ref_logits: np.ndarray,
    individual_embeddings: Optional[np.ndarray] = None,
    individual_ref_logits: Optional[np.ndarray] = None,
) -> Tuple[GroupOutputs, IndividualOutputs, HeadsCache]:
    """
    Run the group heads on (n, D_emb) embeddings with their (n, 2) reference
    logits, and the individual heads on the individual pair (the group pair
    when omitted).

    Raises:
        InputError: If embeddings and reference logits disagree in count or width
    """
    if individual_embeddings is None:
        individual_embeddings = embeddings
    if individual_ref_logits is None:
        individual_ref_logits = ref_logits
    _check_inputs(params, embeddings, ref_logits)
    _check_inputs(params, individual_embeddings, individual_ref_logits)
    n = embeddings.shape[0]
    mlp_inputs = {}

    activity = sigmoid(_linear_forward(params, "act", embeddings))
    z_size, mlp_inputs["size"] = _mlp_forward(params, "size", embeddings)
    size = sigmoid(z_size[:, 0])
    z_pts, mlp_inputs["pts"] = _mlp_forward(params, "pts", embeddings)
    points = sigmoid(z_pts.reshape(n, -1, 2) + ref_logits[:, None, :])

    h = individual_embeddings
    scores = sigmoid(_linear_forward(params, "cls", h)[:, 0])
    z_box, mlp_inputs["box"] = _mlp_forward(params, "box", h)
    z_box = z_box.copy()
    z_box[:, :2] += individual_ref_logits
    boxes = sigmoid(z_box)
    actions = sigmoid(_linear_forward(params, "actn", h))

    group = GroupOutputs(activity=activity, size=size, points=points)
    individual = IndividualOutputs(scores=scores, boxes=boxes, actions=actions)
    return group, individual, HeadsCache(embeddings, individual_embeddings, group, individual, mlp_inputs)


def heads_backward(
    params: ModelParams,
    cache: HeadsCache,
    group_grads: GroupGrads,
    individual_grads: IndividualGrads,
    grads: GradientBuffer,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Accumulate head parameter gradients.

    Returns:
        (d_embeddings, d_ref_logits, d_individual_embeddings, d_individual_ref_logits)
    """
    g, ind = cache.group, cache.individual
    if group_grads.activity.shape != g.activity.shape or individual_grads.boxes.shape != ind.boxes.shape:
        raise InputError("loss gradients do not match the cached forward pass")
    h = cache.embeddings
    n = h.shape[0]
    d_h = np.zeros_like(h)

    dz = group_grads.activity * g.activity * (1.0 - g.activity)
    grads.accumulate("act_w", h.T @ dz)
    grads.accumulate("act_b", dz.sum(axis=0))
    d_h += dz @ params["act_w"].T

    dz = (group_grads.size * g.size * (1.0 - g.size))[:, None]
    d_h += _mlp_backward(params, "size", cache.mlp_inputs["size"], dz, grads)

    dz_pts = group_grads.points * g.points * (1.0 - g.points)
    d_ref = dz_pts.sum(axis=1)
    d_h += _mlp_backward(params, "pts", cache.mlp_inputs["pts"], dz_pts.reshape(n, -1), grads)

    h = cache.individual_embeddings
    d_ind = np.zeros_like(h)

    dz = (individual_grads.scores * ind.scores * (1.0 - ind.scores))[:, None]
    grads.accumulate("cls_w", h.T @ dz)
    grads.accumulate("cls_b", dz.sum(axis=0))
    d_ind += dz @ params["cls_w"].T

    dz_box = individual_grads.boxes * ind.boxes * (1.0 - ind.boxes)
    d_ind_ref = dz_box[:, :2].copy()
    d_ind += _mlp_backward(params, "box", cache.mlp_inputs["box"], dz_box, grads)

    dz = individual_grads.actions * ind.actions * (1.0 - ind.actions)
    grads.accumulate("actn_w", h.T @ dz)
    grads.accumulate("actn_b", dz.sum(axis=0))
    d_ind += dz @ params["actn_w"].T
    return d_h, d_ref, d_ind, d_ind_ref


def group_heads_forward(params: ModelParams, h_i: np.ndarray, i: int) -> GroupPrediction:
    """Group prediction of query i from its embedding."""
    group, _, _ = heads_forward(params, np.asarray(h_i, dtype=np.float64).reshape(1, -1), params["ref_logits"][i:i + 1])
    return group.to_predictions()[0]


def individual_heads_forward(params: ModelParams, h_i: np.ndarray, i: int, ref_logits: Optional[np.ndarray] = None) -> IndividualPrediction:
    """Individual prediction of query i from its embedding; an anchored query passes its own reference logits."""
    ref = params["ref_logits"][i] if ref_logits is None else np.asarray(ref_logits, dtype=np.float64)
    _, individual, _ = heads_forward(params, np.asarray(h_i, dtype=np.float64).reshape(1, -1), ref.reshape(1, 2))
    return individual.to_predictions()[0]
