# losses.py

"""
Training losses for group and individual recognition, with analytic
gradients with respect to every prediction component.

Gradients are those of the lambda-weighted total, so a LossBreakdown can be
fed straight into the model's backward pass.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from assignment import Assignment
from core import (
    GroundTruthGroup,
    GroundTruthPerson,
    GroupOutputs,
    GroupPrediction,
    HyperParams,
    IndividualOutputs,
    IndividualPrediction,
)
from costs import giou_with_grad
from errors import InputError

PROB_CLAMP = 1e-7


def focal_loss_arrays(y: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Element-wise penalty-reduced focal loss (focusing power 2) and its derivative in p.

    Args:
        y: Binary targets
        p: Probabilities, same shape as y

    Returns:
        (value, dvalue_dp), each with the shape of p. The derivative is zero
        where p had to be clamped.
    """
    y = np.asarray(y, dtype=np.float64)
    p_raw = np.asarray(p, dtype=np.float64)
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = p == p_raw
    pos = y > 0.5
    value = np.where(pos, -(1.0 - p) ** 2 * np.log(p), -(p ** 2) * np.log1p(-p))
    deriv = np.where(
        pos,
        2.0 * (1.0 - p) * np.log(p) - (1.0 - p) ** 2 / p,
        -2.0 * p * np.log1p(-p) + p ** 2 / (1.0 - p),
    )
    return value, np.where(inside, deriv, 0.0)


def focal_loss(y: int, p: float) -> Tuple[float, float]:
    value, deriv = focal_loss_arrays(np.array(y), np.array(p))
    return float(value), float(deriv)


@dataclass
class GroupGrads:
    activity: np.ndarray
    size: np.ndarray
    points: np.ndarray


@dataclass
class IndividualGrads:
    scores: np.ndarray
    boxes: np.ndarray
    actions: np.ndarray


@dataclass
class LossBreakdown:
    """Loss components, their lambda-weighted total and gradients of that total."""

    l_v: float = 0.0
    l_s: float = 0.0
    l_u: float = 0.0
    l_c: float = 0.0
    l_b: float = 0.0
    l_o: float = 0.0
    l_a: float = 0.0
    total: float = 0.0
    group_grads: Optional[GroupGrads] = field(default=None, repr=False)
    individual_grads: Optional[IndividualGrads] = field(default=None, repr=False)

    def combine(self, other: "LossBreakdown") -> "LossBreakdown":
        """Merge a group-only and an individual-only breakdown of the same scene."""
        return LossBreakdown(
            l_v=self.l_v + other.l_v,
            l_s=self.l_s + other.l_s,
            l_u=self.l_u + other.l_u,
            l_c=self.l_c + other.l_c,
            l_b=self.l_b + other.l_b,
            l_o=self.l_o + other.l_o,
            l_a=self.l_a + other.l_a,
            total=self.total + other.total,
            group_grads=self.group_grads if self.group_grads is not None else other.group_grads,
            individual_grads=self.individual_grads if self.individual_grads is not None else other.individual_grads,
        )

    def components(self) -> Dict[str, float]:
        return {
            "l_v": self.l_v,
            "l_s": self.l_s,
            "l_u": self.l_u,
            "l_c": self.l_c,
            "l_b": self.l_b,
            "l_o": self.l_o,
            "l_a": self.l_a,
            "total": self.total,
        }


def _check_assignment(assignment: Assignment, n_gt: int, n_q: int) -> None:
    cols = assignment.map
    if len(cols) != n_gt or len(set(cols)) != len(cols) or any(not 0 <= c < n_q for c in cols):
        raise InputError(f"assignment inconsistent with set sizes ({n_gt} ground truths, {n_q} queries)")


def group_loss(
    gts: Sequence[GroundTruthGroup],
    preds: Union[GroupOutputs, Sequence[GroupPrediction]],
    assignment: Assignment,
    hp: HyperParams,
) -> LossBreakdown:
    """
    Activity, size and member-point losses of one scene.

    Unmatched queries enter the activity loss against an all-zero target.
    Every term is divided by the number of ground-truth groups (at least 1).

    Raises:
        InputError: If the assignment does not fit the ground truths and queries
    """
    out = preds if isinstance(preds, GroupOutputs) else GroupOutputs.from_predictions(preds)
    n_q = len(out)
    _check_assignment(assignment, len(gts), n_q)
    norm = float(max(1, len(gts)))
    M = out.points.shape[1]

    targets = np.zeros_like(out.activity)
    d_size = np.zeros_like(out.size)
    d_points = np.zeros_like(out.points)
    l_s = 0.0
    l_u = 0.0
    for i, q in assignment.pairs():
        gt = gts[i]
        targets[q] = gt.activity
        diff = out.size[q] - gt.size_norm(M)
        l_s += abs(diff)
        d_size[q] = np.sign(diff)
        u = gt.points_array()
        n = u.shape[0]
        delta = out.points[q, :n] - u
        scale = 1.0 / n if hp.normalize_lu else 1.0
        l_u += scale * float(np.abs(delta).sum())
        d_points[q, :n] = scale * np.sign(delta)

    value, d_act = focal_loss_arrays(targets, out.activity)
    l_v = float(value.sum()) / norm
    l_s /= norm
    l_u /= norm
    return LossBreakdown(
        l_v=l_v,
        l_s=l_s,
        l_u=l_u,
        total=hp.lambda_v * l_v + hp.lambda_s * l_s + hp.lambda_u * l_u,
        group_grads=GroupGrads(
            activity=hp.lambda_v * d_act / norm,
            size=hp.lambda_s * d_size / norm,
            points=hp.lambda_u * d_points / norm,
        ),
    )


def individual_loss(
    gts: Sequence[GroundTruthPerson],
    preds: Union[IndividualOutputs, Sequence[IndividualPrediction]],
    assignment: Assignment,
    hp: HyperParams,
) -> LossBreakdown:
    """
    Person-class, box L1, GIoU and action losses of one scene.

    Raises:
        InputError: If the assignment does not fit the ground truths and queries
    """
    out = preds if isinstance(preds, IndividualOutputs) else IndividualOutputs.from_predictions(preds)
    n_q = len(out)
    _check_assignment(assignment, len(gts), n_q)
    norm = float(max(1, len(gts)))

    rows = np.array([i for i, _ in assignment.pairs()], dtype=np.intp)
    cols = np.array([q for _, q in assignment.pairs()], dtype=np.intp)

    class_targets = np.zeros(n_q)
    class_targets[cols] = 1.0
    c_val, d_scores = focal_loss_arrays(class_targets, out.scores)
    l_c = float(c_val.sum()) / norm

    d_boxes = np.zeros_like(out.boxes)
    d_actions = np.zeros_like(out.actions)
    l_b = l_o = l_a = 0.0
    if rows.size:
        gt_boxes = np.array([gts[i].box.as_array() for i in rows])
        gt_actions = np.array([gts[i].action for i in rows], dtype=np.float64)
        delta = out.boxes[cols] - gt_boxes
        l_b = float(np.abs(delta).sum()) / norm
        g, dg = giou_with_grad(out.boxes[cols], gt_boxes)
        l_o = float((1.0 - g).sum()) / norm
        a_val, a_grad = focal_loss_arrays(gt_actions, out.actions[cols])
        l_a = float(a_val.sum()) / norm
        d_boxes[cols] = hp.lambda_b * np.sign(delta) - hp.lambda_o * dg
        d_actions[cols] = hp.lambda_a * a_grad

    return LossBreakdown(
        l_c=l_c,
        l_b=l_b,
        l_o=l_o,
        l_a=l_a,
        total=hp.lambda_c * l_c + hp.lambda_b * l_b + hp.lambda_o * l_o + hp.lambda_a * l_a,
        individual_grads=IndividualGrads(
            scores=hp.lambda_c * d_scores / norm,
            boxes=d_boxes / norm,
            actions=d_actions / norm,
        ),
    )
