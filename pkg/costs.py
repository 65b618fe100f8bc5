# costs.py

"""
Pairwise matching costs for groups and individuals, and box geometry.

The scalar functions take the pydantic domain types and are what the
`match` command reports. Training matches a whole batch every step, so every
cost also has an array form that builds the full ground-truth x query matrix
in one numpy expression.
"""

from typing import Dict, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core import Box, GroundTruthGroup, GroundTruthPerson, GroupPrediction, HyperParams, IndividualPrediction, Point2
from errors import InputError

SCORE_FLOOR = 1e-4


class GroupCostWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta_v: float = Field(default=2.0, ge=0.0)
    eta_s: float = Field(default=1.0, ge=0.0)
    eta_u: float = Field(default=5.0, ge=0.0)

    @classmethod
    def from_hyper_params(cls, hp: HyperParams) -> "GroupCostWeights":
        return cls(eta_v=hp.eta_v, eta_s=hp.eta_s, eta_u=hp.eta_u)


class IndividualCostWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta_c: float = Field(default=1.0, ge=0.0)
    eta_b: float = Field(default=5.0, ge=0.0)
    eta_o: float = Field(default=2.0, ge=0.0)
    eta_a: float = Field(default=2.0, ge=0.0)

    @classmethod
    def from_hyper_params(cls, hp: HyperParams) -> "IndividualCostWeights":
        return cls(eta_c=hp.eta_c, eta_b=hp.eta_b, eta_o=hp.eta_o, eta_a=hp.eta_a)


# ---------------------------------------------------------------------------
# Scalar costs
# ---------------------------------------------------------------------------

def activity_cost(v: Sequence[float], v_hat: Sequence[float]) -> float:
    """
    Negative mean agreement between a binary label vector and probabilities.

    Returns:
        -(v.v_hat + (1-v).(1-v_hat)) / N, in [-1, 0]

    Raises:
        InputError: If the vectors differ in length
    """
    v = np.asarray(v, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if v.shape != v_hat.shape or v.ndim != 1 or v.size == 0:
        raise InputError(f"length mismatch ({v.size} labels vs {v_hat.size} probabilities)")
    return float(-(v @ v_hat + (1.0 - v) @ (1.0 - v_hat)) / v.size)


def size_cost(s: float, s_hat: float) -> float:
    if not (0.0 <= s <= 1.0 and 0.0 <= s_hat <= 1.0):
        raise InputError(f"size out of range ({s}, {s_hat})")
    return abs(s - s_hat)


def points_cost(points: Sequence[Point2], points_hat: Sequence[Point2]) -> float:
    """
    Mean L1 distance between the S ground-truth points and the first S predicted ones.

    Raises:
        InputError: If S is zero or exceeds the number of predicted points
    """
    n_gt, n_pred = len(points), len(points_hat)
    if n_gt == 0:
        raise InputError("empty ground-truth point sequence")
    if n_gt > n_pred:
        raise InputError(f"group size exceeds M ({n_gt} > {n_pred})")
    u = np.array([[p.x, p.y] for p in points])
    u_hat = np.array([[p.x, p.y] for p in points_hat[:n_gt]])
    return float(np.abs(u - u_hat).sum() / n_gt)


def group_cost_terms(gt: GroundTruthGroup, pred: GroupPrediction, w: GroupCostWeights, M: int) -> Dict[str, float]:
    """Weighted components of the group pair cost, plus their total."""
    terms = {
        "activity": w.eta_v * activity_cost(gt.activity, pred.activity_probs),
        "size": w.eta_s * size_cost(gt.size_norm(M), pred.size_norm),
        "points": w.eta_u * points_cost(gt.member_points, pred.member_points),
    }
    terms["total"] = terms["activity"] + terms["size"] + terms["points"]
    return terms


def group_pair_cost(gt: GroundTruthGroup, pred: GroupPrediction, w: GroupCostWeights, M: int) -> float:
    return group_cost_terms(gt, pred, w, M)["total"]


def box_center(b: Box) -> Point2:
    return Point2(x=b.cx, y=b.cy)


def iou(a: Box, b: Box) -> float:
    return float(iou_arrays(a.as_array(), b.as_array()))


def giou(a: Box, b: Box) -> float:
    return float(giou_arrays(a.as_array(), b.as_array()))


def individual_cost_terms(gt: GroundTruthPerson, pred: IndividualPrediction, w: IndividualCostWeights) -> Dict[str, float]:
    """Weighted components of the individual pair cost, plus their total."""
    if len(gt.action) != len(pred.action_probs):
        raise InputError(f"length mismatch ({len(gt.action)} actions vs {len(pred.action_probs)} probabilities)")
    terms = {
        "class": -w.eta_c * pred.score,
        "box": w.eta_b * float(np.abs(gt.box.as_array() - pred.box.as_array()).sum()),
        "giou": -w.eta_o * giou(gt.box, pred.box),
        "action": w.eta_a * activity_cost(gt.action, pred.action_probs),
    }
    terms["total"] = terms["class"] + terms["box"] + terms["giou"] + terms["action"]
    return terms


def individual_pair_cost(gt: GroundTruthPerson, pred: IndividualPrediction, w: IndividualCostWeights) -> float:
    return individual_cost_terms(gt, pred, w)["total"]


def member_point_cost(u_hat: Point2, pred: IndividualPrediction) -> float:
    """Distance from a member point to a predicted box centre, divided by the clamped person score."""
    dist = float(np.hypot(u_hat.x - pred.box.cx, u_hat.y - pred.box.cy))
    return dist / max(pred.score, SCORE_FLOOR)


# ---------------------------------------------------------------------------
# Array kernels
# ---------------------------------------------------------------------------

def _corners(b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def _overlap_terms(a: np.ndarray, b: np.ndarray):
    ax1, ay1, ax2, ay2 = _corners(a)
    bx1, by1, bx2, by2 = _corners(b)
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    enclosure = (np.maximum(ax2, bx2) - np.minimum(ax1, bx1)) * (np.maximum(ay2, by2) - np.minimum(ay1, by1))
    return inter, union, enclosure


def iou_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of broadcastable (..., 4) arrays of (cx, cy, w, h) boxes."""
    inter, union, _ = _overlap_terms(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    safe = np.where(union > 0, union, 1.0)
    return np.where(union > 0, inter / safe, 0.0)


def giou_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Generalized IoU of broadcastable (..., 4) arrays of (cx, cy, w, h) boxes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _, union, enclosure = _overlap_terms(a, b)
    base = iou_arrays(a, b)
    safe = np.where(enclosure > 0, enclosure, 1.0)
    return np.where(enclosure > 0, base - (enclosure - union) / safe, base)


def giou_with_grad(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    GIoU of (n, 4) predicted boxes against (n, 4) targets, with its gradient.

    Returns:
        (giou, dgiou): shapes (n,) and (n, 4), the gradient taken with
        respect to the predicted (cx, cy, w, h)
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    ax1, ay1, ax2, ay2 = _corners(pred)
    bx1, by1, bx2, by2 = _corners(gt)

    ix_hi, ix_lo = np.minimum(ax2, bx2), np.maximum(ax1, bx1)
    iy_hi, iy_lo = np.minimum(ay2, by2), np.maximum(ay1, by1)
    iw, ih = ix_hi - ix_lo, iy_hi - iy_lo
    overlapping = (iw > 0) & (ih > 0)
    iw = np.where(overlapping, iw, 0.0)
    ih = np.where(overlapping, ih, 0.0)
    inter = iw * ih

    aw, ah = ax2 - ax1, ay2 - ay1
    union = aw * ah + (bx2 - bx1) * (by2 - by1) - inter
    ew = np.maximum(ax2, bx2) - np.minimum(ax1, bx1)
    eh = np.maximum(ay2, by2) - np.minimum(ay1, by1)
    enclosure = ew * eh

    # derivatives with respect to (x1, y1, x2, y2) of the predicted box
    d_inter = np.stack([
        -ih * (ax1 > bx1),
        -iw * (ay1 > by1),
        ih * (ax2 < bx2),
        iw * (ay2 < by2),
    ], axis=-1) * overlapping[:, None]
    d_area = np.stack([-ah, -aw, ah, aw], axis=-1)
    d_union = d_area - d_inter
    d_enclosure = np.stack([
        -eh * (ax1 <= bx1),
        -ew * (ay1 <= by1),
        eh * (ax2 >= bx2),
        ew * (ay2 >= by2),
    ], axis=-1)

    safe_u = np.where(union > 0, union, 1.0)
    iou_val = np.where(union > 0, inter / safe_u, 0.0)
    d_iou = np.where((union > 0)[:, None], (d_inter * union[:, None] - inter[:, None] * d_union) / safe_u[:, None] ** 2, 0.0)

    safe_e = np.where(enclosure > 0, enclosure, 1.0)
    has_e = enclosure > 0
    giou_val = np.where(has_e, iou_val - (enclosure - union) / safe_e, iou_val)
    d_giou = d_iou + np.where(
        has_e[:, None],
        (d_union * enclosure[:, None] - union[:, None] * d_enclosure) / safe_e[:, None] ** 2,
        0.0,
    )

    gx1, gy1, gx2, gy2 = d_giou[:, 0], d_giou[:, 1], d_giou[:, 2], d_giou[:, 3]
    grad = np.stack([gx1 + gx2, gy1 + gy2, (gx2 - gx1) / 2, (gy2 - gy1) / 2], axis=-1)
    return giou_val, grad


def activity_cost_matrix(v: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    """(G, N) matrix of activity_cost between label rows and probability rows."""
    v = np.asarray(v, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if v.shape[-1] != v_hat.shape[-1]:
        raise InputError(f"length mismatch ({v.shape[-1]} labels vs {v_hat.shape[-1]} probabilities)")
    return -(v @ v_hat.T + (1.0 - v) @ (1.0 - v_hat).T) / v.shape[-1]


def group_cost_matrix(
    gt_activity: np.ndarray,
    gt_size: np.ndarray,
    gt_points: Sequence[np.ndarray],
    pred_activity: np.ndarray,
    pred_size: np.ndarray,
    pred_points: np.ndarray,
    w: GroupCostWeights,
) -> np.ndarray:
    """
    Group pair costs of every ground truth against every query.

    Args:
        gt_activity: (G, N_v) binary labels
        gt_size: (G,) normalized sizes
        gt_points: G arrays of shape (S_i, 2)
        pred_activity: (N_q, N_v) probabilities
        pred_size: (N_q,) normalized sizes
        pred_points: (N_q, M, 2) member points
        w: Cost weights

    Returns:
        (G, N_q) cost matrix
    """
    n_gt, n_q = len(gt_points), pred_activity.shape[0]
    if n_gt == 0:
        return np.zeros((0, n_q))
    M = pred_points.shape[1]
    cost = w.eta_v * activity_cost_matrix(gt_activity, pred_activity)
    cost += w.eta_s * np.abs(np.asarray(gt_size)[:, None] - pred_size[None, :])
    for i, u in enumerate(gt_points):
        n = u.shape[0]
        if n == 0 or n > M:
            raise InputError(f"group size {n} outside 1..{M}")
        cost[i] += w.eta_u * np.abs(pred_points[:, :n, :] - u[None]).sum(axis=(1, 2)) / n
    return cost


def individual_cost_matrix(
    gt_boxes: np.ndarray,
    gt_actions: np.ndarray,
    pred_scores: np.ndarray,
    pred_boxes: np.ndarray,
    pred_actions: np.ndarray,
    w: IndividualCostWeights,
) -> np.ndarray:
    """(P, N_q) individual pair costs of every person against every query."""
    n_q = pred_boxes.shape[0]
    if gt_boxes.shape[0] == 0:
        return np.zeros((0, n_q))
    cost = -w.eta_c * np.broadcast_to(pred_scores[None, :], (gt_boxes.shape[0], n_q))
    cost = cost + w.eta_b * np.abs(gt_boxes[:, None, :] - pred_boxes[None, :, :]).sum(axis=-1)
    cost -= w.eta_o * giou_arrays(gt_boxes[:, None, :], pred_boxes[None, :, :])
    cost += w.eta_a * activity_cost_matrix(gt_actions, pred_actions)
    return cost


def member_point_cost_matrix(points: np.ndarray, pred_boxes: np.ndarray, pred_scores: np.ndarray) -> np.ndarray:
    """(S, N_q) matrix of member_point_cost for S points against N_q individual predictions."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    delta = points[:, None, :] - pred_boxes[None, :, :2]
    dist = np.sqrt((delta ** 2).sum(axis=-1))
    return dist / np.maximum(pred_scores, SCORE_FLOOR)[None, :]
