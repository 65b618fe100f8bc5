# matching.py

"""
Optimal ground-truth to query assignment for groups and individuals.

Queries left unassigned are the "no group" / "no person" padding. Instead of
adding zero-cost padding rows, the cost matrix is kept rectangular
(ground truths x queries); solve_padded is the explicit square form, kept for
checking that both give the same pairs.
"""

import logging
from typing import Dict, List, Sequence, Union

import numpy as np

from assignment import Assignment, as_cost_matrix, solve_assignment
from core import GroundTruthGroup, GroundTruthPerson, GroupOutputs, GroupPrediction, IndividualOutputs, IndividualPrediction
from costs import (
    GroupCostWeights,
    IndividualCostWeights,
    group_cost_matrix,
    group_cost_terms,
    individual_cost_matrix,
    individual_cost_terms,
)
from errors import InputError

logger = logging.getLogger(__name__)


def _check_counts(n_gt: int, n_q: int) -> None:
    if n_gt > n_q:
        raise InputError(f"more ground truths than queries ({n_gt} > {n_q})")


def _label_rows(rows: Sequence[Sequence[int]], width: int, what: str) -> np.ndarray:
    """Stack ground-truth label vectors, checking each against the prediction width."""
    for row in rows:
        if len(row) != width:
            raise InputError(f"{what} length mismatch ({len(row)} labels vs {width} probabilities)")
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def solve_padded(cost: np.ndarray) -> Assignment:
    """
    Solve a G x N problem by padding it to N x N with zero-cost rows.

    Returns:
        The assignment restricted to the G real rows
    """
    cost = as_cost_matrix(cost)
    n_gt, n_q = cost.shape
    square = np.zeros((n_q, n_q))
    square[:n_gt] = cost
    full = solve_assignment(square)
    real = full.map[:n_gt]
    return Assignment(map=real, total_cost=float(sum(cost[i, j] for i, j in enumerate(real))))


GroupPreds = Union[GroupOutputs, Sequence[GroupPrediction]]
IndividualPreds = Union[IndividualOutputs, Sequence[IndividualPrediction]]


def group_costs(gts: Sequence[GroundTruthGroup], preds: GroupPreds, w: GroupCostWeights, M: int) -> np.ndarray:
    """(len(gts), len(preds)) group pair cost matrix."""
    _check_counts(len(gts), len(preds))
    out = preds if isinstance(preds, GroupOutputs) else GroupOutputs.from_predictions(preds)
    return group_cost_matrix(
        _label_rows([g.activity for g in gts], out.activity.shape[1], "activity"),
        np.array([g.size_norm(M) for g in gts], dtype=np.float64),
        [g.points_array() for g in gts],
        out.activity,
        out.size,
        out.points,
        w,
    )


def individual_costs(gts: Sequence[GroundTruthPerson], preds: IndividualPreds, w: IndividualCostWeights) -> np.ndarray:
    """(len(gts), len(preds)) individual pair cost matrix."""
    _check_counts(len(gts), len(preds))
    out = preds if isinstance(preds, IndividualOutputs) else IndividualOutputs.from_predictions(preds)
    return individual_cost_matrix(
        np.array([g.box.as_array() for g in gts], dtype=np.float64).reshape(-1, 4),
        _label_rows([g.action for g in gts], out.actions.shape[1], "action"),
        out.scores,
        out.boxes,
        out.actions,
        w,
    )


def match_groups(gts: Sequence[GroundTruthGroup], preds: GroupPreds, w: GroupCostWeights, M: int) -> Assignment:
    """
    Match ground-truth groups to group queries.

    Raises:
        InputError: If there are more ground truths than queries
    """
    _check_counts(len(gts), len(preds))
    if not gts:
        return Assignment(map=(), total_cost=0.0)
    return solve_assignment(group_costs(gts, preds, w, M))


def match_individuals(gts: Sequence[GroundTruthPerson], preds: IndividualPreds, w: IndividualCostWeights) -> Assignment:
    """
    Match ground-truth persons to individual queries.

    Raises:
        InputError: If there are more ground truths than queries
    """
    _check_counts(len(gts), len(preds))
    if not gts:
        return Assignment(map=(), total_cost=0.0)
    return solve_assignment(individual_costs(gts, preds, w))


def explain_group_matches(
    gts: Sequence[GroundTruthGroup],
    preds: Sequence[GroupPrediction],
    assignment: Assignment,
    w: GroupCostWeights,
    M: int,
) -> List[Dict]:
    """Per-pair cost components of a group assignment, for reporting."""
    return [
        {"gt": i, "pred": j, **group_cost_terms(gts[i], preds[j], w, M)}
        for i, j in assignment.pairs()
    ]


def explain_individual_matches(
    gts: Sequence[GroundTruthPerson],
    preds: Sequence[IndividualPrediction],
    assignment: Assignment,
    w: IndividualCostWeights,
) -> List[Dict]:
    """Per-pair cost components of an individual assignment, for reporting."""
    return [
        {"gt": i, "pred": j, **individual_cost_terms(gts[i], preds[j], w)}
        for i, j in assignment.pairs()
    ]
