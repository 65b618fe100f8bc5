# inference.py

"""
Turning raw head outputs into group decisions: decoding the group size,
identifying which individual predictions are the members of a predicted
group, and picking the top-scoring group of a scene.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from assignment import solve_assignment
from core import GroupOutputs, GroupPrediction, IndividualOutputs, IndividualPrediction, Scene
from costs import member_point_cost_matrix
from errors import InputError

logger = logging.getLogger(__name__)


class MemberMatching(str, Enum):
    HUNGARIAN = "hungarian"
    NEAREST = "nearest"


class GroupMembership(BaseModel):
    """Individual predictions identified as the members of one predicted group."""

    model_config = ConfigDict(frozen=True)

    group_index: int
    member_pred_indices: Tuple[int, ...]
    decoded_size: int
    truncated: bool = False


def decode_group_size(s_hat: float, M: int) -> int:
    """Nearest integer to M * s_hat, halves rounded away from zero, clamped to [0, M]."""
    x = M * s_hat
    n = math.floor(abs(x) + 0.5)
    n = n if x >= 0 else -n
    return int(min(max(n, 0), M))


def identify_members_arrays(
    points: np.ndarray,
    decoded_size: int,
    boxes: np.ndarray,
    scores: np.ndarray,
    method: MemberMatching = MemberMatching.HUNGARIAN,
    group_index: int = 0,
) -> GroupMembership:
    """
    Array form of identify_members.

    Args:
        points: (M, 2) member points of the group prediction
        decoded_size: Number of leading member points to use
        boxes: (N, 4) individual boxes
        scores: (N,) individual person scores
        method: Hungarian (one individual per point) or nearest (independent argmin)
        group_index: Query index of the group, carried into the result
    """
    n_ind = boxes.shape[0]
    n = min(decoded_size, n_ind)
    truncated = decoded_size > n_ind
    if truncated:
        logger.debug("group %d: decoded size %d exceeds %d individuals", group_index, decoded_size, n_ind)
    if n == 0:
        return GroupMembership(group_index=group_index, member_pred_indices=(), decoded_size=decoded_size, truncated=truncated)

    cost = member_point_cost_matrix(points[:n], boxes, scores)
    if MemberMatching(method) is MemberMatching.HUNGARIAN:
        members = solve_assignment(cost).map
    else:
        # duplicates collapse, so the membership can come out smaller than n
        members = tuple(dict.fromkeys(int(j) for j in np.argmin(cost, axis=1)))
    return GroupMembership(group_index=group_index, member_pred_indices=tuple(members), decoded_size=decoded_size, truncated=truncated)


def identify_members(
    group: GroupPrediction,
    individuals: Sequence[IndividualPrediction],
    M: int,
    method: MemberMatching = MemberMatching.HUNGARIAN,
    group_index: int = 0,
) -> GroupMembership:
    """
    Assign the group's first decoded-size member points to individual predictions.

    Each point is matched on distance to the individual's box centre divided
    by its person score. When the decoded size exceeds the number of
    individuals every individual is matched and the result is flagged as
    truncated.
    """
    n = decode_group_size(group.size_norm, M)
    if individuals:
        out = IndividualOutputs.from_predictions(individuals)
        boxes, scores = out.boxes, out.scores
    else:
        boxes, scores = np.zeros((0, 4)), np.zeros(0)
    return identify_members_arrays(group.points_array(), n, boxes, scores, method, group_index)


def select_top_group(preds: Union[GroupOutputs, Sequence[GroupPrediction]]) -> Tuple[int, int]:
    """
    Query index and activity class of the highest activity probability.

    Ties go to the lowest (query, class) pair.

    Raises:
        InputError: If there are no predictions
    """
    if not isinstance(preds, GroupOutputs):
        if not preds:
            raise InputError("no group predictions")
        preds = GroupOutputs.from_predictions(preds)
    probs = preds.activity
    if probs.size == 0:
        raise InputError("no group predictions")
    q, c = np.unravel_index(int(np.argmax(probs)), probs.shape)
    return int(q), int(c)


@dataclass
class SceneResult:
    """Model outputs for one scene with the member identification of every group query."""

    scene: Scene
    group: GroupOutputs
    individual: IndividualOutputs
    memberships: List[GroupMembership]

    def top_group(self) -> Tuple[int, int]:
        return select_top_group(self.group)

    def member_boxes(self, q: int) -> np.ndarray:
        idx = list(self.memberships[q].member_pred_indices)
        return self.individual.boxes[idx].reshape(-1, 4)


def build_scene_result(
    scene: Scene,
    group: GroupOutputs,
    individual: IndividualOutputs,
    M: int,
    method: MemberMatching = MemberMatching.HUNGARIAN,
) -> SceneResult:
    """Identify the members of every group query of a scene."""
    memberships = [
        identify_members_arrays(
            group.points[q],
            decode_group_size(float(group.size[q]), M),
            individual.boxes,
            individual.scores,
            method,
            group_index=q,
        )
        for q in range(len(group))
    ]
    return SceneResult(scene=scene, group=group, individual=individual, memberships=memberships)
