# core.py

"""
Domain types shared by every GroupSet module.

Scene and prediction types are frozen pydantic models: immutable after construction and
serialisable to JSON with field names exactly as declared. Range checks that
belong to a single value (a box coordinate, a probability) are enforced at
construction; cross-field scene invariants are reported by validate_scene so
that a malformed scene can still be loaded and inspected. GroupOutputs and
IndividualOutputs hold the same predictions as arrays for the model.
"""

import logging
import os
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import DatasetIOError, InputError

logger = logging.getLogger(__name__)

BOX_SIZE_FLOOR = 1e-9

UnitFloat = Annotated[float, Field(ge=0.0, le=1.0)]


class PointOrder(str, Enum):
    ASC_X = "AscX"     # ascending x, ties by y
    ASC_Y = "AscY"     # ascending y, ties by x


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Point2(_Frozen):
    x: UnitFloat
    y: UnitFloat

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


class Box(_Frozen):
    """Axis-aligned box in normalized image coordinates, center-size form."""

    cx: UnitFloat
    cy: UnitFloat
    w: float = Field(gt=0.0, le=1.0)
    h: float = Field(gt=0.0, le=1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def corners(self) -> Tuple[float, float, float, float]:
        """Corner form (x1, y1, x2, y2)."""
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return cls(cx=(x1 + x2) / 2, cy=(y1 + y2) / 2, w=x2 - x1, h=y2 - y1)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box":
        cx, cy, w, h = (float(v) for v in values)
        return cls(cx=cx, cy=cy, w=w, h=h)


class GroundTruthPerson(_Frozen):
    box: Box
    action: Tuple[int, ...]

    @field_validator("action")
    @classmethod
    def _binary(cls, value):
        if any(v not in (0, 1) for v in value):
            raise ValueError("action must be a binary vector")
        return value


class GroundTruthGroup(_Frozen):
    activity: Tuple[int, ...]
    size: int = Field(gt=0)
    member_indices: Tuple[int, ...]
    member_points: Tuple[Point2, ...]

    @field_validator("activity")
    @classmethod
    def _binary(cls, value):
        if any(v not in (0, 1) for v in value):
            raise ValueError("activity must be a binary vector")
        return value

    def size_norm(self, M: int) -> float:
        return self.size / M

    def points_array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.member_points], dtype=np.float64).reshape(-1, 2)

    def activity_class(self) -> int:
        return int(np.argmax(self.activity))


class GroupPrediction(_Frozen):
    activity_probs: Tuple[float, ...]
    size_norm: UnitFloat
    member_points: Tuple[Point2, ...]

    @field_validator("activity_probs")
    @classmethod
    def _probabilities(cls, value):
        if any(not 0.0 <= v <= 1.0 for v in value):
            raise ValueError("activity_probs must lie in [0, 1]")
        return value

    def score(self) -> float:
        """Confidence used for ranking: the highest activity probability."""
        return max(self.activity_probs)

    def points_array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.member_points], dtype=np.float64).reshape(-1, 2)


class IndividualPrediction(_Frozen):
    score: UnitFloat
    box: Box
    action_probs: Tuple[float, ...]

    @field_validator("action_probs")
    @classmethod
    def _probabilities(cls, value):
        if any(not 0.0 <= v <= 1.0 for v in value):
            raise ValueError("action_probs must lie in [0, 1]")
        return value


class Scene(_Frozen):
    persons: Tuple[GroundTruthPerson, ...]
    groups: Tuple[GroundTruthGroup, ...]
    tokens: Tuple[Tuple[float, ...], ...]

    def tokens_array(self) -> np.ndarray:
        return np.array(self.tokens, dtype=np.float64)

    def person_boxes_array(self) -> np.ndarray:
        return np.array([p.box.as_array() for p in self.persons], dtype=np.float64).reshape(-1, 4)

    def person_actions_array(self) -> np.ndarray:
        return np.array([p.action for p in self.persons], dtype=np.float64)


class HyperParams(_Frozen):
    """Model sizes and cost/loss weights. Defaults are the full-scale settings."""

    N_v: int = Field(default=8, gt=0)
    N_a: int = Field(default=9, gt=0)
    N_q: int = Field(default=300, gt=0)
    M: int = Field(default=12, gt=0)
    D_tok: int = Field(default=32, gt=0)
    D_emb: int = Field(default=256, gt=0)

    eta_v: float = Field(default=2.0, ge=0.0)
    eta_s: float = Field(default=1.0, ge=0.0)
    eta_u: float = Field(default=5.0, ge=0.0)
    eta_c: float = Field(default=1.0, ge=0.0)
    eta_b: float = Field(default=5.0, ge=0.0)
    eta_o: float = Field(default=2.0, ge=0.0)
    eta_a: float = Field(default=2.0, ge=0.0)

    lambda_v: float = Field(default=2.0, ge=0.0)
    lambda_s: float = Field(default=1.0, ge=0.0)
    lambda_u: float = Field(default=5.0, ge=0.0)
    lambda_c: float = Field(default=1.0, ge=0.0)
    lambda_b: float = Field(default=5.0, ge=0.0)
    lambda_o: float = Field(default=2.0, ge=0.0)
    lambda_a: float = Field(default=2.0, ge=0.0)

    normalize_lu: bool = False

    @classmethod
    def desk(cls, **overrides) -> "HyperParams":
        """Desk-scale sizes used by the default synthetic training run."""
        values = dict(N_q=16, M=6, N_v=4, N_a=4, D_tok=16, D_emb=32)
        values.update(overrides)
        return cls(**values)


def member_order(points: np.ndarray, order: PointOrder = PointOrder.ASC_X) -> np.ndarray:
    """
    Permutation that sorts an (n, 2) array of points.

    Args:
        points: Array of (x, y) rows
        order: Primary coordinate; ties are broken by the other coordinate

    Returns:
        Index array such that points[idx] is sorted
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if PointOrder(order) is PointOrder.ASC_X:
        return np.lexsort((points[:, 1], points[:, 0]))
    return np.lexsort((points[:, 0], points[:, 1]))


def sort_member_points(points: Sequence[Point2], order: PointOrder = PointOrder.ASC_X) -> Tuple[Point2, ...]:
    """
    Sort member points into the canonical sequence used by costs and losses.

    Args:
        points: Member points of one group
        order: AscX (default) or AscY

    Returns:
        The points, nondecreasing in the primary coordinate

    Raises:
        InputError: If the sequence is empty
    """
    points = tuple(points)
    if not points:
        raise InputError("empty point sequence")
    idx = member_order(np.array([[p.x, p.y] for p in points]), order)
    return tuple(points[i] for i in idx)


def validate_scene(scene: Scene, hp: HyperParams, order: PointOrder = PointOrder.ASC_X) -> List[str]:
    """
    Collect every invariant violation of a scene.

    Args:
        scene: The scene to check
        hp: Hyper-parameters giving N_v, N_a, M and D_tok
        order: Ordering the member points are expected to follow

    Returns:
        List of violation messages; empty when the scene is well formed
    """
    violations = []
    n_persons = len(scene.persons)

    for p, person in enumerate(scene.persons):
        if len(person.action) != hp.N_a:
            violations.append(f"person {p}: action length {len(person.action)} != N_a {hp.N_a}")
        elif sum(person.action) != 1:
            violations.append(f"person {p}: action is not one-hot")

    owner = {}
    for g, group in enumerate(scene.groups):
        if len(group.activity) != hp.N_v:
            violations.append(f"group {g}: activity length {len(group.activity)} != N_v {hp.N_v}")
        if group.size != len(group.member_indices) or group.size != len(group.member_points):
            violations.append(
                f"group {g}: size {group.size} does not match {len(group.member_indices)} members "
                f"and {len(group.member_points)} points"
            )
        if group.size > hp.M:
            violations.append(f"group {g}: group size exceeds M ({group.size} > {hp.M})")
        if len(set(group.member_indices)) != len(group.member_indices):
            violations.append(f"group {g}: duplicate member index")
        for idx in sorted(set(group.member_indices)):
            if not 0 <= idx < n_persons:
                violations.append(f"group {g}: member index out of range ({idx})")
            elif idx in owner:
                violations.append(f"group {g}: overlapping membership of person {idx} with group {owner[idx]}")
            else:
                owner[idx] = g
        if group.member_points:
            expected = sort_member_points(group.member_points, order)
            if expected != group.member_points:
                violations.append(f"group {g}: unsorted member points for order {PointOrder(order).value}")

    if len(scene.tokens) < n_persons:
        violations.append(f"scene has {len(scene.tokens)} tokens for {n_persons} persons")
    for t, token in enumerate(scene.tokens):
        if len(token) != hp.D_tok:
            violations.append(f"token {t}: dimension {len(token)} != D_tok {hp.D_tok}")
            break

    return violations


def write_scenes(path: str, scenes: Iterable[Scene]) -> int:
    """
    Write scenes as newline-delimited JSON.

    Args:
        path: Output file path
        scenes: Scenes to write

    Returns:
        Number of scenes written

    Raises:
        DatasetIOError: If the file cannot be written
    """
    count = 0
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            for scene in scenes:
                f.write(scene.model_dump_json())
                f.write("\n")
                count += 1
    except OSError as e:
        raise DatasetIOError(f"cannot write dataset ({e.strerror})", path) from e
    logger.debug("wrote %d scenes to %s", count, path)
    return count


def read_scenes(path: str) -> List[Scene]:
    """
    Read a newline-delimited JSON dataset.

    Args:
        path: Dataset file path

    Returns:
        The scenes in file order

    Raises:
        DatasetIOError: If the file cannot be read
        InputError: If a line is not a valid scene
    """
    scenes = []
    try:
        with open(path, "r") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    scenes.append(Scene.model_validate_json(line))
                except ValidationError as e:
                    raise InputError(f"{path}:{line_no}: invalid scene ({e.error_count()} errors)") from e
    except OSError as e:
        raise DatasetIOError(f"cannot read dataset ({e.strerror})", path) from e
    return scenes


def _check_uniform(counts: Sequence[int], what: str) -> None:
    if len(set(counts)) > 1:
        raise InputError(f"{what} differs between predictions ({min(counts)} vs {max(counts)})")


@dataclass
class GroupOutputs:
    """Group-head outputs of every query as arrays: activity (N_q, N_v), size (N_q,), points (N_q, M, 2)."""

    activity: np.ndarray
    size: np.ndarray
    points: np.ndarray

    def __len__(self) -> int:
        return self.activity.shape[0]

    def to_predictions(self) -> List[GroupPrediction]:
        return [
            GroupPrediction(
                activity_probs=tuple(float(p) for p in self.activity[q]),
                size_norm=float(self.size[q]),
                member_points=tuple(Point2(x=float(x), y=float(y)) for x, y in self.points[q]),
            )
            for q in range(len(self))
        ]

    @classmethod
    def from_predictions(cls, preds: Sequence[GroupPrediction]) -> "GroupOutputs":
        """
        Stack group predictions into arrays.

        Raises:
            InputError: If the list is empty, or the predictions differ in
                activity length or member point count
        """
        if not preds:
            raise InputError("empty prediction list")
        _check_uniform([len(p.activity_probs) for p in preds], "activity length")
        _check_uniform([len(p.member_points) for p in preds], "member point count")
        return cls(
            activity=np.array([p.activity_probs for p in preds], dtype=np.float64),
            size=np.array([p.size_norm for p in preds], dtype=np.float64),
            points=np.array([p.points_array() for p in preds], dtype=np.float64),
        )


@dataclass
class IndividualOutputs:
    """Individual-head outputs as arrays: scores (N_q,), boxes (N_q, 4), actions (N_q, N_a)."""

    scores: np.ndarray
    boxes: np.ndarray
    actions: np.ndarray

    def __len__(self) -> int:
        return self.scores.shape[0]

    def to_predictions(self) -> List[IndividualPrediction]:
        # sigmoid outputs can underflow to exactly 0 for w/h; Box requires w, h > 0
        boxes = self.boxes.copy()
        boxes[:, 2:] = np.clip(boxes[:, 2:], BOX_SIZE_FLOOR, 1.0)
        return [
            IndividualPrediction(
                score=float(self.scores[q]),
                box=Box.from_array(boxes[q]),
                action_probs=tuple(float(p) for p in self.actions[q]),
            )
            for q in range(len(self))
        ]

    @classmethod
    def from_predictions(cls, preds: Sequence[IndividualPrediction]) -> "IndividualOutputs":
        if not preds:
            raise InputError("empty prediction list")
        _check_uniform([len(p.action_probs) for p in preds], "action length")
        return cls(
            scores=np.array([p.score for p in preds], dtype=np.float64),
            boxes=np.array([p.box.as_array() for p in preds], dtype=np.float64),
            actions=np.array([p.action_probs for p in preds], dtype=np.float64),
        )
