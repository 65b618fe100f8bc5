# synth.py

"""
Synthetic scene generator.

Groups are horizontal rows of people standing side by side at (almost) the
same height, with a fixed spacing between neighbours. Every person becomes a
token that carries its own box and action, its group's activity and size
fraction, and Gaussian noise; extra tokens hold pure noise. With zero noise
the ground truth can be read straight off the tokens.
"""

import logging
import os
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core import Box, GroundTruthGroup, GroundTruthPerson, HyperParams, Point2, PointOrder, Scene, member_order, write_scenes
from errors import InputError

logger = logging.getLogger(__name__)

MAX_PLACEMENT_TRIES = 100


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_groups_range: Tuple[int, int] = (1, 1)
    group_size_range: Tuple[int, int] = (2, 6)
    n_distractors_range: Tuple[int, int] = (3, 4)
    n_background: int = Field(default=2, ge=0)
    N_v: int = Field(default=4, gt=0)
    N_a: int = Field(default=4, gt=0)
    M: int = Field(default=6, gt=0)
    D_tok: int = Field(default=16, gt=0)
    noise_sigma: float = Field(default=0.002, ge=0.0)
    member_spacing: float = Field(default=0.08, gt=0.0)
    jitter: float = Field(default=0.005, ge=0.0)
    box_w: float = Field(default=0.05, gt=0.0, lt=0.5)
    box_h: float = Field(default=0.12, gt=0.0, lt=0.5)
    margin: float = Field(default=0.02, ge=0.0)

    @model_validator(mode="after")
    def _check(self):
        for name in ("n_groups_range", "group_size_range", "n_distractors_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a nondecreasing pair of nonnegative integers")
        if self.group_size_range[0] < 1:
            raise ValueError("group_size_range must start at 1 or more")
        if self.group_size_range[1] > self.M:
            raise ValueError(f"group size exceeds M ({self.group_size_range[1]} > {self.M})")
        needed = self.token_layout_width()
        if self.D_tok < needed:
            raise ValueError(f"D_tok {self.D_tok} too small for the token layout ({needed})")
        if (self.group_size_range[1] - 1) * self.member_spacing + self.box_w > 1.0:
            raise ValueError("largest group does not fit in the image")
        return self

    def token_layout_width(self) -> int:
        """Box, action one-hot, activity one-hot and size fraction."""
        return 4 + self.N_a + self.N_v + 1

    @classmethod
    def from_hyper_params(cls, hp: HyperParams, **overrides) -> "SynthConfig":
        values = dict(N_v=hp.N_v, N_a=hp.N_a, M=hp.M, D_tok=hp.D_tok, group_size_range=(2, min(6, hp.M)))
        values.update(overrides)
        return cls(**values)


def _overlaps(rect, others, margin: float) -> bool:
    x1, y1, x2, y2 = rect
    for ox1, oy1, ox2, oy2 in others:
        if x1 < ox2 + margin and ox1 < x2 + margin and y1 < oy2 + margin and oy1 < y2 + margin:
            return True
    return False


def _place(rng: np.random.Generator, width: float, height: float, taken: list, margin: float):
    """Random rectangle of the given extent, clear of the taken ones."""
    for _ in range(MAX_PLACEMENT_TRIES):
        x1 = rng.uniform(0.0, 1.0 - width)
        y1 = rng.uniform(0.0, 1.0 - height)
        rect = (x1, y1, x1 + width, y1 + height)
        if not _overlaps(rect, taken, margin):
            taken.append(rect)
            return rect
    raise InputError(f"infeasible placement after {MAX_PLACEMENT_TRIES} tries")


def _box(cx: float, cy: float, w: float, h: float) -> Box:
    cx = float(np.clip(cx, w / 2, 1.0 - w / 2))
    cy = float(np.clip(cy, h / 2, 1.0 - h / 2))
    return Box(cx=cx, cy=cy, w=w, h=h)


def _one_hot(index: int, n: int) -> Tuple[int, ...]:
    return tuple(1 if k == index else 0 for k in range(n))


def generate_scene(rng: np.random.Generator, cfg: SynthConfig) -> Scene:
    """
    Draw one scene.

    Raises:
        InputError: If the groups and distractors cannot be placed without overlap
    """
    taken: list = []
    persons: List[GroundTruthPerson] = []
    groups_raw = []     # (activity, person indices before shuffling)

    n_groups = int(rng.integers(cfg.n_groups_range[0], cfg.n_groups_range[1] + 1))
    for _ in range(n_groups):
        size = int(rng.integers(cfg.group_size_range[0], cfg.group_size_range[1] + 1))
        activity = int(rng.integers(cfg.N_v))
        w = cfg.box_w * rng.uniform(0.9, 1.1)
        h = cfg.box_h * rng.uniform(0.9, 1.1)
        x1, y1, _, _ = _place(rng, (size - 1) * cfg.member_spacing + w, h, taken, cfg.margin)
        members = []
        for k in range(size):
            cx = x1 + w / 2 + k * cfg.member_spacing + rng.normal(0.0, cfg.jitter)
            cy = y1 + h / 2 + rng.normal(0.0, cfg.jitter)
            action = _one_hot(int(rng.integers(cfg.N_a)), cfg.N_a)
            members.append(len(persons))
            persons.append(GroundTruthPerson(box=_box(cx, cy, w, h), action=action))
        groups_raw.append((activity, members))

    n_distractors = int(rng.integers(cfg.n_distractors_range[0], cfg.n_distractors_range[1] + 1))
    for _ in range(n_distractors):
        w = cfg.box_w * rng.uniform(0.9, 1.1)
        h = cfg.box_h * rng.uniform(0.9, 1.1)
        x1, y1, x2, y2 = _place(rng, w, h, taken, cfg.margin)
        action = _one_hot(int(rng.integers(cfg.N_a)), cfg.N_a)
        persons.append(GroundTruthPerson(box=_box((x1 + x2) / 2, (y1 + y2) / 2, w, h), action=action))

    perm = rng.permutation(len(persons))
    new_index = {int(old): new for new, old in enumerate(perm)}
    shuffled = [persons[int(old)] for old in perm]

    groups = []
    person_group = {}
    for activity, members in groups_raw:
        centers = np.array([persons[i].box.as_array()[:2] for i in members])
        order = member_order(centers, PointOrder.ASC_X)
        points = tuple(Point2(x=persons[members[k]].box.cx, y=persons[members[k]].box.cy) for k in order)
        member_indices = tuple(new_index[members[k]] for k in order)
        groups.append(GroundTruthGroup(
            activity=_one_hot(activity, cfg.N_v),
            size=len(members),
            member_indices=member_indices,
            member_points=points,
        ))
        for idx in member_indices:
            person_group[idx] = (activity, len(members))

    tokens = []
    for idx, person in enumerate(shuffled):
        token = np.zeros(cfg.D_tok)
        token[:4] = person.box.as_array()
        token[4:4 + cfg.N_a] = person.action
        if idx in person_group:
            activity, size = person_group[idx]
            token[4 + cfg.N_a + activity] = 1.0
            token[4 + cfg.N_a + cfg.N_v] = size / cfg.M
        tokens.append(token)
    # a scene always has at least one token
    n_background = cfg.n_background if shuffled else max(cfg.n_background, 1)
    tokens += [np.zeros(cfg.D_tok) for _ in range(n_background)]
    token_array = np.array(tokens)
    if cfg.noise_sigma > 0:
        token_array = token_array + rng.normal(0.0, cfg.noise_sigma, size=token_array.shape)

    return Scene(
        persons=tuple(shuffled),
        groups=tuple(groups),
        tokens=tuple(tuple(float(v) for v in row) for row in token_array),
    )


def generate_dataset(
    rng: np.random.Generator,
    cfg: SynthConfig,
    n_scenes: int,
    split_ratio: float = 0.8,
) -> Tuple[List[Scene], List[Scene]]:
    """
    Draw n_scenes scenes and split them into train and eval parts.

    Raises:
        InputError: If n_scenes < 2 or the ratio is outside (0, 1)
    """
    if n_scenes < 2:
        raise InputError(f"need at least 2 scenes, got {n_scenes}")
    if not 0.0 < split_ratio < 1.0:
        raise InputError(f"split ratio must lie in (0, 1), got {split_ratio}")
    scenes = [generate_scene(rng, cfg) for _ in range(n_scenes)]
    n_train = min(max(int(round(n_scenes * split_ratio)), 1), n_scenes - 1)
    logger.info("generated %d scenes (%d train, %d eval)", n_scenes, n_train, n_scenes - n_train)
    return scenes[:n_train], scenes[n_train:]


def eval_split_path(path: str) -> str:
    """Path of the eval part written next to a train dataset: d.jsonl -> d.eval.jsonl."""
    root, ext = os.path.splitext(path)
    return f"{root}.eval{ext or '.jsonl'}"


def write_dataset(path: str, train: List[Scene], eval_scenes: Optional[List[Scene]] = None) -> List[str]:
    """
    Write the train part to path and the eval part, if any, next to it.

    Returns:
        The paths written
    """
    written = [path]
    write_scenes(path, train)
    if eval_scenes:
        eval_path = eval_split_path(path)
        write_scenes(eval_path, eval_scenes)
        written.append(eval_path)
    return written
