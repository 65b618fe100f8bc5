# metrics/ordering.py

from typing import Sequence

import numpy as np

from core import PointOrder, Scene
from errors import InputError


def _batched_order(points: np.ndarray, order: PointOrder) -> np.ndarray:
    """member_order over the last two axes of a (..., n, 2) array."""
    x, y = points[..., 0], points[..., 1]
    keys = (y, x) if PointOrder(order) is PointOrder.ASC_X else (x, y)
    return np.lexsort(keys, axis=-1)


def order_change_ratio(
    scenes: Sequence[Scene],
    order: PointOrder = PointOrder.ASC_X,
    sigma: float = 0.02,
    trials: int = 1000,
    seed: int = 0,
) -> float:
    """
    How often small Gaussian noise on member box centres changes the sorted member order.

    Args:
        scenes: Scenes whose groups are perturbed; groups with fewer than two members are skipped
        order: Sorting rule under test
        sigma: Standard deviation of the per-coordinate noise, in image units
        trials: Perturbations drawn per group
        seed: Seed of the noise generator

    Returns:
        Fraction of perturbed groups whose order changed

    Raises:
        InputError: If sigma or trials is not positive, or no group has two members
    """
    if sigma <= 0 or trials <= 0:
        raise InputError(f"sigma and trials must be positive (got {sigma}, {trials})")
    rng = np.random.default_rng(seed)
    changed = 0
    total = 0
    for scene in scenes:
        for group in scene.groups:
            if group.size < 2:
                continue
            centers = np.array([scene.persons[i].box.as_array()[:2] for i in group.member_indices])
            base = _batched_order(centers, order)
            noisy = centers[None] + rng.normal(0.0, sigma, size=(trials,) + centers.shape)
            perms = _batched_order(noisy, order)
            changed += int((perms != base[None]).any(axis=1).sum())
            total += trials
    if total == 0:
        raise InputError("no group with at least two members")
    return changed / total
