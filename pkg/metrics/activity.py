# metrics/activity.py

"""Scene-level group activity metrics on the top-scoring group prediction."""

from typing import List, Sequence

from errors import InputError
from inference import SceneResult, decode_group_size


def scored_scenes(results: Sequence[SceneResult]) -> List[SceneResult]:
    """
    Scenes the single-activity protocols apply to: those with a ground-truth group.

    The first ground-truth group is the scene's target.

    Raises:
        InputError: If no scene has a ground-truth group
    """
    if not results:
        raise InputError("no results to evaluate")
    scored = [r for r in results if r.scene.groups]
    if not scored:
        raise InputError("no scene has a ground-truth group")
    return scored


def group_activity_accuracy(results: Sequence[SceneResult]) -> float:
    """Fraction of scenes whose top activity class equals the ground-truth activity."""
    scored = scored_scenes(results)
    correct = sum(1 for r in scored if r.top_group()[1] == r.scene.groups[0].activity_class())
    return correct / len(scored)


def size_accuracy(results: Sequence[SceneResult]) -> float:
    """Fraction of scenes whose top group decodes to the ground-truth size."""
    scored = scored_scenes(results)
    M = scored[0].group.points.shape[1]
    correct = 0
    for r in scored:
        q, _ = r.top_group()
        if decode_group_size(float(r.group.size[q]), M) == r.scene.groups[0].size:
            correct += 1
    return correct / len(scored)


def register_activity_metrics(registry) -> None:
    registry.register(
        "accuracy",
        lambda results, **_: group_activity_accuracy(results),
        "Group activity accuracy of the top-scoring group",
    )
    registry.register(
        "size_accuracy",
        lambda results, **_: size_accuracy(results),
        "Fraction of scenes whose top group decodes to the ground-truth size",
    )
