# metrics/detection.py

"""
Group identification metrics.

A predicted group identifies a ground-truth group when its activity is right,
it has exactly as many members, and its member boxes can be paired one-to-one
with the ground-truth member boxes (Hungarian matching on 1 - IoU) so that
every pair overlaps with IoU above the threshold.
"""

import hashlib
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from assignment import solve_assignment
from core import GroundTruthGroup, Scene
from costs import iou_arrays
from errors import InputError
from inference import SceneResult, decode_group_size
from metrics.activity import scored_scenes


def boxes_match(pred_boxes: np.ndarray, gt_boxes: np.ndarray, iou_threshold: float = 0.5) -> bool:
    """True if the two box sets pair up one-to-one with every IoU above the threshold."""
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if pred_boxes.shape[0] != gt_boxes.shape[0]:
        return False
    if gt_boxes.shape[0] == 0:
        return True
    overlap = iou_arrays(gt_boxes[:, None, :], pred_boxes[None, :, :])
    pairs = solve_assignment(1.0 - overlap).map
    return bool(all(overlap[i, j] > iou_threshold for i, j in enumerate(pairs)))


def _gt_member_boxes(scene: Scene, group: GroundTruthGroup) -> np.ndarray:
    return np.array([scene.persons[i].box.as_array() for i in group.member_indices]).reshape(-1, 4)


def _identifies(result: SceneResult, q: int, predicted_class: int, gt: GroundTruthGroup, iou_threshold: float) -> bool:
    if predicted_class != gt.activity_class():
        return False
    M = result.group.points.shape[1]
    if decode_group_size(float(result.group.size[q]), M) != gt.size:
        return False
    if len(result.memberships[q].member_pred_indices) != gt.size:
        return False
    return boxes_match(result.member_boxes(q), _gt_member_boxes(result.scene, gt), iou_threshold)


def scene_identified(result: SceneResult, iou_threshold: float = 0.5) -> bool:
    """Whether the top-scoring group identifies the scene's first ground-truth group."""
    q, c = result.top_group()
    return _identifies(result, q, c, result.scene.groups[0], iou_threshold)


def group_identification_accuracy(results: Sequence[SceneResult], iou_threshold: float = 0.5) -> float:
    scored = scored_scenes(results)
    return sum(scene_identified(r, iou_threshold) for r in scored) / len(scored)


def identification_by_size(results: Sequence[SceneResult], iou_threshold: float = 0.5) -> Dict[int, float]:
    """Identification accuracy of scenes grouped by the size of their first ground-truth group."""
    hits: Dict[int, List[bool]] = defaultdict(list)
    for r in scored_scenes(results):
        hits[r.scene.groups[0].size].append(scene_identified(r, iou_threshold))
    return {size: sum(v) / len(v) for size, v in sorted(hits.items())}


def identification_per_class(results: Sequence[SceneResult], iou_threshold: float = 0.5) -> List[Optional[float]]:
    """Identification accuracy per ground-truth activity class; None for classes never seen."""
    scored = scored_scenes(results)
    n_classes = scored[0].group.activity.shape[1]
    hits: Dict[int, List[bool]] = defaultdict(list)
    for r in scored:
        hits[r.scene.groups[0].activity_class()].append(scene_identified(r, iou_threshold))
    return [sum(hits[c]) / len(hits[c]) if hits[c] else None for c in range(n_classes)]


def average_precision(tp: Sequence[bool], n_positive: int) -> float:
    """
    Area under the all-point interpolated precision/recall curve.

    Args:
        tp: True-positive flag of each prediction, in descending score order
        n_positive: Number of ground truths of the class
    """
    if n_positive == 0:
        raise InputError("average precision needs at least one ground truth")
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_positive
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]).sum())


def _result_key(result: SceneResult) -> str:
    """Digest of a scene and its outputs; orders equal-score detections independently of dataset order."""
    digest = hashlib.sha256(result.scene.model_dump_json().encode())
    for array in (result.group.activity, result.group.size, result.group.points, result.individual.scores, result.individual.boxes):
        digest.update(np.ascontiguousarray(array, dtype=np.float64).tobytes())
    return digest.hexdigest()


def social_group_map(results: Sequence[SceneResult], iou_threshold: float = 0.5) -> Tuple[float, List[Optional[float]]]:
    """
    Mean average precision of group detection over activity classes.

    Every group query is a detection of its argmax class, scored by its
    highest activity probability. Detections are ranked across the whole
    dataset and each one greedily claims the first still-unclaimed
    ground-truth group of its class in its scene that it identifies. Equal
    scores are ordered by a digest of each scene and its outputs, then by
    query index.

    Returns:
        (mAP, per_class): per_class is None for classes without ground truth

    Raises:
        InputError: If the results hold no ground-truth group
    """
    if not results:
        raise InputError("no results to evaluate")
    n_classes = results[0].group.activity.shape[1]
    n_positive = np.zeros(n_classes, dtype=int)
    for r in results:
        for g in r.scene.groups:
            n_positive[g.activity_class()] += 1
    if n_positive.sum() == 0:
        raise InputError("no ground-truth groups")

    detections = []
    for s, r in enumerate(results):
        key = _result_key(r)
        classes = np.argmax(r.group.activity, axis=1)
        scores = r.group.activity.max(axis=1)
        detections += [(float(scores[q]), key, q, s, int(classes[q])) for q in range(len(r.group))]
    detections.sort(key=lambda d: (-d[0], d[1], d[2]))

    claimed = set()
    flags: Dict[int, List[bool]] = defaultdict(list)
    for _, _, q, s, c in detections:
        r = results[s]
        hit = False
        for g, gt in enumerate(r.scene.groups):
            if (s, g) in claimed or gt.activity_class() != c:
                continue
            if _identifies(r, q, c, gt, iou_threshold):
                claimed.add((s, g))
                hit = True
                break
        flags[c].append(hit)

    per_class: List[Optional[float]] = [
        average_precision(flags[c], int(n_positive[c])) if n_positive[c] else None for c in range(n_classes)
    ]
    valid = [ap for ap in per_class if ap is not None]
    return float(np.mean(valid)), per_class


def register_detection_metrics(registry) -> None:
    registry.register(
        "identification_accuracy",
        lambda results, iou_threshold=0.5, **_: group_identification_accuracy(results, iou_threshold),
        "Top group has the right activity, size and member boxes",
    )
    registry.register(
        "identification_by_size",
        lambda results, iou_threshold=0.5, **_: identification_by_size(results, iou_threshold),
        "Identification accuracy per ground-truth group size",
    )
    registry.register(
        "identification_per_class",
        lambda results, iou_threshold=0.5, **_: identification_per_class(results, iou_threshold),
        "Identification accuracy per ground-truth activity class",
    )
    registry.register(
        "map",
        lambda results, iou_threshold=0.5, **_: social_group_map(results, iou_threshold),
        "Social group detection mAP and per-class AP",
    )
