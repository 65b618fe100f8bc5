# train.py

"""
Training and evaluation loops.

Each step draws its batch from a generator seeded with (seed, step), so a run
resumed from a checkpoint sees exactly the batches the uninterrupted run
would have seen; together with the saved optimizer moments this makes resumed
runs bit-identical.
"""

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from assignment import Assignment
from core import GroupOutputs, HyperParams, IndividualOutputs, PointOrder, Scene, member_order
from costs import GroupCostWeights, IndividualCostWeights
from errors import DatasetIOError, DivergenceError, InputError
from inference import MemberMatching, SceneResult, build_scene_result
from jobs.run_manager import RunManager
from losses import LossBreakdown, group_loss, individual_loss
from matching import match_groups, match_individuals
from metrics import get_registry, order_change_ratio
from models.checkpoint import save_checkpoint
from models.network import ForwardResult, backward, model_forward
from models.optim import AdamState, optimizer_step
from models.params import GradientBuffer, ModelParams
from synth import SynthConfig

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("l_v", "l_s", "l_u", "l_c", "l_b", "l_o", "l_a", "total")


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    hyper_params: HyperParams = Field(default_factory=HyperParams.desk)
    synth: Optional[SynthConfig] = None
    steps: int = Field(default=3000, ge=0)
    batch_size: int = Field(default=8, gt=0)
    lr: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    lr_decay_step: int = Field(default=2500, ge=0)
    lr_decay_factor: float = Field(default=0.1, gt=0.0)
    seed: int = 0
    n_train_scenes: int = Field(default=512, gt=0)
    n_eval_scenes: int = Field(default=128, gt=0)
    checkpoint_every: int = Field(default=500, ge=0)
    log_every: int = Field(default=100, gt=0)
    point_order: PointOrder = PointOrder.ASC_X

    @model_validator(mode="after")
    def _synth_fits_model(self):
        if self.synth is not None:
            hp, s = self.hyper_params, self.synth
            if (s.N_v, s.N_a, s.M, s.D_tok) != (hp.N_v, hp.N_a, hp.M, hp.D_tok):
                raise ValueError("synth N_v, N_a, M and D_tok must equal the hyper-parameters")
        return self

    def synth_config(self) -> SynthConfig:
        return self.synth or SynthConfig.from_hyper_params(self.hyper_params)

    def lr_at(self, step: int) -> float:
        """Constant learning rate, multiplied once by lr_decay_factor from lr_decay_step on."""
        return self.lr * self.lr_decay_factor if step >= self.lr_decay_step else self.lr

    @classmethod
    def from_json_file(cls, path: str) -> "TrainConfig":
        """
        Load a config file.

        Raises:
            DatasetIOError: If the file cannot be read
            ValidationError: If the content is not a valid config
        """
        try:
            with open(path, "r") as f:
                text = f.read()
        except OSError as e:
            raise DatasetIOError(f"cannot read config ({e.strerror})", path) from e
        return cls.model_validate_json(text)


@dataclass
class TrainResult:
    params: ModelParams
    state: Optional[AdamState]
    step: int
    history: List[Dict[str, float]] = field(default_factory=list)


def apply_point_order(scene: Scene, order: PointOrder) -> Scene:
    """Re-sort every group's member points (and member indices with them) by the given order."""
    groups = []
    changed = False
    for g in scene.groups:
        idx = member_order(g.points_array(), order) if g.member_points else np.arange(0)
        if list(idx) != list(range(len(idx))):
            changed = True
            update = {"member_points": tuple(g.member_points[i] for i in idx)}
            if len(g.member_indices) == len(idx):
                update["member_indices"] = tuple(g.member_indices[i] for i in idx)
            g = g.model_copy(update=update)
        groups.append(g)
    return scene.model_copy(update={"groups": tuple(groups)}) if changed else scene


def predict(params: ModelParams, scene: Scene) -> Tuple[GroupOutputs, IndividualOutputs]:
    fwd = model_forward(params, scene.tokens_array())
    return fwd.group, fwd.individual


def scene_loss(
    params: ModelParams,
    scene: Scene,
    hp: HyperParams,
    assignments: Optional[Tuple[Assignment, Assignment]] = None,
) -> Tuple[LossBreakdown, ForwardResult, Tuple[Assignment, Assignment]]:
    """
    Forward one scene, match it and compute both losses.

    Args:
        assignments: Fixed (group, individual) assignments; matched afresh when omitted
    """
    fwd = model_forward(params, scene.tokens_array())
    if assignments is None:
        assignments = (
            match_groups(scene.groups, fwd.group, GroupCostWeights.from_hyper_params(hp), hp.M),
            match_individuals(scene.persons, fwd.individual, IndividualCostWeights.from_hyper_params(hp)),
        )
    group_assignment, individual_assignment = assignments
    loss = group_loss(scene.groups, fwd.group, group_assignment, hp).combine(
        individual_loss(scene.persons, fwd.individual, individual_assignment, hp)
    )
    return loss, fwd, assignments


def batch_gradient(params: ModelParams, scenes: Sequence[Scene], hp: HyperParams) -> Tuple[Dict[str, float], GradientBuffer]:
    """Mean loss components and mean gradient over a batch, reduced in scene order."""
    grads = GradientBuffer.like(params)
    sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
    for scene in scenes:
        loss, fwd, _ = scene_loss(params, scene, hp)
        backward(params, fwd, loss, grads)
        for key, value in loss.components().items():
            sums[key] += value
    n = len(scenes)
    grads.scale(1.0 / n)
    return {key: value / n for key, value in sums.items()}, grads


def batch_indices(seed: int, step: int, n_scenes: int, batch_size: int) -> np.ndarray:
    rng = np.random.default_rng([seed, step])
    return rng.integers(0, n_scenes, size=batch_size)


def checkpoint_path(directory: str, step: int) -> str:
    return os.path.join(directory, f"ckpt-{step:06d}.bin")


def _append_csv(path: str, row: Dict[str, float], write_header: bool) -> None:
    try:
        with open(path, "a", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=("step",) + LOSS_COLUMNS)
            if write_header:
                writer.writeheader()
            writer.writerow(row)
    except OSError as e:
        raise DatasetIOError(f"cannot write training log ({e.strerror})", path) from e


def train(
    cfg: TrainConfig,
    dataset: Sequence[Scene],
    params: Optional[ModelParams] = None,
    state: Optional[AdamState] = None,
    start_step: int = 0,
    out_dir: Optional[str] = None,
    runs: Optional[RunManager] = None,
    run_id: Optional[str] = None,
    progress: bool = True,
) -> TrainResult:
    """
    Train on a dataset for cfg.steps steps in total.

    Args:
        cfg: Training configuration
        dataset: Training scenes
        params: Starting parameters; a seeded initialization when omitted
        state: Optimizer state matching params (when resuming)
        start_step: Number of steps already done (when resuming)
        out_dir: Directory for checkpoints and the CSV log; nothing is written when omitted
        runs: Run records to keep up to date
        run_id: Record of this run in runs
        progress: Show a progress bar

    Returns:
        Final parameters, optimizer state, step count and per-step loss history

    Raises:
        InputError: If the dataset is empty or start_step is past cfg.steps
        DivergenceError: If a loss or gradient stops being finite
    """
    if not dataset:
        raise InputError("empty training dataset")
    if start_step > cfg.steps:
        raise InputError(f"resume step {start_step} is past the configured {cfg.steps} steps")
    hp = cfg.hyper_params
    if params is None:
        params = ModelParams.init(hp, cfg.seed)
    scenes = [apply_point_order(s, cfg.point_order) for s in dataset]

    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.csv")
        if start_step == 0 and os.path.exists(log_path):
            os.remove(log_path)
        if runs and run_id:
            runs.add_artifact(run_id, "log", log_path)

    history: List[Dict[str, float]] = []
    bar = tqdm(range(start_step, cfg.steps), disable=not progress, desc="train", unit="step")
    for step in bar:
        if not params.all_finite():
            raise DivergenceError(f"non-finite parameter {params.first_non_finite()}", step=step)
        batch = [scenes[i] for i in batch_indices(cfg.seed, step, len(scenes), cfg.batch_size)]
        losses, grads = batch_gradient(params, batch, hp)
        if not np.isfinite(losses["total"]):
            raise DivergenceError("non-finite loss", step=step)
        try:
            params, state = optimizer_step(params, grads, state, cfg.lr_at(step), cfg.weight_decay)
        except DivergenceError as e:
            raise DivergenceError("diverged", step=step) from e

        row = {"step": step, **losses}
        history.append(row)
        if log_path:
            _append_csv(log_path, row, write_header=not os.path.exists(log_path))
        bar.set_postfix(loss=f"{losses['total']:.4f}")

        done = step + 1
        if done % cfg.log_every == 0:
            logger.info("step %d %s", done, " ".join(f"{k}={v:.5f}" for k, v in losses.items()))
            if runs and run_id:
                runs.record_progress(run_id, done, losses)
        if out_dir and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            _save(out_dir, cfg, params, state, done, runs, run_id)

    final_step = cfg.steps
    if out_dir and not (cfg.checkpoint_every and final_step % cfg.checkpoint_every == 0 and final_step > start_step):
        _save(out_dir, cfg, params, state, final_step, runs, run_id)
    if runs and run_id and history:
        runs.record_progress(run_id, final_step, {k: v for k, v in history[-1].items() if k != "step"})
    return TrainResult(params=params, state=state, step=final_step, history=history)


def _save(out_dir, cfg, params, state, step, runs, run_id) -> str:
    path = checkpoint_path(out_dir, step)
    save_checkpoint(path, cfg.hyper_params, params, step, state, train_config=cfg.model_dump(mode="json"))
    logger.info("checkpoint %s", path)
    if runs and run_id:
        runs.add_artifact(run_id, "checkpoint", path, {"step": step})
    return path


class EvalReport(BaseModel):
    accuracy: float
    identification_accuracy: float
    map: float
    per_class: List[Optional[float]]
    order_ratios: Dict[str, Optional[float]]
    size_accuracy: float
    identification_by_size: Dict[int, float]
    identification_per_class: List[Optional[float]]
    n_scenes: int
    member_matching: MemberMatching


def oracle_outputs(scene: Scene, hp: HyperParams) -> Tuple[GroupOutputs, IndividualOutputs]:
    """
    Predictions copied from the ground truth: one query per group and per person, the rest empty.

    Raises:
        InputError: If the scene has more groups or persons than queries
    """
    if len(scene.groups) > hp.N_q or len(scene.persons) > hp.N_q:
        raise InputError(f"more ground truths than queries ({hp.N_q})")
    activity = np.zeros((hp.N_q, hp.N_v))
    size = np.zeros(hp.N_q)
    points = np.full((hp.N_q, hp.M, 2), 0.5)
    for q, g in enumerate(scene.groups):
        activity[q] = g.activity
        size[q] = g.size_norm(hp.M)
        pts = g.points_array()
        points[q, :len(pts)] = pts
    scores = np.zeros(hp.N_q)
    boxes = np.tile([0.5, 0.5, 0.1, 0.1], (hp.N_q, 1))
    actions = np.zeros((hp.N_q, hp.N_a))
    for q, p in enumerate(scene.persons):
        scores[q] = 1.0
        boxes[q] = p.box.as_array()
        actions[q] = p.action
    return GroupOutputs(activity, size, points), IndividualOutputs(scores, boxes, actions)


def _order_ratios(dataset: Sequence[Scene], sigma: float, trials: int, seed: int) -> Dict[str, Optional[float]]:
    ratios: Dict[str, Optional[float]] = {}
    for order in PointOrder:
        try:
            ratios[order.value] = order_change_ratio(dataset, order, sigma, trials, seed)
        except InputError as e:
            logger.warning("order ratio for %s skipped: %s", order.value, e)
            ratios[order.value] = None
    return ratios


def evaluate(
    params: Optional[ModelParams],
    dataset: Sequence[Scene],
    hp: HyperParams,
    method: MemberMatching = MemberMatching.HUNGARIAN,
    iou_threshold: float = 0.5,
    oracle: bool = False,
    order_sigma: float = 0.02,
    order_trials: int = 1000,
    seed: int = 0,
) -> EvalReport:
    """
    Run the model (or the ground-truth oracle) on every scene and compute all metrics.

    Raises:
        InputError: If the dataset is empty or holds no ground-truth group
    """
    if not dataset:
        raise InputError("empty evaluation dataset")
    if params is None and not oracle:
        raise InputError("evaluation needs parameters unless the oracle is used")
    results: List[SceneResult] = []
    for scene in dataset:
        group, individual = oracle_outputs(scene, hp) if oracle else predict(params, scene)
        results.append(build_scene_result(scene, group, individual, hp.M, method))

    values: Dict[str, Any] = get_registry().evaluate_all(results, iou_threshold=iou_threshold)
    mean_ap, per_class = values.pop("map")
    report = EvalReport(
        map=mean_ap,
        per_class=per_class,
        order_ratios=_order_ratios(dataset, order_sigma, order_trials, seed),
        n_scenes=len(dataset),
        member_matching=method,
        **values,
    )
    logger.info("accuracy %.4f identification %.4f mAP %.4f", report.accuracy, report.identification_accuracy, report.map)
    return report
