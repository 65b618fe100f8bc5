# runner.py

import argparse
import json
import logging
import os
import statistics
import sys
import time
from typing import List, Optional

import humanfriendly
import numpy as np
from pydantic import BaseModel, ValidationError

from assignment import solve_assignment
from core import GroupPrediction, HyperParams, IndividualPrediction, PointOrder, Scene, read_scenes
from costs import GroupCostWeights, IndividualCostWeights
from errors import DivergenceError, GroupSetError, InputError
from gradcheck import TOLERANCE, run_gradcheck
from inference import MemberMatching
from jobs.run_manager import RunManager, RunStatus
from logging_config import setup_logging
from matching import explain_group_matches, explain_individual_matches, match_groups, match_individuals
from metrics import order_change_ratio
from models.checkpoint import load_checkpoint
from settings import get_settings
from synth import SynthConfig, generate_dataset, generate_scene, write_dataset
from train import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad command line; reported with the usage text."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


class MatchInput(BaseModel):
    scene: Scene
    group_preds: List[GroupPrediction]
    individual_preds: List[IndividualPrediction]


def _read_model(path: str, model):
    with open(path, "r") as f:
        return model.model_validate_json(f.read())


# synth flag dest -> SynthConfig field
SYNTH_OVERRIDES = {
    "n_groups": "n_groups_range",
    "group_size": "group_size_range",
    "distractors": "n_distractors_range",
    "background": "n_background",
    "n_v": "N_v",
    "n_a": "N_a",
    "max_group_size": "M",
    "d_tok": "D_tok",
    "noise_sigma": "noise_sigma",
    "spacing": "member_spacing",
    "jitter": "jitter",
    "box_w": "box_w",
    "box_h": "box_h",
    "margin": "margin",
}


def _synth_config(args) -> SynthConfig:
    """The --config file (or defaults) with the generator flags laid over it."""
    cfg = _read_model(args.config, SynthConfig) if args.config else SynthConfig()
    overrides = {field: getattr(args, dest) for dest, field in SYNTH_OVERRIDES.items() if getattr(args, dest) is not None}
    if not overrides:
        return cfg
    return SynthConfig.model_validate({**cfg.model_dump(), **overrides})


def _write_json(path: str, data) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        f.write(data if isinstance(data, str) else json.dumps(data, indent=2))
        f.write("\n")


class GroupSetRunner:
    def __init__(self):
        """Initialize the runner with process settings."""
        self.settings = get_settings()

    def build_parser(self) -> argparse.ArgumentParser:
        parser = _Parser(prog="groupset", description="GroupSet - social group activity recognition with set prediction")
        parser.add_argument("--log-level", default=self.settings.log_level, help="Logging level (DEBUG, INFO, WARNING, ...)")
        subparsers = parser.add_subparsers(dest="command", help="Command to run", parser_class=_Parser)
        seed = self.settings.default_seed

        synth_parser = subparsers.add_parser("synth", help="Generate a synthetic dataset")
        synth_parser.add_argument("--scenes", type=int, required=True, help="Number of scenes")
        synth_parser.add_argument("--seed", type=int, default=seed)
        synth_parser.add_argument("--out", required=True, help="Output .jsonl file")
        synth_parser.add_argument("--config", help="SynthConfig JSON file")
        synth_parser.add_argument("--split-ratio", type=float, help="Write a train/eval split (eval part goes to <out>.eval.jsonl)")
        scene_group = synth_parser.add_argument_group("scene generator", "override fields of the --config file")
        scene_group.add_argument("--n-groups", type=int, nargs=2, metavar=("MIN", "MAX"), help="Groups per scene")
        scene_group.add_argument("--group-size", type=int, nargs=2, metavar=("MIN", "MAX"), help="Members per group")
        scene_group.add_argument("--distractors", type=int, nargs=2, metavar=("MIN", "MAX"), help="Ungrouped persons per scene")
        scene_group.add_argument("--background", type=int, help="Empty background tokens per scene")
        scene_group.add_argument("--n-v", type=int, help="Number of activity classes")
        scene_group.add_argument("--n-a", type=int, help="Number of action classes")
        scene_group.add_argument("-m", "--max-group-size", type=int, help="Member slots per group (M)")
        scene_group.add_argument("--d-tok", type=int, help="Token width")
        scene_group.add_argument("--noise-sigma", type=float, help="Token noise standard deviation")
        scene_group.add_argument("--spacing", type=float, help="Horizontal spacing between members")
        scene_group.add_argument("--jitter", type=float, help="Position jitter of members")
        scene_group.add_argument("--box-w", type=float, help="Person box width")
        scene_group.add_argument("--box-h", type=float, help="Person box height")
        scene_group.add_argument("--margin", type=float, help="Minimum gap between placed boxes")

        train_parser = subparsers.add_parser("train", help="Train the model")
        train_parser.add_argument("--config", help="TrainConfig JSON file")
        train_parser.add_argument("--out", default=self.settings.runs_dir, help="Directory for checkpoints, log and run records")
        train_parser.add_argument("--data", help="Training .jsonl file; generated from the config when omitted")
        train_parser.add_argument("--resume", help="Checkpoint to resume from")
        train_parser.add_argument("--steps", type=int, help="Override the configured number of steps")
        train_parser.add_argument("--seed", type=int, help="Override the configured seed")
        train_parser.add_argument("--no-progress", action="store_true", help="Hide the progress bar")

        eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint")
        eval_parser.add_argument("--checkpoint", help="Checkpoint file (not needed with --oracle)")
        eval_parser.add_argument("--data", required=True, help="Evaluation .jsonl file")
        eval_parser.add_argument("--out", help="Write the JSON report here")
        eval_parser.add_argument("--config", help="HyperParams JSON file for --oracle without a checkpoint")
        eval_parser.add_argument("--member-matching", choices=[m.value for m in MemberMatching], default=MemberMatching.HUNGARIAN.value)
        eval_parser.add_argument("--oracle", action="store_true", help="Evaluate predictions copied from the ground truth")
        eval_parser.add_argument("--iou-threshold", type=float, default=0.5)
        eval_parser.add_argument("--seed", type=int, default=seed)

        match_parser = subparsers.add_parser("match", help="Match predictions to a scene and explain the costs")
        match_parser.add_argument("--input", required=True, help="JSON file {scene, group_preds, individual_preds}")
        match_parser.add_argument("--config", help="HyperParams JSON file")

        grad_parser = subparsers.add_parser("gradcheck", help="Finite-difference check of the model gradient")
        grad_parser.add_argument("--seed", type=int, default=seed)
        grad_parser.add_argument("--points", type=int, default=30, help="Parameter coordinates per component")

        order_parser = subparsers.add_parser("order-analysis", help="Member order stability under box noise")
        order_parser.add_argument("--data", help="Dataset .jsonl file; synthetic scenes when omitted")
        order_parser.add_argument("--scenes", type=int, default=200, help="Synthetic scenes when --data is omitted")
        order_parser.add_argument("--sigma", type=float, default=0.02)
        order_parser.add_argument("--trials", type=int, default=1000)
        order_parser.add_argument("--seed", type=int, default=seed)
        order_parser.add_argument("--out", help="Write the JSON result here")

        bench_parser = subparsers.add_parser("bench", help="Time the assignment solver")
        bench_parser.add_argument("--n", type=int, default=300, help="Square matrix size")
        bench_parser.add_argument("--runs", type=int, default=20)
        bench_parser.add_argument("--seed", type=int, default=seed)

        runs_parser = subparsers.add_parser("runs", help="List or show training runs")
        runs_parser.add_argument("dir", nargs="?", default=self.settings.runs_dir, help="Run directory (the train --out directory)")
        runs_parser.add_argument("--run-id", help="Show one run in detail")
        runs_parser.add_argument("--limit", type=int, default=10, help="Maximum number of runs to show")
        runs_parser.add_argument("--status", choices=[s.value for s in RunStatus], help="Filter by status")
        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        """
        Parse arguments and dispatch a subcommand.

        Returns:
            0 on success, 1 for usage and validation errors, 2 for runtime errors
        """
        parser = self.build_parser()
        try:
            args = parser.parse_args(argv)
        except UsageError as e:
            print(e, file=sys.stderr)
            return 1
        except SystemExit as e:
            return int(e.code or 0)

        setup_logging(args.log_level)
        if not args.command:
            parser.print_help(sys.stderr)
            return 1

        handler = getattr(self, "cmd_" + args.command.replace("-", "_"))
        try:
            return handler(args) or 0
        except (InputError, ValidationError) as e:
            logger.error("%s", e)
            return 1
        except (GroupSetError, OSError) as e:
            logger.error("%s", e)
            return 2

    # ------------------------------------------------------------------
    # Commands
    # ------------------------------------------------------------------

    def cmd_synth(self, args) -> int:
        cfg = _synth_config(args)
        rng = np.random.default_rng(args.seed)
        if args.split_ratio is not None:
            train_scenes, eval_scenes = generate_dataset(rng, cfg, args.scenes, args.split_ratio)
        else:
            if args.scenes < 1:
                raise InputError(f"need at least 1 scene, got {args.scenes}")
            train_scenes, eval_scenes = [generate_scene(rng, cfg) for _ in range(args.scenes)], []
        for path in write_dataset(args.out, train_scenes, eval_scenes):
            print(f"Wrote {path}")
        return 0

    def cmd_train(self, args) -> int:
        params = state = None
        start_step = 0
        if args.resume:
            ckpt = load_checkpoint(args.resume)
            params, state, start_step = ckpt.params, ckpt.state, ckpt.step
            if args.config:
                cfg = TrainConfig.from_json_file(args.config)
            elif ckpt.header.train_config is not None:
                cfg = TrainConfig.model_validate(ckpt.header.train_config)
            else:
                cfg = TrainConfig(hyper_params=ckpt.hyper_params)
            if cfg.hyper_params != ckpt.hyper_params:
                raise InputError("config hyper-parameters do not match the checkpoint")
        else:
            cfg = TrainConfig.from_json_file(args.config) if args.config else TrainConfig()

        overrides = {}
        if args.steps is not None:
            overrides["steps"] = args.steps
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg = TrainConfig.model_validate({**cfg.model_dump(), **overrides})

        if args.data:
            dataset = read_scenes(args.data)
        else:
            rng = np.random.default_rng([cfg.seed, 1])
            dataset = [generate_scene(rng, cfg.synth_config()) for _ in range(cfg.n_train_scenes)]
        logger.info("training on %d scenes for %d steps (from step %d)", len(dataset), cfg.steps, start_step)

        runs = RunManager(args.out)
        run_id = runs.create_run(os.path.basename(os.path.normpath(args.out)), cfg.model_dump(mode="json"))
        if args.resume:
            runs.set_metadata(run_id, "resumed_from", args.resume)
        runs.update_run_status(run_id, RunStatus.RUNNING)
        try:
            result = train(cfg, dataset, params, state, start_step, args.out, runs, run_id, progress=not args.no_progress)
        except DivergenceError as e:
            runs.update_run_status(run_id, RunStatus.FAILED, error=str(e))
            raise
        except KeyboardInterrupt:
            runs.abort_run(run_id)
            raise
        runs.update_run_status(run_id, RunStatus.COMPLETED)

        print(f"Run {run_id} completed at step {result.step}")
        if result.history:
            last = result.history[-1]
            print("  " + "  ".join(f"{k}={v:.5f}" for k, v in last.items() if k != "step"))
        return 0

    def cmd_eval(self, args) -> int:
        dataset = read_scenes(args.data)
        params = None
        if args.checkpoint:
            ckpt = load_checkpoint(args.checkpoint)
            params, hp = ckpt.params, ckpt.hyper_params
        elif args.oracle:
            hp = _read_model(args.config, HyperParams) if args.config else HyperParams.desk()
        else:
            raise InputError("eval needs --checkpoint or --oracle")
        report = evaluate(
            params,
            dataset,
            hp,
            method=MemberMatching(args.member_matching),
            iou_threshold=args.iou_threshold,
            oracle=args.oracle,
            seed=args.seed,
        )
        text = report.model_dump_json(indent=2)
        print(text)
        if args.out:
            _write_json(args.out, text)
        return 0

    def cmd_match(self, args) -> int:
        data = _read_model(args.input, MatchInput)
        if args.config:
            hp = _read_model(args.config, HyperParams)
            M = hp.M
        else:
            hp = HyperParams()
            M = len(data.group_preds[0].member_points) if data.group_preds else hp.M
        gw = GroupCostWeights.from_hyper_params(hp)
        iw = IndividualCostWeights.from_hyper_params(hp)
        groups = match_groups(data.scene.groups, data.group_preds, gw, M)
        individuals = match_individuals(data.scene.persons, data.individual_preds, iw)
        print(json.dumps({
            "groups": {
                "map": list(groups.map),
                "total_cost": groups.total_cost,
                "pairs": explain_group_matches(data.scene.groups, data.group_preds, groups, gw, M),
            },
            "individuals": {
                "map": list(individuals.map),
                "total_cost": individuals.total_cost,
                "pairs": explain_individual_matches(data.scene.persons, data.individual_preds, individuals, iw),
            },
        }, indent=2))
        return 0

    def cmd_gradcheck(self, args) -> int:
        errors = run_gradcheck(args.seed, args.points)
        print(f"\n{'Component':<12} {'Max rel. error':<16} Status")
        print("-" * 40)
        for name, err in errors.items():
            print(f"{name:<12} {err:<16.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
        print()
        return 0 if all(err < TOLERANCE for err in errors.values()) else 2

    def cmd_order_analysis(self, args) -> int:
        if args.data:
            scenes = read_scenes(args.data)
        else:
            rng = np.random.default_rng(args.seed)
            cfg = SynthConfig()
            scenes = [generate_scene(rng, cfg) for _ in range(args.scenes)]
        ratios = {
            order.value: order_change_ratio(scenes, order, args.sigma, args.trials, args.seed)
            for order in PointOrder
        }
        for name, ratio in ratios.items():
            print(f"{name:<6} {ratio:.4f}")
        if args.out:
            _write_json(args.out, {"sigma": args.sigma, "trials": args.trials, "order_ratios": ratios})
        return 0

    def cmd_bench(self, args) -> int:
        if args.n < 1 or args.runs < 1:
            raise InputError("--n and --runs must be positive")
        rng = np.random.default_rng(args.seed)
        timings = []
        for _ in range(args.runs):
            cost = rng.random((args.n, args.n))
            start = time.perf_counter()
            solve_assignment(cost)
            timings.append(time.perf_counter() - start)
        print(f"Solved {args.runs} random {args.n}x{args.n} problems")
        print(f"  min    {humanfriendly.format_timespan(min(timings), detailed=True)}")
        print(f"  median {humanfriendly.format_timespan(statistics.median(timings), detailed=True)}")
        print(f"  mean   {humanfriendly.format_timespan(statistics.mean(timings), detailed=True)}")
        print(f"  max    {humanfriendly.format_timespan(max(timings), detailed=True)}")
        return 0

    def cmd_runs(self, args) -> int:
        runs = RunManager(args.dir)
        if args.run_id:
            run = runs.get_run(args.run_id)
            if not run:
                print(f"Run {args.run_id} not found")
                return 1
            self._print_run_details(run)
        else:
            self._print_run_list(runs.list_runs(args.limit, args.status))
        return 0

    def _print_run_list(self, runs):
        """Print a formatted list of runs."""
        if not runs:
            print("No runs found.")
            return

        print(f"\n{'ID':<14} {'Status':<10} {'Step':>7}  {'Name':<30} {'Created':<20}")
        print("-" * 86)
        for run in runs:
            name = run.get("name") or ""
            if len(name) > 27:
                name = name[:27] + "..."
            created_at = (run.get("created_at") or "").split(".")[0].replace("T", " ")
            print(f"{run['id']:<14} {run['status']:<10} {run.get('step', 0):>7}  {name:<30} {created_at:<20}")
        print()

    def _print_run_details(self, run):
        """Print detailed information about a run."""
        print("\n" + "=" * 80)
        print(f"Run ID: {run['id']}")
        print(f"Name: {run.get('name')}")
        print(f"Status: {run['status']}")
        print(f"Step: {run.get('step', 0)}")
        print(f"Created: {run['created_at']}")
        print(f"Updated: {run['updated_at']}")
        if run.get("error"):
            print(f"Error: {run['error']}")
        print("=" * 80)

        if run.get("losses"):
            print("\nLatest losses:")
            for name, value in run["losses"].items():
                print(f"  {name:<6} {value:.6f}")

        if run.get("artifacts"):
            print("\nArtifacts:")
            for artifact in run["artifacts"]:
                print(f"- {artifact['type']}: {artifact['path']}")

        if run.get("metadata"):
            print("\nMetadata:")
            for key, value in run["metadata"].items():
                print(f"  {key}: {value}")
        print("\n" + "=" * 80)
