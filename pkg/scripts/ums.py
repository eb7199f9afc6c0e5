#!/usr/bin/env python3
"""
Command line entry point for scene generation, training, studies and evaluation.

    python scripts/ums.py gen-scenes --out scenes/seed0
    python scripts/ums.py run --set iterations=5 --set toggles.ccl=false
    python scripts/ums.py run --run-dir runs/run-ab12cd34 --resume
    python scripts/ums.py ablate
    python scripts/ums.py robustness --sigma 0.2 --delay 1
    python scripts/ums.py eval --run-dir runs/run-ab12cd34
    python scripts/ums.py study-tau | study-mu3 | study-iterations

Exit codes: 0 success, 1 invalid input or I/O failure, 2 pipeline stage failure.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

# Add packages and services to path
sys.path.append(str(Path(__file__).parent.parent))

from packages.config.settings import PipelineConfig, load_config
from packages.errors import InvalidInputError, PipelineStageError, UmsError
from packages.evalmetrics.report import EvalReport
from packages.observability import run_context
from packages.scenesim.scene import generate_scene, ground_truth_index
from packages.scenesim.storage import save_scene
from packages.weakdet.checkpoint import load_detector
from services.training.artifacts import RunArtifacts
from services.training.pipeline import (
    evaluate_detectors,
    heldout_scene_config,
    load_test_scene,
    prepare_scene_data,
    run_training,
)
from services.training.studies import (
    StudyReport,
    run_ablation,
    run_iteration_study,
    run_mu3_study,
    run_robustness,
    run_tau_study,
)


def parse_overrides(pairs: List[str]) -> Dict[str, Any]:
    """`section.key=value` pairs; values are parsed as YAML scalars or lists"""
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise InvalidInputError(f"--set expects key=value, got {pair!r}")
        try:
            overrides[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise InvalidInputError(f"--set {key}: cannot parse {raw!r}: {e}") from e
    return overrides


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (default data/default_config.yaml)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set pps.eta=0.4 (repeatable)")
    common.add_argument("--iterations", type=int, help="refinement iterations T")
    common.add_argument("--epochs", type=int, help="epochs per iteration E")
    common.add_argument("--seed", type=int, help="training seed")
    common.add_argument("--scene-seed", type=int, help="scene generation seed")
    common.add_argument("--frames", type=int, help="number of training frames")
    common.add_argument("--workers", type=int, help="frame-level worker threads")
    common.add_argument("--scene-dir", help="load the training scene from this directory")
    common.add_argument("--output-dir", help="parent directory of run directories")
    common.add_argument("--run-dir", help="explicit run directory")
    for stage in ("ppf", "pps", "ccl"):
        common.add_argument(f"--no-{stage}", action="store_true", help=f"disable the {stage.upper()} stage")

    parser = argparse.ArgumentParser(description="Unsupervised multi-agent and single-agent detector training")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-scenes", parents=[common], help="generate and save training and test scenes")
    gen.add_argument("--out", required=True, help="scene directory; the test scene goes to <out>/test")

    run = sub.add_parser("run", parents=[common], help="train both detectors")
    run.add_argument("--resume", action="store_true", help="continue the run in --run-dir")

    sub.add_parser("ablate", parents=[common], help="stage ablation")
    rob = sub.add_parser("robustness", parents=[common], help="pose-noise and latency evaluation")
    rob.add_argument("--sigma", type=float, help="pose noise std in meters")
    rob.add_argument("--delay", type=int, help="communication delay in frames")
    sub.add_parser("eval", parents=[common], help="evaluate the detectors saved in --run-dir")
    sub.add_parser("study-tau", parents=[common], help="fixed vs dynamic pruning threshold")
    sub.add_parser("study-mu3", parents=[common], help="BEV alignment weight sweep")
    sub.add_parser("study-iterations", parents=[common], help="quality at iteration checkpoints")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = parse_overrides(args.overrides)
    flags = {
        "iterations": args.iterations,
        "epochs": args.epochs,
        "seed": args.seed,
        "scene.rng_seed": args.scene_seed,
        "scene.num_frames": args.frames,
        "workers": args.workers,
        "output_dir": args.output_dir,
    }
    if args.scene_dir:
        flags["scene_source"] = "load"
        flags["scene_dir"] = args.scene_dir
    for stage in ("ppf", "pps", "ccl"):
        if getattr(args, f"no_{stage}"):
            flags[f"toggles.{stage}"] = False
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return load_config(args.config, overrides)


def run_directory(args: argparse.Namespace, cfg: PipelineConfig, run_id: str) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    return Path(cfg.output_dir) / f"{args.command}-{run_id[:8]}"


def format_report(name: str, report: Optional[EvalReport]) -> str:
    if report is None:
        return f"{name:<16} (no ground truth)"
    bands = "  ".join(f"{k}:{v:.3f}" for k, v in report.range_banded.items())
    return (f"{name:<16} AP@0.3 {report.ap_03:.4f}  AP@0.5 {report.ap_05:.4f}  "
            f"P@0.5 {report.precision_05:.3f}  R@0.5 {report.recall_05:.3f}  [{bands}]")


def print_study(report: StudyReport):
    print(report.to_csv(), end="")


def cmd_gen_scenes(args, cfg: PipelineConfig, run_id: str) -> int:
    out = Path(args.out)
    train = generate_scene(cfg.scene, cfg.workers)
    save_scene(train, out, cfg.scene)
    test_cfg = heldout_scene_config(cfg)
    save_scene(generate_scene(test_cfg, cfg.workers), out / "test", test_cfg)
    print(f"Saved {len(train)} training frames and {test_cfg.num_frames} test frames to {out}")
    return 0


def cmd_run(args, cfg: PipelineConfig, run_id: str) -> int:
    run_dir = run_directory(args, cfg, run_id)
    if args.resume and not args.run_dir:
        raise InvalidInputError("--resume needs --run-dir")
    result = run_training(cfg, run_dir=run_dir, resume=args.resume)
    final = result.reports[-1] if result.reports else None
    print(f"Run directory: {run_dir}")
    if final is not None:
        print(format_report("pseudo multi", final.multi))
        print(format_report("pseudo ego", final.ego))
    for view, report in result.final_detector_reports.items():
        print(format_report(view, report))
    return 0


def cmd_eval(args, cfg: PipelineConfig, run_id: str) -> int:
    if not args.run_dir:
        raise InvalidInputError("eval needs --run-dir")
    art = RunArtifacts(args.run_dir)
    model_m = load_detector(art.checkpoint_path("detector_multi"))
    model_e = load_detector(art.checkpoint_path("detector_ego"))
    test_frames = load_test_scene(cfg)
    data = prepare_scene_data(test_frames, model_m, model_e, cfg.workers)
    reports = evaluate_detectors(model_m, model_e, data, ground_truth_index(test_frames), cfg)
    for view, report in reports.items():
        print(format_report(view, report))
    return 0


def cmd_study(args, cfg: PipelineConfig, run_id: str) -> int:
    run_dir = run_directory(args, cfg, run_id)
    if args.command == "ablate":
        report = run_ablation(cfg, run_dir=run_dir)
    elif args.command == "robustness":
        report = run_robustness(cfg, args.sigma, args.delay, run_dir=run_dir)
    elif args.command == "study-tau":
        report = run_tau_study(cfg, run_dir=run_dir)
    elif args.command == "study-mu3":
        report = run_mu3_study(cfg, run_dir=run_dir)
    else:
        report = run_iteration_study(cfg, run_dir=run_dir)
    print_study(report)
    print(f"Run directory: {run_dir}")
    return 0


COMMANDS = {
    "gen-scenes": cmd_gen_scenes,
    "run": cmd_run,
    "eval": cmd_eval,
    "ablate": cmd_study,
    "robustness": cmd_study,
    "study-tau": cmd_study,
    "study-mu3": cmd_study,
    "study-iterations": cmd_study,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        with run_context(command=args.command, tags=[cfg.toggles.label()]) as run_id:
            return COMMANDS[args.command](args, cfg, run_id)
    except PipelineStageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except UmsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
