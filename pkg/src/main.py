"""
Command-line entry point: gsprop [global flags] <command> [command flags]
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from src.core.config import load_pipeline_config
from src.core.errors import GsPropError
from src.monitoring.telemetry import write_metrics
from src.pipeline import PropertyPipeline
from src.utils.logger import logger, setup_logger


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1, keeping 2 and 3 for data and endpoint errors"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _point(text: str) -> Tuple[float, float, float]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        values = ()
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return values


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the command name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="YAML pipeline config")
    common.add_argument("--output", type=Path, default=argparse.SUPPRESS, help="Output directory")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="Worker threads for per-view stages")
    common.add_argument("--mode", choices=("live", "fixture"), default=argparse.SUPPRESS, help="Provider mode")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument(
        "--dump-intermediates", action="store_true", default=argparse.SUPPRESS, help="Write depth maps and votes"
    )
    common.add_argument("--metrics-file", type=Path, default=argparse.SUPPRESS, help="Prometheus textfile output")
    common.add_argument("--cache-dir", type=Path, default=argparse.SUPPRESS, help="On-disk LMM response cache")
    return common


def _physics_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--contact", type=_point, help="Grasp contact point x,y,z in scene meters")
    parser.add_argument("--area", type=float, help="Contact area A in m^2")
    parser.add_argument("--thickness", type=float, help="Force-bearing thickness d in m")
    parser.add_argument("--kappa-max", type=float, help="Maximum bending curvature in 1/m")
    parser.add_argument("--theta", type=float, help="Lifting angle in radians")
    parser.add_argument("--hardness-points", type=Path, help="`view_id u v scale value` lines")


def _evaluate_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gt", type=Path, help="Ground-truth label PNG (legend in the sibling .txt)")
    parser.add_argument("--view", help="View id of the ground truth (default: the PNG stem)")
    parser.add_argument("--mass-gt", type=float, help="Ground-truth mass in kg")
    parser.add_argument("--trials", type=Path, help="CSV of `picked_up,no_damage` grasp trials")


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(
        prog="gsprop",
        description="Annotate Gaussian-splatting scenes with physical material properties",
        parents=[common],
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("segment", parents=[common], help="Acquire and filter part masks per view")
    commands.add_parser("annotate", parents=[common], help="Assign materials to segments per view")
    commands.add_parser("lift", parents=[common], help="Vote materials onto Gaussians and export")

    render = commands.add_parser("render-materials", parents=[common], help="Render family label maps")
    render.add_argument("view_ids", nargs="*", help="Views to render (default: the selected views)")

    physics = commands.add_parser("physics", parents=[common], help="Mass, hardness and grasp plan")
    _physics_flags(physics)

    evaluate = commands.add_parser("evaluate", parents=[common], help="Segmentation, mass, hardness and grasp metrics")
    _evaluate_flags(evaluate)
    evaluate.add_argument("--hardness-points", type=Path, help="`view_id u v scale value` lines")

    pipeline = commands.add_parser("pipeline", parents=[common], help="Run every stage")
    pipeline_commands = pipeline.add_subparsers(dest="pipeline_command", required=True)
    run = pipeline_commands.add_parser("run", parents=[common], help="segment, annotate, lift, render, physics[, evaluate]")
    _physics_flags(run)
    _evaluate_flags(run)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {
        "output_dir": "output",
        "workers": "workers",
        "mode": "mode",
        "log_level": "log_level",
        "dump_intermediates": "dump_intermediates",
        "metrics_file": "metrics_file",
        "cache_dir": "cache_dir",
        "contact_point": "contact",
        "area": "area",
        "thickness": "thickness",
        "kappa_max": "kappa_max",
        "theta": "theta",
    }
    return {key: getattr(args, flag, None) for key, flag in flags.items()}


def _print(document: Any) -> None:
    sys.stdout.write(yaml.safe_dump(document, sort_keys=True))


def run(args: argparse.Namespace) -> int:
    config = load_pipeline_config(getattr(args, "config", None), _overrides(args))
    setup_logger("gsprop", config.log_level, str(Path(config.output_dir) / "logs" / "gsprop.log"))
    pipeline = PropertyPipeline(config)
    try:
        if args.command == "segment":
            _print({"masks": [str(p) for p in pipeline.segment()]})
        elif args.command == "annotate":
            _print({"material_maps": [str(p) for p in pipeline.annotate()]})
        elif args.command == "lift":
            scene = pipeline.lift()
            _print({"gaussians": scene.provenance["gaussians"], "views": scene.provenance["views"]})
        elif args.command == "render-materials":
            _print({"renders": [str(p) for p in pipeline.render_materials(args.view_ids)]})
        elif args.command == "physics":
            plan = pipeline.physics(hardness_points=args.hardness_points)
            _print(plan.model_dump(mode="json", exclude={"details"}))
        elif args.command == "evaluate":
            report = pipeline.evaluate(
                gt=args.gt,
                view_id=args.view,
                mass_gt=args.mass_gt,
                hardness_points=args.hardness_points,
                trials=args.trials,
            )
            _print(report.model_dump(mode="json"))
        else:
            pipeline.run(
                hardness_points=args.hardness_points,
                gt=args.gt,
                view_id=args.view,
                mass_gt=args.mass_gt,
                trials=args.trials,
            )
            _print({"output_dir": str(config.output_dir)})
    finally:
        if config.metrics_file is not None:
            write_metrics(str(config.metrics_file))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except GsPropError as e:
        logger.error(
            "Command failed",
            extra={"error_type": type(e).__name__, "error": e.message, "exit_code": e.exit_code},
        )
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
