"""
Command-line entry point: `stclab <experiment> [--config FILE] [--out DIR] [--seed N] [--variant NAME]...`

Exit status: 0 success, 1 violation found by verify, 2 configuration or
parameter error, 3 output error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from app.config.settings import settings
from app.core.container import container
from app.core.errors import ConfigurationError, StcLabError
from app.schemas.schemas import ExperimentConfig, ExperimentName

logger = logging.getLogger(__name__)

_HELP = {
    ExperimentName.PLOT_FUNCTIONS: "tabulate the controller functions Ψ1 and Ψ2",
    ExperimentName.SIM_DISTURBED: "closed-loop runs under a disturbance (step by default)",
    ExperimentName.SIM_UNDISTURBED: "closed-loop runs without disturbance",
    ExperimentName.SWEEP_TC: "convergence time over a gain sweep",
    ExperimentName.SWEEP_ACCURACY: "steady-state error over a gain sweep",
    ExperimentName.TRAJECTORIES: "trajectories for several h against the continuous reference",
    ExperimentName.VERIFY: "Lyapunov decrease, dead-beat and forward-invariance audits",
}


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="stclab",
        description="Discrete-time super-twisting controller laboratory.",
    )
    subparsers = parser.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for name in ExperimentName:
        sub = subparsers.add_parser(name.value, help=_HELP[name])
        sub.add_argument("--config", type=Path, help="JSON document overriding the experiment defaults")
        sub.add_argument("--out", type=Path, help="output directory")
        sub.add_argument("--seed", type=int, help="seed of the randomized audits")
        sub.add_argument(
            "--variant",
            dest="variants",
            action="append",
            metavar="NAME",
            help="controller variant, repeatable (explicit, brogliato, koch, xiong, hanan, proposed)",
        )
    return parser.parse_args(argv)


def _load_config(path: Path) -> Dict[str, Any]:
    try:
        document = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return document


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment defaults, then the config file, then the command-line flags."""
    layers = []
    if args.config is not None:
        layers.append(_load_config(args.config))
    flags: Dict[str, Any] = {}
    if args.out is not None:
        flags["output_dir"] = str(args.out)
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.variants:
        flags["variants"] = args.variants
    layers.append(flags)
    return ExperimentConfig.build(args.experiment, *layers)


def main(argv: Optional[List[str]] = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        cfg = build_config(args)
        return container.experiment_runner().run(cfg)
    except StcLabError as exc:
        print(f"stclab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"stclab: error: invalid configuration\n{exc}", file=sys.stderr)
        return ConfigurationError.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
