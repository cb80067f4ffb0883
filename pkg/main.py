"""
Command-line entry point.

    hardnet run --task fitting --model hardnet-aff --seed 0 1 2 --out runs/fit
    hardnet check --task nonconvex
"""
from typing import List, Optional, Sequence
import argparse
import logging
import sys

from config import settings
from hardnet.constraints import check_assumption1
from hardnet.error_handlers import EXIT_DOMAIN_ERROR, EXIT_OK, handle_cli_exception
from hardnet.experiments.models import MODEL_KINDS
from hardnet.experiments.runner import RunRequest, make_task, run_many
from hardnet.experiments.tasks import SCALE_NAMES, TASK_NAMES
from logging_config import setup_logging

logger = logging.getLogger(__name__)

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hardnet",
        description="Hard-constrained neural network experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default=None, help="Override HARDNET_LOG_LEVEL")
    parser.add_argument("--log-format", default=None, choices=["default", "json"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Train and evaluate one model on one task")
    run.add_argument("--task", required=True, choices=TASK_NAMES)
    run.add_argument("--model", required=True, choices=MODEL_KINDS)
    run.add_argument("--seed", type=int, nargs="+", default=[0], help="One or more seeds")
    run.add_argument("--epochs", type=int, default=None, help="Defaults to the task scale")
    run.add_argument("--batch-size", type=int, default=None)
    run.add_argument("--lr", type=float, default=None)
    run.add_argument("--warm-start", type=int, default=0, help="Epochs trained with the projection disabled")
    run.add_argument("--warm-start-penalty", action="store_true",
                     help="Add the soft penalty to the loss during warm start")
    run.add_argument("--out", default="runs", help="Output directory")
    run.add_argument("--scale", default="small", choices=SCALE_NAMES)
    run.add_argument("--workers", type=int, default=1, help="Parallel worker processes across seeds")

    check = sub.add_parser("check", help="Check the constraint assumptions of a task")
    check.add_argument("--task", required=True, choices=TASK_NAMES)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--scale", default="small", choices=SCALE_NAMES)
    check.add_argument("--probes", type=int, default=20)
    return parser

def cmd_run(args: argparse.Namespace) -> int:
    request = RunRequest(
        task=args.task,
        model=args.model,
        seed=args.seed[0],
        out_dir=args.out,
        scale=args.scale,
        epochs=args.epochs,
        warm_start=args.warm_start,
        warm_start_penalty=args.warm_start_penalty,
        batch_size=args.batch_size,
        lr=args.lr,
    )
    for out_dir in run_many(request, args.seed, workers=args.workers):
        print(out_dir)
    return EXIT_OK

def cmd_check(args: argparse.Namespace) -> int:
    task = make_task(args.task, args.seed, args.scale)
    report = check_assumption1(task.spec, task.probe_points(args.probes))
    for line in report.summary():
        print(line)
    return EXIT_OK if report.passed else EXIT_DOMAIN_ERROR

COMMANDS = {"run": cmd_run, "check": cmd_check}

def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    log_dir = args.out if args.command == "run" else settings.log_dir
    setup_logging(log_dir=log_dir, level=args.log_level, fmt=args.log_format)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        return handle_cli_exception(exc)

if __name__ == "__main__":
    sys.exit(main())
