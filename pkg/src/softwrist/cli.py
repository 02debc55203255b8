"""Command-line entry point: ``softwrist <command> ...``.

Exit codes: 0 ok, 1 check failure, 2 usage or config error, 3 checkpoint mismatch.
The log level comes from ``SOFTWRIST_LOG`` (error, info or debug).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from .config import ConfigNotFound, ExperimentConfig, load_config, save_config
from .nn.checkpoint import CheckpointError, CheckpointMismatch

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_MISMATCH = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("softwrist")


class UsageError(Exception):
    pass


def setup_logging() -> None:
    name = os.environ.get("SOFTWRIST_LOG", "info").lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"SOFTWRIST_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None))
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        updates["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = str(args.out)
    if getattr(args, "ablation", None) is not None:
        updates["ablation"] = args.ablation
    # re-validate so overrides go through the same checks as the file
    return ExperimentConfig.model_validate({**cfg.model_dump(mode="json"), **updates})


# ---------------------------------------------------------------- commands

def cmd_train_teacher(args) -> int:
    from .rl import train_teacher

    cfg = resolve_config(args)
    run = train_teacher(cfg, cfg.out_dir, iterations=args.iterations)
    last = run.curve[-1]
    print(f"teacher: {len(run.curve)} iterations, last mean return {last['mean_return']:.3f}, "
          f"checkpoint {run.checkpoint}")
    return EXIT_OK


def cmd_train_student(args) -> int:
    from .distill import check_teacher, train_student
    from .nn import ActorCritic, load_checkpoint, network_from_checkpoint

    cfg = resolve_config(args)
    ckpt = load_checkpoint(args.teacher)
    teacher = network_from_checkpoint(ckpt)
    if not isinstance(teacher, ActorCritic):
        raise CheckpointMismatch(f"{args.teacher} holds a {ckpt.kind}, not a teacher policy")
    check_teacher(teacher, cfg.include_alignment)
    run = train_student(cfg, teacher, cfg.out_dir, iterations=args.iterations,
                        teacher_normalization=ckpt.normalization)
    print(f"student: {len(run.curve)} iterations, held-out {json.dumps(run.heldout)}, checkpoint {run.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evalsuite import load_agent, run_eval, table_conditions, training_condition, write_reports

    if args.student and args.encoder is None:
        raise UsageError("student evaluation needs the encoder checkpoint: add --encoder CKPT")
    cfg = resolve_config(args)
    agent = load_agent(args.policy, args.encoder, cfg.distill.threshold_alignment)
    if args.grid == "table":
        conds = table_conditions(cfg, agent.kind, args.trials)
    else:
        conds = [training_condition(cfg, args.trials, agent.kind)]
    report = run_eval(agent, conds, cfg, seed=args.eval_seed)
    out = Path(args.report)
    paths = write_reports(report, out)
    save_config(cfg, out / "config.resolved.json")
    for r in report.rows:
        print(f"{r.condition:32s} {r.successes:4d}/{r.n_trials:<4d} success {r.success_rate:.2f}")
    print("reports: " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_physics_check(args) -> int:
    from .physcheck import run_checks

    cfg = resolve_config(args)
    results = run_checks(cfg)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_rollout(args) -> int:
    from .distill import dump_prediction_trace
    from .dynamics import TRACE_COLUMNS
    from .env import write_trace_csv
    from .evalsuite import StudentAgent, load_agent, rollout_traces

    cfg = resolve_config(args)
    agent = load_agent(args.policy, args.encoder, cfg.distill.threshold_alignment)
    trace = Path(args.trace)
    physics = [] if args.physics_trace else None
    write_trace_csv(rollout_traces(agent, cfg, args.episodes, seed=args.eval_seed, physics=physics), trace)
    print(f"episode trace: {trace}")
    if physics is not None:
        path = Path(args.physics_trace)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            w.writerows(physics)
        print(f"physics trace: {path}")
    if isinstance(agent, StudentAgent):
        pred = trace.with_name(trace.stem + "_prediction.csv")
        dump_prediction_trace(agent.encoder, agent.teacher, cfg, args.episodes, pred, seed=args.eval_seed)
        print(f"prediction trace: {pred}")
    save_config(cfg, trace.with_name(trace.stem + "_config.resolved.json"))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softwrist", description="Soft-wrist peg-in-hole simulation and learning.")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("--config", help="experiment config JSON (with --print-config)")
    sub = p.add_subparsers(dest="command")

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment config JSON (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--workers", type=int, help="number of parallel environments")
        if out:
            sp.add_argument("--out", help="output directory")

    t = sub.add_parser("train-teacher", help="train the privileged teacher with PPO")
    common(t)
    t.add_argument("--ablation", choices=["none", "no-alignment", "fixed-angle", "fixed-hole", "fixed-stiffness"])
    t.add_argument("--iterations", type=int, help="override rl.iterations")
    t.set_defaults(func=cmd_train_teacher)

    s = sub.add_parser("train-student", help="distill the teacher into a history encoder")
    common(s)
    s.add_argument("--teacher", required=True, help="teacher checkpoint")
    s.add_argument("--ablation", choices=["none", "no-alignment", "fixed-angle", "fixed-hole", "fixed-stiffness"])
    s.add_argument("--iterations", type=int, help="override distill.iterations")
    s.set_defaults(func=cmd_train_student)

    e = sub.add_parser("eval", help="evaluate a policy over a condition grid")
    common(e, out=False)
    e.add_argument("--policy", required=True, help="policy checkpoint (teacher or baseline)")
    e.add_argument("--encoder", help="student encoder checkpoint")
    e.add_argument("--student", action="store_true", help="evaluate the student (requires --encoder)")
    e.add_argument("--report", required=True, help="report directory")
    e.add_argument("--grid", choices=["table", "train"], default="table",
                   help="shape x misalignment grid, or the training distribution")
    e.add_argument("--trials", type=int, help="trials per condition (default eval.n_trials)")
    e.add_argument("--eval-seed", type=int, help="base seed of the trial streams (default eval.seed)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("physics-check", help="run the simulator self-checks")
    c.add_argument("--config", help="experiment config JSON")
    c.set_defaults(func=cmd_physics_check)

    r = sub.add_parser("rollout", help="write per-step episode traces")
    common(r, out=False)
    r.add_argument("--policy", required=True)
    r.add_argument("--encoder")
    r.add_argument("--trace", required=True, help="output CSV")
    r.add_argument("--episodes", type=int, default=1)
    r.add_argument("--eval-seed", type=int)
    r.add_argument("--physics-trace", help="also write per-substep simulator rows to this CSV")
    r.set_defaults(func=cmd_rollout)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        setup_logging()
        if args.print_config:
            print(load_config(args.config).to_json())
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigNotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, json.JSONDecodeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointMismatch as exc:
        print(f"error: checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
