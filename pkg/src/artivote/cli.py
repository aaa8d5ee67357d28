"""Command-line batch entry points.

Subcommands: gen, train, infer, eval-perception, trials, report. Every run
writes a resolved-config JSON next to its outputs. Exit codes: 0 success,
1 usage error, 2 runtime error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_resolved_config(args: argparse.Namespace, out: str, name: str) -> None:
    out_path = Path(out)
    target = out_path / f"{name}_config.json" if out_path.is_dir() \
        else out_path.with_name(out_path.name + ".config.json")
    resolved = {k: v for k, v in vars(args).items()
                if k != "func" and not k.startswith("_")}
    with open(target, "w", encoding="ascii") as f:
        json.dump(resolved, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _parse_slice(text: str) -> list[int]:
    if ":" in text:
        a, b = text.split(":", 1)
        return list(range(int(a), int(b)))
    return [int(v) for v in text.split(",")]


def _vote_config(args):
    from .voting import VoteConfig
    return VoteConfig(step_deg=args.step_deg, voxel_size=args.voxel)


def _cmd_gen(args) -> None:
    from .pipeline import GenConfig, generate_dataset
    cfg = GenConfig(
        out=args.out, categories=tuple(args.category), instances=args.instances,
        seed=args.seed, states=args.states, views=args.views,
        max_points=args.max_points, width=args.width, height=args.height,
        pixel_subsample=args.pixel_subsample or None,
    )
    Path(args.out).mkdir(parents=True, exist_ok=True)
    generate_dataset(cfg, workers=args.workers)
    _write_resolved_config(args, args.out, "gen")


def _cmd_train(args) -> None:
    from .model import TrainConfig, save_weights
    from .pipeline import train_category
    tc = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                     batch_size=args.batch_size, seed=args.seed,
                     lambda_d=args.lambda_d, lambda_a=args.lambda_a,
                     lambda_aa=args.lambda_aa)
    result = train_category(args.data, args.category, _parse_slice(args.instances),
                            tc, tuples_per_cloud=args.tuples, workers=args.workers)
    save_weights(result.weights, args.out)
    _write_resolved_config(args, args.out, "train")
    for i, loss in enumerate(result.loss_log):
        print(f"epoch {i}: loss {loss:.6f}")


def _cmd_infer(args) -> None:
    from .cloud import load_ply
    from .model import load_weights
    from .noise import apply_noise, noise_level
    from .voting import infer, save_estimates
    cloud = load_ply(args.cloud)
    level = args.noise_level
    if level:
        rng = np.random.default_rng(args.seed)
        cloud = apply_noise(cloud, noise_level(level), rng)
    weights = load_weights(args.weights)
    estimates = infer(cloud, weights, _vote_config(args), K=args.tuples,
                      M=args.tuple_size, seed=args.seed,
                      reestimate_normals=level > 0,
                      apply_score_filter=not args.no_score_filter)
    save_estimates(estimates, args.out)
    _write_resolved_config(args, args.out, "infer")
    print(f"wrote {len(estimates)} joint estimate(s) to {args.out}")


def _cmd_eval_perception(args) -> None:
    from .evalmanip import records_to_jsonl
    from .model import load_weights
    from .pipeline import evaluate_perception
    weights = load_weights(args.weights)
    levels = [int(v) for v in args.levels.split(",")]
    items = evaluate_perception(
        args.data, args.category, _parse_slice(args.instances), weights, levels,
        _vote_config(args), K=args.tuples, seed=args.seed,
        states_per_instance=args.states_per_instance,
        views_per_state=args.views_per_state,
        apply_score_filter=not args.no_score_filter, workers=args.workers)
    records_to_jsonl([it.record for it in items], args.out)
    _write_resolved_config(args, args.out, "eval")
    print(f"wrote {len(items)} perception records to {args.out}")


def _cmd_trials(args) -> None:
    from .evalmanip import records_to_jsonl
    from .pipeline import evaluate_perception, perfect_trials, trials_from_estimates
    planners = ("tracked", "open-loop") if args.planner == "both" else (args.planner,)
    if args.perfect:
        outcomes = []
        for category in args.category:
            outcomes.extend(perfect_trials(category, args.trials, args.seed,
                                           planners, args.direction, args.n_steps))
    else:
        from .model import load_weights
        weights = load_weights(args.weights)
        outcomes = []
        for category in args.category:
            items = evaluate_perception(
                args.data, category, _parse_slice(args.instances), weights,
                [args.noise_level], _vote_config(args), K=args.tuples,
                seed=args.seed, states_per_instance=args.states_per_instance,
                views_per_state=args.views_per_state, workers=args.workers)
            outcomes.extend(trials_from_estimates(
                items, args.data, args.trials, args.seed, planners,
                args.direction, args.n_steps))
    records_to_jsonl(outcomes, args.out)
    _write_resolved_config(args, args.out, "trials")
    print(f"wrote {len(outcomes)} trial outcomes to {args.out}")


def _cmd_report(args) -> None:
    from .evalmanip import aggregate_manipulation, aggregate_perception, jsonl_to_dicts
    from .pipeline import write_csv
    rows = jsonl_to_dicts(args.input)
    if not rows:
        raise ValueError(f"{args.input}: no records")
    if "origin_cm" in rows[0]:
        table = aggregate_perception(rows)
    else:
        table = aggregate_manipulation(rows)
    if sum(r["count"] for r in table) != len(rows):
        raise RuntimeError("report totals do not match record count")
    write_csv(table, args.out)
    _write_resolved_config(args, args.out, "report")
    print(f"aggregated {len(rows)} records into {args.out}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (capped by ARTIVOTE_THREADS)")
    p.add_argument("--config", default=None,
                   help="JSON file of flag defaults (unknown keys rejected)")


def _add_vote_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tuples", type=int, default=4096, help="tuples K per cloud")
    p.add_argument("--tuple-size", type=int, default=5, help="points M per tuple")
    p.add_argument("--step-deg", type=float, default=2.0)
    p.add_argument("--voxel", type=float, default=0.01)
    p.add_argument("--no-score-filter", action="store_true",
                   help="vote with every tuple (articulation-awareness ablation)")


def build_parser() -> _Parser:
    parser = _Parser(prog="artivote",
                     description="point-tuple voting for articulated objects")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="generate objects and rendered clouds")
    p.add_argument("--out", required=True)
    p.add_argument("--category", action="append", required=True,
                   choices=["door-cabinet", "drawer-cabinet", "microwave-like"])
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--states", type=int, default=40)
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--max-points", type=int, default=1024,
                   help="stored points per cloud (0 keeps the full render)")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--pixel-subsample", type=int, default=8192,
                   help="trace only this many candidate rays (0 = all)")
    _add_common(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a category model")
    p.add_argument("--data", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--out", required=True, help="weights file path")
    p.add_argument("--instances", default="0:16", help="instance slice a:b or list")
    p.add_argument("--tuples", type=int, default=24, help="tuples per training cloud")
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--lambda-d", type=float, default=0.1)
    p.add_argument("--lambda-a", type=float, default=1.0)
    p.add_argument("--lambda-aa", type=float, default=0.5)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="estimate joints for one cloud file")
    p.add_argument("--cloud", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="estimates JSON path")
    p.add_argument("--noise-level", type=int, default=0, choices=range(5))
    _add_vote_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval-perception", help="noise sweep on held-out instances")
    p.add_argument("--data", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="JSONL records path")
    p.add_argument("--instances", default="16:20")
    p.add_argument("--levels", default="0,1,2,3,4")
    p.add_argument("--states-per-instance", type=int, default=None)
    p.add_argument("--views-per-state", type=int, default=None)
    _add_vote_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_eval_perception)

    p = sub.add_parser("trials", help="manipulation trial batch")
    p.add_argument("--out", required=True)
    p.add_argument("--category", action="append", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--planner", choices=["tracked", "open-loop", "both"],
                   default="tracked")
    p.add_argument("--direction", choices=["pull", "push"], default="pull")
    p.add_argument("--n-steps", type=int, default=50)
    p.add_argument("--perfect", action="store_true",
                   help="use ground-truth estimates instead of a trained model")
    p.add_argument("--data", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--instances", default="16:20")
    p.add_argument("--noise-level", type=int, default=0, choices=range(5))
    p.add_argument("--states-per-instance", type=int, default=None)
    p.add_argument("--views-per-state", type=int, default=None)
    _add_vote_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_trials)

    p = sub.add_parser("report", help="aggregate JSONL records to CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_report)
    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> list[str]:
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        raise UsageError("--config needs a path")
    with open(argv[at + 1], "r", encoding="ascii") as f:
        overrides = json.load(f)
    known = {a.dest for a in parser._subparsers._group_actions[0]
             .choices[argv[0]]._actions}
    unknown = set(overrides) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    extra = []
    for k, v in overrides.items():
        flag = "--" + k.replace("_", "-")
        if flag in argv or isinstance(v, bool):
            continue
        extra += [flag, str(v)]
    return argv + extra


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and not argv[0].startswith("-"):
            argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
