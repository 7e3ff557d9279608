"""Command-line entry points: train, eval, gen-scenes, plot, replay, compare.

Exit codes: 0 success; otherwise a machine-readable error category is
printed to stderr as JSON ({"error": <category>, "message": ...}).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import config as config_mod
from . import evaluation, nets, plots, runstore, sim

EXIT_CODES = {
    "config": 2,
    "checkpoint": 3,
    "generation": 4,
    "store": 5,
    "divergence": 6,
    "io": 7,
}


def _fail(category: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")
    return EXIT_CODES[category]


def _add_config_args(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override (repeatable)")
    parser.add_argument("--seed", type=int, help="run seed (shorthand for --set seed=N)")


def _build_config(args) -> config_mod.RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise nets.ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return config_mod.build_config(config_file=args.config, set_overrides=overrides)


def cmd_train(args) -> int:
    cfg = _build_config(args)
    run = runstore.create_run_dir(args.run_dir, cfg, resume=args.resume)
    report = runstore.train_stage(run, cfg, args.stage, init_from=args.init_from,
                                  resume=args.resume, quiet=args.quiet)
    print(f"stage {args.stage}: {report.episodes} episodes, "
          f"grasp success {report.grasp_successes}/{report.grasp_attempts}, "
          f"{report.push_count} pushes, epsilon {report.final_epsilon:.3f}")
    print(f"run directory: {run.path}")
    return 0


def _format_metric(mean, stderr, percent=True) -> str:
    if mean is None:
        return "--"
    scale = 100.0 if percent else 1.0
    if stderr is None:
        return f"{mean * scale:.2f}"
    return f"{mean * scale:.2f} +- {stderr * scale:.2f}"


def _print_summary_row(row: dict):
    print(f"{row['approach']:<26} {row['scenario']:<7} "
          f"{str(row.get('n_objects') or '-'):<4} "
          f"C% {_format_metric(row['C'], row['C_stderr']):<16} "
          f"GS% {_format_metric(row['GS'], row['GS_stderr']):<16} "
          f"MN {_format_metric(row['MN'], row['MN_stderr'], percent=False)}")


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    report, _ = runstore.eval_benchmark(
        args.out, cfg, args.checkpoint, args.scenario, args.n_objects,
        args.n_scenes, args.base_seed, agent_kind=args.agent)
    row = evaluation.summary_row(report, args.agent, args.scenario,
                                 args.n_objects, args.base_seed)
    _print_summary_row(row)
    if args.out:
        print(f"records + summary written to {args.out}")
    return 0


def cmd_gen_scenes(args) -> int:
    cfg = _build_config(args)
    paths = runstore.generate_scene_corpus(args.out, args.scenario, args.n_objects,
                                           args.count, args.base_seed, cfg)
    print(f"wrote {len(paths)} scene files to {args.out}")
    return 0


def cmd_plot(args) -> int:
    cfg = _build_config(args)
    run = runstore.RunDirectory(args.run_dir)
    out_dir = args.out or run.subdir(runstore.PLOTS_DIRNAME)
    if args.kind == "curves":
        records = run.read_log()
        if not records:
            return _fail("io", f"no action log under {args.run_dir}")
        paths, warnings = plots.training_curves(records, out_dir)
        for warning in warnings:
            print(f"warning: {warning}", file=sys.stderr)
        for path in paths:
            print(path)
        return 0
    if args.kind == "heatmap":
        checkpoint = args.checkpoint or run.latest_checkpoint()
        if checkpoint is None:
            return _fail("checkpoint", "heatmap needs --checkpoint or a run checkpoint")
        if args.scene:
            scene = sim.load_scene(args.scene)
        else:
            scene = sim.spawn_packed_scene(5, cfg.seed, cfg.sim)
        for path in plots.q_heatmaps(checkpoint, scene, cfg, out_dir):
            print(path)
        return 0
    if args.kind == "episode_strip":
        records_file = args.records
        if records_file is None:
            records_file = os.path.join(args.run_dir, "records.jsonl")
        with open(records_file) as fh:
            lines = [line for line in fh if line.strip()]
        record = evaluation.EpisodeRecord.from_dict(json.loads(lines[args.index]))
        print(plots.episode_strip(record, cfg, out_dir))
        return 0
    return _fail("io", f"unknown plot kind {args.kind!r}")


def cmd_replay(args) -> int:
    cfg = _build_config(args)
    divergence, record, rerun = runstore.replay_episode(args.records, args.index, cfg)
    if divergence is None:
        print(f"replay ok: {len(record.actions)} actions reproduced "
              f"({record.termination_reason})")
        return 0
    print(json.dumps({"divergence": divergence}, sort_keys=True))
    return _fail("divergence",
                 f"first divergence at step {divergence['step']}")


def cmd_compare(args) -> int:
    rows = []
    for path in args.summaries:
        with open(path) as fh:
            rows.append(json.load(fh))
    if not args.no_refs:
        rows.extend(evaluation.REFERENCE_ROWS)
    print(f"{'approach':<26} {'scene':<7} {'n':<4} {'C%':<20} {'GS%':<20} MN")
    for row in rows:
        _print_summary_row(row)
    if not args.no_refs:
        print("reference rows are full-scale results; not reproducible at desk scale")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pushgrasp",
        description="Desk-scale push-grasp synergy lab: train, benchmark, inspect.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one curriculum stage")
    p.add_argument("--stage", required=True,
                   choices=["grasp_agnostic", "grasp_explore", "push_training", "alternating"])
    p.add_argument("--run-dir", required=True)
    p.add_argument("--init-from", help="checkpoint to initialize from")
    p.add_argument("--resume", action="store_true",
                   help="continue from the run's latest checkpoint")
    p.add_argument("--quiet", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run a benchmark")
    p.add_argument("--checkpoint")
    p.add_argument("--agent", choices=["net", "random"], default="net")
    p.add_argument("--scenario", required=True, choices=["packed", "pile"])
    p.add_argument("--n-objects", type=int, required=True)
    p.add_argument("--n-scenes", type=int, default=100)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out", help="directory for records.jsonl + summary.json")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-scenes", help="write a seeded scene corpus")
    p.add_argument("--scenario", required=True, choices=["packed", "pile", "sparse"])
    p.add_argument("--n-objects", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("plot", help="emit plots from run artifacts")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--kind", required=True,
                   choices=["curves", "heatmap", "episode_strip"])
    p.add_argument("--checkpoint")
    p.add_argument("--scene", help="scene file for heatmaps")
    p.add_argument("--records", help="records.jsonl for episode strips")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    _add_config_args(p)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("replay", help="re-execute a recorded episode")
    p.add_argument("--records", required=True)
    p.add_argument("--index", type=int, default=0)
    _add_config_args(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compare", help="side-by-side metric tables")
    p.add_argument("summaries", nargs="*")
    p.add_argument("--no-refs", action="store_true",
                   help="omit the full-scale reference rows")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except nets.ConfigurationError as exc:
        return _fail("config", str(exc))
    except nets.CheckpointError as exc:
        return _fail("checkpoint", str(exc))
    except sim.GenerationError as exc:
        return _fail("generation", str(exc))
    except runstore.RunStoreError as exc:
        return _fail("store", str(exc))
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail("io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
