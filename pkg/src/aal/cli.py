"""Command-line entry point: ``aal run`` and ``aal analyze``.

Exit codes: 0 success, 1 runtime failure, 2 configuration failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis
from .config import (PRESETS, build_dataset, build_experiment_config, load_config, make_manifest,
                     parse_override, read_manifest, write_manifest)
from .engine import TrajectoryLog, make_family, run_experiment, run_replication, summarize, summary_csv
from .errors import AALError, ConfigError
from .learners import params_from_json, params_to_json

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

logger = logging.getLogger("aal")


def _threads() -> int:
    value = os.environ.get("AAL_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(f"AAL_THREADS: expected an integer, got {value!r}") from None


def _write_run(trajectory: TrajectoryLog, run_dir: Path) -> None:
    trajectory.write(run_dir)
    if trajectory.committee is not None:
        members = "[" + ",\n".join(params_to_json(p) for p in trajectory.committee) + "]\n"
        (run_dir / "params.json").write_text(members)


def _resolve(args) -> dict:
    if args.from_manifest:
        return read_manifest(args.from_manifest)["config"]
    overrides: dict[str, dict] = {}
    for item in args.set or ():
        section, key, value = parse_override(item)
        overrides.setdefault(section, {})[key] = value
    if args.seed is not None:
        overrides.setdefault("experiment", {})["seed"] = args.seed
    if args.replications is not None:
        overrides.setdefault("experiment", {})["replications"] = args.replications
    if args.add_policy:
        overrides.setdefault("policy", {})["add"] = args.add_policy
    if args.del_policy:
        overrides.setdefault("policy", {})["delete"] = args.del_policy
    return load_config(args.config, args.preset, overrides)


def cmd_run(args) -> int:
    try:
        raw = _resolve(args)
        config = build_experiment_config(raw)
        dataset = build_dataset(raw["dataset"])
        config.validate_for(dataset)
        n_runs = raw["experiment"].get("replications", 1)
        if n_runs < 1:
            raise ConfigError("experiment.replications: must be >= 1")
        workers = _threads()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AALError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_RUNTIME

    out = Path(args.out)
    seeds = [config.seed + i for i in range(n_runs)]
    try:
        write_manifest(make_manifest(raw, seeds, dataset, out), out)
        if n_runs == 1:
            trajectory = run_experiment(dataset, config)
            _write_run(trajectory, out)
            logs = [trajectory]
        else:
            for i, seed in enumerate(seeds):
                run_raw = {**raw, "experiment": {**raw["experiment"], "seed": seed, "replications": 1}}
                write_manifest(make_manifest(run_raw, [seed], dataset, out / f"run{i}"), out / f"run{i}")
            logs, _ = run_replication(dataset, config, n_runs, workers=workers)
            for i, trajectory in enumerate(logs):
                _write_run(trajectory, out / f"run{i}")
            (out / "summary.csv").write_text(summary_csv(summarize(logs)))
    except (AALError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    failed = [i for i, lg in enumerate(logs) if not lg.complete]
    for i, lg in enumerate(logs):
        final = lg.records[-1] if lg.records else None
        print(f"run {i}: seed={seeds[i]} iterations={len(lg.records) - 1} "
              f"labeled={final.labeled_size if final else 0} metric={final.metric if final else None} "
              f"stop={lg.stop_reason}")
    if failed:
        print(f"error: run(s) {failed} incomplete: {logs[failed[0]].error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _load_context(run_dir: Path):
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"incomplete log: missing {manifest_path}")
    raw = read_manifest(manifest_path)["config"]
    return raw, build_dataset(raw["dataset"])


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        trajectory = TrajectoryLog.read(run_dir)
        if args.which == "origin":
            graph = analysis.build_deletion_origin_graph(trajectory)
            (run_dir / "origin_edges.csv").write_text(graph.edges_csv())
            (run_dir / "origin_nodes.csv").write_text(graph.nodes_csv())
            print(f"{len(graph.edges)} edges, {graph.total} deletions")
        elif args.which == "shift":
            points = [float(v) for v in args.checkpoints.split(",")]
            values = analysis.distribution_shift_series(trajectory, points)
            (run_dir / "shift.csv").write_text(analysis.shift_csv(points, values))
            for a, b, kl in zip(points, points[1:], values):
                print(f"{a:g} -> {b:g}: KL = {kl:.6f}")
        else:
            raw, dataset = _load_context(run_dir)
            if args.which == "grid":
                grid = analysis.build_ranked_grid(dataset, trajectory)
                (run_dir / "grid.csv").write_text(grid.to_csv())
                print(f"{len(grid.cells)} grid events")
            else:
                params_path = run_dir / "params.json"
                if not params_path.is_file():
                    raise FileNotFoundError(f"incomplete log: missing {params_path}")
                members = [params_from_json(json.dumps(m)) for m in json.loads(params_path.read_text())]
                family = make_family(dataset, build_experiment_config(raw))
                labeled = trajectory.replay(dataset.size).labeled_ids
                (run_dir / "features.csv").write_text(
                    analysis.features_csv(family, members[0], dataset, labeled))
                print(f"features for {dataset.size} samples")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AALError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aal", description="Adaptive active learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment (or replications) and write logs")
    run.add_argument("--config", type=Path, help="TOML config file")
    run.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
    run.add_argument("--seed", type=int)
    run.add_argument("--replications", type=int)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--add-policy", help="addition policy, e.g. 'hybrid(greedy:32,variance:32)'")
    run.add_argument("--del-policy", help="deletion policy")
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    run.add_argument("--from-manifest", type=Path, help="rerun exactly the config recorded in a manifest")
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", help="derive analysis CSVs from a finished run directory")
    an.add_argument("run_dir")
    an.add_argument("which", choices=("grid", "origin", "shift", "features"))
    an.add_argument("--checkpoints", default="0,0.1,1.0", help="comma-separated run fractions for 'shift'")
    an.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
