"""``qchain`` command line: run an experiment sweep or inspect a GraphML topology."""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from . import __version__
from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, emit, load_config, run
from .experiments.config import ENGINES
from .topology import TopologyError, load_graphml, summary

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qchain", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} sweep")
        p.add_argument("--config", help="TOML config; omitted means all defaults")
        p.add_argument("--engine", choices=ENGINES, help="override the engine for every protocol")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--n-samples", type=int, help="override deliveries per sampled point")
        p.add_argument("--out", help="output stem or directory (default results/<experiment>)")
        p.add_argument("--quiet", action="store_true", help="do not print the written paths")
    topo = sub.add_parser("topology", help="topology utilities")
    tsub = topo.add_subparsers(dest="topology_command", required=True)
    insp = tsub.add_parser("inspect", help="summarize a GraphML file")
    insp.add_argument("graphml")
    insp.add_argument("--inflation", type=float, default=1.0,
                      help="factor applied to great-circle lengths")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != args.command:
            raise ConfigError(f"config is for {cfg.experiment!r}, not {args.command!r}")
    else:
        cfg = ExperimentConfig(args.command)
    return cfg.with_overrides(engine=args.engine, seed=args.seed, n_samples=args.n_samples,
                              output=args.out)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "topology":
        try:
            graph = load_graphml(args.graphml, args.inflation)
        except (OSError, TopologyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps(summary(graph), indent=2))
        return EXIT_OK

    try:
        cfg = _experiment_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run(cfg)
    except TopologyError as exc:
        print(f"topology error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = emit(result, cfg.output)
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        for p in paths:
            print(p)
    if result.all_infeasible():
        print("every grid point is infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
