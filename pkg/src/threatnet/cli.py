"""Command line entry point: ``threatnet <subcommand> [--config c.json] [--key.path value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import CapacityError, ConfigError, EmptyGraph, StageError
from .export import dumps, network_to_json
from .graph import RandomGraphSpec, gen_random
from .pipeline import STAGES, PipelineConfig, bench, bench_csv, run

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE, EXIT_STAGE = 0, 1, 2, 3

log = logging.getLogger("threatnet")


def _overrides(extra: list[str]) -> dict:
    """Turn ``--rank.damping 0.9`` style leftovers into a dot-path dict."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise ConfigError(f"{tok} needs a value")
            val = extra[i + 1]
            i += 1
        out[key] = val
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--epoch", help="epoch label; outputs go to <out>/<epoch>/")
    common.add_argument("--workers", type=int, help="worker pool size")
    common.add_argument("--flavor", help="ip, domain, combined or all")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="threatnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage only")
    sub.add_parser("run", parents=[common], help="run every stage")

    g = sub.add_parser("gen", parents=[common], help="write a random G(n, p) network as JSON")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=float)
    g.add_argument("--mean-degree", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", help="file to write (default stdout)")

    b = sub.add_parser("bench", parents=[common], help="time detect/pagerank on random graphs")
    b.add_argument("--n", type=int, nargs="*", default=[1000, 10000, 100000])
    b.add_argument("--mean-degree", type=float, default=5.0)
    b.add_argument("--p", type=float, help="fixed edge probability instead of --mean-degree")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--algorithm", action="append", choices=["detect", "pagerank"])
    b.add_argument("-o", "--output", help="CSV file to write (default stdout)")
    return p


def _write(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config, _overrides(extra))
        if args.out is not None:
            cfg.set("output.dir", args.out)
        if args.epoch is not None:
            cfg.set("epoch", args.epoch)
        if args.workers is not None:
            cfg.set("workers", args.workers)
        if args.flavor is not None:
            cfg.set("flavor", args.flavor)

        if args.command == "gen":
            spec = (RandomGraphSpec(args.n, args.p, args.seed) if args.p is not None
                    else RandomGraphSpec.with_mean_degree(args.n, args.mean_degree or 5.0, args.seed))
            _write(dumps(network_to_json(gen_random(spec))), args.output)
            return EXIT_OK
        if args.command == "bench":
            specs = [RandomGraphSpec(n, args.p, args.seed) if args.p is not None
                     else RandomGraphSpec.with_mean_degree(n, args.mean_degree, args.seed)
                     for n in args.n]
            rows = bench(specs, args.algorithm or ["detect", "pagerank"])
            _write(bench_csv(rows), args.output)
            return EXIT_OK

        stages = STAGES if args.command == "run" else [args.command]
        manifest = run(cfg, stages)
        log.info("wrote %s", cfg.out_dir())
        if args.verbose:
            print(json.dumps(manifest.counts, indent=1))
        return EXIT_OK
    except ConfigError as exc:
        print(f"threatnet: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptyGraph, CapacityError) as exc:
        print(f"threatnet: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except StageError as exc:
        print(f"threatnet: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE if isinstance(exc.cause, EmptyGraph) else EXIT_STAGE
    except ValueError as exc:
        print(f"threatnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
