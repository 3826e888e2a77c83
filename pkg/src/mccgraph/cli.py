"""Command-line entry point: synth, run, compare, stats."""
from __future__ import annotations

import argparse
import ctypes
import logging
import re
import sys
from pathlib import Path

from . import bandit
from .cohort import FEATURE_NAMES, generate_cohort, standardize_features
from .graph import complete_graph, write_graph
from .orchestrator import (ConfigError, ExperimentConfig, read_records, run_comparison,
                           write_run)
from .stats import export_results, summarize_runs

log = logging.getLogger("mccgraph")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
PAPER_SCALE = {"gvae_epochs": 3000, "gnn_epochs": 12000}
_RUN_DIR = re.compile(r"^run_([a-z]+)_(\d+)$")


def tune_allocator() -> None:
    """Keep large numpy temporaries on the heap instead of fresh mmaps.

    Each training epoch allocates and frees the same few n x n buffers; with
    glibc defaults every one of them is a new mmap that page-faults on first
    touch. Raising the mmap and trim thresholds lets the heap reuse them.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 256 * 1024 * 1024)   # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)   # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("iteration budgets must be positive")
    return sorted(set(vals))


def _method_list(text: str) -> list[str]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in vals if v not in bandit.METHODS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {', '.join(bad) or text!r}; expected {','.join(bandit.METHODS)}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mccgraph", description="Graph-variant optimization for MCC prediction.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic cohort as nodes.csv/edges.csv")
    s.add_argument("--n", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", type=Path, required=True)

    def experiment_args(sp):
        sp.add_argument("--config", type=Path, help="JSON file of ExperimentConfig fields")
        sp.add_argument("--out-dir", type=Path, required=True)
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--repeats", type=int, help="override repeats")
        sp.add_argument("--n", type=int, help="override n_patients")
        sp.add_argument("--iterations", type=_int_list,
                        help="budget(s), e.g. 15 or 15,20,25 (one run, truncated per budget)")
        sp.add_argument("--paper-scale", action="store_true",
                        help="GVAE 3000 and LR-GNN 12000 epochs")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes over repeats")

    r = sub.add_parser("run", help="run one method")
    experiment_args(r)
    r.add_argument("--method", choices=bandit.METHODS)

    c = sub.add_parser("compare", help="run several methods on a shared cohort and seeds")
    experiment_args(c)
    c.add_argument("--methods", type=_method_list, default=list(bandit.METHODS))

    st = sub.add_parser("stats", help="summaries and p-values from existing run directories")
    st.add_argument("--in", dest="in_dir", type=Path, required=True)
    st.add_argument("--out-dir", type=Path)
    return p


def _config(args) -> tuple[ExperimentConfig, list[int]]:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.repeats is not None:
        changes["repeats"] = args.repeats
    if args.n is not None:
        changes["n_patients"] = args.n
    if args.paper_scale:
        changes.update(PAPER_SCALE)
    budgets = args.iterations or [cfg.iterations]
    changes["iterations"] = max(budgets)
    if getattr(args, "method", None):
        changes["method"] = args.method
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return cfg.replace(**changes), budgets


def _export(results: dict, budgets: list[int], out_dir: Path) -> None:
    runs = {}
    for method, res in results.items():
        for m in budgets:
            write_run(res, out_dir, m)
            runs[(method, m)] = [r.truncated(m) for r in res.records]
    if all(len(v) >= 2 for v in runs.values()):
        export_results(*summarize_runs(runs), out_dir)
    else:
        log.warning("fewer than 2 repeats: skipping confidence intervals and p-values")


def cmd_synth(args) -> int:
    cohort = generate_cohort(args.n, args.seed)
    g = complete_graph(standardize_features(cohort.factors), cohort.labels)
    out = write_graph(g, args.out_dir, FEATURE_NAMES)
    print(f"wrote {args.n} patients to {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg, budgets = _config(args)
    methods = [cfg.method] if args.command == "run" else args.methods
    results = run_comparison(cfg, methods, jobs=args.jobs)
    _export(results, budgets, args.out_dir)
    for method, res in results.items():
        finals = [r.final["accuracy"] for r in res.records]
        print(f"{method}: mean final test accuracy {sum(finals) / len(finals):.4f} "
              f"over {len(finals)} repeats")
    return EXIT_OK


def load_runs(in_dir) -> dict:
    runs = {}
    for d in sorted(Path(in_dir).iterdir()):
        match = _RUN_DIR.match(d.name)
        if match and (d / "records.csv").is_file():
            method, m = match.group(1), int(match.group(2))
            runs[(method, m)] = read_records(d / "records.csv", method)
    return runs


def cmd_stats(args) -> int:
    if not args.in_dir.is_dir():
        raise ConfigError(f"input directory {args.in_dir} does not exist")
    runs = load_runs(args.in_dir)
    if not runs:
        raise ConfigError(f"no run_<method>_<m>/records.csv under {args.in_dir}")
    out = export_results(*summarize_runs(runs), args.out_dir or args.in_dir)
    print(f"wrote summaries for {len(runs)} runs to {out}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_experiment, "compare": cmd_experiment,
            "stats": cmd_stats}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    tune_allocator()
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
