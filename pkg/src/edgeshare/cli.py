"""Command-line interface.

Subcommands: gen, solve, sweep, mobility, online, verify. Every run writes
its outputs plus a JSON manifest capturing the config snapshot, seed, and
input/output digests; re-running with the same arguments reproduces the
outputs (wall-clock runtime lines excluded from the digests).

Exit codes: 0 success, 2 configuration error, 3 size-cap refusal,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import fileio, harness, plots
from .errors import CapExceededError, ConfigError, InvariantError
from .library import generate_library
from .network import generate_topology
from .objective import placement_feasible
from .solvers import solve_exhaustive, solve_gen, solve_independent, solve_spec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAP = 3
EXIT_INVARIANT = 4


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_gen(args) -> int:
    data = fileio.load_json_config(args.config)
    out = Path(args.out)
    if args.kind == "library":
        cfg = fileio.library_config_from_dict(data, args.config)
        lib = generate_library(cfg, args.seed)
        text = fileio.serialize_library(lib)
        snapshot = data
    elif args.kind == "topology":
        cfg = fileio.topology_config_from_dict(data, args.config)
        topo = generate_topology(cfg, args.seed)
        text = fileio.serialize_topology(topo)
        snapshot = data
    else:
        wcfg, num_users, num_models = fileio.workload_config_from_dict(data, args.config)
        workload = harness.generate_workload(wcfg, num_users, num_models, args.seed)
        text = fileio.serialize_workload(workload)
        snapshot = data
    _write(out, text)
    fileio.write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        command=f"gen {args.kind}", seed=args.seed, config=snapshot,
        inputs={}, outputs={out.name: fileio.canonical_digest(text)})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    lib = fileio.parse_library(_read(args.library), args.library)
    topo = fileio.parse_topology(_read(args.topology), args.topology)
    workload = fileio.parse_workload(_read(args.workload), args.workload)
    if args.algorithm == "spec":
        report = solve_spec(lib, topo, workload, epsilon=args.epsilon)
    elif args.algorithm == "gen":
        report = solve_gen(lib, topo, workload)
    elif args.algorithm == "independent":
        report = solve_independent(lib, topo, workload)
    else:
        report = solve_exhaustive(lib, topo, workload)
    text = fileio.serialize_report(report, lib, topo)
    out = Path(args.out)
    _write(out, text)
    fileio.write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        command=f"solve {args.algorithm}", seed=None,
        config={"algorithm": args.algorithm, "epsilon": args.epsilon},
        inputs={Path(p).name: fileio.canonical_digest(_read(p))
                for p in (args.library, args.topology, args.workload)},
        outputs={out.name: fileio.canonical_digest(text)})
    print(f"{args.algorithm}: hit_ratio={report.hit_ratio:.6f} "
          f"placed={report.placement.count()} -> {out}")
    return EXIT_OK


def _load_experiment(args) -> harness.ExperimentConfig:
    data = fileio.load_json_config(args.config)
    cfg = fileio.experiment_config_from_dict(data, args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "jobs", None):
        overrides["jobs"] = args.jobs
    if getattr(args, "replicates", None):
        overrides["replicates"] = args.replicates
    return replace(cfg, **overrides) if overrides else cfg


def _finish_run(args, command: str, cfg: harness.ExperimentConfig,
                outputs: dict[str, str], out_dir: Path,
                figures: list[Path]) -> None:
    fileio.write_manifest(
        out_dir / f"{command}.manifest.json", command=command,
        seed=cfg.master_seed, config=fileio.experiment_config_to_dict(cfg),
        inputs={Path(args.config).name: fileio.canonical_digest(_read(args.config))},
        outputs=outputs, figures=[f.name for f in figures])


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = harness.run_sweep(cfg)
    csv_text = fileio.sweep_rows_to_csv(rows)
    csv_path = out_dir / "sweep.csv"
    _write(csv_path, csv_text)
    print(f"sweep: {len(rows)} rows -> {csv_path}")
    figures = []
    if not args.no_figures:
        figures = plots.render_sweep_figures(rows, out_dir, "sweep")
        for fig in figures:
            print(f"figure -> {fig}")
    _finish_run(args, "sweep", cfg,
                {csv_path.name: fileio.canonical_digest(csv_text)},
                out_dir, figures)
    return EXIT_OK


def cmd_mobility(args) -> int:
    cfg = _load_experiment(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, summary = harness.run_mobility(cfg)
    csv_text = fileio.series_rows_to_csv(rows)
    csv_path = out_dir / "mobility.csv"
    _write(csv_path, csv_text)
    for alg, deg in sorted(summary.items()):
        print(f"mobility: {alg} relative degradation {deg:.4f}")
    print(f"mobility: {len(rows)} rows -> {csv_path}")
    figures = []
    if not args.no_figures:
        figures = [plots.render_series_figure(rows, out_dir / "mobility.png")]
        print(f"figure -> {figures[0]}")
    _finish_run(args, "mobility", cfg,
                {csv_path.name: fileio.canonical_digest(csv_text)},
                out_dir, figures)
    return EXIT_OK


def cmd_online(args) -> int:
    cfg = _load_experiment(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = harness.run_online(cfg)
    csv_text = fileio.series_rows_to_csv(rows)
    csv_path = out_dir / "online.csv"
    _write(csv_path, csv_text)
    print(f"online: {len(rows)} rows -> {csv_path}")
    figures = []
    if not args.no_figures:
        figures = [plots.render_series_figure(rows, out_dir / "online.png")]
        print(f"figure -> {figures[0]}")
    _finish_run(args, "online", cfg,
                {csv_path.name: fileio.canonical_digest(csv_text)},
                out_dir, figures)
    return EXIT_OK


def cmd_verify(args) -> int:
    lib = fileio.parse_library(_read(args.library), args.library)
    topo = fileio.parse_topology(_read(args.topology), args.topology)
    workload = fileio.parse_workload(_read(args.workload), args.workload)
    parsed = fileio.parse_report(_read(args.report), args.report)
    placement = fileio.report_placement(parsed, lib, topo)

    from .objective import EvalContext

    ctx = EvalContext(lib, topo, workload)
    problems = []
    units = ctx.hit_units(placement)
    if units != parsed["hit_units"]:
        problems.append(f"hit_units: report {parsed['hit_units']}, recomputed {units}")
    if ctx.total_units != parsed["total_units"]:
        problems.append(f"total_units: report {parsed['total_units']}, recomputed {ctx.total_units}")
    if not placement_feasible(lib, topo, placement):
        problems.append("placement violates a storage capacity")
    if problems:
        for p in problems:
            print(f"verify: MISMATCH {p}", file=sys.stderr)
        raise InvariantError("report verification failed")
    print(f"verify: OK hit_ratio={parsed['hit_ratio']:.6f} "
          f"placed={placement.count()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeshare",
        description="Shared-parameter model placement on wireless edge caches")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a library, topology, or workload file")
    p.add_argument("kind", choices=["library", "topology", "workload"])
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run one placement algorithm")
    p.add_argument("--algorithm", required=True,
                   choices=["spec", "gen", "independent", "oracle"])
    p.add_argument("--library", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    for name, func in (("sweep", cmd_sweep), ("mobility", cmd_mobility),
                       ("online", cmd_online)):
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel workers for replicates")
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--no-figures", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="re-check a solve report against its inputs")
    p.add_argument("--report", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--workload", required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceededError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CAP
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    raise SystemExit(main())
