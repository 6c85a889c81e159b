"""Command-line experiment runner.

Every subcommand writes a CSV whose leading ``# key: value`` lines echo the
full configuration.  Exit codes: 0 clean, 1 usage error, 2 flagged
numerical issue (a non-converged solve or a missing lambda* crossing).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from fracbp.analysis import find_lambda_star, lambda_grid, solve, sweep
from fracbp.correction import estimate_correction, exact_correction, scaling_exponent
from fracbp.fbp import FbpOptions
from fracbp.model import EnsembleSpec, IsingModel, build_complete, read_model, sample_instance
from fracbp.oracle import ENUMERATION_CAP, exact_log_z, exact_route
from fracbp.trw import (
    build_edge_uniform_certificate,
    dumps_certificate,
    edge_uniform_rho,
    read_certificate,
    rho_lambda,
    validate_tree_set,
)

OUTPUT_DIR_ENV = "FRACBP_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_FLAGGED = 0, 1, 2

POINT_COLUMNS = [
    "instance", "seed", "kind", "lambda", "log_z_lambda", "free_energy", "log_correction",
    "correction_route", "dlogz_dlambda", "d2logz_dlambda2", "converged", "iterations",
    "log_z_exact", "exact_route", "verdict", "lambda_star", "gap",
]


@dataclass
class ExperimentConfig:
    subcommand: str
    topology: str = "grid"
    size: int = 3
    coupling: str = "attractive"
    field_dist: str = "uniform-pos"
    seed: int = 0
    start: float = 0.0
    stop: float = 1.0
    step: float = 0.05
    max_iters: int = 10_000
    tol: float = 1e-10
    damping: float = 0.5
    schedule: str = "sequential"
    samples: int = 100_000
    batch_size: int = 10_000
    sizes: list[int] = field(default_factory=list)
    instances: int = 1
    lambdas: list[float] = field(default_factory=list)
    route: str = "auto"
    reference_lambda: float = 0.5
    model_file: str | None = None
    certificate: str | None = None
    complete: int | None = None
    out: str | None = None
    jobs: int = 1

    def fbp_options(self) -> FbpOptions:
        return FbpOptions(max_iters=self.max_iters, tol=self.tol, damping=self.damping, schedule=self.schedule)

    def spec(self, size: int | None = None, seed: int | None = None) -> EnsembleSpec:
        return EnsembleSpec(self.topology, self.size if size is None else size, self.coupling, self.field_dist,
                            self.seed if seed is None else seed)

    def output_path(self) -> Path:
        if self.out:
            return Path(self.out)
        return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / f"{self.subcommand}.csv"


def write_csv(path: Path, config: ExperimentConfig, columns: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for key, value in asdict(config).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, restval="", extrasaction="raise")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    return "" if value is None else value


def _map(fn, items, jobs: int) -> list:
    """Ordered map, across processes when ``jobs > 1``."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# -- per-instance pipelines ---------------------------------------------------


def _reference_log_z(model: IsingModel, config: ExperimentConfig, seed: int) -> tuple[float, str]:
    """Exact log Z when the chosen route allows it, else a corrected sample estimate."""
    if config.route in ("auto", "exact"):
        try:
            return exact_log_z(model), exact_route(model)
        except ValueError:
            if config.route == "exact":
                raise
    rho = rho_lambda(edge_uniform_rho(model.graph), config.reference_lambda)
    res = solve(model, rho, config.fbp_options())
    est = estimate_correction(model, rho, res.beliefs, config.samples, seed, config.batch_size)
    return res.log_z_messages + est.log_mean, "mc"


def _sweep_rows(model: IsingModel, config: ExperimentConfig, instance: int, seed: int,
                with_correction: bool) -> tuple[list[dict], bool]:
    rho = edge_uniform_rho(model.graph)
    options = config.fbp_options()
    log_z, route = _reference_log_z(model, config, seed)
    result = sweep(model, rho, lambda_grid(config.start, config.stop, config.step), options)
    rows = []
    for i, lam in enumerate(result.lambdas):
        fbp = result.results[i]
        row = {
            "instance": instance, "seed": seed, "kind": "point", "lambda": float(lam),
            "log_z_lambda": fbp.log_z_messages, "free_energy": -fbp.log_z_messages,
            "dlogz_dlambda": result.dlogz[i], "d2logz_dlambda2": result.d2logz[i],
            "converged": fbp.converged, "iterations": fbp.iterations,
        }
        if with_correction:
            rho_lam = rho_lambda(rho, float(lam))
            if model.node_count <= ENUMERATION_CAP:
                row["log_correction"], row["correction_route"] = exact_correction(model, rho_lam, fbp.beliefs), "exact"
            else:
                est = estimate_correction(model, rho_lam, fbp.beliefs, config.samples, seed, config.batch_size)
                row["log_correction"], row["correction_route"] = est.log_mean, "mc"
        rows.append(row)
    star = find_lambda_star(model, rho, log_z, options=options)
    rows.append({
        "instance": instance, "seed": seed, "kind": "summary", "log_z_exact": log_z, "exact_route": route,
        "verdict": star.status, "lambda_star": star.lambda_star, "gap": star.gap,
        "converged": result.all_converged, "iterations": sum(r.iterations for r in result.results),
        "log_z_lambda": float(result.log_z[-1]) if result.lambdas[-1] == 1.0 else None,
    })
    flagged = not result.all_converged or not star.found
    return rows, flagged


def _instance_model(config: ExperimentConfig) -> IsingModel:
    return read_model(config.model_file) if config.model_file else sample_instance(config.spec())


def cmd_sweep(config: ExperimentConfig) -> int:
    rows, flagged = _sweep_rows(_instance_model(config), config, 0, config.seed, with_correction=True)
    write_csv(config.output_path(), config, POINT_COLUMNS, rows)
    s = rows[-1]
    print(f"log Z = {s['log_z_exact']:.10f} ({s['exact_route']}); lambda* {s['verdict']}: {s['lambda_star']}")
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_lambda_star(config: ExperimentConfig) -> int:
    model = _instance_model(config)
    log_z, route = _reference_log_z(model, config, config.seed)
    star = find_lambda_star(model, edge_uniform_rho(model.graph), log_z, options=config.fbp_options())
    row = {"instance": 0, "seed": config.seed, "kind": "summary", "log_z_exact": log_z, "exact_route": route,
           "verdict": star.status, "lambda_star": star.lambda_star, "gap": star.gap}
    write_csv(config.output_path(), config, POINT_COLUMNS, [row])
    print(f"{star.status}: lambda* = {star.lambda_star}, gap = {star.gap}, route = {route}")
    return EXIT_OK if star.found else EXIT_FLAGGED


def _mixed_task(args):
    config, instance = args
    seed = config.seed + instance
    return _sweep_rows(sample_instance(config.spec(seed=seed)), config, instance, seed, with_correction=False)


def cmd_mixed(config: ExperimentConfig) -> int:
    outcomes = _map(_mixed_task, [(config, i) for i in range(config.instances)], config.jobs)
    rows = [row for instance_rows, _ in outcomes for row in instance_rows]
    write_csv(config.output_path(), config, POINT_COLUMNS, rows)
    verdicts = [r["verdict"] for r in rows if r["kind"] == "summary"]
    print(", ".join(f"{v}: {verdicts.count(v)}" for v in sorted(set(verdicts))))
    return EXIT_FLAGGED if any(flag for _, flag in outcomes) else EXIT_OK


CONCENTRATION_COLUMNS = ["size", "nodes", "instance", "seed", "kind", "route", "verdict", "lambda_star",
                         "count", "mean", "std", "std_sqrt_n"]


def _concentration_task(args):
    config, size, instance = args
    seed = config.seed + instance
    model = sample_instance(config.spec(size=size, seed=seed))
    log_z, route = _reference_log_z(model, config, seed)
    star = find_lambda_star(model, edge_uniform_rho(model.graph), log_z, options=config.fbp_options())
    return {"size": size, "nodes": model.node_count, "instance": instance, "seed": seed, "kind": "instance",
            "route": route, "verdict": star.status, "lambda_star": star.lambda_star}


def concentration_summary(rows: list[dict]) -> list[dict]:
    out = []
    for size in sorted({r["size"] for r in rows}):
        found = [r for r in rows if r["size"] == size and r["verdict"] == "found"]
        values = np.array([r["lambda_star"] for r in found])
        nodes = next(r["nodes"] for r in rows if r["size"] == size)
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        out.append({"size": size, "nodes": nodes, "kind": "summary", "count": values.size,
                    "mean": float(values.mean()) if values.size else math.nan, "std": std,
                    "std_sqrt_n": std * math.sqrt(nodes)})
    return out


def cmd_concentration(config: ExperimentConfig) -> int:
    sizes = config.sizes or [config.size]
    tasks = [(config, n, i) for n in sizes for i in range(config.instances)]
    rows = _map(_concentration_task, tasks, config.jobs)
    summary = concentration_summary(rows)
    write_csv(config.output_path(), config, CONCENTRATION_COLUMNS, rows + summary)
    for s in summary:
        print(f"size {s['size']}: {s['count']} crossings, mean {s['mean']:.4f}, std {s['std']:.4f}, "
              f"std*sqrt(N) {s['std_sqrt_n']:.4f}")
    return EXIT_OK if all(r["verdict"] == "found" for r in rows) else EXIT_FLAGGED


MC_COLUMNS = ["size", "nodes", "lambda", "kind", "samples", "running_log_mean", "std_error", "exact",
              "within_3se", "relative_variance", "exponent"]


def _mc_task(args):
    config, size, lam = args
    model = sample_instance(config.spec(size=size))
    rho = rho_lambda(edge_uniform_rho(model.graph), lam)
    res = solve(model, rho, config.fbp_options())
    est = estimate_correction(model, rho, res.beliefs, config.samples, config.seed, config.batch_size)
    try:
        exact = exact_correction(model, rho, res.beliefs)
    except ValueError:
        exact = None
    base = {"size": size, "nodes": model.node_count, "lambda": lam}
    rows = [dict(base, kind="trace", samples=n, running_log_mean=lm, std_error=se) for n, lm, se in est.trace]
    rows.append(dict(base, kind="final", samples=est.samples, running_log_mean=est.log_mean,
                     std_error=est.std_error_log, exact=exact,
                     within_3se=None if exact is None else est.within(exact),
                     relative_variance=est.relative_variance))
    return rows, res.converged


def cmd_mc_convergence(config: ExperimentConfig) -> int:
    sizes = config.sizes or [config.size]
    lambdas = config.lambdas or [0.1, 0.3, 0.5, 0.7, 0.9]
    outcomes = _map(_mc_task, [(config, n, lam) for n in sizes for lam in lambdas], config.jobs)
    rows = [row for task_rows, _ in outcomes for row in task_rows]
    finals = [r for r in rows if r["kind"] == "final"]
    nodes = [next(r["nodes"] for r in finals if r["size"] == n) for n in sizes]
    rel = [float(np.mean([r["relative_variance"] for r in finals if r["size"] == n])) for n in sizes]
    exponent = scaling_exponent(nodes, rel) if len(sizes) > 1 else math.nan
    rows.append({"kind": "scaling", "exponent": exponent})
    write_csv(config.output_path(), config, MC_COLUMNS, rows)
    for r in finals:
        print(f"size {r['size']} lambda {r['lambda']}: {r['running_log_mean']:.5f} +- {r['std_error']:.5f}"
              f" exact {r['exact']} ok={r['within_3se']}")
    print(f"relative-variance scaling exponent in N: {exponent:.3f}")
    failed = any(r["within_3se"] is False for r in finals) or not all(ok for _, ok in outcomes)
    return EXIT_FLAGGED if failed else EXIT_OK


def cmd_validate_trees(config: ExperimentConfig) -> int:
    if config.certificate:
        cert = read_certificate(config.certificate)
    else:
        if config.complete is None:
            raise UsageError("validate-trees needs --complete N or --certificate FILE")
        cert = build_edge_uniform_certificate(build_complete(config.complete))
    problems = validate_tree_set(cert.graph, cert)
    rows = [{"a": a, "b": b, "count": c, "rho": str(r)}
            for (a, b), c, r in zip(cert.graph.edges, cert.appearance_counts(), cert.induced_rho())]
    write_csv(config.output_path(), config, ["a", "b", "count", "rho"], rows)
    print(f"{len(cert.trees)} trees on {cert.graph.node_count} nodes")
    for row in rows:
        print(f"edge ({row['a']},{row['b']}): count {row['count']}, rho {row['rho']}")
    for p in problems:
        print(f"invalid: {p}", file=sys.stderr)
    if config.complete is not None and not config.certificate and config.out:
        Path(config.out).with_suffix(".cert").write_text(dumps_certificate(cert))
    return EXIT_FLAGGED if problems else EXIT_OK


COMMANDS = {
    "sweep": cmd_sweep,
    "lambda-star": cmd_lambda_star,
    "concentration": cmd_concentration,
    "mc-convergence": cmd_mc_convergence,
    "mixed": cmd_mixed,
    "validate-trees": cmd_validate_trees,
}


# -- argument parsing -------------------------------------------------------------


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, **defaults) -> None:
    p.add_argument("--topology", choices=["grid", "complete"], default="grid")
    p.add_argument("--size", type=int, default=defaults.get("size", 3))
    p.add_argument("--coupling", choices=["attractive", "mixed", "attractive-sq"],
                   default=defaults.get("coupling", "attractive"))
    p.add_argument("--field", dest="field_dist", choices=["zero", "uniform-sym", "uniform-pos"],
                   default=defaults.get("field", "uniform-pos"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--stop", type=float, default=1.0)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--schedule", choices=["sequential", "parallel"], default="sequential")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--batch-size", type=int, default=defaults.get("batch_size", 10_000))
    p.add_argument("--route", choices=["auto", "exact", "mc"], default="auto",
                   help="how log Z is obtained: exact when tractable (auto), exact only, or corrected sampling")
    p.add_argument("--reference-lambda", type=float, default=0.5)
    p.add_argument("--out", help=f"output CSV (default: ${OUTPUT_DIR_ENV}/<command>.csv)")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracbp", description="Fractional belief propagation experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    p = sub.add_parser("sweep", help="lambda sweep of log Z^(lambda) and the correction")
    _add_common(p)
    p.add_argument("--model-file")
    p = sub.add_parser("lambda-star", help="bisection for lambda*")
    _add_common(p)
    p.add_argument("--model-file")
    p = sub.add_parser("concentration", help="spread of lambda* across an ensemble")
    _add_common(p, field="zero")
    p.add_argument("--sizes", type=int, nargs="+", default=[6, 8, 10])
    p.add_argument("--instances", type=int, default=4)
    p = sub.add_parser("mc-convergence", help="sampling estimate of the correction against exact")
    _add_common(p, batch_size=1000)
    p.add_argument("--sizes", type=int, nargs="+", default=[3, 6])
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    p = sub.add_parser("mixed", help="crossing or no-crossing verdicts for mixed couplings")
    _add_common(p, size=4, coupling="mixed", field="uniform-sym")
    p.add_argument("--instances", type=int, default=20)
    p = sub.add_parser("validate-trees", help="build or check an edge-uniform spanning-tree certificate")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--complete", type=int)
    g.add_argument("--certificate")
    p.add_argument("--out")
    return parser


def parse_config(argv: list[str] | None = None) -> ExperimentConfig:
    ns = build_parser().parse_args(argv)
    values = {k.replace("-", "_"): v for k, v in vars(ns).items()}
    config = ExperimentConfig(**values)
    if not (0.0 <= config.start <= config.stop <= 1.0) or config.step <= 0:
        raise UsageError("grid must satisfy 0 <= start <= stop <= 1 with a positive step")
    if config.start < config.stop and config.step > config.stop - config.start:
        raise UsageError("step is larger than the grid span")
    if config.samples < 1 or config.batch_size < 1 or config.instances < 1 or config.jobs < 1:
        raise UsageError("sample, batch, instance and job counts must be positive")
    return config


def main(argv: list[str] | None = None) -> int:
    try:
        config = parse_config(argv)
        return COMMANDS[config.subcommand](config)
    except UsageError as exc:
        print(f"fracbp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"fracbp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
