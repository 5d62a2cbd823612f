"""Batch benchmark harness and verification CLI.

Subcommands:

* ``run <config.json>`` -- execute a (solver x tau) sweep on one problem and
  write a CSV trace.
* ``verify [scope]`` -- run the registered invariant suites; exit 0 iff all
  checks pass.
* ``synth <spec.json>`` -- generate a synthetic logistic dataset in LIBSVM
  format.

Exit codes: 0 success, 1 verification failure, 2 unknown solver or malformed
config, 3 unreadable dataset, 4 invalid memory size.  The environment
variable ``LGBFGS_LOG`` sets the log level.

Config files are JSON.  A run config looks like::

    {
      "seed": 0,
      "problem": {"kind": "libsvm", "path": "data.txt", "mu": 1e-4,
                  "normalize": true},
      "warm_start_k0": 10,
      "max_iters": 100,
      "grad_tol": 1e-12,
      "record_dense_diags": false,
      "solvers": [
        {"method": "lg_bfgs", "taus": [10, 20]},
        {"method": "lbfgs", "taus": [10]},
        {"method": "gd"}
      ],
      "output": "trace.csv"
    }

``problem.kind`` is one of ``libsvm``, ``synth_logistic`` (fields n, d, mu),
or ``synth_quadratic`` (fields d, spectrum, rotate).  Per-solver entries may
override ``alpha``, ``correction`` (off/basic/delta), ``subset_policy``,
``h0_scale``, and ``lbfgs_scaling``.  The trace CSV starts with a schema
comment line followed by the header
``solver,tau,iteration,f_gap,grad_norm,lambda_f,pair_count,case_tag,wall_time_s``;
rows are sorted by (solver, tau, iteration) and are byte-stable for a fixed
config and seed except for the wall-time column.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import verify
from .correction import CorrectionConfig
from .data import parse_libsvm, normalize_rows, serialize_libsvm, synth_logistic_dataset, synth_problem
from .greedy import SubsetPolicy
from .objectives import LogisticObjective, Objective
from .solvers import METHODS, SolverConfig, Trace, run, warm_start

logger = logging.getLogger(__name__)

CSV_SCHEMA = 1
CSV_HEADER = "solver,tau,iteration,f_gap,grad_norm,lambda_f,pair_count,case_tag,wall_time_s"

EXIT_VERIFY_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_BAD_DATASET = 3
EXIT_BAD_TAU = 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment: a problem, a solver/tau grid, and run parameters."""

    problem: dict
    solvers: list[dict]
    seed: int
    output: str = "trace.csv"
    warm_start_k0: int = 0
    max_iters: int = 100
    grad_tol: float = 1e-12
    record_dense_diags: bool = False

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
        missing = {"problem", "solvers", "seed"} - raw.keys()
        if missing:
            raise ConfigError(f"config is missing fields: {sorted(missing)}")
        if not raw["solvers"]:
            raise ConfigError("config must list at least one solver")
        known = {
            "problem", "solvers", "seed", "output", "warm_start_k0",
            "max_iters", "grad_tol", "record_dense_diags",
        }
        unknown = raw.keys() - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


def _build_objective(problem: dict, seed: int) -> Objective:
    kind = problem.get("kind")
    if kind == "libsvm":
        path = problem.get("path")
        if not path:
            raise ConfigError("libsvm problem requires a 'path' field")
        if not os.path.exists(path):
            raise FileNotFoundError(f"dataset {path!r} does not exist")
        try:
            ds = parse_libsvm(path)
        except OSError as exc:
            raise FileNotFoundError(f"cannot read dataset {path!r}: {exc}") from exc
        if problem.get("normalize", True):
            ds = normalize_rows(ds)
        return LogisticObjective(ds, reg_mu=float(problem.get("mu", 1e-4)))
    if kind == "synth_logistic":
        return synth_problem(
            "logistic",
            d=int(problem["d"]),
            n=int(problem["n"]),
            mu=float(problem.get("mu", 1e-4)),
            seed=seed,
        )
    if kind == "synth_quadratic":
        return synth_problem(
            "quadratic",
            d=int(problem["d"]),
            spectrum=problem.get("spectrum", (1.0, 100.0)),
            seed=seed,
            rotate=bool(problem.get("rotate", True)),
        )
    raise ConfigError(f"unknown problem kind {kind!r}")


def _solver_cells(cfg: ExperimentConfig) -> list[SolverConfig]:
    cells = []
    for entry in cfg.solvers:
        method = entry.get("method")
        if method not in METHODS:
            raise ConfigError(f"unknown solver method {method!r}")
        taus = entry.get("taus", [entry.get("tau", 10)])
        if isinstance(taus, int):
            taus = [taus]
        for tau in taus:
            tau = int(tau)
            if tau < 1:
                raise ConfigError(f"invalid tau {tau} for solver {method}")
            correction = entry.get("correction", "off")
            cells.append(
                SolverConfig(
                    method=method,
                    tau=tau,
                    alpha=entry.get("alpha"),
                    max_iters=cfg.max_iters,
                    grad_tol=cfg.grad_tol,
                    correction=CorrectionConfig(mode=correction),
                    subset_policy=SubsetPolicy(entry.get("subset_policy", "adaptive")),
                    h0_scale=entry.get("h0_scale"),
                    lbfgs_scaling=entry.get("lbfgs_scaling", "fixed"),
                    record_dense_diags=cfg.record_dense_diags,
                )
            )
    return cells


def _run_cell(obj: Objective, x0: np.ndarray, cell: SolverConfig) -> Trace:
    logger.info("running %s tau=%d", cell.method, cell.tau)
    return run(obj, x0, cell)


def _format(value: float) -> str:
    return repr(float(value))


def run_experiment(cfg: ExperimentConfig, parallel: int = 1) -> str:
    """Execute the sweep and write the CSV trace; returns the output path."""
    obj = _build_objective(cfg.problem, cfg.seed)
    x0 = np.zeros(obj.info.dim)
    if cfg.warm_start_k0 > 0:
        x0 = warm_start(obj, x0, cfg.warm_start_k0)
    cells = _solver_cells(cfg)
    for cell in cells:
        if cell.method == "lg_bfgs" and cell.subset_policy.mode == "fixed_prefix" \
                and cell.tau > obj.info.dim:
            raise ConfigError(
                f"invalid tau {cell.tau}: exceeds dimension {obj.info.dim} "
                "under the fixed_prefix policy"
            )
    if parallel > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallel) as pool:
            traces = list(pool.map(lambda c: _run_cell(obj, x0, c), cells))
    else:
        traces = [_run_cell(obj, x0, cell) for cell in cells]

    f_best = min(min(r.f_value for r in tr.records) for tr in traces)
    rows = []
    for cell, tr in zip(cells, traces):
        for rec in tr.records:
            rows.append(
                (
                    cell.method,
                    cell.tau,
                    rec.t,
                    _format(rec.f_value - f_best),
                    _format(rec.grad_norm),
                    "" if rec.lambda_f is None else _format(rec.lambda_f),
                    rec.pair_count,
                    rec.case_tag or "",
                    _format(rec.wall_time_s),
                )
            )
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    try:
        fh = open(cfg.output, "w")
    except OSError as exc:
        raise ConfigError(f"cannot write output {cfg.output!r}: {exc}") from exc
    with fh:
        fh.write(f"# schema={CSV_SCHEMA}\n")
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
    logger.info("wrote %d rows to %s", len(rows), cfg.output)
    return cfg.output


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.from_json(args.config)
        if args.output:
            cfg.output = args.output
        run_experiment(cfg, parallel=args.parallel)
    except ConfigError as exc:
        msg = str(exc)
        print(f"error: {msg}", file=sys.stderr)
        if "tau" in msg:
            return EXIT_BAD_TAU
        return EXIT_BAD_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_DATASET
    return 0


def _cmd_verify(args) -> int:
    try:
        results, passed = verify.run_suite(args.scope)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    for result in results:
        print(result.render())
    return 0 if passed else EXIT_VERIFY_FAILED


def _cmd_synth(args) -> int:
    try:
        with open(args.spec) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read synth spec: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    kind = spec.get("kind", "logistic")
    if kind != "logistic":
        print(f"error: synth can only emit logistic datasets, got {kind!r}",
              file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        ds = synth_logistic_dataset(
            n=int(spec["n"]), d=int(spec["d"]), seed=int(spec.get("seed", 0))
        )
    except (KeyError, ValueError) as exc:
        print(f"error: bad synth spec: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    out = args.output or spec.get("output", "synthetic.libsvm")
    with open(out, "w") as fh:
        serialize_libsvm(ds, fh)
    print(f"wrote {ds.n_samples} samples x {ds.n_features} features to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgbfgs",
        description="Limited-memory greedy quasi-Newton benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark sweep from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--output", help="override the config's output path")
    p_run.add_argument("--parallel", type=int, default=1,
                       help="run independent (solver, tau) cells concurrently")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the invariant suites")
    p_verify.add_argument("scope", nargs="?", default="all",
                          choices=["kernels", "aggregation", "theory", "all"])
    p_verify.set_defaults(func=_cmd_verify)

    p_synth = sub.add_parser("synth", help="generate a synthetic LIBSVM dataset")
    p_synth.add_argument("spec")
    p_synth.add_argument("--output")
    p_synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("LGBFGS_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
