"""Command line entry point: ``gauduchon run|verify|list-scenarios``.

Configuration is a TOML file::

    scenario = "manufactured"     # see `gauduchon list-scenarios`
    n = 2
    res = 32
    seed = 0
    output = "out/manufactured"   # relative to the config file
    s = 0.25                      # or s_schedule = [0.1, 1.0]
    lambda = 1.0                  # manufactured scenario only

    [solver]                      # any SolverConfig field
    tol = 1e-9

    [estimate]                    # estimate-T search
    s_start = 0.05
    s_max = 4.0
    s_resolution = 0.05

    [params]                      # scenario-specific knobs
    amplitude = 0.1

Exit codes: 0 success, 1 ``verify`` found differences, 2 configuration
error, 3 solver failure, 4 identity-suite violation.  Once the output
directory is known a report is written whatever the outcome.  ``GAUDUCHON_THREADS`` caps
the native thread pools.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .chern import NotPositiveError
from .driver import CertificateError, ReconstructionError, TEstimateConfig
from .fieldio import (REPORT_SCHEMA, SchemaError, compare_reports, load_report, write_convergence,
                      write_field, write_report)
from .scenarios import DESCRIPTIONS, RUNNERS, SCENARIOS
from .solver import SolverConfig, SolverError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("gauduchon")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_SOLVER, EXIT_IDENTITY = 0, 1, 2, 3, 4

TOP_KEYS = {"scenario", "n", "res", "seed", "output", "s", "s_schedule", "lambda", "solver", "estimate",
            "params"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str
    n: int = 2
    res: int = 16
    seed: int = 0
    output: Path = Path("out")
    s_values: list | None = None
    lam: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    estimate: TEstimateConfig = field(default_factory=TEstimateConfig)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.n not in (2, 3):
            raise ConfigError(f"n must be 2 or 3, got {self.n}")
        if self.res < 4 or self.res & (self.res - 1):
            raise ConfigError(f"res must be a power of two >= 4, got {self.res}")
        if self.s_values is not None and any(not s > 0 for s in self.s_values):
            raise ConfigError("s values must be positive")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError("lambda must be positive")

    def as_dict(self) -> dict:
        return {"scenario": self.scenario, "n": self.n, "res": self.res, "seed": self.seed,
                "output": str(self.output), "s_values": self.s_values, "lambda": self.lam,
                "solver": dataclasses.asdict(self.solver),
                "estimate": {k: v for k, v in dataclasses.asdict(self.estimate).items() if k != "solver"},
                "params": self.params}


def _sub_config(cls, table: dict, name: str, **extra):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown [{name}] keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**table, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    if "scenario" not in data:
        raise ConfigError("missing 'scenario'")
    if "s" in data and "s_schedule" in data:
        raise ConfigError("give either 's' or 's_schedule', not both")
    s_values = None
    if "s" in data:
        s_values = [float(data["s"])]
    elif "s_schedule" in data:
        s_values = [float(v) for v in data["s_schedule"]]
    solver = _sub_config(SolverConfig, data.get("solver", {}), "solver")
    estimate = _sub_config(TEstimateConfig, data.get("estimate", {}), "estimate", solver=solver)
    params = data.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[params] must be a table")
    output = Path(data.get("output", "out"))
    if not output.is_absolute():
        output = (base_dir / output).resolve()
    try:
        return RunConfig(scenario=str(data["scenario"]), n=int(data.get("n", 2)), res=int(data.get("res", 16)),
                         seed=int(data.get("seed", 0)), output=output, s_values=s_values,
                         lam=None if "lambda" not in data else float(data["lambda"]),
                         solver=solver, estimate=estimate, params=dict(params))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: Path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data, Path(path).resolve().parent)


def _thread_limit():
    value = os.environ.get("GAUDUCHON_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"GAUDUCHON_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("GAUDUCHON_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def execute(cfg: RunConfig) -> tuple[int, dict]:
    """Run a scenario and write its artifacts; returns (exit code, report)."""
    out_dir = cfg.output
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"schema": REPORT_SCHEMA, "scenario": cfg.scenario, "config": cfg.as_dict(),
              "version": __version__, "python": platform.python_version(), "numpy": np.__version__}
    started = time.perf_counter()
    code = EXIT_OK
    outcome = None
    try:
        outcome = RUNNERS[cfg.scenario](cfg)
    except (SolverError, CertificateError, ReconstructionError, NotPositiveError) as exc:
        code = EXIT_SOLVER
        report["status"] = "solver_failure"
        report["error"] = exc.as_dict() if isinstance(exc, SolverError) else {
            "error": type(exc).__name__, "message": str(exc)}
    except ValueError as exc:
        # inputs the scenario rejects (e.g. a dimension it does not support)
        code = EXIT_CONFIG
        report["status"] = "config_error"
        report["error"] = {"error": type(exc).__name__, "message": str(exc)}
    if outcome is None:
        report["metrics"] = {}
        report["tolerances"] = {}
    else:
        report["status"] = outcome.status
        report["metrics"] = outcome.metrics
        report["tolerances"] = outcome.tolerances
        report["info"] = outcome.info
        report["history"] = outcome.history
        report["min_eig_margins"] = [h.get("min_eig") for h in outcome.history]
        report["timings"] = dict(outcome.timings)
        files = []
        for name, arr in outcome.fields.items():
            files += [p.name for p in write_field(out_dir / "fields", name, arr, 2 * cfg.n)]
        report["files"] = sorted(files)
        write_convergence(out_dir / "convergence.csv", outcome.history)
        if outcome.status == "identity_violation":
            code = EXIT_IDENTITY
    report.setdefault("timings", {})["total"] = time.perf_counter() - started
    write_report(out_dir / "report.json", report)
    return code, report


def cmd_run(args) -> int:
    try:
        limiter = _thread_limit()
        cfg = load_config(Path(args.config))
        if args.output:
            cfg.output = Path(args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, report = execute(cfg)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    print(f"{cfg.scenario}: {report['status']} -> {cfg.output / 'report.json'}")
    for key, val in sorted(report.get("metrics", {}).items()):
        print(f"  {key} = {val}")
    if "error" in report:
        print(f"  error: {report['error']['message']}", file=sys.stderr)
    return code


def cmd_verify(args) -> int:
    try:
        report = load_report(Path(args.report))
        baseline = load_report(Path(args.baseline))
        violations = compare_reports(report, baseline)
    except SchemaError as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not violations:
        print("no differences")
        return EXIT_OK
    for v in violations:
        print(json.dumps(v, sort_keys=True))
    return EXIT_VIOLATION


def cmd_list(args) -> int:
    for name in SCENARIOS:
        print(f"{name:22s} {DESCRIPTIONS[name]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gauduchon", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a scenario from a TOML config")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="override the output directory")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="compare a report against a baseline report")
    p.add_argument("report")
    p.add_argument("baseline")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("list-scenarios", help="list the scenario catalog")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
