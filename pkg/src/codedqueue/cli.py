"""Command-line entry point: ``codedqueue {analyze,sweep,simulate,validate}``.

Parameters come from an optional JSON file (``--config``) and flags; flags
win. CSV outputs start with one ``#`` provenance line; the validation JSON
carries the same information under ``meta``.

Exit codes: 0 ok, 2 invalid config, 3 unstable system, 4 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from codedqueue import __version__
from codedqueue.bos import (
    BosCoefficients,
    bos_capacity,
    bos_coefficients,
    bos_mean_packet_delay,
    bos_mean_request_delay,
    bos_packet_delay_error_bound,
    bos_request_offset_exact,
    bos_stationary,
    cut_residuals,
    delay_gain,
    lemma_offset,
    max_service_density,
    max_service_expectation,
)
from codedqueue.config import InvalidConfig, SystemConfig, UnstableSystem
from codedqueue.mmr import mmr_mean_packet_delay, mmr_stationary
from codedqueue.oracle import (
    build_generator,
    compare_distributions,
    generator_residual,
    solve_stationary_direct,
)
from codedqueue.sim import (
    SCHEDULERS,
    SIMULATORS,
    mean_ci,
    replication_seed,
    run_replications,
    write_trace,
)

EXIT_OK, EXIT_INVALID, EXIT_UNSTABLE, EXIT_VALIDATION = 0, 2, 3, 4

ANALYZE_COLUMNS = (
    "r", "lambda", "mu", "capacity_bos", "eta", "pi0_coded", "d_uncoded_packet",
    "d_coded_packet", "d_coded_request", "gain", "delay_error_bound", "status",
)
SWEEP_COLUMNS = (
    "r", "lambda", "mu", "d_uncoded_packet", "d_coded_packet", "d_coded_request", "gain", "capacity_bos",
)
SIM_COLUMNS = (
    "scheduler", "r", "lambda", "mu", "rep", "seed", "horizon", "warmup",
    "mean_packet_delay", "ci_packet", "mean_request_delay", "ci_request",
    "mean_offset", "ci_offset", "throughput", "ci_method", "distinct_ok",
)
DEFAULT_SWEEP_POINTS = 50
DEFAULT_SWEEP_TOP = 0.99


@dataclass
class ExperimentSpec:
    mode: str
    r: int | None = None
    lam: float | None = None
    mu: float = 1.0
    lambda_grid: list[float] = field(default_factory=list)
    scheduler: str = "bos"
    horizon: int = 100_000
    warmup: int | None = None
    n_reps: int = 10
    base_seed: int = 0
    output_path: str | None = None
    trace_path: str | None = None
    tol: float = 1e-12
    simulate_checks: bool = True

    def config(self) -> SystemConfig:
        if self.r is None or self.lam is None:
            raise InvalidConfig(f"{self.mode} needs both --r and --lambda")
        return SystemConfig(self.r, self.lam, self.mu)

    def echo(self) -> str:
        parts = [f"codedqueue {__version__}", f"mode={self.mode}", f"r={self.r}", f"lambda={self.lam!r}",
                 f"mu={self.mu!r}", f"tol={self.tol!r}"]
        if self.mode == "sweep":
            parts.append("grid=" + ";".join(repr(x) for x in self.lambda_grid))
        if self.mode in ("simulate", "validate"):
            parts += [f"scheduler={self.scheduler}", f"horizon={self.horizon}", f"warmup={self.warmup}",
                      f"reps={self.n_reps}", f"seed={self.base_seed}"]
        return "# " + " ".join(parts)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _emit(spec: ExperimentSpec, text: str, path: str | None = None) -> None:
    path = spec.output_path if path is None else path
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(spec: ExperimentSpec, columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(spec.echo() + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def analyze_row(config: SystemConfig, tol: float = 1e-12) -> dict:
    """Capacity, eta, pi_0 and the delays of both systems at one arrival rate."""
    cap = bos_capacity(config.r, config.mu)
    coeffs = bos_coefficients(config)
    dist = bos_stationary(config, tol)
    row = {
        "r": config.r, "lambda": config.lam, "mu": config.mu, "capacity_bos": cap,
        "eta": coeffs.eta, "pi0_coded": dist.pi0, "d_uncoded_packet": "", "d_coded_packet": "",
        "d_coded_request": "", "gain": "", "delay_error_bound": "", "status": "ok",
    }
    if config.lam == 0:
        row["status"] = "error: delays and gain undefined at lambda=0"
        return row
    d_unc = mmr_mean_packet_delay(mmr_stationary(config, tol), config.lam)
    d_cod = bos_mean_packet_delay(dist, config)
    row.update(
        d_uncoded_packet=d_unc,
        d_coded_packet=d_cod,
        d_coded_request=bos_mean_request_delay(d_cod, config),
        gain=delay_gain(d_unc, d_cod),
        delay_error_bound=bos_packet_delay_error_bound(dist, config),
    )
    return row


def cmd_analyze(spec: ExperimentSpec) -> int:
    row = analyze_row(spec.config(), spec.tol)
    _emit(spec, _csv_text(spec, ANALYZE_COLUMNS, [[row[c] for c in ANALYZE_COLUMNS]]))
    return EXIT_OK


def default_grid(r: int, mu: float = 1.0, points: int = DEFAULT_SWEEP_POINTS, top: float = DEFAULT_SWEEP_TOP):
    hi = top * bos_capacity(r, mu)
    return np.linspace(hi / points, hi, points).tolist()


def sweep_rows(r: int, mu: float, grid: Sequence[float], tol: float = 1e-12) -> list[list]:
    cap = bos_capacity(r, mu)
    rows = []
    for lam in grid:
        cfg = SystemConfig(r, lam, mu)
        if lam == 0:
            rows.append([r, cfg.lam, mu, "UNDEFINED", "UNDEFINED", "UNDEFINED", "UNDEFINED", cap])
            continue
        d_unc = (
            mmr_mean_packet_delay(mmr_stationary(cfg, tol), lam) if lam < r * mu else "UNSTABLE"
        )
        if lam >= cap:
            rows.append([r, cfg.lam, mu, d_unc, "UNSTABLE", "UNSTABLE", "UNSTABLE", cap])
            continue
        d_cod = bos_mean_packet_delay(bos_stationary(cfg, tol), cfg)
        rows.append(
            [r, cfg.lam, mu, d_unc, d_cod, bos_mean_request_delay(d_cod, cfg), delay_gain(d_unc, d_cod), cap]
        )
    return rows


def cmd_sweep(spec: ExperimentSpec) -> int:
    if spec.r is None:
        raise InvalidConfig("sweep needs --r")
    SystemConfig(spec.r, 0.0, spec.mu)
    if not spec.lambda_grid:
        spec.lambda_grid = default_grid(spec.r, spec.mu)
    rows = sweep_rows(spec.r, spec.mu, spec.lambda_grid, spec.tol)
    _emit(spec, _csv_text(spec, SWEEP_COLUMNS, rows))
    return EXIT_OK


def _sim_row(scheduler, cfg, rep, seed, res) -> list:
    rpt = res.report
    return [
        scheduler, cfg.r, cfg.lam, cfg.mu, rep, seed, res.horizon if rep != "all" else rpt.n_samples,
        res.warmup if rep != "all" else "", rpt.mean_packet_delay, rpt.ci_halfwidth_packet,
        rpt.mean_request_delay, rpt.ci_halfwidth_request, res.mean_offset, res.ci_halfwidth_offset,
        res.throughput, getattr(res, "ci_method", "t-replications"), res.distinct_ok,
    ]


def cmd_simulate(spec: ExperimentSpec) -> int:
    cfg = spec.config()
    if spec.scheduler not in SCHEDULERS:
        raise InvalidConfig(f"unknown scheduler {spec.scheduler!r}")
    trace = spec.trace_path is not None
    rows = []
    if spec.n_reps == 1:
        seed = replication_seed(spec.base_seed, 0)
        res = SIMULATORS[spec.scheduler](cfg, spec.horizon, spec.warmup, seed, trace=trace)
        rows.append(_sim_row(spec.scheduler, cfg, 0, "-".join(map(str, seed)), res))
        first = res
    else:
        summary = run_replications(
            spec.scheduler, cfg, spec.n_reps, spec.base_seed, spec.horizon, spec.warmup, trace=trace
        )
        for i, res in enumerate(summary.results):
            rows.append(_sim_row(spec.scheduler, cfg, i, "-".join(map(str, res.seed)), res))
        rows.append(_sim_row(spec.scheduler, cfg, "all", spec.base_seed, summary))
        first = summary.results[0]
    _emit(spec, _csv_text(spec, SIM_COLUMNS, rows))
    if trace:
        buf = io.StringIO()
        buf.write(spec.echo() + " trace=replication-0\n")
        write_trace(buf, first.records)
        Path(spec.trace_path).write_text(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------- validation


def _check(name, passed, observed, expected, tolerance, **detail) -> dict:
    return {
        "name": name,
        "passed": bool(passed),
        "observed": observed,
        "expected": expected,
        "tolerance": tolerance,
        **detail,
    }


def _oracle_checks(cfg: SystemConfig, tol: float, coefficients: BosCoefficients | None) -> list[dict]:
    tag = f"r={cfg.r},lambda={cfg.lam!r}"
    try:
        dist = bos_stationary(cfg, tol, coefficients=coefficients)
    except (UnstableSystem, ArithmeticError) as exc:
        return [_check(f"bos_stationary[{tag}]", False, str(exc), "converged distribution", None)]
    levels = dist.levels + 10
    direct = solve_stationary_direct(build_generator(cfg, levels))
    gap, worst = compare_distributions(dist.to_stationary(levels), direct)
    residual = generator_residual(build_generator(cfg, dist.levels), dist.to_stationary().probs)
    cuts = cut_residuals(dist, cfg)
    return [
        _check(f"oracle_equivalence[{tag}]", gap < 1e-8, gap, 0.0, 1e-8,
               worst_state=repr(worst), truncation_levels=levels),
        _check(f"generator_residual[{tag}]", residual < 1e-8, residual, 0.0, 1e-8),
        _check(f"cut_residuals[{tag}]", max(cuts.values()) < 1e-8, max(cuts.values()), 0.0, 1e-8,
               families=cuts),
        _check(f"total_mass[{tag}]", abs(dist.total_mass - 1) < 1e-9, dist.total_mass, 1.0, 1e-9,
               tail_mass=dist.tail_mass),
    ]


def _sim_checks(cfg: SystemConfig, spec: ExperimentSpec, confidence: float) -> list[dict]:
    tag = f"r={cfg.r},lambda={cfg.lam!r}"
    dist = bos_stationary(cfg, spec.tol)
    analytic_bos = bos_mean_packet_delay(dist, cfg)
    analytic_unc = mmr_mean_packet_delay(mmr_stationary(cfg, spec.tol), cfg.lam)
    bos = run_replications("bos", cfg, spec.n_reps, spec.base_seed, spec.horizon, spec.warmup,
                           confidence=confidence)
    unc = run_replications("uncoded", cfg, spec.n_reps, spec.base_seed, spec.horizon, spec.warmup,
                           confidence=confidence)
    offset = bos_request_offset_exact(dist, cfg)
    out = []
    for name, summ, target in (("sim_bos_packet_delay", bos, analytic_bos),
                               ("sim_uncoded_packet_delay", unc, analytic_unc)):
        h = summ.report.ci_halfwidth_packet
        out.append(_check(f"{name}[{tag}]", abs(summ.report.mean_packet_delay - target) <= h,
                          summ.report.mean_packet_delay, target, h, confidence=confidence))
    out.append(_check(f"request_offset[{tag}]", abs(bos.mean_offset - offset) <= bos.ci_halfwidth_offset,
                      bos.mean_offset, offset, bos.ci_halfwidth_offset, confidence=confidence,
                      heavy_traffic_offset=lemma_offset(cfg.r, cfg.mu)))
    out.append(_check(f"distinct_servers[{tag}]", bos.distinct_ok and unc.distinct_ok,
                      bos.distinct_ok and unc.distinct_ok, True, None))
    return out


def _max_service_checks(r: int, mu: float, seed: int) -> list[dict]:
    from scipy import integrate

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, r])))
    n = 1_000_000
    s1 = rng.exponential(1 / mu, n)
    s2 = rng.exponential(1 / mu, n)
    tau = rng.exponential(1 / ((2 * r - 1) * mu), n)
    mc = float(np.maximum(s1, s2 + tau).mean())
    ez = max_service_expectation(r, mu)
    mass, _ = integrate.quad(lambda z: max_service_density(r, mu, z), 0, 50 / mu, limit=200)
    return [
        _check(f"max_service_mean[r={r}]", abs(mc - ez) < 1e-2, mc, ez, 1e-2, samples=n),
        _check(f"max_service_density_mass[r={r}]", abs(mass - 1) < 1e-6, mass, 1.0, 1e-6),
    ]


def run_validation(
    spec: ExperimentSpec,
    coefficient_hook: Callable[[BosCoefficients], BosCoefficients] | None = None,
) -> dict:
    """Run every cross-check and return the JSON-ready summary.

    ``coefficient_hook`` edits the analytic coefficients before the
    iterative solve; it exists so tests can prove that a corrupted analysis
    is caught.
    """
    rs = [spec.r] if spec.r is not None else [2, 3, 4]
    checks: list[dict] = []
    sim_points = []
    for r in rs:
        cap = bos_capacity(r, spec.mu)
        lams = [spec.lam] if spec.lam is not None else [f * cap for f in (0.3, 0.6, 0.9)]
        for lam in lams:
            cfg = SystemConfig(r, lam, spec.mu)
            coeffs = coefficient_hook(bos_coefficients(cfg)) if coefficient_hook else None
            checks += _oracle_checks(cfg, spec.tol, coeffs)
        sim_points.append(SystemConfig(r, 0.6 * cap, spec.mu))
        checks += _max_service_checks(r, spec.mu, spec.base_seed)
    if spec.simulate_checks:
        # three interval checks per point; Bonferroni keeps the family at 95%
        confidence = 1 - 0.05 / (3 * len(sim_points))
        for cfg in sim_points:
            checks += _sim_checks(cfg, spec, confidence)
    passed = all(c["passed"] for c in checks)
    return {
        "meta": {
            "tool": f"codedqueue {__version__}", "r": rs, "lambda": spec.lam, "mu": spec.mu,
            "tol": spec.tol, "horizon": spec.horizon, "warmup": spec.warmup, "reps": spec.n_reps,
            "seed": spec.base_seed, "simulation": spec.simulate_checks,
        },
        "passed": passed,
        "failed": [c["name"] for c in checks if not c["passed"]],
        "checks": checks,
    }


def cmd_validate(spec: ExperimentSpec, coefficient_hook=None) -> int:
    summary = run_validation(spec, coefficient_hook)
    _emit(spec, json.dumps(summary, indent=2, default=_json_default) + "\n")
    return EXIT_OK if summary["passed"] else EXIT_VALIDATION


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


# ---------------------------------------------------------------- argument handling


def parse_grid(text: str) -> list[float]:
    """``start:stop:count`` (inclusive linspace) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            a, b, n = text.split(":")
            grid = np.linspace(float(a), float(b), int(n)).tolist()
        else:
            grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InvalidConfig(f"cannot parse grid {text!r}: {exc}") from exc
    if not grid:
        raise InvalidConfig("empty grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidConfig("grid points must be strictly ascending")
    return grid


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codedqueue", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"codedqueue {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in ("analyze", "sweep", "simulate", "validate"):
        p = sub.add_parser(mode)
        p.add_argument("--config", help="JSON file of parameters; flags override it")
        p.add_argument("--r", type=int)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--mu", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--out", dest="output_path")
        if mode == "sweep":
            p.add_argument("--grid", help="start:stop:count or comma list of arrival rates")
        if mode in ("simulate", "validate"):
            p.add_argument("--horizon", type=int, help="measured requests per replication")
            p.add_argument("--warmup", type=int, help="discarded requests (default horizon/10)")
            p.add_argument("--reps", dest="n_reps", type=int)
            p.add_argument("--seed", dest="base_seed", type=int)
        if mode == "simulate":
            p.add_argument("--scheduler", choices=SCHEDULERS)
            p.add_argument("--trace", dest="trace_path", help="write replication 0 as a request trace CSV")
        if mode == "validate":
            p.add_argument("--no-sim", dest="simulate_checks", action="store_const", const=False)
    return parser


_CONFIG_KEYS = {
    "r": "r", "lambda": "lam", "lam": "lam", "mu": "mu", "tol": "tol", "grid": "lambda_grid",
    "scheduler": "scheduler", "horizon": "horizon", "warmup": "warmup", "reps": "n_reps",
    "seed": "base_seed", "out": "output_path", "trace": "trace_path",
}


def spec_from_args(ns: argparse.Namespace) -> ExperimentSpec:
    spec = ExperimentSpec(mode=ns.mode)
    if spec.mode == "validate":
        spec.horizon = 20_000
    if ns.config:
        try:
            raw = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {ns.config}: {exc}") from exc
        for key, value in raw.items():
            if key not in _CONFIG_KEYS:
                raise InvalidConfig(f"unknown config key {key!r}")
            if key == "grid":
                value = parse_grid(value) if isinstance(value, str) else [float(v) for v in value]
            setattr(spec, _CONFIG_KEYS[key], value)
    for key, value in vars(ns).items():
        if key in ("mode", "config") or value is None:
            continue
        if key == "grid":
            spec.lambda_grid = parse_grid(value)
        else:
            setattr(spec, key, value)
    if spec.lambda_grid and any(b <= a for a, b in zip(spec.lambda_grid, spec.lambda_grid[1:])):
        raise InvalidConfig("grid points must be strictly ascending")
    if spec.n_reps < 1 or spec.horizon < 2:
        raise InvalidConfig("reps must be >= 1 and horizon >= 2")
    if not spec.tol > 0:
        raise InvalidConfig("tol must be positive")
    return spec


COMMANDS = {"analyze": cmd_analyze, "sweep": cmd_sweep, "simulate": cmd_simulate, "validate": cmd_validate}


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(ns)
        return COMMANDS[spec.mode](spec)
    except UnstableSystem as exc:
        print(f"codedqueue: unstable system: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except InvalidConfig as exc:
        print(f"codedqueue: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
