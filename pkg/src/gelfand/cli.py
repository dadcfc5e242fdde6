"""Command-line driver: solve, flow, sweep, convexity, barriers, all.

Configuration comes from an optional INI file (``--config``) with sections

    [domain]      kind, dim, radius, a, b, length, resolution
    [run]         lambda (comma separated), lambda_max, out, format
    [tolerances]  newton_tol, steady_tol, conv_tol, barrier_tol
    [flow]        dt, max_steps

and flags override file values.  Exit codes: 0 success, 2 when a checked
claim fails, 1 on operational errors.

Outputs in ``--out``:

    field CSV        node_index, x[, y], class, value
    flow time series step, t, max_u, lyapunov, min_hessian_eig_w, steady_residual
    branch CSV       index, lambda, max_phi, mu1, residual_norm, newton_iterations
    *.json           reports with schema_version "1"
    meta.json        timestamps and argv (kept out of the reports so they are reproducible)
"""
from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .barriers import check_barriers, lambda_bar, lambda_bar_general
from .domain import (PLANAR_MAX_RES, PLANAR_MIN_RES, RADIAL_MAX_RES, RADIAL_MIN_RES,
                     DomainKind, DomainSpec, build_grid)
from .flow import TIME_SERIES_COLUMNS, BlowUpSuspected, FlowControls, run_to_steady
from .geometry import convexity_report, hessian_min_eig_field, to_w
from .steady import NewtonDivergence, continue_branch, default_newton_tol, newton_solve

MODES = ("solve", "flow", "sweep", "convexity", "barriers", "all")
BRANCH_COLUMNS = ("index", "lambda", "max_phi", "mu1", "residual_norm", "newton_iterations")

_KEYS = {
    "domain": {"kind", "dim", "radius", "a", "b", "length", "resolution"},
    "run": {"lambda", "lambda_max", "out", "format"},
    "tolerances": {"newton_tol", "steady_tol", "conv_tol", "barrier_tol"},
    "flow": {"dt", "max_steps"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str
    spec: DomainSpec
    resolution: int
    lambdas: tuple = ()
    lambda_max: float = math.inf
    out: Path = Path("gelfand-out")
    formats: frozenset = frozenset({"csv", "json"})
    newton_tol: float | None = None
    steady_tol: float = 1e-9
    conv_tol: float | None = None
    barrier_tol: float | None = None
    dt: float | None = None
    max_steps: int = 200_000


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gelfand", description="Numerical laboratory for Δφ + λe^φ = 0.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [domain]/[run]/[tolerances]/[flow] sections")
    common.add_argument("--domain", choices=[k.value for k in DomainKind])
    common.add_argument("--dim", type=int)
    common.add_argument("--radius", type=float)
    common.add_argument("--a", type=float)
    common.add_argument("--b", type=float)
    common.add_argument("--length", type=float)
    common.add_argument("--resolution", type=int)
    common.add_argument("--lambda", dest="lam", help="value or comma-separated list")
    common.add_argument("--lambda-max", type=float)
    common.add_argument("--out")
    common.add_argument("--format", help="csv, json or csv,json")
    common.add_argument("--newton-tol", type=float)
    common.add_argument("--steady-tol", type=float)
    common.add_argument("--conv-tol", type=float)
    common.add_argument("--barrier-tol", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--max-steps", type=int)
    sub = p.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sub.add_parser(mode, parents=[common])
    return p


def _read_ini(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    values, errors = {}, []
    for section in cp.sections():
        if section not in _KEYS:
            errors.append(f"unknown section [{section}]")
            continue
        for key, val in cp.items(section):
            if key not in _KEYS[section]:
                errors.append(f"unknown key '{key}' in [{section}]")
            else:
                values[key] = val
    if errors:
        raise ConfigError("; ".join(errors))
    return values


def parse_config(argv=None) -> RunConfig:
    """Parse flags (and an optional config file) into a validated RunConfig."""
    args = build_parser().parse_args(argv)
    raw = _read_ini(args.config) if args.config else {}
    flags = {
        "kind": args.domain, "dim": args.dim, "radius": args.radius, "a": args.a, "b": args.b,
        "length": args.length, "resolution": args.resolution, "lambda": args.lam,
        "lambda_max": args.lambda_max, "out": args.out, "format": args.format,
        "newton_tol": args.newton_tol, "steady_tol": args.steady_tol, "conv_tol": args.conv_tol,
        "barrier_tol": args.barrier_tol, "dt": args.dt, "max_steps": args.max_steps,
    }
    raw.update({k: v for k, v in flags.items() if v is not None})
    errors = []

    def num(key, conv=float, default=None):
        if key not in raw:
            return default
        try:
            return conv(raw[key])
        except (TypeError, ValueError):
            errors.append(f"{key}: cannot parse {raw[key]!r}")
            return default

    kind = str(raw.get("kind", "interval"))
    spec = None
    try:
        k = DomainKind(kind)
        if k is DomainKind.INTERVAL:
            spec = DomainSpec.interval(num("length", default=1.0))
        elif k is DomainKind.BALL:
            spec = DomainSpec.ball(num("dim", int, 2), num("radius", default=1.0))
        else:
            spec = DomainSpec.ellipse(num("a", default=1.0), num("b", default=1.0))
    except ValueError as exc:
        errors.append(str(exc))
    line = spec is None or spec.kind is not DomainKind.ELLIPSE
    res = num("resolution", int, 801 if line else 64)
    lo, hi = (RADIAL_MIN_RES, RADIAL_MAX_RES) if line else (PLANAR_MIN_RES, PLANAR_MAX_RES)
    if res is not None and not lo <= res <= hi:
        errors.append(f"resolution must be in [{lo}, {hi}]")
    lambdas = ()
    if "lambda" in raw:
        try:
            lambdas = tuple(float(s) for s in str(raw["lambda"]).split(",") if s.strip())
        except ValueError:
            errors.append(f"lambda: cannot parse {raw['lambda']!r}")
        if any(l < 0 for l in lambdas):
            errors.append("lambda must be ≥ 0")
    lam_max = num("lambda_max", default=math.inf)
    if lam_max is not None and not lam_max > 0:
        errors.append("lambda_max must be > 0")
    formats = frozenset(s.strip() for s in str(raw.get("format", "csv,json")).split(",") if s.strip())
    if not formats or not formats <= {"csv", "json"}:
        errors.append("format must be a subset of {csv, json}")
    tols = {}
    for key in ("newton_tol", "steady_tol", "conv_tol", "barrier_tol", "dt"):
        v = num(key)
        if v is not None and not v > 0:
            errors.append(f"{key} must be > 0")
        tols[key] = v
    max_steps = num("max_steps", int, 200_000)
    if max_steps is not None and max_steps < 1:
        errors.append("max_steps must be ≥ 1")
    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(
        mode=args.mode, spec=spec, resolution=res, lambdas=lambdas, lambda_max=lam_max,
        out=Path(raw.get("out", "gelfand-out")), formats=formats,
        newton_tol=tols["newton_tol"], steady_tol=tols["steady_tol"] or 1e-9,
        conv_tol=tols["conv_tol"], barrier_tol=tols["barrier_tol"], dt=tols["dt"],
        max_steps=max_steps)


# -- orchestration ---------------------------------------------------------

@dataclass
class _Run:
    config: RunConfig
    grid: object
    branch: object = None
    claims: list = field(default_factory=list)

    def claim(self, name, ok):
        self.claims.append({"name": name, "ok": bool(ok)})
        return ok

    def json(self, name, payload):
        if "json" in self.config.formats:
            io.write_json(self.config.out / name, payload)

    def csv_field(self, name, fld):
        if "csv" in self.config.formats:
            io.write_field_csv(self.config.out / name, fld)

    def csv_rows(self, name, cols, rows):
        if "csv" in self.config.formats:
            io.write_rows_csv(self.config.out / name, cols, rows)

    def get_branch(self):
        if self.branch is None:
            self.branch = continue_branch(self.grid, self.config.lambda_max)
        return self.branch

    def lambdas(self):
        if self.config.lambdas:
            return self.config.lambdas
        return (0.5 * self.lambda_star(),)

    def lambda_star(self):
        spec = self.grid.spec
        br = self.get_branch()
        if spec.kind is DomainKind.BALL and spec.dim >= 10 and not br.fold_detected:
            return 2.0 * (spec.dim - 2) / spec.radius**2
        return br.lambda_star_estimate

    def lambda_bar(self):
        spec = self.grid.spec
        if spec.kind is DomainKind.ELLIPSE:
            return lambda_bar_general(self.grid, self.get_branch()).value
        if spec.dim == 1:
            # no tangential directions: G = ½u_ν² + λ is positive below λ*
            return self.lambda_star()
        return lambda_bar(spec.dim, spec.radius, self.get_branch()).value

    def solve(self, lam):
        br = self.get_branch() if self.branch is not None else None
        if br is not None:
            return br.solve_at(lam, self.config.newton_tol)
        try:
            return newton_solve(self.grid, lam, newton_tol=self.config.newton_tol)
        except NewtonDivergence:
            return self.get_branch().solve_at(lam, self.config.newton_tol)


def _do_sweep(run: _Run):
    br = run.get_branch()
    rows = [(k, p.lam, p.max_phi, p.mu1, p.residual_norm, p.newton_iterations)
            for k, p in enumerate(br.points)]
    run.csv_rows("branch.csv", BRANCH_COLUMNS, rows)
    minimal = br.minimal_points
    run.claim("lambda_star_bounds_branch", all(p.lam <= br.lambda_star_estimate + 1e-12 for p in minimal))
    run.json("branch.json", {**br.summary(), "grid": run.grid.metadata()})


def _do_solve(run: _Run):
    out = []
    for k, lam in enumerate(run.lambdas()):
        sol = run.solve(lam)
        tol = run.config.newton_tol or default_newton_tol(lam)
        run.claim(f"solve[{k}].positive", np.all(sol.phi.values >= 0))
        out.append({**sol.summary(), "newton_tol": tol})
        run.csv_field(f"solution_{k}.csv", sol.phi)
    run.json("solve.json", {"solutions": out, "grid": run.grid.metadata()})


def _do_flow(run: _Run):
    cfg = run.config
    reports = []
    for k, lam in enumerate(run.lambdas()):
        try:
            ref = newton_solve(run.grid, lam, newton_tol=cfg.newton_tol, compute_mu1=False).phi
        except NewtonDivergence:
            ref = None
        ctl = FlowControls(dt=cfg.dt, steady_tol=cfg.steady_tol, max_steps=cfg.max_steps,
                           reference=ref, record_stride=10)
        try:
            rep = run_to_steady(run.grid.zeros(), lam, ctl)
        except BlowUpSuspected as exc:
            rep = exc.report
        F = [f for _, f in rep.state.lyapunov_history]
        scale = 1e-8 * (1 + max(abs(f) for f in F))
        run.claim(f"flow[{k}].lyapunov_nonincreasing", rep.max_lyapunov_increase <= scale)
        if ref is not None:
            run.claim(f"flow[{k}].comparison", rep.max_comparison_violation <= 1e-8)
        summary = rep.summary()
        summary["reference_available"] = ref is not None
        if ref is not None and rep.converged:
            diff = float(np.abs(rep.state.u.values - ref.values).max())
            summary["max_diff_to_newton"] = diff
            run.claim(f"flow[{k}].limit_is_steady_solution", diff <= 1e-6)
        reports.append(summary)
        run.csv_rows(f"flow_timeseries_{k}.csv", TIME_SERIES_COLUMNS, rep.rows)
        run.csv_field(f"flow_field_{k}.csv", rep.state.u)
    run.json("flow.json", {"runs": reports, "grid": run.grid.metadata()})


def _do_convexity(run: _Run):
    lbar = run.lambda_bar()
    reports = []
    for k, lam in enumerate(run.lambdas()):
        sol = run.solve(lam)
        rep = convexity_report(sol.phi, lam)
        if run.config.conv_tol is not None:
            rep.conv_tol = run.config.conv_tol
        if lam < lbar:
            run.claim(f"convexity[{k}].psd", rep.psd)
            run.claim(f"convexity[{k}].G_positive", rep.boundary_min_G > 0)
        reports.append(rep.to_dict())
        run.csv_field(f"hessian_eig_{k}.csv", hessian_min_eig_field(to_w(sol.phi)).eig)
    run.json("convexity.json", {"lambda_bar": lbar, "reports": reports})


def _do_barriers(run: _Run):
    spec = run.grid.spec
    if spec.kind is not DomainKind.BALL:
        raise ValueError("barriers: requires a ball domain")
    br = run.get_branch()
    lstar = run.lambda_star()
    lbar = lambda_bar(spec.dim, spec.radius, br) if spec.dim >= 2 else None
    if lbar is not None:
        run.claim("lambda_bar_in_range", 0 < lbar.value <= lstar)
    reports = []
    for k, lam in enumerate(run.lambdas()):
        sol = run.solve(lam)
        rep = check_barriers(sol, br if spec.dim >= 2 else None, run.config.barrier_tol)
        run.claim(f"barriers[{k}].sandwich", rep.sandwich_ok)
        run.claim(f"barriers[{k}].normal_derivative", rep.phi_nu_bounds_ok)
        if lbar is not None and lam < lbar.value:
            run.claim(f"barriers[{k}].G_positive", rep.G_min > 0)
        reports.append(rep.to_dict())
        if lam > 0:
            run.csv_field(f"barrier_gap_{k}.csv", sol.phi.copy_with(
                sol.phi.values - (rep.lam / (2 * spec.dim)) * (spec.radius**2 - run.grid.coords[:, 0] ** 2)))
    run.json("barriers.json", {"lambda_star_estimate": lstar,
                               "lambda_bar": lbar.to_dict() if lbar else None,
                               "reports": reports})


_ACTIONS = {"sweep": _do_sweep, "solve": _do_solve, "flow": _do_flow,
            "convexity": _do_convexity, "barriers": _do_barriers}


def run(config: RunConfig) -> int:
    """Execute ``config``; returns the exit code."""
    config.out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    grid = build_grid(config.spec, config.resolution)
    r = _Run(config, grid)
    modes = ["sweep", "solve", "flow", "convexity"] if config.mode == "all" else [config.mode]
    if config.mode == "all" and config.spec.kind is DomainKind.BALL:
        modes.append("barriers")
    for mode in modes:
        try:
            _ACTIONS[mode](r)
        except (ValueError, RuntimeError) as exc:
            raise RuntimeError(f"{mode}: {exc}") from exc
    failed = [c["name"] for c in r.claims if not c["ok"]]
    r.json("claims.json", {"claims": r.claims, "violated": failed})
    io.write_json(config.out / "meta.json", {
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "argv": sys.argv, "mode": config.mode})
    return 2 if failed else 0


def main(argv=None) -> int:
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        print(f"gelfand: config error: {exc}", file=sys.stderr)
        return 1
    try:
        code = run(config)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"gelfand: {exc}", file=sys.stderr)
        return 1
    if code == 2:
        print("gelfand: claims violated (see claims.json)", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
