"""Batch command-line interface.

``massopt run <config>`` drives the full pipeline (validate -> solve ->
recover -> verify) from a flat key=value configuration file and writes the
solution field, the recovered measure, the optimality report and the
iteration log to the output directory.  ``massopt conjugate`` tabulates a
cost's conjugate and subdifferential.  ``massopt fixtures`` runs the
closed-form comparison for one catalog fixture.

Exit codes: 0 all verification thresholds met; 1 thresholds failed;
2 configuration error; 3 solver did not converge.
"""

import argparse
import configparser
import json
import math
import os
import sys

import numpy as np

from . import costs as costs_mod
from .errors import ConfigError, MassOptError
from .exprlang import Expression
from .grids import (SourceTerm, interval_grid, radial_grid, rectangle_grid,
                    write_field_csv, write_measure)
from .oracle import fixture, fixture_errors, fixture_names
from .recovery import (recover_density_sl, recover_measure_l_1d,
                       recover_via_regularization, verify_conditions)
from .solver import SolverParams, build_problem, solve_auxiliary, write_iteration_log

_FMT = "%.17g"

DEFAULT_THRESHOLDS = {
    "pde_residual": 1e-3,
    "inclusion_violation": 1e-3,
    "singular_saturation_error": 1e-3,
    "boundary_mass": 1e-9,
    "duality_identity_error": 1e-3,
}


class RunConfig:
    def __init__(self, grid, cost, source, cell_weights, solver_params,
                 thresholds, output_dir):
        self.grid = grid
        self.cost = cost
        self.source = source
        self.cell_weights = cell_weights
        self.solver_params = solver_params
        self.thresholds = thresholds
        self.output_dir = output_dir


def _get(section, key, conv, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError("missing key %r in section [%s]" % (key, section.name))
        return default
    raw = section[key]
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise ConfigError("bad value %r for key %r in section [%s]"
                          % (raw, key, section.name)) from None


def _parse_domain(cfg):
    if "domain" not in cfg:
        raise ConfigError("missing section [domain]")
    sec = cfg["domain"]
    kind = _get(sec, "kind", str, required=True)
    if kind == "interval":
        n = _get(sec, "n", int, required=True)
        if n < 8:
            raise ConfigError("domain.n must be >= 8")
        return interval_grid(_get(sec, "a", float, required=True),
                             _get(sec, "b", float, required=True), n)
    if kind == "radial":
        n = _get(sec, "n", int, required=True)
        if n < 8:
            raise ConfigError("domain.n must be >= 8")
        return radial_grid(_get(sec, "radius", float, required=True), n,
                           _get(sec, "dimension", int, required=True))
    if kind == "rectangle":
        nx = _get(sec, "nx", int, required=True)
        ny = _get(sec, "ny", int, required=True)
        if nx < 8 or ny < 8:
            raise ConfigError("domain.nx/ny must be >= 8")
        return rectangle_grid(_get(sec, "ax", float, required=True),
                              _get(sec, "bx", float, required=True),
                              _get(sec, "ay", float, required=True),
                              _get(sec, "by", float, required=True), nx, ny)
    raise ConfigError("domain.kind must be interval|radial|rectangle, got %r" % kind)


def _parse_cost(cfg, grid):
    if "cost" not in cfg:
        raise ConfigError("missing section [cost]")
    sec = cfg["cost"]
    forms = [k for k in ("builtin", "expression", "table") if k in sec]
    if len(forms) != 1:
        raise ConfigError("section [cost] needs exactly one of builtin|expression|table")
    form = forms[0]
    if form == "builtin":
        name = sec["builtin"].strip()
        params = {}
        for key in ("slope", "p", "a", "b"):
            if key in sec:
                params[key] = _get(sec, key, float)
        try:
            cost = costs_mod.builtin_cost(name, **params)
        except (MassOptError, TypeError) as exc:
            raise ConfigError("cost.builtin: %s" % exc) from None
    elif form == "expression":
        try:
            cost = costs_mod.expression_cost(sec["expression"],
                                             t0=_get(sec, "t0", float, 1.0))
        except MassOptError as exc:
            raise ConfigError("cost.expression: %s" % exc) from None
    else:
        path = sec["table"]
        try:
            data = np.loadtxt(path, delimiter=",", comments="#")
            cost = costs_mod.tabulated_cost(data[:, 0], data[:, 1])
        except (OSError, MassOptError, IndexError, ValueError) as exc:
            raise ConfigError("cost.table: %s" % exc) from None

    cell_weights = None
    if "weight_table" in sec:
        try:
            cell_weights = np.loadtxt(sec["weight_table"], delimiter=",", comments="#")
        except (OSError, ValueError) as exc:
            raise ConfigError("cost.weight_table: %s" % exc) from None
        if cell_weights.ndim != 1 or cell_weights.size != grid.n_cells:
            raise ConfigError("cost.weight_table needs %d per-cell values" % grid.n_cells)
    return cost, cell_weights


def _source_variables(grid):
    if grid.kind == "radial":
        return ("r",)
    if grid.kind == "interval":
        return ("x",)
    return ("x", "y")


def _parse_atoms(raw, grid):
    atoms = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            loc_txt, mass_txt = item.rsplit(":", 1)
            loc = np.asarray([float(tok) for tok in loc_txt.split()], dtype=float)
            atoms.append((loc, float(mass_txt)))
        except ValueError:
            raise ConfigError("source.atoms entry %r is not 'loc[:space loc]:mass'"
                              % item) from None
    return atoms


def _parse_source(cfg, grid):
    if "source" not in cfg:
        raise ConfigError("missing section [source]")
    sec = cfg["source"]
    density = None
    if "value" in sec:
        density = np.full(grid.n_nodes, _get(sec, "value", float))
    if "expression" in sec:
        if density is not None:
            raise ConfigError("section [source] takes value or expression, not both")
        variables = _source_variables(grid)
        try:
            expr = Expression(sec["expression"], variables=variables)
            kw = {v: grid.node_coords[:, i] for i, v in enumerate(variables)}
            density = np.asarray(expr(**kw), dtype=float)
        except MassOptError as exc:
            raise ConfigError("source.expression: %s" % exc) from None
    atoms = _parse_atoms(sec["atoms"], grid) if "atoms" in sec else []
    if density is None and not atoms:
        raise ConfigError("section [source] needs value, expression or atoms")
    try:
        return SourceTerm(grid, density=density, atoms=atoms)
    except MassOptError as exc:
        raise ConfigError("source.atoms: %s" % exc) from None


def _parse_solver(cfg):
    sec = cfg["solver"] if "solver" in cfg else {}
    try:
        return SolverParams(
            max_iterations=int(sec.get("max_iterations", 20000)),
            gap_tolerance=float(sec.get("gap_tolerance", 1e-8)),
            check_every=int(sec.get("check_every", 25)))
    except ValueError as exc:
        raise ConfigError("section [solver]: %s" % exc) from None


def _parse_thresholds(cfg):
    out = dict(DEFAULT_THRESHOLDS)
    if "verify" in cfg:
        for key in cfg["verify"]:
            if key not in out:
                raise ConfigError("unknown verify threshold %r" % key)
            out[key] = _get(cfg["verify"], key, float)
    for key, val in out.items():
        if not val > 0.0:
            raise ConfigError("verify.%s must be positive" % key)
    return out


def parse_config(path):
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cfg.read(path)
    if not read:
        raise ConfigError("cannot read config file %r" % path)
    grid = _parse_domain(cfg)
    cost, cell_weights = _parse_cost(cfg, grid)
    source = _parse_source(cfg, grid)
    params = _parse_solver(cfg)
    thresholds = _parse_thresholds(cfg)
    out_dir = cfg["output"]["dir"] if "output" in cfg and "dir" in cfg["output"] else "."
    return RunConfig(grid, cost, source, cell_weights, params, thresholds, out_dir)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def run(config_path, log_path=None, json_report_path=None):
    """Execute a configured pipeline; returns the process exit code."""
    try:
        config = parse_config(config_path)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2

    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    params = config.solver_params
    params.log_path = log_path or os.path.join(out, "iterations.csv")

    try:
        problem = build_problem(config.grid, config.cost, config.source,
                                cell_weights=config.cell_weights)
    except MassOptError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2

    solution = solve_auxiliary(problem, params)

    if problem.regime == "SL":
        measure = recover_density_sl(solution, problem)
    elif problem.grid.dim == 1:
        measure = recover_measure_l_1d(solution, problem)
    else:
        measure, _diag = recover_via_regularization(problem, solver_params=params)

    report = verify_conditions(measure, solution, problem)

    write_field_csv(os.path.join(out, "u.csv"), solution.u)
    write_measure(os.path.join(out, "measure.csv"), os.path.join(out, "measure.json"),
                  measure)
    payload = report.to_dict()
    payload.update({
        "converged": solution.converged,
        "relative_gap": solution.rel_gap,
        "iterations": solution.iterations,
        "regime": solution.regime,
        "thresholds": config.thresholds,
        "passed": report.passes(config.thresholds),
    })
    report_path = json_report_path or os.path.join(out, "report.json")
    with open(report_path, "w") as fh:
        json.dump(_sanitize(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")

    for name, value in sorted(report.residuals().items()):
        ok = value <= config.thresholds[name]
        print("%-28s %12.5g  [%s]" % (name, value, "ok" if ok else "FAIL"))
    if not solution.converged:
        print("solver did not converge: relative gap %.3g" % solution.rel_gap,
              file=sys.stderr)
        return 3
    return 0 if payload["passed"] else 1


def cmd_conjugate_table(cost, s_lo, s_hi, count, stream):
    """Deterministic (s, c*(s), subdiff lo, hi) table for plotting."""
    conj = cost.conjugate()
    thr = conj.finiteness_threshold()
    stream.write("s,value,subdiff_lo,subdiff_hi\n")
    for s in np.linspace(s_lo, s_hi, count):
        s = float(s)
        value = float(np.asarray(conj.value(s)))
        if s > thr * (1.0 + 1e-12) + 1e-300:
            lo = hi = math.nan
        else:
            from .costs import subdiff_interval
            lo, hi = subdiff_interval(conj, None, s)
        stream.write(",".join(_FMT % v for v in (s, value, lo, hi)) + "\n")


def cmd_fixtures(name, dimension, resolution, stream=None):
    stream = stream if stream is not None else sys.stdout
    fix = fixture(name, dimension)
    problem = fix.build(resolution)
    solution = solve_auxiliary(problem, SolverParams())
    if problem.regime == "SL":
        measure = recover_density_sl(solution, problem)
    else:
        measure = recover_measure_l_1d(solution, problem)
    cell_mask, node_mask = fix.masks(problem.grid)
    report = verify_conditions(measure, solution, problem,
                               cell_mask=cell_mask, node_mask=node_mask)
    u_err, a_err = fixture_errors(fix, problem.grid, solution.u.values, measure)
    stream.write("fixture %s (n=%d, resolution=%d)\n" % (fix.name, fix.ball_dim, resolution))
    stream.write("u_rel_sup_error,%s\n" % (_FMT % u_err))
    stream.write("a_rel_l1_error,%s\n" % (_FMT % a_err))
    for key, value in sorted(report.residuals().items()):
        stream.write("%s,%s\n" % (key, _FMT % value))
    ok = (u_err <= 0.05 and a_err <= 0.05
          and report.passes(DEFAULT_THRESHOLDS) and solution.converged)
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="massopt",
                                     description="mass optimization with convex costs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured pipeline")
    p_run.add_argument("config")
    p_run.add_argument("--log", default=None, help="iteration log path")
    p_run.add_argument("--json-report", default=None, help="report path")

    p_conj = sub.add_parser("conjugate", help="tabulate a cost conjugate")
    p_conj.add_argument("config")
    p_conj.add_argument("--range", nargs=2, type=float, required=True,
                        metavar=("A", "B"))
    p_conj.add_argument("--count", type=int, default=21)
    p_conj.add_argument("--output", default=None)

    p_fix = sub.add_parser("fixtures", help="run a closed-form comparison")
    p_fix.add_argument("--name", required=True, choices=fixture_names())
    p_fix.add_argument("--dimension", type=int, default=None)
    p_fix.add_argument("--resolution", type=int, default=2048)

    args = parser.parse_args(argv)

    if args.command == "run":
        return run(args.config, log_path=args.log, json_report_path=args.json_report)

    if args.command == "conjugate":
        try:
            cfg = configparser.ConfigParser(inline_comment_prefixes=("#",))
            if not cfg.read(args.config):
                raise ConfigError("cannot read config file %r" % args.config)
            if "cost" not in cfg:
                raise ConfigError("missing section [cost]")
            grid = None
            if "domain" in cfg:
                grid = _parse_domain(cfg)
            cost, _w = _parse_cost(cfg, grid) if grid is not None else \
                _parse_cost_gridless(cfg)
            if args.count < 2:
                raise ConfigError("--count must be >= 2")
        except ConfigError as exc:
            print("config error: %s" % exc, file=sys.stderr)
            return 2
        if args.output:
            with open(args.output, "w") as fh:
                cmd_conjugate_table(cost, args.range[0], args.range[1], args.count, fh)
        else:
            cmd_conjugate_table(cost, args.range[0], args.range[1], args.count,
                                sys.stdout)
        return 0

    try:
        return cmd_fixtures(args.name, args.dimension, args.resolution)
    except MassOptError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2


def _parse_cost_gridless(cfg):
    class _Dummy:
        n_cells = -1
    sec = cfg["cost"]
    if "weight_table" in sec:
        raise ConfigError("cost.weight_table needs a [domain] section")
    return _parse_cost(cfg, _Dummy())


if __name__ == "__main__":
    sys.exit(main())
