"""Command-line interface: simulate, steady, props, validate.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import config as cfg
from .chemistry import reaction_rate, KineticParams
from .model import InfeasibleStateError, ModelEvaluationError
from .solver import SolverError, integrate, steady_state
from .thermo import PropertyRangeWarning, heat_capacity, in_range, load_species, molar_enthalpy, molar_volume
from .transport import mach_number

log = logging.getLogger("calciner")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SPECIES_COLUMNS = ["c_AB2", "c_A", "c_B", "c_air", "c_Q"]
TIMESERIES_COLUMNS = ["time_s", "cell", "z_m", *SPECIES_COLUMNS, "T_s", "T_g", "P"]
STEADY_COLUMNS = ["cell", "z_m", *SPECIES_COLUMNS, "T_s", "T_g", "P", "r"]
# units of every output column
UNITS = {
    "time_s": "s", "cell": "-", "z_m": "m",
    **{c: "mol/m3" for c in SPECIES_COLUMNS},
    "T_s": "K", "T_g": "K", "P": "Pa", "r": "mol/(m3 s)",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- output --------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv_atomic(path: Path, header, rows):
    """Write rows to path via a temporary file and rename (LF, UTF-8)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: Path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(data, fh, indent=2, default=_json_default)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _jsonable(value):
    # JSON has no infinity; the report keeps it as a string
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


def config_from_echo(echo: dict) -> cfg.Scenario:
    """Rebuild the scenario from the ``config`` block of a run report."""
    def restore(v):
        if isinstance(v, str) and v in ("inf", "-inf", "nan"):
            return float(v)
        if isinstance(v, dict):
            return {k: restore(x) for k, x in v.items()}
        if isinstance(v, list):
            return [restore(x) for x in v]
        return v
    return cfg.scenario_from_dict(restore(echo))


def profile_rows(model, z, t=None, rate=None):
    s = model.layout.unpack(z)
    zc = model.grid.z_centers
    for i in range(model.grid.n_cells):
        row = [] if t is None else [t]
        row += [i, zc[i], *s.c[i], s.T_s[i], s.T_g[i], s.P[i]]
        if rate is not None:
            row.append(rate[i])
        yield row


# -- diagnostics -----------------------------------------------------------


class Diagnostics:
    """Warning counters; each logged warning increments exactly one counter."""

    KINDS = ("mach", "cp_range", "negative_velocity", "steady_fallback")

    def __init__(self, model):
        self.model = model
        self.counts = {k: 0 for k in self.KINDS}
        self.first = {}
        self.max_mach = 0.0

    def warn(self, kind, message):
        self.counts[kind] += 1
        if kind not in self.first:
            self.first[kind] = message
            log.warning(message)

    def check(self, t, z):
        model = self.model
        ev = model.evaluate(t, z)
        mach = float(np.max(mach_number(ev.velocity, np.concatenate([[model.bc.T_g_in], ev.state.T_g]))))
        self.max_mach = max(self.max_mach, mach)
        if mach >= model.transport.mach_limit:
            self.warn("mach", f"t={t:.6g}: Mach {mach:.3f} above {model.transport.mach_limit}")
        if np.any(ev.velocity < 0):
            self.warn("negative_velocity", f"t={t:.6g}: reverse flow at an interface")
        n_out = model.cp_out_of_range(z)
        if n_out:
            self.warn("cp_range", f"t={t:.6g}: {n_out} cell temperatures outside c_p validity range")
        return ev

    def summary(self):
        return {"counts": dict(self.counts), "first": dict(self.first), "max_mach": self.max_mach}


def _report(sc, command, wall, diag, extra):
    echo = _jsonable(sc.to_dict())
    return {
        "command": command,
        "wall_time_s": wall,
        "warnings": diag.summary(),
        **extra,
        "config": echo,
        "provenance": cfg.provenance(sc),
    }


# -- subcommands -------------------------------------------------------------


def _scenario(args):
    overrides = list(args.override or [])
    if getattr(args, "horizon", None) is not None:
        overrides.append(f"solver.horizon={args.horizon!r}")
    if getattr(args, "samples", None) is not None:
        overrides.append(f"solver.samples={args.samples}")
    return cfg.load_scenario(args.config, overrides)


def cmd_simulate(args):
    sc = _scenario(args)
    model = cfg.build_model(sc)
    z0 = cfg.initial_state(model, sc)
    out = Path(args.out)
    start = time.perf_counter()
    diag = Diagnostics(model)
    solver_cfg = sc.solver_config()
    path = out / "timeseries.csv"
    if sc.solver.horizon == 0:
        write_csv_atomic(path, TIMESERIES_COLUMNS, [])
        traj = None
    else:
        diag.check(0.0, z0)
        traj = integrate(model, z0, solver_cfg, on_step=lambda t, z, info: diag.check(t, z))
        rows = (row for t, z in zip(traj.t, traj.z) for row in profile_rows(model, z, t))
        write_csv_atomic(path, TIMESERIES_COLUMNS, rows)
    wall = time.perf_counter() - start
    extra = {"outputs": {"timeseries": path.name}, "units": UNITS}
    if traj is not None:
        F0 = np.linalg.norm(model.evaluate(0.0, z0).dxdt)
        extra["transient"] = {
            "samples": int(len(traj.t)),
            "steps": len(traj.steps),
            "rejected_steps": traj.n_rejected,
            "function_evaluations": traj.n_fun,
            "jacobians": traj.n_jac,
            "max_algebraic_residual": traj.max_algebraic_residual,
            "derivative_norm_initial": F0,
            "derivative_norm_final": float(np.linalg.norm(model.evaluate(traj.t[-1], traj.z[-1]).dxdt)),
        }
    write_json_atomic(out / "report.json", _report(sc, "simulate", wall, diag, extra))
    print(f"wrote {path} ({wall:.2f} s)")
    return EXIT_OK


def cmd_steady(args):
    sc = _scenario(args)
    model = cfg.build_model(sc)
    z0 = cfg.initial_state(model, sc)
    out = Path(args.out)
    start = time.perf_counter()
    diag = Diagnostics(model)
    solver_cfg = sc.solver_config()
    guess_time = min(sc.output.steady_guess_time, sc.solver.horizon) if sc.solver.horizon > 0 else 0.0
    guess = z0
    if guess_time > 0:
        pre = cfg.dataclasses.replace(solver_cfg, horizon=guess_time, samples=2)
        guess = integrate(model, z0, pre, on_step=lambda t, z, info: diag.check(t, z)).z[-1]
    z, fallback = steady_state(model, guess, solver_cfg)
    if fallback:
        diag.warn("steady_fallback", "steady-state Newton failed; used long-horizon integration")
    ev = diag.check(math.inf, z)
    path = out / "steady.csv"
    write_csv_atomic(path, STEADY_COLUMNS, profile_rows(model, z, rate=ev.rate))
    wall = time.perf_counter() - start
    s = ev.state
    extra = {
        "outputs": {"steady": path.name},
        "units": UNITS,
        "steady": {
            "fallback": fallback,
            "residual_norm": float(np.linalg.norm(ev.dxdt)),
            "max_algebraic_residual": float(np.max(np.abs(ev.g))),
            "outlet_conversion": 1.0 - float(s.c[-1, 0] / sc.boundary.c_in[0]) if sc.boundary.c_in[0] > 0 else None,
            "outlet_T_s": float(s.T_s[-1]),
            "outlet_T_g": float(s.T_g[-1]),
            "peak_rate_cell": int(np.argmax(ev.rate)),
        },
    }
    write_json_atomic(out / "report.json", _report(sc, "steady", wall, diag, extra))
    print(f"wrote {path} ({wall:.2f} s)")
    return EXIT_OK


def cmd_props(args):
    table = load_species()
    if args.species not in table.names:
        raise cfg.ConfigError(f"unknown species {args.species!r}; choose from {', '.join(table.names)}",
                              "species")
    sp = table[args.species]
    if args.points < 1:
        raise cfg.ConfigError("points must be at least 1", "points")
    t_max = args.T if args.T_max is None else args.T_max
    if args.T <= 0 or t_max <= 0 or args.P <= 0:
        raise cfg.ConfigError("temperature and pressure must be positive")
    temps = np.linspace(args.T, t_max, args.points) if args.points > 1 else np.array([args.T])
    print("T_K,cp_J_per_mol_K,h_J_per_mol,v_m3_per_mol,in_range")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PropertyRangeWarning)
        for T in temps:
            ok = bool(in_range(sp.cp, T))
            print(",".join([_fmt(T), _fmt(heat_capacity(sp.cp, T)), _fmt(molar_enthalpy(sp, T, args.P)),
                            _fmt(molar_volume(sp, T, args.P)), "yes" if ok else "no"]))
    return EXIT_OK


def cmd_validate(args):
    sc = _scenario(args)
    model = cfg.build_model(sc)
    z0 = cfg.initial_state(model, sc)
    ev = model.evaluate(0.0, z0)
    s = ev.state
    mach = float(np.max(mach_number(ev.velocity, np.concatenate([[sc.boundary.T_g_in], s.T_g]))))
    print("scenario is feasible")
    print(f"cells: {model.grid.n_cells}, dz = {model.grid.dz!r} m")
    print(f"initial P per cell [Pa]: {', '.join(_fmt(p) for p in s.P)}")
    print(f"initial solid volume fraction: {_fmt(float(np.max(ev.v_hat_s)))}")
    print(f"max algebraic residual: {_fmt(float(np.max(np.abs(ev.g))))}")
    print(f"inlet velocity [m/s]: {_fmt(float(ev.velocity[0]))}, Mach estimate: {_fmt(mach)}")
    for key, src in cfg.provenance(sc).items():
        if src == "assumed":
            print(f"assumed default (not a published value): {key}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="calciner", description="Flash clay calciner plug-flow simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, run=True):
        p.add_argument("--config", help="scenario TOML (default: bundled reference scenario)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted-path override, e.g. geometry.n_cells=40 (repeatable)")
        if run:
            p.add_argument("--out", default="out", help="output directory (default: out)")
            p.add_argument("--horizon", type=float, help="integration horizon in s")
            p.add_argument("--samples", type=int, help="number of output times")

    common(sub.add_parser("simulate", help="transient run, per-cell time series"))
    common(sub.add_parser("steady", help="steady-state profile"))
    common(sub.add_parser("validate", help="check a scenario and its initial state"), run=False)
    p = sub.add_parser("props", help="print species properties")
    p.add_argument("species")
    p.add_argument("--T", type=float, default=298.15, help="temperature, or range start, in K")
    p.add_argument("--T-max", dest="T_max", type=float, help="range end in K")
    p.add_argument("--points", type=int, default=1)
    p.add_argument("--P", type=float, default=1e5, help="pressure in Pa")
    return parser


COMMANDS = {"simulate": cmd_simulate, "steady": cmd_steady, "props": cmd_props, "validate": cmd_validate}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PropertyRangeWarning)
            return COMMANDS[args.command](args)
    except cfg.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleStateError as exc:
        print(f"infeasible initial state: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ModelEvaluationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"solver diagnostics: {diag}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # parameter validation inside the model constructors
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
