"""Scenario configuration: TOML file <-> nested dataclasses.

Every section and key is checked; unknown keys and invalid values raise
:class:`ConfigError` naming the dotted field path.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import tomli

from .chemistry import KineticParams
from .model import BoundaryConditions, CalcinerModel, Grid, HeatTransferParams, GasViscosity
from .solver import SolverConfig
from .thermo import load_species
from .transport import TransportParams

PAPER_SCENARIO = "paper_scenario.toml"


class ConfigError(ValueError):
    def __init__(self, message, field=None, line=None):
        where = ""
        if field:
            where = f"{field}: "
        if line is not None:
            where = f"line {line}: " + where
        super().__init__(where + message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class Geometry:
    n_cells: int
    length: float = 30.0
    diameter: float = 0.2


@dataclass(frozen=True)
class Boundary:
    c_in: tuple[float, ...]
    T_s_in: float
    T_g_in: float
    P_out: float = 101325.0
    P_in: float = 101925.0
    Q_amb_s: float = 0.0
    Q_amb_g: float = 0.0


@dataclass(frozen=True)
class Initial:
    c: tuple[float, ...]
    T_s: float
    T_g: float


@dataclass(frozen=True)
class Kinetics:
    k0: float = 2.9e15
    activation_energy: float = 2.02e5


@dataclass(frozen=True)
class Transport:
    diffusion: tuple[float, ...] = (0.1, 0.1, 0.1, 0.1, 0.1)
    # {gas: {"mu0": .., "T0": .., "S": ..}} overriding the bundled constants
    sutherland: dict = field(default_factory=dict)

    def __hash__(self):
        return hash((self.diffusion, repr(sorted(self.sutherland.items()))))


@dataclass(frozen=True)
class HeatTransfer:
    k_sg: float = 180.0
    r_b: float = 1.0e-5


@dataclass(frozen=True)
class Solver:
    rtol: float = 1e-6
    atol: float = 1e-8
    first_step: float = 1e-6
    min_step: float = 1e-14
    max_step: float = math.inf
    max_newton: int = 4
    jacobian_refresh: str = "lazy"
    horizon: float = 60.0
    samples: int = 200


@dataclass(frozen=True)
class Output:
    steady_check_time: float = 10.0
    steady_guess_time: float = 5.0


@dataclass(frozen=True)
class Scenario:
    geometry: Geometry
    boundary: Boundary
    initial: Initial
    kinetics: Kinetics = Kinetics()
    transport: Transport = Transport()
    heat_transfer: HeatTransfer = HeatTransfer()
    solver: Solver = Solver()
    output: Output = Output()
    # {species name: {"molar_mass": .., "formation_enthalpy": ..}}
    species: dict = field(default_factory=dict)

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                value = {k: _plain(v) for k, v in dataclasses.asdict(value).items()}
            else:
                value = _plain(value)
            out[f.name] = value
        return out

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**dataclasses.asdict(self.solver))


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


SECTIONS = {
    "geometry": Geometry,
    "boundary": Boundary,
    "initial": Initial,
    "kinetics": Kinetics,
    "transport": Transport,
    "heat_transfer": HeatTransfer,
    "solver": Solver,
    "output": Output,
}

# published values of the reference simulation
PAPER_VALUES = {
    "geometry.n_cells": 20,
    "boundary.c_in": [0.15, 0.31, 3.74, 5.81, 0.79],
    "boundary.T_s_in": 657.15,
    "boundary.T_g_in": 1261.15,
    "boundary.Q_amb_s": 0.0,
    "boundary.Q_amb_g": 0.0,
    "initial.c": [0.1, 0.1, 0.1, 19.65, 0.1],
    "initial.T_s": 600.0,
    "initial.T_g": 600.0,
    "kinetics.k0": 2.9e15,
    "kinetics.activation_energy": 2.02e5,
    "transport.diffusion": [0.1] * 5,
}
PAPER_PRESSURE_DROP = 600.0

POSITIVE = {
    "geometry.length", "geometry.diameter", "boundary.P_out", "boundary.P_in",
    "boundary.T_s_in", "boundary.T_g_in", "initial.T_s", "initial.T_g",
    "kinetics.k0", "kinetics.activation_energy", "heat_transfer.k_sg",
    "heat_transfer.r_b", "solver.rtol", "solver.atol", "solver.first_step",
    "solver.min_step", "solver.max_step",
}
NON_NEGATIVE = {"solver.horizon", "output.steady_check_time", "output.steady_guess_time"}
VECTORS5 = {"boundary.c_in", "initial.c", "transport.diffusion"}
SPECIES_KEYS = {"molar_mass", "formation_enthalpy"}
SUTHERLAND_KEYS = {"mu0", "T0", "S"}


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    value = float(value)
    if math.isnan(value):
        raise ConfigError("value is NaN", path)
    return value


def _build_section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError("expected a table", name)
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError("unknown key", f"{name}.{key}")
    kwargs = {}
    for key, f in known.items():
        path = f"{name}.{key}"
        if key not in raw:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError("missing required field", path)
            continue
        value = raw[key]
        if path in VECTORS5:
            if not isinstance(value, list) or len(value) != 5:
                raise ConfigError("expected a list of 5 numbers", path)
            value = tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))
            if min(value) < 0:
                raise ConfigError("values must be non-negative", path)
        elif key == "n_cells" or key in ("samples", "max_newton"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"expected an integer, got {value!r}", path)
            lower = 2 if key == "n_cells" else 1
            if value < lower:
                raise ConfigError(f"must be at least {lower}", path)
        elif key == "jacobian_refresh":
            if value not in ("lazy", "always"):
                raise ConfigError("must be 'lazy' or 'always'", path)
        elif key == "sutherland":
            value = _sutherland(value, path)
        else:
            value = _number(value, path)
            if path in POSITIVE and not value > 0:
                raise ConfigError(f"must be positive, got {value}", path)
            if path in NON_NEGATIVE and value < 0:
                raise ConfigError(f"must be non-negative, got {value}", path)
            if path.startswith("boundary.Q_amb") and not math.isfinite(value):
                raise ConfigError("must be finite", path)
        kwargs[key] = value
    return cls(**kwargs)


def _sutherland(raw, path):
    if not isinstance(raw, dict):
        raise ConfigError("expected a table of gases", path)
    gases = load_species().gases
    out = {}
    for gas, params in raw.items():
        gpath = f"{path}.{gas}"
        if gas not in gases:
            raise ConfigError("unknown gas", gpath)
        if not isinstance(params, dict):
            raise ConfigError("expected a table", gpath)
        entry = {}
        for k, v in params.items():
            if k not in SUTHERLAND_KEYS:
                raise ConfigError("unknown key", f"{gpath}.{k}")
            entry[k] = _number(v, f"{gpath}.{k}")
            if entry[k] <= 0:
                raise ConfigError("must be positive", f"{gpath}.{k}")
        out[gas] = entry
    return out


def _species(raw):
    if not isinstance(raw, dict):
        raise ConfigError("expected a table", "species")
    table = load_species()
    out = {}
    for name, params in raw.items():
        path = f"species.{name}"
        if name not in table.names:
            raise ConfigError("unknown species", path)
        if not isinstance(params, dict):
            raise ConfigError("expected a table", path)
        entry = {}
        for k, v in params.items():
            if k not in SPECIES_KEYS:
                raise ConfigError("unknown key", f"{path}.{k}")
            entry[k] = _number(v, f"{path}.{k}")
        if entry.get("molar_mass", 1.0) <= 0:
            raise ConfigError("must be positive", f"{path}.molar_mass")
        out[name] = entry
    return out


def scenario_from_dict(raw: dict) -> Scenario:
    """Validate a parsed configuration and build the Scenario."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    for key in raw:
        if key not in SECTIONS and key != "species":
            raise ConfigError("unknown section", key)
    kwargs = {}
    for name, cls in SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(name, cls, raw[name])
        else:
            try:
                kwargs[name] = cls()
            except TypeError:
                raise ConfigError("missing required section", name) from None
    if "species" in raw:
        kwargs["species"] = _species(raw["species"])
    sc = Scenario(**kwargs)
    if sc.solver.min_step > sc.solver.max_step:
        raise ConfigError("min_step exceeds max_step", "solver.min_step")
    return sc


def parse_override(item: str):
    """'section.key=value' -> (path list, value); value uses TOML syntax."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = tomli.loads(f"v = {text.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = text.strip()
    return key.split("."), value


def apply_overrides(raw: dict, overrides) -> dict:
    raw = _deepcopy(raw)
    for item in overrides or ():
        path, value = parse_override(item)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot override inside a non-table", ".".join(path))
        node[path[-1]] = value
    return raw


def _deepcopy(d):
    if isinstance(d, dict):
        return {k: _deepcopy(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_deepcopy(v) for v in d]
    return d


def read_config_text(path=None) -> str:
    if path is None:
        return resources.files("calciner").joinpath("data", PAPER_SCENARIO).read_text(encoding="utf-8")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc


def parse_toml(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"invalid TOML: {exc}", line=line) from exc


def load_scenario(path=None, overrides=()) -> Scenario:
    """Read a scenario file (default: the bundled reference scenario)."""
    raw = parse_toml(read_config_text(path))
    return scenario_from_dict(apply_overrides(raw, overrides))


def provenance(sc: Scenario) -> dict:
    """Per-field source flag: 'paper', 'assumed' (unpublished default) or 'user'."""
    flat = _flatten(sc.to_dict())
    defaults = _flatten(Scenario(Geometry(20), Boundary((0,) * 5, 1, 1), Initial((0,) * 5, 1, 1)).to_dict())
    out = {}
    for key, value in flat.items():
        if key in PAPER_VALUES:
            out[key] = "paper" if _same(value, PAPER_VALUES[key]) else "user"
        elif key == "boundary.P_in":
            drop = sc.boundary.P_in - sc.boundary.P_out
            out[key] = "paper" if math.isclose(drop, PAPER_PRESSURE_DROP) else "user"
        elif key in defaults and _same(value, defaults[key]):
            out[key] = "assumed"
        else:
            out[key] = "user"
    return out


def _same(a, b):
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=1e-12, abs_tol=0.0) or a == b
    return a == b


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k not in ("sutherland",) and key != "species":
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def build_model(sc: Scenario) -> CalcinerModel:
    species = load_species()
    for name, changes in sc.species.items():
        species = species.replace(name, **changes)
    grid = Grid(sc.geometry.n_cells, sc.geometry.length, sc.geometry.diameter)
    b = sc.boundary
    bc = BoundaryConditions(b.P_in, b.P_out, b.c_in, b.T_s_in, b.T_g_in, b.Q_amb_s, b.Q_amb_g)
    return CalcinerModel(
        grid=grid,
        bc=bc,
        species=species,
        kinetics=KineticParams(sc.kinetics.k0, sc.kinetics.activation_energy),
        transport=TransportParams(sc.geometry.diameter, sc.transport.diffusion),
        heat=HeatTransferParams(sc.heat_transfer.k_sg, sc.heat_transfer.r_b),
        viscosity=GasViscosity.from_species(species, sc.transport.sutherland),
    )


def initial_state(model: CalcinerModel, sc: Scenario):
    return model.consistent_state(sc.initial.c, sc.initial.T_s, sc.initial.T_g)
