"""Molar and volumetric thermodynamic functions for the solid and gas phases.

Enthalpies are referenced to the formation enthalpy at 298.15 K and 1 bar and
are functions of temperature only.  Heat-capacity models are clamped at their
validity bounds, so enthalpy is extended linearly outside the tabulated range.

All functions accept scalars or numpy arrays; mixture functions take the
species axis last.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np
import tomli

R = 8.314
T_REF = 298.15
P_REF = 1.0e5


class PropertyRangeWarning(UserWarning):
    """A heat capacity was requested outside its validity range."""


def _check_temperature(T):
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)):
        raise ValueError("temperature must be finite")
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    return T


def _check_pressure(P):
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)) or np.any(P <= 0):
        raise ValueError("pressure must be finite and positive")
    return P


@dataclass(frozen=True)
class CpPolynomial:
    """cp = k1 + k2 T + k3 T^2 + k4/T + k5/T^2 + k6/sqrt(T) on [t_min, t_max]."""

    k: tuple[float, float, float, float, float, float]
    t_min: float
    t_max: float

    def __post_init__(self):
        if len(self.k) != 6:
            raise ValueError("CpPolynomial needs exactly six coefficients")
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be below t_max")

    def raw_cp(self, T):
        k1, k2, k3, k4, k5, k6 = self.k
        return k1 + k2 * T + k3 * T**2 + k4 / T + k5 / T**2 + k6 / np.sqrt(T)

    def raw_antiderivative(self, T):
        k1, k2, k3, k4, k5, k6 = self.k
        return (k1 * T + 0.5 * k2 * T**2 + k3 * T**3 / 3.0 + k4 * np.log(T)
                - k5 / T + 2.0 * k6 * np.sqrt(T))

    @property
    def pieces(self):
        return (self,)


@dataclass(frozen=True)
class ShomatePiece:
    """cp = A + B t + C t^2 + D t^3 + E/t^2 with t = T/1000, on [t_min, t_max]."""

    t_min: float
    t_max: float
    A: float
    B: float
    C: float
    D: float
    E: float

    def raw_cp(self, T):
        t = T / 1000.0
        return self.A + self.B * t + self.C * t**2 + self.D * t**3 + self.E / t**2

    def raw_antiderivative(self, T):
        t = T / 1000.0
        return 1000.0 * (self.A * t + self.B * t**2 / 2.0 + self.C * t**3 / 3.0
                         + self.D * t**4 / 4.0 - self.E / t)


@dataclass(frozen=True)
class GasCpModel:
    """Piecewise Shomate heat capacity; pieces tile a contiguous range."""

    pieces: tuple[ShomatePiece, ...]

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("at least one piece is required")
        for a, b in zip(self.pieces[:-1], self.pieces[1:]):
            if a.t_max != b.t_min:
                raise ValueError(f"pieces do not tile: {a.t_max} != {b.t_min}")

    @property
    def t_min(self):
        return self.pieces[0].t_min

    @property
    def t_max(self):
        return self.pieces[-1].t_max

    @property
    def breakpoints(self):
        return [p.t_max for p in self.pieces[:-1]]


@dataclass(frozen=True)
class BlendCp:
    """Fixed mole-fraction blend of other heat-capacity models (dry air)."""

    components: tuple[tuple[float, object], ...]

    @property
    def t_min(self):
        return max(m.t_min for _, m in self.components)

    @property
    def t_max(self):
        return min(m.t_max for _, m in self.components)


def _piecewise_cp(model, T):
    T = np.asarray(T, dtype=float)
    pieces = model.pieces
    Tc = np.clip(T, pieces[0].t_min, pieces[-1].t_max)
    out = pieces[-1].raw_cp(Tc)
    for p in reversed(pieces[:-1]):
        out = np.where(Tc < p.t_max, p.raw_cp(Tc), out)
    return out


@lru_cache(maxsize=None)
def _piece_constants(model):
    pieces = model.pieces
    offset = float(sum(p.raw_antiderivative(p.t_min) for p in pieces))
    return offset, float(pieces[0].raw_cp(pieces[0].t_min)), float(pieces[-1].raw_cp(pieces[-1].t_max))


def _piecewise_integral(model, T):
    """Antiderivative of the clamped cp, continuous everywhere."""
    T = np.asarray(T, dtype=float)
    pieces = model.pieces
    offset, cp_lo, cp_hi = _piece_constants(model)
    lo, hi = pieces[0].t_min, pieces[-1].t_max
    total = cp_lo * np.minimum(T - lo, 0.0) + cp_hi * np.maximum(T - hi, 0.0) - offset
    for p in pieces:
        total = total + p.raw_antiderivative(np.minimum(np.maximum(T, p.t_min), p.t_max))
    return total


@lru_cache(maxsize=None)
def _reference_integral(model, T0):
    return float(_piecewise_integral(model, T0))


def heat_capacity(model, T):
    """Molar heat capacity J/(mol K) of any supported cp model, clamped to range."""
    if isinstance(model, BlendCp):
        return sum(x * heat_capacity(m, T) for x, m in model.components)
    return _piecewise_cp(model, T)


def enthalpy_change(model, T, T0=T_REF):
    """Closed-form integral of the clamped heat capacity from T0 to T (J/mol)."""
    if isinstance(model, BlendCp):
        return sum(x * enthalpy_change(m, T, T0) for x, m in model.components)
    return _piecewise_integral(model, T) - _reference_integral(model, float(T0))


def in_range(model, T):
    T = np.asarray(T, dtype=float)
    return (T >= model.t_min) & (T <= model.t_max)


def cp_solid(model: CpPolynomial, T):
    """Heat capacity from the empirical solid polynomial.

    Outside [t_min, t_max] the endpoint value is returned and a
    PropertyRangeWarning is issued.
    """
    T = _check_temperature(T)
    if not np.all(in_range(model, T)):
        warnings.warn(
            f"T outside [{model.t_min}, {model.t_max}] K, cp clamped",
            PropertyRangeWarning, stacklevel=2)
    out = heat_capacity(model, T)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SolidMolarVolume:
    v1: float
    v2: float = 0.0

    def __call__(self, T):
        return self.v1 + self.v2 * np.asarray(T, dtype=float)


@dataclass(frozen=True)
class SpeciesThermo:
    name: str
    symbol: str
    phase: str
    molar_mass: float
    formation_enthalpy: float
    cp: object
    volume: SolidMolarVolume | None = None

    def __post_init__(self):
        if self.molar_mass <= 0:
            raise ValueError(f"{self.name}: molar mass must be positive")
        if self.phase not in ("solid", "gas"):
            raise ValueError(f"{self.name}: unknown phase {self.phase!r}")
        if self.phase == "solid" and self.volume is None:
            raise ValueError(f"{self.name}: solid species need a molar volume model")


def molar_enthalpy(sp: SpeciesThermo, T, P=P_REF):
    """h(T) = formation enthalpy + integral of cp from 298.15 K; P is unused."""
    T = _check_temperature(T)
    _check_pressure(P)
    out = sp.formation_enthalpy + enthalpy_change(sp.cp, T)
    return float(out) if np.ndim(out) == 0 else out


def molar_volume(sp: SpeciesThermo, T, P):
    T = _check_temperature(T)
    P = _check_pressure(P)
    if sp.phase == "solid":
        out = sp.volume(T) * np.ones_like(P)
    else:
        out = R * T / P
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Phase:
    """An ideal mixture of species sharing one temperature.

    Methods here do not validate their inputs; they are the fast path used
    inside residual evaluation, where Newton iterates may be slightly
    unphysical.
    """

    species: tuple[SpeciesThermo, ...]
    name: str = ""

    @property
    def is_gas(self):
        return self.species[0].phase == "gas"

    @property
    def molar_masses(self):
        return np.array([s.molar_mass for s in self.species])

    def molar_enthalpies(self, T):
        T = np.asarray(T, dtype=float)
        return np.stack([s.formation_enthalpy + enthalpy_change(s.cp, T)
                         for s in self.species], axis=-1)

    def heat_capacities(self, T):
        return np.stack([heat_capacity(s.cp, T) for s in self.species], axis=-1)

    def molar_volumes(self, T, P):
        T = np.asarray(T, dtype=float)
        P = np.asarray(P, dtype=float)
        if self.is_gas:
            v = R * T / P
            return np.stack([v] * len(self.species), axis=-1)
        return np.stack([s.volume(T) + 0.0 * P for s in self.species], axis=-1)

    def enthalpy(self, T, P, c):
        return np.sum(np.asarray(c) * self.molar_enthalpies(T), axis=-1)

    def volume(self, T, P, c):
        c = np.asarray(c, dtype=float)
        if self.is_gas:
            return np.sum(c, axis=-1) * R * np.asarray(T) / np.asarray(P)
        return np.sum(c * self.molar_volumes(T, P), axis=-1)

    def internal_energy(self, T, P, c):
        return self.enthalpy(T, P, c) - np.asarray(P) * self.volume(T, P, c)

    def out_of_range(self, T):
        """Boolean mask (..., n_species) of temperatures outside cp validity."""
        return np.stack([~in_range(s.cp, T) for s in self.species], axis=-1)


def _as_phase(species) -> Phase:
    if isinstance(species, Phase):
        return species
    return Phase(tuple(species))


def _check_conc(c, phase):
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != len(phase.species):
        raise ValueError(f"expected {len(phase.species)} concentrations, got {c.shape[-1]}")
    if np.any(c < 0):
        raise ValueError("concentrations must be non-negative")
    return c


def _scalarize(x):
    return float(x) if np.ndim(x) == 0 else x


def mixture_enthalpy(species, T, P, c):
    """Volumetric enthalpy sum_i c_i h_i(T) in J/m3."""
    phase = _as_phase(species)
    c = _check_conc(c, phase)
    return _scalarize(phase.enthalpy(_check_temperature(T), _check_pressure(P), c))


def mixture_volume(species, T, P, c):
    """Volume fraction sum_i c_i v_i(T, P) (m3 per m3 of reactor)."""
    phase = _as_phase(species)
    c = _check_conc(c, phase)
    return _scalarize(phase.volume(_check_temperature(T), _check_pressure(P), c))


def internal_energy(species, T, P, c):
    phase = _as_phase(species)
    c = _check_conc(c, phase)
    T = _check_temperature(T)
    P = _check_pressure(P)
    return _scalarize(phase.internal_energy(T, P, c))


def enthalpy_flux(species, T, P, N):
    """Enthalpy carried by the molar fluxes N (mol/(m2 s)) at (T, P), in W/m2.

    Flux components may be negative.
    """
    phase = _as_phase(species)
    N = np.asarray(N, dtype=float)
    if not np.all(np.isfinite(N)):
        raise ValueError("fluxes must be finite")
    return _scalarize(phase.enthalpy(_check_temperature(T), P, N))


@dataclass(frozen=True)
class SpeciesTable:
    """The five species of the state vector plus the pure gases behind air."""

    species: tuple[SpeciesThermo, ...]
    gases: dict = field(default_factory=dict)

    @property
    def names(self):
        return [s.name for s in self.species]

    @property
    def symbols(self):
        return [s.symbol for s in self.species]

    @property
    def molar_masses(self):
        return np.array([s.molar_mass for s in self.species])

    def __getitem__(self, key):
        for s in self.species:
            if key in (s.name, s.symbol):
                return s
        raise KeyError(key)

    def index(self, key):
        for i, s in enumerate(self.species):
            if key in (s.name, s.symbol):
                return i
        raise KeyError(key)

    @property
    def solid_indices(self):
        return [i for i, s in enumerate(self.species) if s.phase == "solid"]

    @property
    def gas_indices(self):
        return [i for i, s in enumerate(self.species) if s.phase == "gas"]

    def phase(self, which):
        idx = self.solid_indices if which == "solid" else self.gas_indices
        return Phase(tuple(self.species[i] for i in idx), name=which)

    def replace(self, name, **changes):
        from dataclasses import replace
        new = tuple(replace(s, **changes) if s.name == name else s for s in self.species)
        if new == self.species:
            raise KeyError(name)
        return SpeciesTable(new, self.gases)


def _parse_cp(spec, gases):
    form = spec["form"]
    if form == "polynomial":
        return CpPolynomial(tuple(float(k) for k in spec["k"]),
                            float(spec["t_min"]), float(spec["t_max"]))
    if form == "shomate":
        return GasCpModel(tuple(ShomatePiece(**{k: float(v) for k, v in p.items()})
                                for p in spec["pieces"]))
    if form == "blend":
        comps = tuple((float(x), gases[g]["cp"]) for g, x in spec["components"].items())
        total = sum(x for x, _ in comps)
        if not math.isclose(total, 1.0, abs_tol=1e-12):
            raise ValueError(f"blend fractions sum to {total}, not 1")
        return BlendCp(comps)
    raise ValueError(f"unknown cp form {form!r}")


def parse_species_data(data: dict) -> SpeciesTable:
    gases = {}
    for name, g in data.get("gas", {}).items():
        gases[name] = {
            "molar_mass": float(g["molar_mass"]),
            "cp": _parse_cp(g["cp"], gases) if "cp" in g else None,
            "viscosity": dict(g.get("viscosity", {})),
        }
    species = []
    for name, s in data["species"].items():
        vol = s.get("volume")
        species.append(SpeciesThermo(
            name=name,
            symbol=s["symbol"],
            phase=s["phase"],
            molar_mass=float(s["molar_mass"]),
            formation_enthalpy=float(s["formation_enthalpy"]),
            cp=_parse_cp(s["cp"], gases),
            volume=SolidMolarVolume(float(vol["v1"]), float(vol.get("v2", 0.0))) if vol else None,
        ))
    return SpeciesTable(tuple(species), gases)


@lru_cache(maxsize=None)
def load_species(path: str | None = None) -> SpeciesTable:
    """Load the bundled species table, or a user file with the same schema."""
    if path is None:
        text = resources.files("calciner").joinpath("data", "species.toml").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_species_data(tomli.loads(text))


def heat_of_reaction(table: SpeciesTable, T=T_REF, nu: Sequence[float] = (-1, 1, 2, 0, 0)):
    """sum_i nu_i h_i(T) in J/mol; positive means endothermic."""
    return float(sum(n * molar_enthalpy(s, T) for n, s in zip(nu, table.species) if n))
