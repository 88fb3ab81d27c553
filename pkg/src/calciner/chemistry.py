"""Kaolinite dehydroxylation kinetics, AB2 -> A + 2B.

Concentrations are ordered [AB2, A, B, air, Q] throughout.  The rate law is
third order in the kaolinite concentration, so with c in mol/m3 the
pre-exponential factor carries effective units of m6/(mol2 s).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .thermo import R

SPECIES_ORDER = ("AB2", "A", "B", "air", "Q")


@dataclass(frozen=True)
class KineticParams:
    k0: float = 2.9e15
    activation_energy: float = 2.02e5
    gas_constant: float = R
    order: int = 3

    def __post_init__(self):
        if self.k0 <= 0 or self.activation_energy <= 0:
            raise ValueError("k0 and activation energy must be positive")


@dataclass(frozen=True)
class Stoichiometry:
    species: tuple[str, ...] = SPECIES_ORDER
    nu: tuple[float, ...] = (-1.0, 1.0, 2.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.species) != len(self.nu):
            raise ValueError("one coefficient per species is required")

    @property
    def vector(self):
        return np.asarray(self.nu, dtype=float)


def rate_constant(params: KineticParams, T_s):
    """Arrhenius constant k0 exp(-E_A / (R T_s)); underflows cleanly to 0."""
    T_s = np.asarray(T_s, dtype=float)
    if np.any(~np.isfinite(T_s)) or np.any(T_s <= 0):
        raise ValueError("solid temperature must be finite and positive")
    with np.errstate(under="ignore"):
        k = params.k0 * np.exp(-params.activation_energy / (params.gas_constant * T_s))
    return float(k) if k.ndim == 0 else k


def _rate(params, c_ab2, T_s):
    # negative iterates would make the cubic inject mass
    c = np.maximum(np.asarray(c_ab2, dtype=float), 0.0)
    with np.errstate(under="ignore"):
        k = params.k0 * np.exp(-params.activation_energy / (params.gas_constant * T_s))
    return k * c**params.order


def reaction_rate(params: KineticParams, c_ab2, T_s):
    """r = k(T_s) c_AB2^3 in mol/(m3 s); negative c_AB2 is treated as zero."""
    rate_constant(params, T_s)
    r = _rate(params, c_ab2, np.asarray(T_s, dtype=float))
    return float(r) if np.ndim(r) == 0 else r


def production_rate(params: KineticParams, stoich: Stoichiometry, c, T_s):
    """R = nu r, shape (..., 5)."""
    c = np.asarray(c, dtype=float)
    r = reaction_rate(params, c[..., 0], T_s)
    return np.multiply.outer(r, stoich.vector)
