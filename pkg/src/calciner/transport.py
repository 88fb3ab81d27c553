"""Density, viscosity and pressure-driven velocity of the gas-solid suspension,
and the advective-diffusive species flux."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

GAMMA_AIR = 1.4
R_SPECIFIC_AIR = 287.0


class MachWarning(UserWarning):
    """Flow outside the validity envelope of the turbulent friction law."""

    def __init__(self, mach, v, T_g):
        super().__init__(f"Mach {mach:.3f} at v={v:.3g} m/s, T_g={T_g:.1f} K")
        self.mach = mach
        self.v = v
        self.T_g = T_g


@dataclass(frozen=True)
class SutherlandModel:
    mu0: float
    T0: float
    S: float

    def __post_init__(self):
        if self.mu0 <= 0 or self.T0 <= 0 or self.S <= 0:
            raise ValueError("Sutherland parameters must be positive")


@dataclass(frozen=True)
class TransportParams:
    diameter: float = 1.0
    diffusion: tuple[float, ...] = (0.1, 0.1, 0.1, 0.1, 0.1)
    mach_limit: float = 0.2

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError("diameter must be positive")
        if any(D < 0 for D in self.diffusion):
            raise ValueError("diffusion coefficients must be non-negative")


def mixture_density(c, molar_masses):
    """rho = sum_j M_j c_j in kg/m3."""
    return np.asarray(c, dtype=float) @ np.asarray(molar_masses, dtype=float)


def sutherland_viscosity(model: SutherlandModel, T):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    mu = model.mu0 * (T / model.T0) ** 1.5 * (model.T0 + model.S) / (T + model.S)
    return float(mu) if mu.ndim == 0 else mu


def _wilke(x, mu, M):
    # phi[..., i, j]
    ratio_mu = mu[..., :, None] / mu[..., None, :]
    Mi = M[:, None]
    Mj = M[None, :]
    phi = (1.0 + np.sqrt(ratio_mu) * (Mj / Mi) ** 0.25) ** 2 / (
        2.0 * math.sqrt(2.0) * np.sqrt(1.0 + Mi / Mj))
    denom = np.einsum("...j,...ij->...i", x, phi)
    return np.sum(x * mu / denom, axis=-1)


def wilke_mixture_viscosity(x, mu, M):
    """Wilke's rule for the viscosity of a gas mixture.

    x are mole fractions (last axis), mu the pure-gas viscosities, M the
    molar masses.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    M = np.asarray(M, dtype=float)
    if np.any(x < 0):
        raise ValueError("mole fractions must be non-negative")
    total = x.sum(axis=-1)
    if np.any(total == 0):
        raise ValueError("mixture has zero total composition")
    if np.any(np.abs(total - 1.0) > 1e-9):
        raise ValueError("mole fractions must sum to one")
    out = _wilke(x, np.broadcast_to(mu, x.shape), M)
    return float(out) if out.ndim == 0 else out


def suspension_viscosity(mu_g, v_hat_s):
    """Extended Einstein viscosity mu_g (1 + v/2) / (1 - 2 v) of a dust-laden gas."""
    v = np.asarray(v_hat_s, dtype=float)
    if np.any(v < 0):
        raise ValueError("solid volume fraction must be non-negative")
    if np.any(v >= 0.5):
        raise ValueError("solid volume fraction >= 0.5: suspension viscosity diverges")
    out = np.asarray(mu_g) * (1.0 + 0.5 * v) / (1.0 - 2.0 * v)
    return float(out) if np.ndim(out) == 0 else out


def _dw_velocity(dP, dz, d, mu, rho):
    g = np.asarray(dP, dtype=float) / dz
    mag = (2.0 / 0.316 * (d**5 / (mu * rho**3)) ** 0.25 * np.abs(g)) ** (4.0 / 7.0)
    return mag * np.sign(g)


def darcy_weisbach_velocity(dP, dz, d, mu, rho):
    """Turbulent (Blasius) pipe-flow velocity driven by the pressure difference dP over dz.

    The sign follows dP; v(0) = 0.
    """
    if dz <= 0:
        raise ValueError("dz must be positive")
    if np.any(np.asarray(mu) <= 0) or np.any(np.asarray(rho) <= 0):
        raise ValueError("viscosity and density must be positive")
    v = _dw_velocity(dP, dz, d, np.asarray(mu, dtype=float), np.asarray(rho, dtype=float))
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class MachCheck:
    mach: float
    ok: bool


def mach_number(v, T_g):
    return np.abs(v) / np.sqrt(GAMMA_AIR * R_SPECIFIC_AIR * np.asarray(T_g, dtype=float))


def mach_guard(v, T_g, limit=0.2):
    """Check the Mach number against the friction-law limit; warns, never raises."""
    mach = float(np.max(mach_number(v, T_g)))
    ok = mach < limit
    if not ok:
        warnings.warn(MachWarning(mach, float(np.max(np.abs(v))), float(np.min(T_g))), stacklevel=2)
    return MachCheck(mach, ok)


def species_flux(v, c_up, grad_c, D):
    """N = v c_up - D * dc/dz, componentwise."""
    v = np.asarray(v, dtype=float)
    return (v[..., None] * np.asarray(c_up, dtype=float)
            - np.asarray(D, dtype=float) * np.asarray(grad_c, dtype=float))
