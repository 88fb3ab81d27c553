"""Finite-volume method-of-lines model of the calciner as a semi-explicit DAE.

Per cell the differential variables are the five concentrations and the
solid and gas volumetric internal energies; the algebraic variables are the
two phase temperatures and the pressure.  The packed state is
``[x_1, ..., x_N, y_1, ..., y_N]`` with ``x_i = [c_i, u_s_i, u_g_i]`` and
``y_i = [T_s_i, T_g_i, P_i]``.

Interfaces are numbered 0..N: interface 0 is the inlet, interface k >= 1 is
the downstream face of cell k.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chemistry import KineticParams, Stoichiometry, _rate
from .thermo import R, Phase, SpeciesTable, load_species
from .transport import (
    SutherlandModel,
    TransportParams,
    _dw_velocity,
    _wilke,
)

N_SPECIES = 5
N_DIFF = 7
N_ALG = 3
N_VARS = N_DIFF + N_ALG


class ModelEvaluationError(ArithmeticError):
    """A residual component came out non-finite."""

    def __init__(self, message, cell=None, equation=None):
        super().__init__(message)
        self.cell = cell
        self.equation = equation


class InfeasibleStateError(ValueError):
    """No pressure satisfies the volume constraint for the given composition."""


@dataclass(frozen=True)
class Grid:
    n_cells: int
    length: float = 30.0
    diameter: float = 1.0

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError("need at least two cells")
        if self.length <= 0 or self.diameter <= 0:
            raise ValueError("length and diameter must be positive")

    @property
    def dz(self):
        return self.length / self.n_cells

    @property
    def area(self):
        return np.pi * self.diameter**2 / 4.0

    @property
    def volume(self):
        return self.area * self.length

    @property
    def z_centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dz

    @property
    def z_interfaces(self):
        return np.arange(self.n_cells + 1) * self.dz


@dataclass(frozen=True)
class BoundaryConditions:
    P_in: float
    P_out: float
    c_in: tuple[float, ...]
    T_s_in: float
    T_g_in: float
    Q_amb_s: float = 0.0
    Q_amb_g: float = 0.0

    def __post_init__(self):
        if self.P_in <= 0 or self.P_out <= 0:
            raise ValueError("boundary pressures must be positive")
        if len(self.c_in) != N_SPECIES or min(self.c_in) < 0:
            raise ValueError("c_in must be five non-negative concentrations")
        if self.T_s_in <= 0 or self.T_g_in <= 0:
            raise ValueError("inlet temperatures must be positive")


@dataclass(frozen=True)
class HeatTransferParams:
    k_sg: float = 100.0
    r_b: float = 1.0e-5

    def __post_init__(self):
        if self.k_sg <= 0 or self.r_b <= 0:
            raise ValueError("k_sg and r_b must be positive")


@dataclass
class CellState:
    c: np.ndarray
    u_s: np.ndarray
    u_g: np.ndarray
    T_s: np.ndarray
    T_g: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class StateLayout:
    n_cells: int

    @property
    def size(self):
        return N_VARS * self.n_cells

    @property
    def n_diff(self):
        return N_DIFF * self.n_cells

    def pack(self, c, u_s, u_g, T_s, T_g, P):
        n = self.n_cells
        x = np.column_stack([np.broadcast_to(c, (n, N_SPECIES)),
                             np.broadcast_to(u_s, n), np.broadcast_to(u_g, n)])
        y = np.column_stack([np.broadcast_to(T_s, n), np.broadcast_to(T_g, n),
                             np.broadcast_to(P, n)])
        return np.concatenate([x.ravel(), y.ravel()])

    def unpack(self, z):
        n = self.n_cells
        z = np.asarray(z, dtype=float)
        x = z[: N_DIFF * n].reshape(n, N_DIFF)
        y = z[N_DIFF * n:].reshape(n, N_ALG)
        return CellState(x[:, :N_SPECIES], x[:, 5], x[:, 6], y[:, 0], y[:, 1], y[:, 2])

    def pack_state(self, s: CellState):
        return self.pack(s.c, s.u_s, s.u_g, s.T_s, s.T_g, s.P)

    @property
    def mass(self):
        return np.concatenate([np.ones(self.n_diff), np.zeros(N_ALG * self.n_cells)])

    @property
    def cell_of(self):
        n = self.n_cells
        return np.concatenate([np.repeat(np.arange(n), N_DIFF), np.repeat(np.arange(n), N_ALG)])

    @property
    def local_of(self):
        n = self.n_cells
        return np.concatenate([np.tile(np.arange(N_DIFF), n), N_DIFF + np.tile(np.arange(N_ALG), n)])

    def sparsity(self, width=1):
        cell = self.cell_of
        return np.abs(cell[:, None] - cell[None, :]) <= width

    def column_groups(self, width=1):
        """Structurally orthogonal column groups for the (2*width+1)-cell stencil."""
        stride = 2 * width + 1
        key = (self.cell_of % stride) * N_VARS + self.local_of
        return [np.flatnonzero(key == k) for k in np.unique(key)]


class GasViscosity:
    """Sutherland pure-gas viscosities combined with Wilke's rule.

    ``composition`` maps each gas-phase species (columns of c_g) onto the pure
    gases, e.g. air -> 0.78 N2 + 0.21 O2 + 0.01 Ar.
    """

    def __init__(self, models, molar_masses, composition):
        self.models = tuple(models)
        self.molar_masses = np.asarray(molar_masses, dtype=float)
        self.composition = np.asarray(composition, dtype=float)

    @classmethod
    def from_species(cls, table: SpeciesTable, overrides=None):
        overrides = overrides or {}
        gas_species = [table.species[i] for i in table.gas_indices]
        names = []
        rows = []
        for sp in gas_species:
            if sp.name == "air":
                comps = {"N2": 0.78, "O2": 0.21, "Ar": 0.01}
            elif sp.name == "water":
                comps = {"H2O": 1.0}
            else:
                comps = {sp.name: 1.0}
            rows.append(comps)
            names.extend(g for g in comps if g not in names)
        comp = np.array([[r.get(g, 0.0) for g in names] for r in rows])
        models = []
        for g in names:
            params = dict(table.gases[g]["viscosity"])
            params.update(overrides.get(g, {}))
            models.append(SutherlandModel(params["mu0"], params["T0"], params["S"]))
        return cls(models, [table.gases[g]["molar_mass"] for g in names], comp)

    def pure(self, T):
        T = np.asarray(T, dtype=float)
        return np.stack([m.mu0 * (T / m.T0) ** 1.5 * (m.T0 + m.S) / (T + m.S)
                         for m in self.models], axis=-1)

    def __call__(self, T, c_g):
        n = np.asarray(c_g, dtype=float) @ self.composition
        n = np.maximum(n, 0.0)
        total = n.sum(axis=-1, keepdims=True)
        x = n / np.where(total > 0, total, 1.0)
        return _wilke(x, self.pure(T), self.molar_masses)


# ---------------------------------------------------------------------------
# operations on per-cell arrays


def interface_velocities(P, bc: BoundaryConditions, grid: Grid, mu, rho):
    """Velocities at the N+1 interfaces, positive for flow towards the outlet.

    ``mu`` and ``rho`` are per-interface values taken on the upwind side.
    """
    P = np.asarray(P, dtype=float)
    P_up = np.concatenate([[bc.P_in], P])
    P_dn = np.concatenate([P, [bc.P_out]])
    return _dw_velocity(P_up - P_dn, grid.dz, grid.diameter, np.asarray(mu), np.asarray(rho))


def upwind_select(P, bc, left, right):
    """Pick the upstream value of a per-interface quantity from its two sides."""
    P = np.asarray(P, dtype=float)
    P_up = np.concatenate([[bc.P_in], P])
    P_dn = np.concatenate([P, [bc.P_out]])
    return np.where(P_up >= P_dn, left, right)


def interface_mass_fluxes(c, c_in, v, D, dz):
    """Molar fluxes (N+1, 5): inlet and outlet are pure advection, interior
    faces advect the left cell's concentration plus central Fick diffusion."""
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    D = np.asarray(D, dtype=float)
    n = c.shape[0]
    N = np.empty((n + 1, c.shape[1]))
    N[0] = v[0] * np.asarray(c_in, dtype=float)
    N[1:n] = v[1:n, None] * c[:-1] - D * (c[1:] - c[:-1]) / dz
    N[n] = v[n] * c[-1]
    return N


def mass_balance_rhs(fluxes, dz, production):
    fluxes = np.asarray(fluxes)
    return -(fluxes[1:] - fluxes[:-1]) / dz + production


def interface_enthalpy_fluxes(T, P, fluxes, T_in, P_in, phase: Phase):
    """Enthalpy fluxes of one phase, each evaluated at its left cell's (T, P);
    the inlet face uses the inlet temperature and pressure."""
    T_ext = np.concatenate([[T_in], T])
    P_ext = np.concatenate([[P_in], P])
    return phase.enthalpy(T_ext, P_ext, fluxes)


def solid_gas_heat_transfer(T_s, T_g, v_hat_s, params: HeatTransferParams):
    """Volumetric heat flow to the solid, k_sg (3 v_s / r_b) (T_g - T_s) in W/m3."""
    return params.k_sg * 3.0 * np.asarray(v_hat_s) / params.r_b * (np.asarray(T_g) - np.asarray(T_s))


def energy_balance_rhs(H_s, H_g, J_sg, Q_amb_s, Q_amb_g, dz):
    """Ambient terms enter as signed additive sources (negative for a loss)."""
    du_s = -(H_s[1:] - H_s[:-1]) / dz + J_sg + Q_amb_s
    du_g = -(H_g[1:] - H_g[:-1]) / dz - J_sg + Q_amb_g
    return du_s, du_g


def algebraic_residuals(state: CellState, solid: Phase, gas: Phase, solid_idx, gas_idx):
    """(N, 3): internal-energy closures for both phases and the volume constraint."""
    c_s = state.c[:, solid_idx]
    c_g = state.c[:, gas_idx]
    v_s = solid.volume(state.T_s, state.P, c_s)
    v_g = gas.volume(state.T_g, state.P, c_g)
    U_s = solid.enthalpy(state.T_s, state.P, c_s) - state.P * v_s
    U_g = gas.enthalpy(state.T_g, state.P, c_g) - state.P * v_g
    return np.column_stack([U_s - state.u_s, U_g - state.u_g, v_s + v_g - 1.0])


@dataclass
class Evaluation:
    """Intermediate quantities of one right-hand-side evaluation."""

    state: CellState
    velocity: np.ndarray
    fluxes: np.ndarray
    H_s: np.ndarray
    H_g: np.ndarray
    J_sg: np.ndarray
    rate: np.ndarray
    v_hat_s: np.ndarray
    rho: np.ndarray
    mu: np.ndarray
    dxdt: np.ndarray
    g: np.ndarray


@dataclass
class CalcinerModel:
    """The discretized calciner: residual evaluator, layout and parameters."""

    grid: Grid
    bc: BoundaryConditions
    species: SpeciesTable = field(default_factory=load_species)
    kinetics: KineticParams = field(default_factory=KineticParams)
    stoich: Stoichiometry = field(default_factory=Stoichiometry)
    transport: TransportParams = field(default_factory=TransportParams)
    heat: HeatTransferParams = field(default_factory=HeatTransferParams)
    viscosity: GasViscosity | None = None

    def __post_init__(self):
        if self.viscosity is None:
            self.viscosity = GasViscosity.from_species(self.species)
        self.layout = StateLayout(self.grid.n_cells)
        self.solid_idx = self.species.solid_indices
        self.gas_idx = self.species.gas_indices
        self.solid = self.species.phase("solid")
        self.gas = self.species.phase("gas")
        self.molar_masses = self.species.molar_masses
        self.D = np.asarray(self.transport.diffusion, dtype=float)
        self.c_in = np.asarray(self.bc.c_in, dtype=float)
        self._nu = self.stoich.vector
        self.mass = self.layout.mass
        self.sparsity = self.layout.sparsity()
        self.groups = self.layout.column_groups()
        if self.transport.diameter != self.grid.diameter:
            raise ValueError("transport and grid diameters differ")
        self._inlet = self._inlet_properties()

    @property
    def n(self):
        return self.layout.size

    # -- properties -------------------------------------------------------

    def suspension_viscosity(self, T_s, T_g, P, c):
        c = np.atleast_2d(c)
        mu_g = self.viscosity(T_g, c[:, self.gas_idx])
        v_s = self.solid.volume(T_s, P, c[:, self.solid_idx])
        return mu_g * (1.0 + 0.5 * v_s) / (1.0 - 2.0 * v_s), v_s

    def inlet_properties(self):
        """(mu, rho) of the feed at inlet conditions."""
        return self._inlet

    def _inlet_properties(self):
        bc = self.bc
        mu, _ = self.suspension_viscosity(np.array([bc.T_s_in]), np.array([bc.T_g_in]),
                                          np.array([bc.P_in]), self.c_in)
        return float(mu[0]), float(self.c_in @ self.molar_masses)

    def typical(self):
        """Typical magnitudes of the packed variables, used for scaling."""
        return self.layout.pack(np.full(5, 1e-2), 1e5, 1e5, 300.0, 300.0, 1e4)

    # -- residual -----------------------------------------------------------

    def evaluate(self, t, z) -> Evaluation:
        s = self.layout.unpack(z)
        bc = self.bc
        grid = self.grid
        c = s.c
        c_s = c[:, self.solid_idx]
        c_g = c[:, self.gas_idx]

        rho = c @ self.molar_masses
        mu, v_s = self.suspension_viscosity(s.T_s, s.T_g, s.P, c)
        mu_in, rho_in = self.inlet_properties()
        mu_if = upwind_select(s.P, bc, np.concatenate([[mu_in], mu]), np.concatenate([mu, mu[-1:]]))
        rho_if = upwind_select(s.P, bc, np.concatenate([[rho_in], rho]), np.concatenate([rho, rho[-1:]]))
        velocity = interface_velocities(s.P, bc, grid, mu_if, np.maximum(rho_if, 1e-12))

        fluxes = interface_mass_fluxes(c, self.c_in, velocity, self.D, grid.dz)
        r = _rate(self.kinetics, c[:, 0], s.T_s)
        dc = mass_balance_rhs(fluxes, grid.dz, np.outer(r, self._nu))

        # molar enthalpies at [inlet, cells], reused for fluxes and closures
        h_s = self.solid.molar_enthalpies(np.concatenate([[bc.T_s_in], s.T_s]))
        h_g = self.gas.molar_enthalpies(np.concatenate([[bc.T_g_in], s.T_g]))
        H_s = np.sum(fluxes[:, self.solid_idx] * h_s, axis=1)
        H_g = np.sum(fluxes[:, self.gas_idx] * h_g, axis=1)
        J = solid_gas_heat_transfer(s.T_s, s.T_g, v_s, self.heat)
        du_s, du_g = energy_balance_rhs(H_s, H_g, J, bc.Q_amb_s, bc.Q_amb_g, grid.dz)

        v_g = np.sum(c_g, axis=1) * R * s.T_g / s.P
        U_s = np.sum(c_s * h_s[1:], axis=1) - s.P * v_s
        U_g = np.sum(c_g * h_g[1:], axis=1) - s.P * v_g
        g = np.column_stack([U_s - s.u_s, U_g - s.u_g, v_s + v_g - 1.0])

        dxdt = np.column_stack([dc, du_s, du_g])
        return Evaluation(s, velocity, fluxes, H_s, H_g, J, r, v_s, rho, mu, dxdt, g)

    def fun(self, t, z):
        """F in M dz/dt = F(t, z): differential right-hand sides, then algebraic residuals."""
        ev = self.evaluate(t, z)
        return np.concatenate([ev.dxdt.ravel(), ev.g.ravel()])

    def residual(self, t, z, zdot):
        """DAE residual: dx/dt - f(x, y) on differential rows, g(x, y) on algebraic rows."""
        F = self.fun(t, z)
        nd = self.layout.n_diff
        res = np.concatenate([np.asarray(zdot)[:nd] - F[:nd], F[nd:]])
        bad = ~np.isfinite(res)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            cell = int(self.layout.cell_of[k])
            local = int(self.layout.local_of[k])
            tags = ["c_AB2", "c_A", "c_B", "c_air", "c_Q", "u_s", "u_g", "U_s", "U_g", "V"]
            raise ModelEvaluationError(
                f"non-finite residual in cell {cell}, equation {tags[local]}",
                cell=cell, equation=tags[local])
        return res

    # -- initialization -------------------------------------------------------

    def consistent_state(self, c0, T_s0, T_g0):
        """Packed state with pressure and internal energies consistent with
        (c, T_s, T_g); P follows in closed form from the volume constraint."""
        n = self.grid.n_cells
        c = np.array(np.broadcast_to(np.asarray(c0, dtype=float), (n, N_SPECIES)))
        T_s = np.broadcast_to(np.asarray(T_s0, dtype=float), n).astype(float)
        T_g = np.broadcast_to(np.asarray(T_g0, dtype=float), n).astype(float)
        if np.any(c < 0):
            raise ValueError("initial concentrations must be non-negative")
        if np.any(T_s <= 0) or np.any(T_g <= 0):
            raise ValueError("initial temperatures must be positive")
        c_s = c[:, self.solid_idx]
        c_g = c[:, self.gas_idx]
        v_s = self.solid.volume(T_s, 1.0, c_s)
        if np.any(v_s >= 1.0):
            raise InfeasibleStateError(f"solid volume fraction {v_s.max():.3g} >= 1")
        c_gt = c_g.sum(axis=1)
        if np.any(c_gt <= 0):
            raise InfeasibleStateError("zero gas concentration leaves the pressure undetermined")
        P = c_gt * R * T_g / (1.0 - v_s)
        u_s = self.solid.internal_energy(T_s, P, c_s)
        u_g = self.gas.internal_energy(T_g, P, c_g)
        return self.layout.pack(c, u_s, u_g, T_s, T_g, P)

    # -- diagnostics ----------------------------------------------------------

    def cp_out_of_range(self, z):
        s = self.layout.unpack(z)
        return int(self.solid.out_of_range(s.T_s).sum() + self.gas.out_of_range(s.T_g).sum())


def assemble_dae_residual(t, z, zdot, model: CalcinerModel):
    """Packed residual [zdot_x - f(x, y); g(x, y)] of length 10 N."""
    return model.residual(t, z, zdot)
