# packages/engines/spm.py
# Single Particle Model: one spherical particle per electrode, no electrolyte dynamics.
#
# Sign convention (used throughout the engines): i_app > 0 charges the cell, i.e.
# lithium leaves the positive particle and enters the negative one. Radial fluxes
# N are outward-positive in mol/(m2 s).

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy.linalg import solve_banded

from .cellparams import CellParams, Electrode, check_eps, check_soc, ocp_curve, stoich_at_soc
from .errors import DomainError, KineticsError, SaturationError

LOGGER = logging.getLogger(__name__)

DEFAULT_SHELLS = 10


@dataclass(frozen=True)
class SpmState:
    shell_conc_neg: np.ndarray  # mol/m3, centre -> surface
    shell_conc_pos: np.ndarray
    eps_pos: float
    time: float = 0.0

    @property
    def n_shells(self) -> int:
        return int(self.shell_conc_neg.size)


# ---------------------- radial finite volumes ----------------------


@dataclass(frozen=True)
class RadialGrid:
    """Uniform shells on [0, R]; volumes and face areas carry no 4*pi factor."""

    radius: float
    n: int

    @property
    def dr(self) -> float:
        return self.radius / self.n

    @property
    def faces(self) -> np.ndarray:
        return np.linspace(0.0, self.radius, self.n + 1)

    @property
    def volumes(self) -> np.ndarray:
        f = self.faces
        return (f[1:] ** 3 - f[:-1] ** 3) / 3.0

    @property
    def weights(self) -> np.ndarray:
        """Shell volume fractions; the particle-average concentration is weights @ c."""
        return self.volumes / (self.radius**3 / 3.0)

    def stiffness_coeffs(self, diffusivity: float) -> np.ndarray:
        """Transmissibility D*r_f^2/dr of each interior face (n-1 values)."""
        return diffusivity * self.faces[1:-1] ** 2 / self.dr


def radial_grid(params: CellParams, electrode: Electrode, n_shells: int) -> RadialGrid:
    if n_shells < 4:
        raise DomainError(f"at least 4 radial shells are required, got {n_shells}")
    return RadialGrid(params.electrode(electrode).particle_radius, n_shells)


def diffuse_shells(grid: RadialGrid, diffusivity: float, conc: np.ndarray, n_out, dt: float) -> np.ndarray:
    """One backward-Euler step of radial Fick diffusion with outward surface flux ``n_out``.

    ``conc`` may be (n,) for a single particle or (m, n) for m particles with
    ``n_out`` of shape (m,).
    """
    vol = grid.volumes
    t = grid.stiffness_coeffs(diffusivity)
    n = grid.n
    diag = vol / dt
    diag[:-1] += t
    diag[1:] += t
    ab = np.zeros((3, n))
    ab[0, 1:] = -t
    ab[1] = diag
    ab[2, :-1] = -t
    rhs = np.atleast_2d(conc) * (vol / dt)
    rhs[:, -1] -= grid.radius**2 * np.atleast_1d(n_out)
    out = solve_banded((1, 1), ab, rhs.T).T
    return out.reshape(np.shape(conc))


def surface_concentration(grid: RadialGrid, diffusivity: float, conc: np.ndarray, n_out):
    """Extrapolate the outer-shell value to r = R using the imposed surface flux."""
    return conc[..., -1] - np.asarray(n_out) * (0.5 * grid.dr) / diffusivity


# ---------------------- SPM ----------------------


def particle_flux(params: CellParams, electrode: Electrode, i_app: float, eps_pos: float) -> float:
    """Outward surface flux (mol/m2/s) of the electrode's representative particle."""
    e = params.electrode(electrode)
    eps = eps_pos if electrode == "positive" else e.active_fraction
    area = 3.0 * eps / e.particle_radius
    volume = params.geometry.collector_area * params.thickness(electrode)
    n = i_app / (area * params.constants.faraday * volume)
    return -n if electrode == "negative" else n


def spm_init(params: CellParams, soc: float, eps_pos: float, n_shells: int = DEFAULT_SHELLS) -> SpmState:
    check_soc(soc)
    check_eps(eps_pos)
    radial_grid(params, "negative", n_shells)
    c_neg = stoich_at_soc(params, "negative", soc) * params.negative.max_concentration
    c_pos = stoich_at_soc(params, "positive", soc) * params.positive.max_concentration
    return SpmState(
        shell_conc_neg=np.full(n_shells, c_neg),
        shell_conc_pos=np.full(n_shells, c_pos),
        eps_pos=float(eps_pos),
        time=0.0,
    )


def surface_concentrations(state: SpmState, params: CellParams, i_app: float) -> Tuple[float, float]:
    out = []
    for electrode, conc in (("negative", state.shell_conc_neg), ("positive", state.shell_conc_pos)):
        grid = radial_grid(params, electrode, conc.size)
        n_out = particle_flux(params, electrode, i_app, state.eps_pos)
        out.append(float(surface_concentration(grid, params.electrode(electrode).diffusivity, conc, n_out)))
    return out[0], out[1]


def spm_step(state: SpmState, params: CellParams, i_app: float, dt: float) -> SpmState:
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    new = {}
    for electrode, conc in (("negative", state.shell_conc_neg), ("positive", state.shell_conc_pos)):
        e = params.electrode(electrode)
        grid = radial_grid(params, electrode, conc.size)
        n_out = particle_flux(params, electrode, i_app, state.eps_pos)
        c = diffuse_shells(grid, e.diffusivity, conc, n_out, dt)
        surf = float(surface_concentration(grid, e.diffusivity, c, n_out))
        if surf < 0.0 or surf > e.max_concentration or np.any(c < 0.0) or np.any(c > e.max_concentration):
            raise SaturationError(electrode)
        new[electrode] = c
    return replace(state, shell_conc_neg=new["negative"], shell_conc_pos=new["positive"], time=state.time + dt)


def exchange_current(params: CellParams, electrode: Electrode, c_surf, c_e):
    """Butler-Volmer exchange current density (A/m2): k*sqrt(c_e)*sqrt(c_s)*sqrt(c_max - c_s)."""
    e = params.electrode(electrode)
    return e.rate_constant * np.sqrt(c_e) * np.sqrt(c_surf) * np.sqrt(e.max_concentration - c_surf)


def voltage_from_surface(params: CellParams, c_surf_neg: float, c_surf_pos: float, eps_pos: float, i_app: float) -> float:
    """SPM terminal voltage for given surface concentrations.

    V = U+ - U- + (RT/aF) asinh(I / (2 a+ A L+ i0+)) + (RT/aF) asinh(I / (2 a- A L- i0-)) + I R_f.
    Both kinetic terms and the film drop raise the voltage under charge (I > 0).
    """
    ce = params.electrolyte.initial_concentration
    area = params.geometry.collector_area
    alpha = params.kinetics.alpha_a
    vt = params.thermal_voltage / alpha
    volts = 0.0
    for electrode, cs, sign in (("negative", c_surf_neg, -1.0), ("positive", c_surf_pos, 1.0)):
        e = params.electrode(electrode)
        if not (0.0 < cs < e.max_concentration):
            raise KineticsError(f"{electrode} surface concentration {cs:.6g} at a bound; exchange current vanishes")
        eps = eps_pos if electrode == "positive" else e.active_fraction
        a_s = 3.0 * eps / e.particle_radius
        i0 = exchange_current(params, electrode, cs, ce)
        u = float(ocp_curve(params, electrode).value(cs / e.max_concentration))
        eta = vt * np.arcsinh(i_app / (2.0 * a_s * area * params.thickness(electrode) * i0))
        volts += sign * u + eta
    return float(volts + i_app * params.resistances.film)


def spm_voltage(state: SpmState, params: CellParams, i_app: float) -> float:
    c_neg, c_pos = surface_concentrations(state, params, i_app)
    return voltage_from_surface(params, c_neg, c_pos, state.eps_pos, i_app)


def total_lithium(state: SpmState, params: CellParams, electrode: Electrode) -> float:
    """Moles of lithium held by the electrode (active volume times mean particle concentration)."""
    e = params.electrode(electrode)
    conc = state.shell_conc_neg if electrode == "negative" else state.shell_conc_pos
    eps = state.eps_pos if electrode == "positive" else e.active_fraction
    grid = radial_grid(params, electrode, conc.size)
    volume = eps * params.geometry.collector_area * params.thickness(electrode)
    return float(volume * (grid.weights @ conc))


def mean_stoich(state: SpmState, params: CellParams, electrode: Electrode) -> float:
    e = params.electrode(electrode)
    conc = state.shell_conc_neg if electrode == "negative" else state.shell_conc_pos
    return float(radial_grid(params, electrode, conc.size).weights @ conc / e.max_concentration)
