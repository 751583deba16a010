# packages/engines/cellparams.py
# Cell parameter set shared by the DFN and SPM, its JSON loader and the OCP curves.

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .degradation import LamCoeffs
from .errors import DomainError, ParamsSchemaError, ParamsValidationError

LOGGER = logging.getLogger(__name__)

DEFAULT_PARAMS = Path(__file__).resolve().parents[2] / "params" / "graphite_nmc_5ah.json"

Electrode = Literal["negative", "positive"]
Region = Literal["negative", "separator", "positive"]

# The OCP must strictly decrease over this stoichiometry window.
OCP_CHECK_LO = 0.01
OCP_CHECK_HI = 0.99


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Geometry(_Section):
    thickness_negative: float = Field(gt=0)  # m
    thickness_separator: float = Field(gt=0)  # m
    thickness_positive: float = Field(gt=0)  # m
    plate_area: float = Field(gt=0)  # m2, A_surf
    collector_area: float = Field(gt=0)  # m2, A_theta


class ElectrodeParams(_Section):
    particle_radius: float = Field(gt=0)  # m
    diffusivity: float = Field(gt=0)  # m2/s
    max_concentration: float = Field(gt=0)  # mol/m3
    active_fraction: float = Field(gt=0, lt=1)  # initial eps_s
    conductivity: float = Field(gt=0)  # S/m
    porosity: float = Field(gt=0, lt=1)
    rate_constant: float = Field(gt=0)  # A m^2.5 / mol^1.5
    stoich_soc0: float = Field(ge=0, le=1)
    stoich_soc100: float = Field(ge=0, le=1)
    ocp: Tuple[Tuple[float, float], ...]  # [stoich, volts] knots

    @field_validator("ocp")
    @classmethod
    def _table(cls, knots):
        if len(knots) < 2:
            raise ValueError("OCP table needs at least two knots")
        s = np.array([k[0] for k in knots])
        v = np.array([k[1] for k in knots])
        if s[0] != 0.0 or s[-1] != 1.0:
            raise ValueError("OCP table must span stoichiometry [0, 1]")
        if np.any(np.diff(s) <= 0):
            raise ValueError("OCP stoichiometry knots must be strictly increasing")
        # every segment overlapping the window, including those that straddle its edges
        overlap = (s[:-1] < OCP_CHECK_HI) & (s[1:] > OCP_CHECK_LO)
        if np.any(np.diff(v)[overlap] >= 0):
            raise ValueError(f"OCP must be strictly decreasing on [{OCP_CHECK_LO}, {OCP_CHECK_HI}]")
        return knots

    @property
    def specific_area(self) -> float:
        return 3.0 * self.active_fraction / self.particle_radius


class SeparatorParams(_Section):
    porosity: float = Field(gt=0, lt=1)


class ElectrolyteParams(_Section):
    initial_concentration: float = Field(gt=0)  # mol/m3
    diffusivity: float = Field(gt=0)  # bulk, m2/s
    conductivity: float = Field(gt=0)  # bulk, S/m
    transference: float = Field(gt=0, lt=1)
    bruggeman: float = Field(default=1.5, gt=0)


class Kinetics(_Section):
    alpha_a: float = Field(gt=0, lt=1)
    alpha_c: float = Field(gt=0, lt=1)


class Resistances(_Section):
    contact: float = Field(ge=0)  # R_cc, ohm m2 (DFN)
    film: float = Field(ge=0)  # R_f, ohm (SPM)


class Constants(_Section):
    faraday: float = Field(default=96485.33212, gt=0)
    gas: float = Field(default=8.314462618, gt=0)
    temperature: float = Field(default=298.15, gt=0)


class Capacity(_Section):
    nominal_ah: float = Field(gt=0)


class Degradation(_Section):
    lam: LamCoeffs = LamCoeffs()


class CellParams(_Section):
    name: str = "cell"
    description: str = ""
    geometry: Geometry
    negative: ElectrodeParams
    separator: SeparatorParams
    positive: ElectrodeParams
    electrolyte: ElectrolyteParams
    kinetics: Kinetics
    resistances: Resistances
    constants: Constants = Constants()
    capacity: Capacity
    degradation: Degradation = Degradation()

    @model_validator(mode="after")
    def _volume_fractions(self):
        for side in ("negative", "positive"):
            e = getattr(self, side)
            if e.active_fraction + e.porosity > 1.0 + 1e-12:
                raise ValueError(f"{side}.active_fraction + {side}.porosity must not exceed 1")
        return self

    # --- derived quantities ---

    @property
    def total_thickness(self) -> float:
        g = self.geometry
        return g.thickness_negative + g.thickness_separator + g.thickness_positive

    @property
    def thermal_voltage(self) -> float:
        c = self.constants
        return c.gas * c.temperature / c.faraday

    @property
    def one_c_current(self) -> float:
        """Current (A) that charges the nominal capacity in one hour."""
        return self.capacity.nominal_ah

    def electrode(self, electrode: Electrode) -> ElectrodeParams:
        if electrode not in ("negative", "positive"):
            raise DomainError(f"unknown electrode '{electrode}'")
        return self.negative if electrode == "negative" else self.positive

    def thickness(self, region: Region) -> float:
        return getattr(self.geometry, f"thickness_{region}")

    def porosity(self, region: Region) -> float:
        if region == "separator":
            return self.separator.porosity
        return self.electrode(region).porosity

    def electrolyte_diffusivity_eff(self, region: Region) -> float:
        el = self.electrolyte
        return el.diffusivity * self.porosity(region) ** el.bruggeman

    def electrolyte_conductivity_eff(self, region: Region) -> float:
        el = self.electrolyte
        return el.conductivity * self.porosity(region) ** el.bruggeman

    def diffusional_conductivity_eff(self, region: Region) -> float:
        # Positive by construction: i_e = -k_eff dphi_e/dx + k_D_eff dln(c_e)/dx.
        return 2.0 * self.electrolyte_conductivity_eff(region) * self.thermal_voltage * (1.0 - self.electrolyte.transference)


# ---------------------- OCP ----------------------


class OcpCurve:
    """Linear interpolation over the knots of one electrode's OCP table."""

    def __init__(self, knots):
        arr = np.asarray(knots, dtype=float)
        self.stoich = arr[:, 0]
        self.volts = arr[:, 1]
        self._slopes = np.diff(self.volts) / np.diff(self.stoich)

    def value(self, s):
        return np.interp(s, self.stoich, self.volts)

    def slope(self, s):
        idx = np.clip(np.searchsorted(self.stoich, s, side="right") - 1, 0, len(self._slopes) - 1)
        return self._slopes[idx]


def ocp_curve(params: CellParams, electrode: Electrode) -> OcpCurve:
    return OcpCurve(params.electrode(electrode).ocp)


def ocp(params: CellParams, electrode: Electrode, stoich):
    """Open-circuit potential (V) of ``electrode`` at ``stoich`` (scalar or array)."""
    s = np.asarray(stoich, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise DomainError(f"stoichiometry outside [0, 1] for {electrode} OCP")
    v = ocp_curve(params, electrode).value(s)
    return float(v) if v.ndim == 0 else v


def stoich_at_soc(params: CellParams, electrode: Electrode, soc: float) -> float:
    e = params.electrode(electrode)
    return e.stoich_soc0 + soc * (e.stoich_soc100 - e.stoich_soc0)


def soc_from_stoich(params: CellParams, electrode: Electrode, stoich: float) -> float:
    e = params.electrode(electrode)
    return (stoich - e.stoich_soc0) / (e.stoich_soc100 - e.stoich_soc0)


def check_soc(soc: float) -> None:
    if not (0.0 <= soc <= 1.0):
        raise DomainError(f"soc must lie in [0, 1], got {soc}")


def check_eps(eps_pos: float) -> None:
    if not (0.0 < eps_pos <= 1.0):
        raise DomainError(f"eps_pos must lie in (0, 1], got {eps_pos}")


# ---------------------- load / dump ----------------------


def _field_name(loc) -> str:
    return ".".join(str(p) for p in loc)


def _bound(err: dict) -> str:
    ctx = err.get("ctx") or {}
    for key, sym in (("gt", ">"), ("ge", ">="), ("lt", "<"), ("le", "<=")):
        if key in ctx:
            return f"{sym} {ctx[key]}"
    return err.get("msg", "invalid value")


def parse_params(data: Union[str, bytes, dict]) -> CellParams:
    try:
        if isinstance(data, dict):
            return CellParams.model_validate(data)
        return CellParams.model_validate_json(data)
    except ValidationError as exc:
        errors = exc.errors()
        missing = [e for e in errors if e["type"] == "missing"]
        if missing:
            raise ParamsSchemaError(_field_name(missing[0]["loc"])) from exc
        first = errors[0]
        field = _field_name(first["loc"]) or "params"
        if first["type"] == "extra_forbidden":
            raise ParamsSchemaError(field, f"parameter file has unknown field '{field}'") from exc
        bound = _bound(first)
        raise ParamsValidationError(field, bound, f"parameter '{field}' invalid: {first.get('msg')} ({bound})") from exc


def load_params(path: Union[str, Path, None] = None) -> CellParams:
    p = Path(path) if path else DEFAULT_PARAMS
    if not p.exists():
        raise FileNotFoundError(f"parameter file not found: {p}")
    params = parse_params(p.read_text(encoding="utf-8"))
    LOGGER.info("Loaded cell parameters '%s' from %s", params.name, p)
    return params


def serialize_params(params: CellParams) -> str:
    return json.dumps(params.model_dump(mode="json"), indent=2)


def dump_params(params: CellParams, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(serialize_params(params), encoding="utf-8")
    return p
