# packages/engines/protocol.py
# One CCCV charge cycle (after a fixed discharge/rest reset) against a truth model.

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Literal, Optional, Protocol as TypingProtocol, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import dfn, spm
from .cellparams import CellParams
from .degradation import AgingState
from .errors import DomainError, ProtocolTimeoutError, SolverError

LOGGER = logging.getLogger(__name__)

EXTREMA_COLUMNS = (
    "c_e_min_neg",
    "c_e_max_neg",
    "c_e_min_pos",
    "c_e_max_pos",
    "c_s_min_neg",
    "c_s_max_neg",
    "c_s_min_pos",
    "c_s_max_pos",
)


class ProtocolConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    v_min: float = 2.5  # V, discharge cutoff
    v_max: float = 4.2  # V, CC -> CV switch and CV hold
    cv_cutoff: float = Field(default=0.1, gt=0)  # A
    discharge_c_rate: float = Field(default=1.0, gt=0)
    rest_s: float = Field(default=300.0, ge=0)
    dt: float = Field(default=1.0, gt=0)
    c_min: float = Field(default=0.5, gt=0)
    c_max: float = Field(default=3.0, gt=0)
    c_rate_basis: Literal["nominal", "current"] = "nominal"
    max_cc_s: float = Field(default=4 * 3600.0, gt=0)
    max_cv_s: float = Field(default=4 * 3600.0, gt=0)
    max_discharge_s: float = Field(default=4 * 3600.0, gt=0)
    cv_tol: float = Field(default=1e-9, gt=0)  # V, CV root-find tolerance
    cv_max_iter: int = Field(default=30, ge=2)
    cv_accept: float = Field(default=1e-6, gt=0)  # V, fallback when cv_tol is below solver noise

    @model_validator(mode="after")
    def _window(self):
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.c_min > self.c_max:
            raise ValueError("c_min must not exceed c_max")
        return self


class TruthSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    model: Literal["dfn", "spm"] = "dfn"
    n_x: int = Field(default=10, ge=5)  # nodes per region
    n_r: int = Field(default=10, ge=4)
    newton: dfn.NewtonSettings = dfn.NewtonSettings()


# ---------------------- truth models ----------------------


class TruthModel(TypingProtocol):
    params: CellParams

    def init(self, soc: float, eps_pos: float) -> Any: ...

    def step(self, state: Any, i_app: float, dt: float) -> Any: ...

    def voltage(self, state: Any, i_app: float) -> float: ...

    def with_eps(self, state: Any, eps_pos: float) -> Any: ...

    def surface_stoich(self, state: Any, i_app: float) -> Tuple[float, float]: ...

    def shell_profiles(self, state: Any) -> Tuple[np.ndarray, np.ndarray]: ...

    def extrema(self, state: Any) -> Dict[str, float]: ...


class DfnTruth:
    def __init__(self, params: CellParams, settings: TruthSettings = TruthSettings()):
        self.params = params
        self.settings = settings
        self.mesh = dfn.dfn_mesh(params, n_x=settings.n_x, n_r=settings.n_r)

    def init(self, soc, eps_pos):
        return dfn.dfn_init(self.params, self.mesh, soc, eps_pos)

    def step(self, state, i_app, dt):
        return dfn.dfn_step(state, self.params, self.mesh, i_app, dt, self.settings.newton)

    def voltage(self, state, i_app):
        return dfn.dfn_voltage(state, self.params, i_app)

    def with_eps(self, state, eps_pos):
        return dfn.with_eps(state, eps_pos)

    def surface_stoich(self, state, i_app):
        neg, pos = dfn.surface_stoich(state, self.params)
        dx = self.mesh.dx
        return (
            float(neg @ dx[self.mesh.neg] / dx[self.mesh.neg].sum()),
            float(pos @ dx[self.mesh.pos] / dx[self.mesh.pos].sum()),
        )

    def shell_profiles(self, state):
        dn = self.mesh.dx[self.mesh.neg]
        dp = self.mesh.dx[self.mesh.pos]
        return dn @ state.cs_neg / dn.sum(), dp @ state.cs_pos / dp.sum()

    def extrema(self, state):
        ce = state.ce
        return _extrema(ce[self.mesh.neg], ce[self.mesh.pos], state.cs_neg, state.cs_pos)


class SpmTruth:
    def __init__(self, params: CellParams, settings: TruthSettings = TruthSettings(model="spm")):
        self.params = params
        self.settings = settings

    def init(self, soc, eps_pos):
        return spm.spm_init(self.params, soc, eps_pos, self.settings.n_r)

    def step(self, state, i_app, dt):
        return spm.spm_step(state, self.params, i_app, dt)

    def voltage(self, state, i_app):
        return spm.spm_voltage(state, self.params, i_app)

    def with_eps(self, state, eps_pos):
        return replace(state, eps_pos=float(eps_pos))

    def surface_stoich(self, state, i_app):
        neg, pos = spm.surface_concentrations(state, self.params, i_app)
        return neg / self.params.negative.max_concentration, pos / self.params.positive.max_concentration

    def shell_profiles(self, state):
        return state.shell_conc_neg.copy(), state.shell_conc_pos.copy()

    def extrema(self, state):
        # uniform electrolyte in the single-particle picture
        ce = np.array([self.params.electrolyte.initial_concentration])
        return _extrema(ce, ce, state.shell_conc_neg, state.shell_conc_pos)


def _extrema(ce_neg, ce_pos, cs_neg, cs_pos) -> Dict[str, float]:
    values = []
    for arr in (ce_neg, ce_pos, cs_neg, cs_pos):
        values += [float(np.min(arr)), float(np.max(arr))]
    return dict(zip(EXTREMA_COLUMNS, values))


def make_truth(params: CellParams, settings: Optional[TruthSettings] = None) -> TruthModel:
    settings = settings or TruthSettings()
    if settings.model == "spm":
        return SpmTruth(params, settings)
    return DfnTruth(params, settings)


# ---------------------- cycle record ----------------------


@dataclass
class CycleRecord:
    cycle_index: int
    c_rate: float
    time: np.ndarray  # s since start of charge
    current: np.ndarray  # A, charge positive
    voltage: np.ndarray  # V
    phase: List[str]  # "cc" | "cv" per sample
    stoich_neg: np.ndarray  # electrode-averaged surface stoichiometry
    stoich_pos: np.ndarray
    charge_duration: float
    cc_duration: float
    delivered_ah: float
    q_now: float
    eps_pos_true: float
    eps_pos_estimate: float
    start_shells_neg: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    start_shells_pos: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    r1: float = 0.0
    r2: float = 0.0
    r3: float = 0.0
    reward: float = 0.0
    penalty: bool = False

    @property
    def cc_mask(self) -> np.ndarray:
        return np.array([p == "cc" for p in self.phase], dtype=bool)

    def summary(self) -> dict:
        return {
            "cycle_index": self.cycle_index,
            "c_rate": self.c_rate,
            "charge_duration_s": self.charge_duration,
            "cc_duration_s": self.cc_duration,
            "delivered_ah": self.delivered_ah,
            "q_now": self.q_now,
            "eps_pos_true": self.eps_pos_true,
            "eps_pos_estimate": self.eps_pos_estimate,
            "v_max_trace": float(self.voltage.max()) if self.voltage.size else None,
            "final_current": float(self.current[-1]) if self.current.size else None,
            "samples": int(self.time.size),
            "r1": self.r1,
            "r2": self.r2,
            "r3": self.r3,
            "reward": self.reward,
            "penalty": self.penalty,
        }


class _Trace:
    def __init__(self):
        self.time: List[float] = []
        self.current: List[float] = []
        self.voltage: List[float] = []
        self.phase: List[str] = []
        self.neg: List[float] = []
        self.pos: List[float] = []

    def add(self, truth: TruthModel, state, t: float, i_app: float, volts: float, phase: str):
        n, p = truth.surface_stoich(state, i_app)
        self.time.append(t)
        self.current.append(i_app)
        self.voltage.append(volts)
        self.phase.append(phase)
        self.neg.append(n)
        self.pos.append(p)


# ---------------------- legs ----------------------


def discharge_and_rest(truth: TruthModel, state, config: ProtocolConfig, sink=None):
    """Constant-current discharge to v_min followed by an open-circuit rest."""
    params = truth.params
    i_dis = -config.discharge_c_rate * params.one_c_current
    dt = config.dt
    t = 0.0
    if truth.voltage(state, 0.0) > config.v_min:
        while True:
            state = truth.step(state, i_dis, dt)
            t += dt
            v = truth.voltage(state, i_dis)
            if sink is not None:
                sink(truth, state, "discharge", i_dis, v)
            if v <= config.v_min:
                break
            if t >= config.max_discharge_s:
                raise ProtocolTimeoutError(f"discharge did not reach {config.v_min} V within {config.max_discharge_s:.0f} s")
    for _ in range(int(round(config.rest_s / dt))):
        state = truth.step(state, 0.0, dt)
        if sink is not None:
            sink(truth, state, "rest", 0.0, truth.voltage(state, 0.0))
    LOGGER.debug("discharge/rest leg: %.0f s discharge, rest voltage %.4f V", t, truth.voltage(state, 0.0))
    return state


def _cv_step(truth: TruthModel, state, guess: float, slope: float, config: ProtocolConfig):
    """Current holding the terminal voltage at v_max over one step (secant on the current)."""
    dt = config.dt

    def f(i):
        s = truth.step(state, i, dt)
        return truth.voltage(s, i) - config.v_max, s

    i0 = guess
    f0, s0 = f(i0)
    if abs(f0) < config.cv_tol:
        return i0, s0, slope
    best = (abs(f0), i0, s0)
    i1 = i0 - f0 / slope
    for _ in range(config.cv_max_iter):
        f1, s1 = f(i1)
        if abs(f1) < config.cv_tol:
            return i1, s1, slope
        if abs(f1) < best[0]:
            best = (abs(f1), i1, s1)
        if f1 != f0:
            slope = (f1 - f0) / (i1 - i0)
        if not slope > 0:
            slope = 1e-3
        i0, f0 = i1, f1
        i1 = i1 - f1 / slope
    if best[0] < config.cv_accept:
        LOGGER.debug("CV solve stalled at |V - v_max| = %.3e; accepting", best[0])
        return best[1], best[2], slope
    raise SolverError(abs(f1), f"CV current solve did not converge (|V - {config.v_max}| = {abs(f1):.3e})")


def run_cccv_cycle(
    truth: TruthModel,
    state,
    aging: AgingState,
    c_rate: float,
    config: ProtocolConfig = ProtocolConfig(),
    eps_estimate: Optional[float] = None,
    trace_sink=None,
):
    """Discharge-reset, rest, then CC at ``c_rate`` to v_max and CV until cv_cutoff.

    Returns the truth state at charge cutoff and the cycle's record (reward
    fields left at zero for the environment to fill).
    """
    if not (config.c_min <= c_rate <= config.c_max):
        raise DomainError(f"c_rate {c_rate} outside [{config.c_min}, {config.c_max}]")
    params = truth.params
    state = discharge_and_rest(truth, state, config, trace_sink)
    start_neg, start_pos = truth.shell_profiles(state)

    basis = params.capacity.nominal_ah if config.c_rate_basis == "nominal" else aging.q_now
    i_cc = c_rate * basis
    dt = config.dt
    tr = _Trace()
    t = 0.0

    # CC: a step that would cross v_max is discarded and redone under CV
    while True:
        nxt = truth.step(state, i_cc, dt)
        v = truth.voltage(nxt, i_cc)
        if v >= config.v_max:
            break
        state = nxt
        t += dt
        tr.add(truth, state, t, i_cc, v, "cc")
        if trace_sink is not None:
            trace_sink(truth, state, "cc", i_cc, v)
        if t >= config.max_cc_s:
            raise ProtocolTimeoutError(f"CC phase exceeded {config.max_cc_s:.0f} s at {c_rate:.3f}C")
    cc_duration = t

    # CV
    slope = None
    i_last = i_cc
    i_prev = None
    while True:
        guess = i_last if i_prev is None else max(i_last + (i_last - i_prev), 0.5 * i_last)
        if slope is None:
            v_a = truth.voltage(truth.step(state, i_last, dt), i_last)
            i_b = 0.99 * i_last
            v_b = truth.voltage(truth.step(state, i_b, dt), i_b)
            slope = (v_a - v_b) / (i_last - i_b) if v_a != v_b else 1e-3
            if not slope > 0:
                slope = 1e-3
        i_new, state, slope = _cv_step(truth, state, guess, slope, config)
        t += dt
        v = truth.voltage(state, i_new)
        tr.add(truth, state, t, i_new, v, "cv")
        if trace_sink is not None:
            trace_sink(truth, state, "cv", i_new, v)
        i_prev, i_last = i_last, i_new
        if i_new <= config.cv_cutoff:
            break
        if t - cc_duration >= config.max_cv_s:
            raise ProtocolTimeoutError(f"CV phase exceeded {config.max_cv_s:.0f} s")

    current = np.asarray(tr.current)
    record = CycleRecord(
        cycle_index=aging.cycle_index + 1,
        c_rate=float(c_rate),
        time=np.asarray(tr.time),
        current=current,
        voltage=np.asarray(tr.voltage),
        phase=tr.phase,
        stoich_neg=np.asarray(tr.neg),
        stoich_pos=np.asarray(tr.pos),
        charge_duration=t,
        cc_duration=cc_duration,
        delivered_ah=float(current.sum() * dt / 3600.0),
        q_now=aging.q_now,
        eps_pos_true=aging.eps_pos_true,
        eps_pos_estimate=aging.eps_pos_true if eps_estimate is None else float(eps_estimate),
        start_shells_neg=start_neg,
        start_shells_pos=start_pos,
    )
    LOGGER.info(
        "cycle %d: %.3fC, CC %.0f s, total %.0f s, %.4f Ah delivered",
        record.cycle_index,
        c_rate,
        cc_duration,
        t,
        record.delivered_ah,
    )
    return state, record
