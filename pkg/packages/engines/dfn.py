# packages/engines/dfn.py
# Doyle-Fuller-Newman truth model: cell-centred finite volumes across
# negative electrode / separator / positive electrode, radial shells per node,
# one monolithic backward-Euler Newton solve per time step.
#
# Conventions: i_app > 0 charges. j (mol/m3/s) is the volumetric pore-wall flux,
# positive when lithium leaves the solid. Solid and electrolyte current
# densities are positive along +x. Residual rows are scaled to O(1) per block.

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse.linalg import splu

from .cellparams import CellParams, OcpCurve, check_eps, check_soc, ocp_curve, stoich_at_soc
from .errors import DomainError, EvaluationError, SaturationError, SolverError
from .spm import RadialGrid

LOGGER = logging.getLogger(__name__)


class NewtonSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tol: float = Field(default=1e-8, gt=0)  # scaled residual, infinity norm
    step_tol: float = Field(default=1e-10, gt=0)  # scaled step, infinity norm
    max_iter: int = Field(default=25, ge=1)
    max_halvings: int = Field(default=6, ge=0)


# ---------------------- mesh ----------------------


@dataclass(frozen=True)
class DfnMesh:
    n_neg: int
    n_sep: int
    n_pos: int
    n_r: int
    dx: np.ndarray  # m, per electrolyte node
    x: np.ndarray  # m, node centres
    volumes: np.ndarray  # m3, dx * plate area
    region_volumes: Tuple[float, float, float]

    @property
    def n_e(self) -> int:
        return self.n_neg + self.n_sep + self.n_pos

    @property
    def neg(self) -> slice:
        return slice(0, self.n_neg)

    @property
    def sep(self) -> slice:
        return slice(self.n_neg, self.n_neg + self.n_sep)

    @property
    def pos(self) -> slice:
        return slice(self.n_neg + self.n_sep, self.n_e)


def dfn_mesh(
    params: CellParams,
    n_x: int = 10,
    n_r: int = 10,
    n_sep: Optional[int] = None,
    n_pos: Optional[int] = None,
) -> DfnMesh:
    counts = (n_x, n_sep if n_sep is not None else n_x, n_pos if n_pos is not None else n_x)
    if min(counts) < 5:
        raise DomainError(f"each region needs at least 5 nodes, got {counts}")
    if n_r < 4:
        raise DomainError(f"at least 4 radial shells are required, got {n_r}")
    area = params.geometry.plate_area
    widths = [params.thickness(r) for r in ("negative", "separator", "positive")]
    dx = np.concatenate([np.full(n, w / n) for n, w in zip(counts, widths)])
    faces = np.concatenate([[0.0], np.cumsum(dx)])
    return DfnMesh(
        n_neg=counts[0],
        n_sep=counts[1],
        n_pos=counts[2],
        n_r=n_r,
        dx=dx,
        x=0.5 * (faces[1:] + faces[:-1]),
        volumes=dx * area,
        region_volumes=tuple(w * area for w in widths),
    )


# ---------------------- state ----------------------


@dataclass(frozen=True)
class DfnState:
    cs_neg: np.ndarray  # (n_neg, n_r) mol/m3
    cs_pos: np.ndarray  # (n_pos, n_r)
    ce: np.ndarray  # (n_e,) mol/m3
    phis_neg: np.ndarray  # V
    phis_pos: np.ndarray
    phie: np.ndarray
    j_neg: np.ndarray  # mol/m3/s
    j_pos: np.ndarray
    eps_pos_true: float
    time: float = 0.0


@dataclass(frozen=True)
class _Layout:
    n_neg: int
    n_pos: int
    n_e: int
    n_r: int

    @property
    def cs_neg(self) -> slice:
        return slice(0, self.n_neg * self.n_r)

    @property
    def cs_pos(self) -> slice:
        s = self.cs_neg.stop
        return slice(s, s + self.n_pos * self.n_r)

    @property
    def ce(self) -> slice:
        s = self.cs_pos.stop
        return slice(s, s + self.n_e)

    @property
    def phis_neg(self) -> slice:
        s = self.ce.stop
        return slice(s, s + self.n_neg)

    @property
    def phis_pos(self) -> slice:
        s = self.phis_neg.stop
        return slice(s, s + self.n_pos)

    @property
    def phie(self) -> slice:
        s = self.phis_pos.stop
        return slice(s, s + self.n_e)

    @property
    def j_neg(self) -> slice:
        s = self.phie.stop
        return slice(s, s + self.n_neg)

    @property
    def j_pos(self) -> slice:
        s = self.j_neg.stop
        return slice(s, s + self.n_pos)

    @property
    def size(self) -> int:
        return self.j_pos.stop

    def pack(self, st: DfnState) -> np.ndarray:
        return np.concatenate(
            [st.cs_neg.ravel(), st.cs_pos.ravel(), st.ce, st.phis_neg, st.phis_pos, st.phie, st.j_neg, st.j_pos]
        )

    def unpack(self, x: np.ndarray, like: DfnState, time: float) -> DfnState:
        return replace(
            like,
            cs_neg=x[self.cs_neg].reshape(self.n_neg, self.n_r).copy(),
            cs_pos=x[self.cs_pos].reshape(self.n_pos, self.n_r).copy(),
            ce=x[self.ce].copy(),
            phis_neg=x[self.phis_neg].copy(),
            phis_pos=x[self.phis_pos].copy(),
            phie=x[self.phie].copy(),
            j_neg=x[self.j_neg].copy(),
            j_pos=x[self.j_pos].copy(),
            time=time,
        )


def _layout(mesh: DfnMesh) -> _Layout:
    return _Layout(mesh.n_neg, mesh.n_pos, mesh.n_e, mesh.n_r)


# ---------------------- coefficients ----------------------


def _harmonic(dx: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Face transmissibility 2 / (dx_i/k_i + dx_{i+1}/k_{i+1})."""
    return 2.0 / (dx[:-1] / k[:-1] + dx[1:] / k[1:])


@dataclass(frozen=True)
class _Side:
    name: str
    nodes: slice  # electrolyte-node slice
    cs: slice  # unknown slices
    phis: slice
    j: slice
    dx: np.ndarray
    a_s: float
    radius: float
    diffusivity: float
    cmax: float
    rate: float
    curve: OcpCurve
    shell_vol: np.ndarray
    shell_t: np.ndarray
    solid_t: np.ndarray
    sigma_eff: float
    j_ref: float


@dataclass(frozen=True)
class _Coeffs:
    neg: _Side
    pos: _Side
    dx: np.ndarray
    eps_e: np.ndarray
    t_diff: np.ndarray
    t_cond: np.ndarray
    gamma: float  # 2RT(1-t+)/F
    t_plus: float
    faraday: float
    f_rt: float
    alpha_a: float
    alpha_c: float
    ce0: float
    area: float
    i_ref: float
    vt: float


def _coefficients(params: CellParams, mesh: DfnMesh, eps_pos: float) -> _Coeffs:
    lay = _layout(mesh)
    F = params.constants.faraday
    area = params.geometry.plate_area
    i_ref = params.one_c_current / area
    regions = ("negative",) * mesh.n_neg + ("separator",) * mesh.n_sep + ("positive",) * mesh.n_pos
    eps_e = np.array([params.porosity(r) for r in regions])
    d_eff = np.array([params.electrolyte_diffusivity_eff(r) for r in regions])
    k_eff = np.array([params.electrolyte_conductivity_eff(r) for r in regions])

    def side(name: str, nodes: slice, cs: slice, phis: slice, j: slice, eps_s: float) -> _Side:
        e = params.electrode(name)
        grid = RadialGrid(e.particle_radius, mesh.n_r)
        dx = mesh.dx[nodes]
        sigma = eps_s * e.conductivity
        return _Side(
            name=name,
            nodes=nodes,
            cs=cs,
            phis=phis,
            j=j,
            dx=dx,
            a_s=3.0 * eps_s / e.particle_radius,
            radius=e.particle_radius,
            diffusivity=e.diffusivity,
            cmax=e.max_concentration,
            rate=e.rate_constant,
            curve=ocp_curve(params, name),
            shell_vol=grid.volumes,
            shell_t=grid.stiffness_coeffs(e.diffusivity),
            solid_t=_harmonic(dx, np.full(dx.size, sigma)),
            sigma_eff=sigma,
            j_ref=i_ref / (F * params.thickness(name)),
        )

    return _Coeffs(
        neg=side("negative", mesh.neg, lay.cs_neg, lay.phis_neg, lay.j_neg, params.negative.active_fraction),
        pos=side("positive", mesh.pos, lay.cs_pos, lay.phis_pos, lay.j_pos, eps_pos),
        dx=mesh.dx,
        eps_e=eps_e,
        t_diff=_harmonic(mesh.dx, d_eff),
        t_cond=_harmonic(mesh.dx, k_eff),
        gamma=2.0 * params.thermal_voltage * (1.0 - params.electrolyte.transference),
        t_plus=params.electrolyte.transference,
        faraday=F,
        f_rt=1.0 / params.thermal_voltage,
        alpha_a=params.kinetics.alpha_a,
        alpha_c=params.kinetics.alpha_c,
        ce0=params.electrolyte.initial_concentration,
        area=area,
        i_ref=i_ref,
        vt=params.thermal_voltage,
    )


# ---------------------- residual / Jacobian ----------------------


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float))
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())

    def matrix(self, n: int, scale: np.ndarray) -> sp.csc_matrix:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals) / scale[rows]
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()


def _diffusion_1d(t: np.ndarray, u: np.ndarray, idx: np.ndarray, res: np.ndarray, rows: np.ndarray, trip):
    """Add net outflow of q = -t*(u[i+1]-u[i]) to res[rows] and its derivatives."""
    q = -t * (u[1:] - u[:-1])
    res[rows[:-1]] += q
    res[rows[1:]] -= q
    if trip is not None:
        trip.add(rows[:-1], idx[:-1], t)
        trip.add(rows[:-1], idx[1:], -t)
        trip.add(rows[1:], idx[1:], t)
        trip.add(rows[1:], idx[:-1], -t)


def _surface(side: _Side, cs: np.ndarray, j: np.ndarray):
    h = 0.5 * (side.radius / cs.shape[1]) / (side.diffusivity * side.a_s)
    return cs[:, -1] - h * j, h


def _assemble(x, x_prev, co: _Coeffs, lay: _Layout, i_app: float, dt: float, jacobian: bool = True):
    n = lay.size
    res = np.zeros(n)
    scale = np.ones(n)
    trip = _Triplets() if jacobian else None
    ar = np.arange(n)
    F = co.faraday

    ce = x[lay.ce]
    phie = x[lay.phie]
    if np.any(ce <= 0.0):
        raise EvaluationError("non-positive electrolyte concentration")
    i_ce = ar[lay.ce]
    i_pe = ar[lay.phie]

    # electrolyte mass balance
    res[lay.ce] = co.eps_e * co.dx * (ce - x_prev[lay.ce]) / dt
    scale[lay.ce] = co.ce0 * co.dx / dt
    if trip is not None:
        trip.add(i_ce, i_ce, co.eps_e * co.dx / dt)
    _diffusion_1d(co.t_diff, ce, i_ce, res, i_ce, trip)

    # electrolyte charge balance: i_e = -k dphi_e/dx + gamma*k dln(c_e)/dx
    scale[lay.phie] = co.i_ref
    _diffusion_1d(co.t_cond, phie, i_pe, res, i_pe, trip)
    lnc = np.log(ce)
    qd = co.gamma * co.t_cond * (lnc[1:] - lnc[:-1])
    res[i_pe[:-1]] += qd
    res[i_pe[1:]] -= qd
    if trip is not None:
        gt = co.gamma * co.t_cond
        trip.add(i_pe[:-1], i_ce[1:], gt / ce[1:])
        trip.add(i_pe[:-1], i_ce[:-1], -gt / ce[:-1])
        trip.add(i_pe[1:], i_ce[1:], -gt / ce[1:])
        trip.add(i_pe[1:], i_ce[:-1], gt / ce[:-1])

    i_surf = i_app / co.area
    for side, boundary in ((co.neg, "left"), (co.pos, "right")):
        n_nodes = side.dx.size
        cs = x[side.cs].reshape(n_nodes, lay.n_r)
        cs_prev = x_prev[side.cs].reshape(n_nodes, lay.n_r)
        phis = x[side.phis]
        j = x[side.j]
        idx_cs = ar[side.cs].reshape(n_nodes, lay.n_r)
        i_ps = ar[side.phis]
        i_j = ar[side.j]
        i_ce_s = i_ce[side.nodes]
        i_pe_s = i_pe[side.nodes]

        # solid diffusion, node-major shells
        rcs = side.shell_vol * (cs - cs_prev) / dt
        q = -side.shell_t * (cs[:, 1:] - cs[:, :-1])
        rcs[:, :-1] += q
        rcs[:, 1:] -= q
        r2a = side.radius**2 / side.a_s
        rcs[:, -1] += r2a * j
        res[side.cs] = rcs.ravel()
        scale[side.cs] = np.broadcast_to(side.cmax * side.shell_vol / dt, (n_nodes, lay.n_r)).ravel()
        if trip is not None:
            diag = np.broadcast_to(side.shell_vol / dt, cs.shape).copy()
            diag[:, :-1] += side.shell_t
            diag[:, 1:] += side.shell_t
            trip.add(idx_cs, idx_cs, diag)
            trip.add(idx_cs[:, :-1], idx_cs[:, 1:], -side.shell_t)
            trip.add(idx_cs[:, 1:], idx_cs[:, :-1], -side.shell_t)
            trip.add(idx_cs[:, -1], i_j, r2a)

        # electrolyte source
        src = (1.0 - co.t_plus) * side.dx
        res[i_ce_s] -= src * j
        res[i_pe_s] -= F * side.dx * j
        if trip is not None:
            trip.add(i_ce_s, i_j, -src)
            trip.add(i_pe_s, i_j, -F * side.dx)

        # solid charge balance with the collector current at the outer face
        rps = F * side.dx * j
        qs = -side.solid_t * (phis[1:] - phis[:-1])
        rps[:-1] += qs
        rps[1:] -= qs
        if boundary == "left":
            rps[0] += i_surf
        else:
            rps[-1] -= i_surf
        res[side.phis] = rps
        scale[side.phis] = co.i_ref
        if trip is not None:
            trip.add(i_ps, i_j, F * side.dx)
            t = side.solid_t
            trip.add(i_ps[:-1], i_ps[:-1], t)
            trip.add(i_ps[:-1], i_ps[1:], -t)
            trip.add(i_ps[1:], i_ps[1:], t)
            trip.add(i_ps[1:], i_ps[:-1], -t)

        # Butler-Volmer
        c_surf, h = _surface(side, cs, j)
        if np.any(c_surf <= 0.0) or np.any(c_surf >= side.cmax):
            raise EvaluationError(f"{side.name} surface concentration outside (0, c_max)")
        theta = c_surf / side.cmax
        ce_s = ce[side.nodes]
        i0 = side.rate * np.sqrt(ce_s) * np.sqrt(c_surf) * np.sqrt(side.cmax - c_surf)
        eta = phis - phie[side.nodes] - side.curve.value(theta)
        ea = np.exp(co.alpha_a * co.f_rt * eta)
        ec = np.exp(-co.alpha_c * co.f_rt * eta)
        bv = ea - ec
        g = side.a_s / F
        res[side.j] = j - g * i0 * bv
        scale[side.j] = side.j_ref
        if trip is not None:
            dbv = co.f_rt * (co.alpha_a * ea + co.alpha_c * ec)
            di0 = i0 * (0.5 / c_surf - 0.5 / (side.cmax - c_surf))
            du = side.curve.slope(theta) / side.cmax
            d_csurf = -g * (di0 * bv - i0 * dbv * du)
            trip.add(i_j, i_j, 1.0 + d_csurf * (-h))
            trip.add(i_j, idx_cs[:, -1], d_csurf)
            trip.add(i_j, i_ce_s, -g * bv * i0 / (2.0 * ce_s))
            trip.add(i_j, i_ps, -g * i0 * dbv)
            trip.add(i_j, i_pe_s, g * i0 * dbv)

    # gauge: the first electrolyte-potential row is implied by the two solid
    # charge balances and is replaced by phi_s(negative, node 0) = 0
    g0 = i_pe[0]
    res[g0] = x[co.neg.phis][0]
    scale[g0] = co.vt
    res /= scale
    if trip is None:
        return res, None
    keep = [r != g0 for r in trip.rows]
    trip.rows = [r[k] for r, k in zip(trip.rows, keep)]
    trip.cols = [c[k] for c, k in zip(trip.cols, keep)]
    trip.vals = [v[k] for v, k in zip(trip.vals, keep)]
    trip.add([g0], [ar[co.neg.phis][0]], [1.0])
    return res, trip.matrix(n, scale)


def _unknown_scale(co: _Coeffs, lay: _Layout) -> np.ndarray:
    s = np.empty(lay.size)
    s[lay.cs_neg] = co.neg.cmax
    s[lay.cs_pos] = co.pos.cmax
    s[lay.ce] = co.ce0
    s[lay.phis_neg] = co.vt
    s[lay.phis_pos] = co.vt
    s[lay.phie] = co.vt
    s[lay.j_neg] = co.neg.j_ref
    s[lay.j_pos] = co.pos.j_ref
    return s


def _check_finite(*states: DfnState) -> None:
    for st in states:
        for arr in (st.cs_neg, st.cs_pos, st.ce, st.phis_neg, st.phis_pos, st.phie, st.j_neg, st.j_pos):
            if not np.all(np.isfinite(arr)):
                raise EvaluationError("DFN state contains non-finite values")


def dfn_residual(state: DfnState, params: CellParams, mesh: DfnMesh, i_app: float, dt: float, prev: DfnState) -> np.ndarray:
    """Scaled residual vector of the backward-Euler DFN system."""
    _check_finite(state, prev)
    if state.ce.size != prev.ce.size or state.cs_neg.shape != prev.cs_neg.shape:
        raise DomainError("state and prev are on different meshes")
    lay = _layout(mesh)
    co = _coefficients(params, mesh, state.eps_pos_true)
    res, _ = _assemble(lay.pack(state), lay.pack(prev), co, lay, i_app, dt, jacobian=False)
    return res


def dfn_jacobian(state: DfnState, params: CellParams, mesh: DfnMesh, i_app: float, dt: float, prev: DfnState) -> sp.csc_matrix:
    """Analytic sparse Jacobian of ``dfn_residual`` with respect to the packed unknowns."""
    _check_finite(state, prev)
    lay = _layout(mesh)
    co = _coefficients(params, mesh, state.eps_pos_true)
    return _assemble(lay.pack(state), lay.pack(prev), co, lay, i_app, dt)[1]


def pack_state(state: DfnState, mesh: DfnMesh) -> np.ndarray:
    return _layout(mesh).pack(state)


def unpack_state(x: np.ndarray, mesh: DfnMesh, like: DfnState) -> DfnState:
    return _layout(mesh).unpack(x, like, like.time)


def unknown_scale(params: CellParams, mesh: DfnMesh, eps_pos: float) -> np.ndarray:
    return _unknown_scale(_coefficients(params, mesh, eps_pos), _layout(mesh))


# ---------------------- Newton ----------------------


class _Diverged(Exception):
    def __init__(self, norm: float, saturated: str = ""):
        super().__init__(norm)
        self.norm = norm
        self.saturated = saturated


def _saturated_side(x, co: _Coeffs, lay: _Layout) -> str:
    if np.any(x[lay.ce] <= 0.0):
        return "electrolyte"
    for side in (co.neg, co.pos):
        cs = x[side.cs].reshape(side.dx.size, lay.n_r)
        c_surf, _ = _surface(side, cs, x[side.j])
        if np.any(cs < 0.0) or np.any(cs > side.cmax) or np.any(c_surf <= 0.0) or np.any(c_surf >= side.cmax):
            return side.name
    return ""


def _newton(x0, x_prev, co, lay, i_app, dt, settings: NewtonSettings):
    x = x0.copy()
    xs = _unknown_scale(co, lay)
    norm = np.inf
    for it in range(settings.max_iter):
        try:
            res, jac = _assemble(x, x_prev, co, lay, i_app, dt)
        except EvaluationError as exc:
            raise _Diverged(norm, _saturated_side(x, co, lay)) from exc
        norm = float(np.max(np.abs(res)))
        LOGGER.debug("newton it=%d dt=%.4g I=%.5g |R|=%.3e", it, dt, i_app, norm)
        if not np.isfinite(norm):
            raise _Diverged(norm)
        try:
            lu = splu(jac)
        except RuntimeError as exc:  # singular factor
            raise _Diverged(norm) from exc
        step = lu.solve(-res)
        if norm < settings.tol:
            # one chord correction with the factor already at hand
            cand = x + step
            if not _saturated_side(cand, co, lay):
                x = cand
            return x, it + 1
        lam = 1.0
        for _ in range(30):
            cand = x + lam * step
            if not _saturated_side(cand, co, lay):
                break
            lam *= 0.5
        else:
            raise _Diverged(norm, _saturated_side(x + step, co, lay))
        x = cand
        if lam == 1.0 and float(np.max(np.abs(step) / xs)) < settings.step_tol:
            return x, it + 1
    raise _Diverged(norm, _saturated_side(x + step, co, lay))


def _advance(state, params, mesh, co, lay, i_app, dt, settings, depth):
    x_prev = lay.pack(state)
    try:
        x, iters = _newton(x_prev, x_prev, co, lay, i_app, dt, settings)
    except _Diverged as exc:
        if depth >= settings.max_halvings:
            if exc.saturated:
                raise SaturationError(exc.saturated) from None
            raise SolverError(exc.norm) from None
        LOGGER.warning("DFN step diverged at dt=%.4g s (|R|=%.3e); halving", dt, exc.norm)
        half = _advance(state, params, mesh, co, lay, i_app, 0.5 * dt, settings, depth + 1)
        return _advance(half, params, mesh, co, lay, i_app, 0.5 * dt, settings, depth + 1)
    side = _saturated_side(x, co, lay)
    if side:
        raise SaturationError(side)
    return lay.unpack(x, state, state.time + dt)


def dfn_step(
    state: DfnState,
    params: CellParams,
    mesh: DfnMesh,
    i_app: float,
    dt: float,
    settings: Optional[NewtonSettings] = None,
) -> DfnState:
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    settings = settings or NewtonSettings()
    lay = _layout(mesh)
    co = _coefficients(params, mesh, state.eps_pos_true)
    return _advance(state, params, mesh, co, lay, i_app, dt, settings, 0)


# ---------------------- init / outputs ----------------------


def dfn_init(params: CellParams, mesh: DfnMesh, soc: float, eps_pos: float) -> DfnState:
    check_soc(soc)
    check_eps(eps_pos)
    x_neg = stoich_at_soc(params, "negative", soc)
    y_pos = stoich_at_soc(params, "positive", soc)
    u_neg = float(ocp_curve(params, "negative").value(x_neg))
    u_pos = float(ocp_curve(params, "positive").value(y_pos))
    return DfnState(
        cs_neg=np.full((mesh.n_neg, mesh.n_r), x_neg * params.negative.max_concentration),
        cs_pos=np.full((mesh.n_pos, mesh.n_r), y_pos * params.positive.max_concentration),
        ce=np.full(mesh.n_e, params.electrolyte.initial_concentration),
        phis_neg=np.zeros(mesh.n_neg),
        phis_pos=np.full(mesh.n_pos, (-u_neg) + u_pos),
        phie=np.full(mesh.n_e, -u_neg),
        j_neg=np.zeros(mesh.n_neg),
        j_pos=np.zeros(mesh.n_pos),
        eps_pos_true=float(eps_pos),
        time=0.0,
    )


def with_eps(state: DfnState, eps_pos: float) -> DfnState:
    check_eps(eps_pos)
    return replace(state, eps_pos_true=float(eps_pos))


def dfn_voltage(state: DfnState, params: CellParams, i_app: float) -> float:
    """Terminal voltage from the collector-face solid potentials plus the contact drop.

    Face potentials are extrapolated half a cell from the outer nodes using the
    collector current density -i_app/A_surf.

    Sign convention: i_app > 0 is charge, so the contact term +R_cc/A * i_app
    raises the voltage on charge and the kinetic signs follow j > 0 for
    deintercalation. Do not flip these to a discharge-positive reading.
    """
    area = params.geometry.plate_area
    i_surf = i_app / area
    dx_neg = params.thickness("negative") / state.phis_neg.size
    dx_pos = params.thickness("positive") / state.phis_pos.size
    sigma_neg = params.negative.active_fraction * params.negative.conductivity
    sigma_pos = state.eps_pos_true * params.positive.conductivity
    phi_0 = state.phis_neg[0] - 0.5 * dx_neg * i_surf / sigma_neg
    phi_l = state.phis_pos[-1] + 0.5 * dx_pos * i_surf / sigma_pos
    return float(phi_l - phi_0 + params.resistances.contact / area * i_app)


def surface_stoich(state: DfnState, params: CellParams) -> Tuple[np.ndarray, np.ndarray]:
    """Per-node particle-surface stoichiometry of each electrode."""
    out = []
    for cs, j, e in ((state.cs_neg, state.j_neg, params.negative), (state.cs_pos, state.j_pos, params.positive)):
        eps = e.active_fraction if e is params.negative else state.eps_pos_true
        a_s = 3.0 * eps / e.particle_radius
        h = 0.5 * (e.particle_radius / cs.shape[1]) / (e.diffusivity * a_s)
        out.append((cs[:, -1] - h * j) / e.max_concentration)
    return out[0], out[1]


def lithium_inventory(state: DfnState, params: CellParams, mesh: DfnMesh) -> Tuple[float, float, float]:
    """Moles of lithium in (negative solid, positive solid, electrolyte)."""
    w = RadialGrid(1.0, mesh.n_r).weights
    vol_neg = mesh.volumes[mesh.neg] * params.negative.active_fraction
    vol_pos = mesh.volumes[mesh.pos] * state.eps_pos_true
    regions = ("negative",) * mesh.n_neg + ("separator",) * mesh.n_sep + ("positive",) * mesh.n_pos
    eps_e = np.array([params.porosity(r) for r in regions])
    return (
        float(vol_neg @ (state.cs_neg @ w)),
        float(vol_pos @ (state.cs_pos @ w)),
        float((eps_e * mesh.volumes) @ state.ce),
    )


def current_balance(state: DfnState, params: CellParams, mesh: DfnMesh) -> Tuple[float, float]:
    """A_surf * integral of F*j over each electrode (A); equals (-i_app, +i_app) when converged."""
    F = params.constants.faraday
    area = params.geometry.plate_area
    return (
        float(area * F * (state.j_neg @ mesh.dx[mesh.neg])),
        float(area * F * (state.j_pos @ mesh.dx[mesh.pos])),
    )


def mean_stoich(state: DfnState, params: CellParams, mesh: DfnMesh) -> Tuple[float, float]:
    """Electrode-averaged particle stoichiometry (negative, positive)."""
    w = RadialGrid(1.0, mesh.n_r).weights
    dn = mesh.dx[mesh.neg]
    dp = mesh.dx[mesh.pos]
    neg = float(dn @ (state.cs_neg @ w) / dn.sum() / params.negative.max_concentration)
    pos = float(dp @ (state.cs_pos @ w) / dp.sum() / params.positive.max_concentration)
    return neg, pos
