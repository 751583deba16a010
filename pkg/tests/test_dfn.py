from dataclasses import replace

import numpy as np
import pytest

from packages.engines import dfn, spm
from packages.engines.cellparams import ocp, stoich_at_soc
from packages.engines.errors import DomainError, SaturationError

# end-of-charge voltage change when the nodes per region double (5 -> 10)
MESH_REFINEMENT_BOUND = 0.010  # V


def _total(state, params, mesh):
    neg, pos, _ = dfn.lithium_inventory(state, params, mesh)
    return neg + pos


class TestMesh:
    def test_regions_tile_the_cell(self, params, coarse_mesh):
        assert coarse_mesh.dx.sum() == pytest.approx(params.total_thickness, rel=1e-14)
        assert coarse_mesh.n_e == 15
        assert coarse_mesh.dx[coarse_mesh.sep].sum() == pytest.approx(params.thickness("separator"))

    def test_minimum_resolution(self, params):
        with pytest.raises(DomainError):
            dfn.dfn_mesh(params, n_x=4)
        with pytest.raises(DomainError):
            dfn.dfn_mesh(params, n_r=3)


class TestEquilibrium:
    @pytest.mark.parametrize("soc", [0.0, 0.5, 1.0])
    def test_open_circuit_voltage(self, params, coarse_mesh, soc):
        state = dfn.dfn_init(params, coarse_mesh, soc, params.positive.active_fraction)
        expected = ocp(params, "positive", stoich_at_soc(params, "positive", soc)) - ocp(
            params, "negative", stoich_at_soc(params, "negative", soc)
        )
        assert dfn.dfn_voltage(state, params, 0.0) == pytest.approx(expected, abs=1e-9)

    def test_rest_keeps_equilibrium(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.6, 0.6)
        v0 = dfn.dfn_voltage(state, params, 0.0)
        start = _total(state, params, coarse_mesh)
        for _ in range(20):
            state = dfn.dfn_step(state, params, coarse_mesh, 0.0, 60.0)
        assert dfn.dfn_voltage(state, params, 0.0) == pytest.approx(v0, abs=1e-9)
        assert abs(_total(state, params, coarse_mesh) - start) / start < 1e-10

    def test_electrolyte_potential_is_flat(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.5, params.positive.active_fraction)
        assert np.ptp(state.phie) < 1e-9
        state = dfn.dfn_step(state, params, coarse_mesh, 0.0, 60.0)
        assert np.ptp(state.phie) < 1e-9

    def test_initial_residual_vanishes(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.3, params.positive.active_fraction)
        res = dfn.dfn_residual(state, params, coarse_mesh, 0.0, 1.0, state)
        assert np.max(np.abs(res)) < 1e-10


class TestConservation:
    def test_charging_conserves_lithium_and_current(self, params, coarse_mesh):
        i_app = params.one_c_current
        state = dfn.dfn_init(params, coarse_mesh, 0.1, params.positive.active_fraction)
        solid0 = _total(state, params, coarse_mesh)
        salt0 = dfn.lithium_inventory(state, params, coarse_mesh)[2]
        for _ in range(1000):
            state = dfn.dfn_step(state, params, coarse_mesh, i_app, 1.0)
            neg, pos = dfn.current_balance(state, params, coarse_mesh)
            assert neg == pytest.approx(-i_app, rel=1e-8)
            assert pos == pytest.approx(i_app, rel=1e-8)
        assert abs(_total(state, params, coarse_mesh) - solid0) / solid0 < 1e-8
        salt = dfn.lithium_inventory(state, params, coarse_mesh)[2]
        assert abs(salt - salt0) / salt0 < 1e-8

    def test_charge_transfers_lithium_to_negative(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.2, params.positive.active_fraction)
        neg0 = dfn.lithium_inventory(state, params, coarse_mesh)[0]
        for _ in range(10):
            state = dfn.dfn_step(state, params, coarse_mesh, 5.0, 30.0)
        moved = dfn.lithium_inventory(state, params, coarse_mesh)[0] - neg0
        assert moved == pytest.approx(5.0 * 300.0 / params.constants.faraday, rel=1e-7)


class TestDynamics:
    def test_low_rate_matches_spm(self, params):
        mesh = dfn.dfn_mesh(params, n_x=5, n_r=10)
        eps = params.positive.active_fraction
        i_app = params.one_c_current / 20.0
        truth = dfn.dfn_init(params, mesh, 0.2, eps)
        reduced = spm.spm_init(params, 0.2, eps, 10)
        err = []
        for _ in range(240):
            truth = dfn.dfn_step(truth, params, mesh, i_app, 60.0)
            reduced = spm.spm_step(reduced, params, i_app, 60.0)
            err.append(dfn.dfn_voltage(truth, params, i_app) - spm.spm_voltage(reduced, params, i_app))
        assert np.sqrt(np.mean(np.square(err))) < 0.020

    def test_charging_raises_voltage(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.3, params.positive.active_fraction)
        v_rest = dfn.dfn_voltage(state, params, 0.0)
        state = dfn.dfn_step(state, params, coarse_mesh, 10.0, 10.0)
        assert dfn.dfn_voltage(state, params, 10.0) > v_rest

    def test_surface_stoich_follows_charge(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.3, params.positive.active_fraction)
        neg0, pos0 = dfn.surface_stoich(state, params)
        state = dfn.dfn_step(state, params, coarse_mesh, 10.0, 60.0)
        neg1, pos1 = dfn.surface_stoich(state, params)
        assert np.all(neg1 > neg0) and np.all(pos1 < pos0)

    def test_overcharge_reports_saturation(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.5, params.positive.active_fraction)
        with pytest.raises(SaturationError):
            dfn.dfn_step(state, params, coarse_mesh, 3.0 * params.one_c_current, 7200.0)

    def test_bad_dt(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.5, 0.6)
        with pytest.raises(DomainError):
            dfn.dfn_step(state, params, coarse_mesh, 1.0, -1.0)


class TestJacobian:
    def test_matches_central_differences(self, params, coarse_mesh):
        prev = dfn.dfn_init(params, coarse_mesh, 0.5, params.positive.active_fraction)
        i_app, dt = params.one_c_current, 10.0
        state = dfn.dfn_step(prev, params, coarse_mesh, i_app, dt)
        x = dfn.pack_state(state, coarse_mesh)
        scale = dfn.unknown_scale(params, coarse_mesh, state.eps_pos_true)
        jac = dfn.dfn_jacobian(state, params, coarse_mesh, i_app, dt, prev).toarray()
        fd = np.zeros_like(jac)
        for k in range(x.size):
            h = 1e-6 * scale[k]
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            rp = dfn.dfn_residual(dfn.unpack_state(xp, coarse_mesh, state), params, coarse_mesh, i_app, dt, prev)
            rm = dfn.dfn_residual(dfn.unpack_state(xm, coarse_mesh, state), params, coarse_mesh, i_app, dt, prev)
            fd[:, k] = (rp - rm) / (2.0 * h)
        row_max = np.max(np.abs(jac), axis=1, keepdims=True)
        assert np.all(np.abs(fd - jac) <= 1e-5 * row_max + 1e-12)


class TestLocality:
    def test_electrolyte_node_touches_only_its_stencil(self, params, coarse_mesh):
        prev = dfn.dfn_init(params, coarse_mesh, 0.5, params.positive.active_fraction)
        i_app, dt = params.one_c_current, 10.0
        state = dfn.dfn_step(prev, params, coarse_mesh, i_app, dt)
        base = dfn.dfn_residual(state, params, coarse_mesh, i_app, dt, prev)
        k = 2  # interior node of the negative electrode
        ce = state.ce.copy()
        ce[k] *= 1.001
        bumped = dfn.dfn_residual(replace(state, ce=ce), params, coarse_mesh, i_app, dt, prev)
        n_r = coarse_mesh.n_r
        ce0 = (coarse_mesh.n_neg + coarse_mesh.n_pos) * n_r
        phie0 = ce0 + coarse_mesh.n_e + coarse_mesh.n_neg + coarse_mesh.n_pos
        j0 = phie0 + coarse_mesh.n_e
        stencil = {k - 1, k, k + 1}
        expected = {ce0 + m for m in stencil} | {phie0 + m for m in stencil} | {j0 + k}
        assert set(np.flatnonzero(bumped != base)) == expected


class TestTerminalVoltage:
    def test_contact_resistance_is_a_linear_term(self, params, coarse_mesh):
        state = dfn.dfn_init(params, coarse_mesh, 0.5, params.positive.active_fraction)
        i_app = params.one_c_current
        state = dfn.dfn_step(state, params, coarse_mesh, i_app, 10.0)
        r_cc = params.resistances.contact
        doubled = params.model_copy(
            update={"resistances": params.resistances.model_copy(update={"contact": 2.0 * r_cc})}
        )
        shift = dfn.dfn_voltage(state, doubled, i_app) - dfn.dfn_voltage(state, params, i_app)
        assert shift == pytest.approx(r_cc / params.geometry.plate_area * i_app, rel=1e-9)


class TestRefinement:
    @staticmethod
    def _end_of_charge(params, n_x):
        mesh = dfn.dfn_mesh(params, n_x=n_x, n_r=5)
        i_app = params.one_c_current
        state = dfn.dfn_init(params, mesh, 0.2, params.positive.active_fraction)
        for _ in range(60):
            state = dfn.dfn_step(state, params, mesh, i_app, 10.0)
        return dfn.dfn_voltage(state, params, i_app)

    def test_doubling_nodes_per_region(self, params):
        assert abs(self._end_of_charge(params, 10) - self._end_of_charge(params, 5)) < MESH_REFINEMENT_BOUND
