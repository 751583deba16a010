import numpy as np
import pytest

from packages.engines import spm
from packages.engines.cellparams import ocp, stoich_at_soc
from packages.engines.errors import DomainError, KineticsError, SaturationError

# surface stoichiometry change when the shell count doubles (10 -> 20) after 10 min at 1C
SHELL_REFINEMENT_BOUND = 0.01


def _inventory(state, params):
    return spm.total_lithium(state, params, "negative") + spm.total_lithium(state, params, "positive")


class TestRadialGrid:
    def test_weights_sum_to_one(self, params):
        grid = spm.radial_grid(params, "positive", 12)
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-14)

    def test_too_few_shells(self, params):
        with pytest.raises(DomainError):
            spm.radial_grid(params, "negative", 3)

    def test_uniform_profile_is_steady_without_flux(self, params):
        grid = spm.radial_grid(params, "negative", 10)
        conc = np.full(10, 12345.0)
        out = spm.diffuse_shells(grid, params.negative.diffusivity, conc, 0.0, 100.0)
        np.testing.assert_allclose(out, conc, rtol=1e-14)

    def test_batched_matches_single(self, params):
        grid = spm.radial_grid(params, "positive", 8)
        rng = np.random.default_rng(3)
        conc = rng.uniform(1e4, 5e4, size=(3, 8))
        flux = np.array([1e-6, -2e-6, 0.0])
        batch = spm.diffuse_shells(grid, params.positive.diffusivity, conc, flux, 5.0)
        for k in range(3):
            single = spm.diffuse_shells(grid, params.positive.diffusivity, conc[k], flux[k], 5.0)
            np.testing.assert_allclose(batch[k], single, rtol=1e-13)


class TestSpm:
    @pytest.mark.parametrize("soc", [0.0, 0.35, 0.8, 1.0])
    def test_open_circuit_voltage(self, params, soc):
        state = spm.spm_init(params, soc, params.positive.active_fraction)
        expected = ocp(params, "positive", stoich_at_soc(params, "positive", soc)) - ocp(
            params, "negative", stoich_at_soc(params, "negative", soc)
        )
        assert spm.spm_voltage(state, params, 0.0) == pytest.approx(expected, abs=1e-9)

    def test_zero_current_conserves_lithium(self, params):
        state = spm.spm_init(params, 0.4, 0.6)
        start = _inventory(state, params)
        for _ in range(200):
            state = spm.spm_step(state, params, 0.0, 10.0)
        assert abs(_inventory(state, params) - start) / start < 1e-10

    def test_charging_conserves_lithium(self, params):
        state = spm.spm_init(params, 0.1, params.positive.active_fraction)
        start = _inventory(state, params)
        for _ in range(1000):
            state = spm.spm_step(state, params, params.one_c_current, 1.0)
        assert abs(_inventory(state, params) - start) / start < 1e-8

    def test_charging_moves_lithium_to_negative(self, params):
        state = spm.spm_init(params, 0.2, params.positive.active_fraction)
        before = spm.total_lithium(state, params, "negative")
        dt, n = 10.0, 60
        for _ in range(n):
            state = spm.spm_step(state, params, params.one_c_current, dt)
        moved = spm.total_lithium(state, params, "negative") - before
        assert moved == pytest.approx(params.one_c_current * dt * n / params.constants.faraday, rel=1e-10)
        assert spm.mean_stoich(state, params, "negative") > stoich_at_soc(params, "negative", 0.2)

    def test_voltage_rises_with_charge_current(self, params):
        state = spm.spm_init(params, 0.5, params.positive.active_fraction)
        volts = [spm.spm_voltage(state, params, i) for i in (0.0, 2.5, 5.0, 10.0)]
        assert np.all(np.diff(volts) > 0)

    def test_overpotential_is_odd_in_current(self, params):
        c_neg = 0.5 * params.negative.max_concentration
        c_pos = 0.5 * params.positive.max_concentration
        eps = params.positive.active_fraction
        v0 = spm.voltage_from_surface(params, c_neg, c_pos, eps, 0.0)
        for i_app in (0.5, 5.0, 15.0):
            up = spm.voltage_from_surface(params, c_neg, c_pos, eps, i_app) - v0
            down = spm.voltage_from_surface(params, c_neg, c_pos, eps, -i_app) - v0
            assert up == pytest.approx(-down, abs=1e-12)

    def test_lower_eps_raises_charging_voltage(self, params):
        fresh = spm.spm_init(params, 0.3, 0.665)
        aged = spm.spm_init(params, 0.3, 0.5)
        for _ in range(60):
            fresh = spm.spm_step(fresh, params, 7.5, 10.0)
            aged = spm.spm_step(aged, params, 7.5, 10.0)
        assert spm.spm_voltage(aged, params, 7.5) > spm.spm_voltage(fresh, params, 7.5)

    def test_overcharge_saturates(self, params):
        state = spm.spm_init(params, 0.9, params.positive.active_fraction)
        with pytest.raises(SaturationError):
            for _ in range(2000):
                state = spm.spm_step(state, params, 3.0 * params.one_c_current, 10.0)

    def test_kinetics_at_bound(self, params):
        with pytest.raises(KineticsError):
            spm.voltage_from_surface(params, 0.0, 30000.0, 0.665, 1.0)

    @pytest.mark.parametrize("soc, eps", [(-0.1, 0.6), (1.1, 0.6), (0.5, 0.0)])
    def test_init_domain(self, params, soc, eps):
        with pytest.raises(DomainError):
            spm.spm_init(params, soc, eps)

    def test_bad_dt(self, params):
        with pytest.raises(DomainError):
            spm.spm_step(spm.spm_init(params, 0.5, 0.6), params, 1.0, 0.0)


def _surface_stoich_after_charge(params, n_shells, dt, seconds=600.0):
    i_app = params.one_c_current
    state = spm.spm_init(params, 0.2, params.positive.active_fraction, n_shells)
    for _ in range(int(round(seconds / dt))):
        state = spm.spm_step(state, params, i_app, dt)
    neg, pos = spm.surface_concentrations(state, params, i_app)
    return np.array([neg / params.negative.max_concentration, pos / params.positive.max_concentration])


class TestConvergence:
    def test_halving_dt_shrinks_the_change(self, params):
        coarse, mid, fine = (_surface_stoich_after_charge(params, 10, dt) for dt in (20.0, 10.0, 5.0))
        first = np.abs(mid - coarse)
        second = np.abs(fine - mid)
        assert np.all(second < 0.75 * first)
        assert np.all(second < 5e-3)

    def test_doubling_shells(self, params):
        base = _surface_stoich_after_charge(params, 10, 10.0)
        refined = _surface_stoich_after_charge(params, 20, 10.0)
        assert np.all(np.abs(refined - base) < SHELL_REFINEMENT_BOUND)
