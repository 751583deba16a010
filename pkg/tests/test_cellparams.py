import json

import numpy as np
import pytest

from packages.engines.cellparams import (
    DEFAULT_PARAMS,
    load_params,
    ocp,
    parse_params,
    serialize_params,
    soc_from_stoich,
    stoich_at_soc,
)
from packages.engines.errors import DomainError, ParamsSchemaError, ParamsValidationError


def _raw():
    return json.loads(DEFAULT_PARAMS.read_text(encoding="utf-8"))


class TestLoadParams:
    def test_shipped_default(self, params):
        assert params.positive.active_fraction == 0.665
        assert params.capacity.nominal_ah == 5.0
        assert params.constants.temperature == 298.15

    def test_bound_violation_names_field(self):
        data = _raw()
        data["positive"]["active_fraction"] = 1.2
        with pytest.raises(ParamsValidationError) as err:
            parse_params(data)
        assert err.value.field == "positive.active_fraction"
        assert "<" in err.value.bound

    def test_missing_field_names_field(self):
        data = _raw()
        del data["positive"]["diffusivity"]
        with pytest.raises(ParamsSchemaError) as err:
            parse_params(data)
        assert err.value.field == "positive.diffusivity"

    def test_unknown_field_rejected(self):
        data = _raw()
        data["geometry"]["thickness_extra"] = 1.0
        with pytest.raises(ParamsSchemaError):
            parse_params(data)

    def test_non_monotone_ocp_rejected(self):
        data = _raw()
        data["positive"]["ocp"][50][1] = 5.0
        with pytest.raises(ParamsValidationError) as err:
            parse_params(data)
        assert err.value.field.startswith("positive.ocp")

    def test_rise_across_window_edge_rejected(self):
        data = _raw()
        # only one knot inside [0.01, 0.99]; the rising segment starts below the window
        data["positive"]["ocp"] = [[0.0, 4.2], [0.005, 4.0], [0.5, 4.1], [1.0, 3.0]]
        with pytest.raises(ParamsValidationError) as err:
            parse_params(data)
        assert err.value.field.startswith("positive.ocp")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_params(tmp_path / "nope.json")

    def test_round_trip(self, params, tmp_path):
        path = tmp_path / "cell.json"
        path.write_text(serialize_params(params), encoding="utf-8")
        assert load_params(path) == params


class TestOcp:
    @pytest.mark.parametrize("electrode", ["negative", "positive"])
    def test_strictly_decreasing(self, params, electrode):
        s = np.linspace(0.01, 0.98, 400)
        assert np.all(ocp(params, electrode, s) > ocp(params, electrode, s + 0.01))

    def test_negative_midpoint_is_table_value(self, params):
        assert ocp(params, "negative", 0.5) == 0.128086

    @pytest.mark.parametrize("electrode", ["negative", "positive"])
    def test_exact_at_knots(self, params, electrode):
        for s, v in params.electrode(electrode).ocp:
            assert ocp(params, electrode, s) == v

    def test_bounded_by_neighbouring_knots(self, params):
        knots = np.array(params.positive.ocp)
        mids = 0.5 * (knots[1:, 0] + knots[:-1, 0])
        vals = ocp(params, "positive", mids)
        assert np.all(vals <= knots[:-1, 1]) and np.all(vals >= knots[1:, 1])

    @pytest.mark.parametrize("s", [-0.01, 1.01, float("nan")])
    def test_outside_domain(self, params, s):
        with pytest.raises(DomainError):
            ocp(params, "positive", s)

    def test_window_covers_voltage_limits(self, params):
        for soc, lo, hi in ((0.0, 2.45, 2.6), (1.0, 4.15, 4.25)):
            v = ocp(params, "positive", stoich_at_soc(params, "positive", soc)) - ocp(
                params, "negative", stoich_at_soc(params, "negative", soc)
            )
            assert lo < v < hi

    def test_soc_stoich_inverse(self, params):
        for soc in (0.0, 0.3, 1.0):
            assert soc_from_stoich(params, "negative", stoich_at_soc(params, "negative", soc)) == pytest.approx(soc)
