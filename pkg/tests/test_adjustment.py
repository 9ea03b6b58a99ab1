import json
import math
from pathlib import Path

import numpy as np
import pytest

from smallarea.adjustment import (
    NO_ADJUSTMENT,
    AdjustmentFactor,
    default_grid,
    factor_ll,
    factor_nre,
    factor_yl,
    validate_factor,
)
from smallarea.exceptions import InvalidAdditionalFactorError
from smallarea.model import Dataset

FROZEN = json.loads((Path(__file__).parent / "data" / "nre_oracle.json").read_text())["scalars"]


@pytest.fixture
def balanced15():
    return Dataset.from_arrays(np.ones((15, 1)), np.linspace(-1, 1, 15), np.ones(15))


def test_ll_values():
    f = factor_ll()
    assert f.log_h(1.0) == 0.0
    assert f.log_h(math.e) == pytest.approx(1.0)
    assert f.vanishes_at_zero and f.is_global
    assert f.log_h(0.0) == -math.inf


def test_yl_values(balanced15):
    f = factor_yl(balanced15)
    assert f.log_h(0.0) == -math.inf
    assert f.log_h(1.0) == pytest.approx(FROZEN["yl_log_at_1"], rel=1e-12)
    assert f.log_h(1.0) == pytest.approx(0.02424, abs=2e-5)
    # the ratio sum tends to m, so the factor is bounded by log(arctan m) / m
    assert f.log_h(1e12) == pytest.approx(math.log(math.atan(15)) / 15, rel=1e-9)
    assert f.log_h(1e12) < math.log(math.atan(15)) / 15


def test_yl_vectorized(balanced15):
    f = factor_yl(balanced15)
    grid = np.array([0.0, 0.5, 1.0, 8.0])
    np.testing.assert_allclose(f.log_h(grid), [f.log_h(float(a)) for a in grid])


def test_nre_value(balanced15):
    f = factor_nre(3, balanced15)
    assert f.log_h(1.0) == pytest.approx(FROZEN["nre_log_at_1"], rel=1e-12)
    assert f.log_h(1.0) == pytest.approx(1.41053, abs=2e-5)
    assert f.log_h(0.0) == -math.inf
    assert f.area == 3 and f.vanishes_at_zero
    assert f.base_log_h(1.0) == pytest.approx(2 * math.log(2.0))


def test_nre_rejects_non_vanishing_addition(balanced15):
    with pytest.raises(InvalidAdditionalFactorError):
        factor_nre(0, balanced15, NO_ADJUSTMENT)


def test_nre_bad_index(balanced15):
    with pytest.raises(IndexError):
        factor_nre(15, balanced15)


class TestValidateFactor:
    def test_ll_satisfies_a1(self):
        rep = validate_factor(factor_ll(), np.logspace(-3, 3, 30), "A1")
        assert rep.passed()

    def test_ll_fails_a2_and_a3(self):
        rep = validate_factor(factor_ll(), default_grid(), ("A2", "A3"))
        assert rep.get("small_for_large_m").status == "fail"
        assert rep.get("bounded").status == "fail"

    def test_yl_satisfies_a2_a3(self, balanced15):
        rep = validate_factor(factor_yl(balanced15), default_grid(), ("A2", "A3"))
        assert rep.passed(), rep.summary()

    def test_convex_factor_flagged(self):
        f = AdjustmentFactor(lambda a: np.asarray(a) ** 2, "square")
        rep = validate_factor(f, np.linspace(0.1, 5, 20), "A1")
        check = rep.get("concave")
        assert check.status == "fail" and check.a is not None

    def test_constant_factor_fails_a3(self):
        rep = validate_factor(NO_ADJUSTMENT, default_grid(), "A3")
        assert rep.get("increasing").status == "fail"
        assert rep.get("vanishes_at_zero").status == "fail"

    def test_a2_without_family_is_skipped(self):
        f = AdjustmentFactor(lambda a: -1.0 / np.asarray(a), "inv", vanishes_at_zero=True)
        rep = validate_factor(f, default_grid(), "A2")
        assert rep.get("small_for_large_m").status == "skipped"
        assert rep.passed(allow_skipped=True) and not rep.passed()

    def test_vanishing_checked_near_zero(self, balanced15):
        f = factor_yl(balanced15)
        assert f.log_h(1e-12) < f.log_h(1e-6) < f.log_h(1e-3)

    @pytest.mark.parametrize("grid", [np.linspace(1, 2, 5), np.linspace(-1, 1, 20), np.ones(12)])
    def test_bad_grid(self, grid):
        with pytest.raises(ValueError):
            validate_factor(factor_ll(), grid)
