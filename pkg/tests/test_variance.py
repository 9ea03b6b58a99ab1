import json
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from smallarea.adjustment import NO_ADJUSTMENT
from smallarea.exceptions import DomainError, TooFewAreasError
from smallarea.model import Dataset, LikelihoodKind
from smallarea.mse import factor_from_c
from smallarea.variance import (
    VarianceMethod,
    default_a_max,
    estimate_per_area,
    estimate_variance,
    existence_bound,
    make_objective,
)

FROZEN = json.loads((Path(__file__).parent / "data" / "nre_oracle.json").read_text())["nre"]


def balanced(seed, m=15, a=1.0):
    X, y, d = oracles.seeded_balanced(seed, m=m, a=a)
    return Dataset.from_arrays(X, y, d)


def closed_forms(data):
    S = float(np.sum((data.y - data.y.mean()) ** 2))
    return max(0.0, S / (data.m - 1) - 1.0), max(0.0, S / data.m - 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_reml_pml_closed_form(seed):
    data = balanced(seed, a=0.3)
    reml, pml = closed_forms(data)
    assert estimate_variance(data, "reml").a_hat == pytest.approx(reml, abs=1e-6)
    assert estimate_variance(data, "pml").a_hat == pytest.approx(pml, abs=1e-6)


def test_reml_boundary_flags():
    data = Dataset.from_arrays(np.ones((6, 1)), [0.0, 0.1, -0.1, 0.05, 0.0, -0.05], np.ones(6))
    est = estimate_variance(data, "reml")
    assert est.a_hat == 0.0 and est.at_lower_boundary and not est.at_upper_boundary


@pytest.mark.parametrize("record", FROZEN[:3], ids=lambda r: f"seed{r['seed']}")
def test_nre_matches_frozen_grid_oracle(record):
    data = Dataset.from_arrays(np.ones((15, 1)), record["y"], np.ones(15))
    est = estimate_variance(data, VarianceMethod.nre(0))
    assert est.a_hat > 0
    assert est.a_hat == pytest.approx(record["a_hat"], abs=1e-5)


def test_nre_objective_matches_dense():
    data = balanced(42)
    scalar, vector = make_objective(data, LikelihoodKind.RESIDUAL, VarianceMethod.nre(0).build_factor(data))
    for a in (0.05, 1.0, 7.0):
        assert scalar(a) == pytest.approx(oracles.nre_objective(a, data.X, data.y, data.d, 0), abs=1e-10)


def test_nre_needs_enough_areas():
    data = balanced(0, m=5)
    with pytest.raises(TooFewAreasError) as info:
        estimate_variance(data, VarianceMethod.nre(0))
    assert info.value.required == 6
    with pytest.warns(UserWarning):
        estimate_variance(data, VarianceMethod.nre(0), a_max=1e4)


def test_custom_c2_reproduces_reml():
    for seed in range(5):
        data = balanced(seed)
        reml = estimate_variance(data, "reml")
        custom = estimate_variance(data, VarianceMethod.custom(NO_ADJUSTMENT))
        assert custom.a_hat == pytest.approx(reml.a_hat, abs=1e-7)
        custom2 = estimate_variance(data, VarianceMethod.custom(factor_from_c(2.0, 1.0)))
        assert custom2.a_hat == reml.a_hat


def test_per_area_groups_equal_variances():
    rng = np.random.default_rng(1)
    d = np.array([1.0, 2.0] * 6)
    data = Dataset.from_arrays(np.ones((12, 1)), rng.normal(0, 1.5, 12), d)
    est = estimate_per_area(data, VarianceMethod.nre(0))
    assert [e.method.area for e in est] == list(range(12))
    a = np.array([e.a_hat for e in est])
    assert np.all(a[::2] == a[0]) and np.all(a[1::2] == a[1]) and a[0] != a[1]
    direct = estimate_variance(data, VarianceMethod.nre(1))
    assert direct.a_hat == a[1]


def test_deterministic_bitwise():
    data = balanced(9)
    for name in ("reml", "ll", "yl"):
        assert estimate_variance(data, name) == estimate_variance(data, name)


def test_default_a_max():
    data = balanced(0)
    assert default_a_max(data) == 1e4
    big = data.with_y(data.y * 100)
    assert default_a_max(big) == pytest.approx(100 * (np.var(big.y, ddof=1) + 1.0))


def test_unknown_method():
    with pytest.raises(ValueError):
        VarianceMethod.from_name("fh")


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.sampled_from([0.01, 0.1, 1.0, 9.0]), m=st.integers(6, 30))
def test_adjusted_estimates_positive(seed, a, m):
    data = balanced(seed, m=m, a=a)
    for method in (VarianceMethod.ll(), VarianceMethod.yl(), VarianceMethod.nre(0)):
        assert estimate_variance(data, method).a_hat > 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_global_maximum_sanity(seed):
    data = balanced(seed, a=0.5)
    rng = np.random.default_rng(seed)
    for method in (VarianceMethod.reml(), VarianceMethod.nre(0)):
        est = estimate_variance(data, method)
        scalar, vector = make_objective(data, method.kind, method.build_factor(data))
        probes = rng.uniform(0, est.a_max, 1024)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert np.all(est.objective_at_max >= vector(probes) - 1e-12)
        assert est.objective_at_max == pytest.approx(scalar(est.a_hat))


class TestExistenceBound:
    def test_c0(self):
        assert existence_bound(6, 1, 0.0)["m_min"] == 6
        assert existence_bound(5, 1, 0.0)["satisfied"] is False

    def test_c2(self):
        assert existence_bound(2, 1, 2.0)["m_min"] == 2

    def test_c1(self):
        res = existence_bound(10, 1, 1.0)
        assert res["m_min"] == 4 and res["conservative_m_min"] == 6 and res["satisfied"]

    def test_fractional_c(self):
        # m - p > 4 - 2c = 3.5
        assert existence_bound(5, 1, 0.25)["m_min"] == 5

    @pytest.mark.parametrize("c", [-0.1, 2.5])
    def test_domain(self, c):
        with pytest.raises(DomainError):
            existence_bound(10, 1, c)
