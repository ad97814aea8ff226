import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forcedbalance.core import DesignError
from forcedbalance.toy import (
    ToyConfig,
    toy_build,
    toy_enumerate_check,
    toy_eta,
    toy_table1,
)

REFERENCE = (0.53, 1.80, 0.58, 0.00, 3.00, 0.75)


def test_reference_configuration():
    cfg = ToyConfig(m=3, a=1.5, delta=1.0)
    formula = toy_table1(cfg).as_tuple()
    oracle = toy_enumerate_check(cfg).as_tuple()
    np.testing.assert_allclose(formula, REFERENCE, atol=0.005)
    np.testing.assert_allclose(formula, oracle, atol=1e-10)
    np.testing.assert_allclose(formula, (8 / 15, 1.8, 7 / 12, 0.0, 3.0, 0.75), atol=1e-12)


def test_build_layout():
    X, z, pairs = toy_build(ToyConfig(m=3, a=2.0, delta=1.0))
    np.testing.assert_array_equal(X[:, 0], [-1, -1, 0, 0, 1, 1])
    np.testing.assert_array_equal(z, [2, -2, 2, -2, 2, -2])
    assert pairs == ((0, 1), (2, 3), (4, 5))
    assert X[:, 0].sum() == 0 and z.sum() == 0


def test_eta_reference():
    cfg = ToyConfig(m=3, a=1.5, delta=1.0)
    assert toy_eta(cfg) == pytest.approx(math.sqrt(8 / 12) / 1.5)
    assert toy_eta(cfg) ** 2 == pytest.approx(8 / 27)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.floats(0.01, 100), st.floats(0, 100))
def test_eta_matches_std_ratio(m, a, delta):
    cfg = ToyConfig(m=m, a=a, delta=delta)
    X, z, _ = toy_build(cfg)
    assert toy_eta(cfg, check=False) == pytest.approx(np.std(X[:, 0]) / np.std(z), rel=1e-10,
                                                      abs=1e-14)


@pytest.mark.parametrize("m", [2, 4, 7])
def test_from_eta_round_trip(m):
    cfg = ToyConfig.from_eta(m, 1.3, 0.42)
    assert toy_eta(cfg) == pytest.approx(0.42, rel=1e-12)


@pytest.mark.parametrize("m", [2, 3, 5, 8])
@pytest.mark.parametrize("a", [0.5, 3.0])
def test_delta_zero_leaves_only_unobserved(m, a):
    t = toy_table1(ToyConfig(m=m, a=a, delta=0.0))
    assert t.crfb_observed == 0.0
    assert t.crfb_mse == pytest.approx(a * a / (2 * m - 1))
    o = toy_enumerate_check(ToyConfig(m=m, a=a, delta=0.0))
    assert o.crfb_observed == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("m", [2, 3, 4, 6])
def test_unobserved_ratio(m):
    t = toy_table1(ToyConfig(m=m, a=1.0, delta=1.0))
    # matching packs the whole unobserved spread into the estimator
    assert t.matching_unobserved / t.crfb_unobserved == pytest.approx((2 * m - 1) / m)


@pytest.mark.parametrize("m", [3, 5])
def test_crossover(m):
    threshold = math.sqrt((m - 1) / m)
    for eta in (0.5 * threshold, 0.95 * threshold, 1.05 * threshold, 2 * threshold):
        t = toy_enumerate_check(ToyConfig.from_eta(m, 1.0, eta))
        assert (t.crfb_mse < t.matching_mse) == (eta < threshold)
    at = toy_table1(ToyConfig.from_eta(m, 1.0, threshold))
    assert at.crfb_mse == pytest.approx(at.matching_mse, rel=1e-12)


def test_beta_invariance():
    cfg = ToyConfig(m=4, a=0.7, delta=1.3)
    a = toy_enumerate_check(cfg, beta_T=0.0).as_tuple()
    b = toy_enumerate_check(cfg, beta_T=-5.0).as_tuple()
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(m=3, a=0.0, delta=1.0), dict(m=1, a=1.0, delta=1.0),
                                    dict(m=3, a=1.0, delta=-1.0), dict(m=2.5, a=1.0, delta=1.0)])
def test_invalid(kwargs):
    with pytest.raises(DesignError):
        ToyConfig(**kwargs)


def test_enumeration_cap():
    with pytest.raises(DesignError, match="cap"):
        toy_enumerate_check(ToyConfig(m=13, a=1.0, delta=1.0))
