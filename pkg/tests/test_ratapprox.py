import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracgmrf.ratapprox import (PadeDegeneracyError, PositivityError, RepeatedPoleError, brasil,
                                calibrated_order, chebyshev_coefficients, chebyshev_pade, chebyshev_t,
                                clear_cache, default_delta, error_grid, partial_fractions,
                                rational_coefficients, sup_error, to_partial_fractions)


def test_chebyshev_recurrence():
    x = np.linspace(-1, 1, 11)
    assert np.allclose(chebyshev_t(2, x), 2 * x ** 2 - 1)
    assert np.allclose(chebyshev_t(5, x), np.cos(5 * np.arccos(x)))


def test_chebyshev_coefficients_of_identity():
    c = chebyshev_coefficients(lambda x: x, 6)
    assert c[1] == pytest.approx(1.0)
    assert np.allclose(np.delete(c, 1), 0.0, atol=1e-14)


def test_chebyshev_pade_sqrt_m2():
    # measured 0.042441 on the 1e5 grid: the branch point at 0 limits the [2/2] Chebyshev-Pade
    # approximant well above the best approximation (about 8.5e-3)
    e = sup_error(chebyshev_pade(0.5, 2))
    assert 1e-5 < e
    assert e == pytest.approx(0.042441, rel=1e-3)


def test_brasil_beats_chebyshev_pade():
    assert sup_error(brasil(0.5, 1)) <= sup_error(chebyshev_pade(0.5, 1))


@pytest.mark.parametrize("alpha", [0.2, 0.8])
def test_brasil_errors_decrease(alpha):
    errs = [sup_error(brasil(alpha, m, max_iter=500)) for m in range(1, 9)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_brasil_rate_ratio():
    e1 = sup_error(brasil(0.5, 1))
    e4 = sup_error(brasil(0.5, 4))
    predicted = math.exp(-2 * math.pi * math.sqrt(0.5) * (2 - 1))
    assert predicted / 10 <= e4 / e1 <= predicted * 10


@pytest.mark.parametrize("alpha,m", [(0.3, 2), (0.6, 3), (0.9, 1)])
def test_brasil_equioscillation(alpha, m):
    rc = brasil(alpha, m)
    assert rc.converged and rc.deviation <= 1e-4
    x = error_grid(0.0)
    err = x ** alpha - rc(x)
    # sign changes split the grid into runs; the peak of each run is one extremum
    s = np.sign(err)
    runs = np.split(np.abs(err), np.flatnonzero(np.diff(s) != 0) + 1)
    peaks = np.array([r.max() for r in runs if len(r)])
    big = peaks[peaks > 0.5 * peaks.max()]
    assert len(big) >= m + 2
    assert big.max() / big.min() - 1 <= 5e-4


def test_partial_fractions_examples():
    k, r, p = partial_fractions([0, 1], [1, 1], check_positive=False)
    assert (k, r[0], p[0]) == pytest.approx((1.0, -1.0, -1.0))
    k, r, p = partial_fractions([1, 2], [1, 1], check_positive=False)
    assert (k, r[0], p[0]) == pytest.approx((2.0, -1.0, -1.0))


def test_partial_fractions_positivity_error():
    with pytest.raises(PositivityError):
        partial_fractions([0, 1], [1, 1])


def test_repeated_pole():
    with pytest.raises(RepeatedPoleError):
        partial_fractions([1, 0, 1], [1, 2, 1], check_positive=False)


@pytest.mark.parametrize("algo", ["brasil", "chebyshev-pade"])
@pytest.mark.parametrize("alpha,m", [(0.5, 2), (0.2, 3), (0.8, 4), (0.4, 1)])
def test_partial_fraction_signs_and_reconstruction(algo, alpha, m):
    rc = brasil(alpha, m) if algo == "brasil" else chebyshev_pade(alpha, m)
    pf = to_partial_fractions(rc)
    assert len(pf.r) == m and len(pf.p) == m
    assert pf.k > 0 and np.all(pf.r > 0) and np.all(pf.p < 0)
    x = 0.5 * (1 + np.cos((2 * np.arange(1, 21) - 1) * np.pi / 40))
    ref = rc(x)
    assert np.max(np.abs(pf.at_x(x) - ref) / np.abs(ref)) < 1e-10
    lam = 1.0 / x
    assert np.allclose(pf(lam), ref, rtol=1e-10)


def test_monic_denominator():
    rc = brasil(0.5, 3)
    assert rc.b[-1] == pytest.approx(1.0)
    # denominator keeps one sign on the interval
    x = error_grid(0.0, 2000)
    q = np.polynomial.polynomial.polyval(x, rc.b)
    assert np.all(q > 0) or np.all(q < 0)


@pytest.mark.parametrize("algo", ["brasil", "chebyshev-pade"])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_delta_choice_is_negligible(algo, m):
    fn = brasil if algo == "brasil" else chebyshev_pade
    d = default_delta(m, "auto")
    e0 = sup_error(fn(0.5, m, (0.0, 1.0)))
    ed = sup_error(fn(0.5, m, (d, 1.0)))
    assert abs(e0 - ed) < e0


def test_calibrated_order():
    res = calibrated_order(0.6, 2, 0.01)
    assert res.m == 16 and res.rational
    res = calibrated_order(1.0, 2, 0.01)
    assert res.m == 0 and not res.rational


@settings(max_examples=40, deadline=None)
@given(beta=st.floats(0.55, 1.45), h1=st.floats(1e-3, 0.5), h2=st.floats(1e-3, 0.5))
def test_calibrated_order_monotone(beta, h1, h2):
    if abs(2 * beta - round(2 * beta)) < 1e-6:
        return
    lo, hi = sorted((h1, h2))
    assert calibrated_order(beta, 2, hi).m <= calibrated_order(beta, 2, lo).m


def test_cache_returns_same_object():
    clear_cache()
    a = rational_coefficients(0.4, 2)
    b = rational_coefficients(0.4 + 1e-9, 2)
    assert a is b
    assert rational_coefficients(0.4, 2, algo="cp")[0].algo == "chebyshev-pade"


def test_invalid_arguments():
    with pytest.raises(ValueError):
        brasil(1.2, 2)
    with pytest.raises(ValueError):
        chebyshev_pade(0.5, 0)
    with pytest.raises(ValueError):
        default_delta(2, "bogus")


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(0.05, 0.95), m=st.integers(1, 4))
def test_brasil_property(alpha, m):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rc = brasil(alpha, m, max_iter=500)
    pf = to_partial_fractions(rc)
    assert pf.k > 0 and np.all(pf.r > 0) and np.all(pf.p < 0)
    stahl = 4 ** (1 + alpha) * math.sin(math.pi * alpha) * math.exp(-2 * math.pi * math.sqrt(alpha * m))
    assert sup_error(rc, 20_000) < 10 * stahl


def test_pade_degeneracy_reported():
    with pytest.raises(PadeDegeneracyError, match="smaller m"):
        chebyshev_pade(0.6, 12)
