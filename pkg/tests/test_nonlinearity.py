import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracpme.nonlinearity import (NonlinearityError, NonlinearitySpec, check_n2, envelope_margins,
                                  product_constant)

exps = st.floats(1.05, 12.0)
coeffs = st.floats(0.05, 20.0)
two_power = st.tuples(coeffs, exps, coeffs, exps).map(
    lambda t: NonlinearitySpec(((t[0], t[1]), (t[2], t[3]))))
positive = st.floats(1e-4, 1e4)


def test_pure_power_values():
    F = NonlinearitySpec.power(2.0)
    assert F(3.0) == 9.0
    assert F(-3.0) == -9.0
    assert F.inverse(4.0) == pytest.approx(2.0, rel=1e-14)
    assert F.legendre(12.0) == pytest.approx(36.0)  # sup_r 12r - r^2 at r = 6


def test_frozen_two_power_values():
    F = NonlinearitySpec(((1.0, 2.0), (1.0, 3.0)))
    # F(1) = 2, so F^{-1}(2) = 1
    assert F.inverse(2.0) == pytest.approx(1.0, rel=1e-13)
    # F'(r) = 2r + 3r^2 = 16 at r = 2; F*(16) = 2*16 - (4 + 8) = 20
    assert F.legendre(16.0) == pytest.approx(20.0, rel=1e-12)
    assert F.envelope() == (2.0, 3.0)
    assert (F.mu0, F.mu1) == (0.5, pytest.approx(2.0 / 3.0))


def test_cube_inverse_and_terms_sorted():
    F = NonlinearitySpec(((2.0, 10.0), (1.0, 3.0)))
    assert F.terms[0][1] == 3.0 and F.m1 == 10.0
    G = NonlinearitySpec.power(3.0)
    assert G.inverse(8.0) == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("terms", [(), ((0.0, 2.0),), ((1.0, 1.0),), ((-1.0, 3.0),), ((1.0, np.nan),)])
def test_invalid_specs(terms):
    with pytest.raises(NonlinearityError):
        NonlinearitySpec(terms)


def test_config_round_trip_and_unknown_key():
    F = NonlinearitySpec(((1.0, 2.0), (0.5, 4.0)))
    assert NonlinearitySpec.from_config(F.to_config()) == F
    with pytest.raises(NonlinearityError):
        NonlinearitySpec.from_config([{"coeff": 1.0, "exponnet": 2.0}])


def test_inverse_rejects_negative():
    with pytest.raises(NonlinearityError):
        NonlinearitySpec.power(2.0).inverse(-1.0)


def test_n2_pure_power_is_tight():
    F = NonlinearitySpec.power(3.0)
    rep = check_n2(F, np.logspace(-3, 3, 50))
    assert rep.holds
    assert rep.ratio_min == pytest.approx(2.0 / 3.0) and rep.ratio_max == pytest.approx(2.0 / 3.0)


def test_n2_two_power_leaves_band():
    # F F''/F'^2 for u^2 + u^10 overshoots (m1 - 1)/m1 in the crossover region
    F = NonlinearitySpec(((1.0, 2.0), (1.0, 10.0)))
    rep = check_n2(F, np.logspace(-3, 3, 2001))
    assert not rep.holds
    assert rep.ratio_max == pytest.approx(1.5123, abs=2e-3)


def test_n2_rejects_bad_grid():
    with pytest.raises(NonlinearityError):
        check_n2(NonlinearitySpec.power(2.0), [0.0, 1.0])


def test_product_constant_pure_power():
    assert product_constant(NonlinearitySpec.power(3.0)) == pytest.approx(1.0)


@given(two_power, positive)
def test_inverse_round_trip(F, v):
    r = F.inverse(v)
    assert F(r) == pytest.approx(v, rel=1e-10)


@given(two_power, positive)
def test_legendre_is_young_tight(F, r):
    # F*(F'(r)) = r F'(r) - F(r): equality in Young's inequality
    z = F.deriv(r)
    assert F.legendre(z) == pytest.approx(r * z - F(r), rel=1e-8)


@given(two_power, positive, positive)
def test_young_inequality(F, r, z):
    assert r * z <= F(r) + F.legendre(z) * (1 + 1e-9) + 1e-12


@given(two_power)
def test_envelope_holds(F):
    assert envelope_margins(F) >= -1e-12


@given(two_power, st.floats(1e-3, 1e3))
def test_legendre_inverse(F, w):
    assert F.legendre(F.legendre_inverse(w)) == pytest.approx(w, rel=1e-8)


@given(two_power, st.lists(positive, min_size=2, max_size=6))
def test_monotone_and_odd(F, rs):
    rs = np.sort(np.array(rs))
    vals = F(rs)
    assert np.all(np.diff(vals) >= 0)
    assert np.allclose(F(-rs), -vals)
