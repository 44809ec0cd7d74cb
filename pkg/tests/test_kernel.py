import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flock import kernel
from flock.kernel import Capped, InvalidWeight, RegularCS, Singular

alphas = st.floats(0.01, 0.49)
dists = st.floats(1e-12, 1e6, allow_nan=False)
caps = st.floats(1e-3, 1e6)


def test_singular_at_one():
    assert kernel.evaluate(Singular(0.25), 1.0) == 1.0


def test_singular_at_zero_is_inf():
    assert kernel.evaluate(Singular(0.25), 0.0) == math.inf


def test_cap_active_close_in():
    assert kernel.evaluate(Capped(0.25, 10.0), 1e-8) == 10.0


def test_regular_at_origin():
    assert kernel.evaluate(RegularCS(K=1.0, beta=2.0), 0.0) == 1.0
    assert kernel.evaluate(RegularCS(K=3.0, beta=1.0), math.sqrt(3.0)) == pytest.approx(1.5)


def test_array_input_keeps_shape():
    s = np.array([[0.0, 1.0], [16.0, 81.0]])
    out = kernel.evaluate(Singular(0.25), s)
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out[1], [0.5, 1 / 3])


@pytest.mark.parametrize("alpha", [0.0, 0.5, 0.7, -0.1, math.nan])
def test_alpha_outside_range_rejected(alpha):
    with pytest.raises(InvalidWeight):
        Singular(alpha)
    with pytest.raises(InvalidWeight):
        Capped(alpha, 10.0)


@pytest.mark.parametrize("bad", [dict(K=0.0), dict(K=-1.0), dict(beta=-0.5)])
def test_regular_parameters_checked(bad):
    with pytest.raises(InvalidWeight):
        RegularCS(**bad)


def test_cap_must_be_positive():
    with pytest.raises(InvalidWeight):
        Capped(0.25, 0.0)


def test_activation_radius_examples():
    assert kernel.cap_activation_radius(Capped(0.25, 16.0)) == pytest.approx(1 / 65536, rel=1e-15)
    assert kernel.cap_activation_radius(Capped(0.25, 1.0)) == 1.0


def test_activation_radius_needs_capped():
    with pytest.raises(TypeError):
        kernel.cap_activation_radius(Singular(0.25))


@given(alphas, caps)
def test_continuous_at_activation_radius(alpha, cap):
    w = Capped(alpha, cap)
    r = kernel.cap_activation_radius(w)
    assert kernel.evaluate(w, r) == pytest.approx(cap, rel=1e-9)
    assert kernel.evaluate(w, r * 0.5) == cap


@given(st.sampled_from(["singular", "capped", "regular"]), alphas, caps, dists, dists)
def test_nonincreasing(kind, alpha, cap, a, b):
    w = {"singular": Singular(alpha), "capped": Capped(alpha, cap), "regular": RegularCS(2.0, 2 * alpha)}[kind]
    lo, hi = min(a, b), max(a, b)
    assert kernel.evaluate(w, lo) >= kernel.evaluate(w, hi)


@given(alphas, caps, st.floats(0.0, 1e6))
def test_cap_is_min_of_singular_and_cap(alpha, cap, s):
    assert kernel.evaluate(Capped(alpha, cap), s) == min(kernel.evaluate(Singular(alpha), s), cap)


@given(alphas, dists)
def test_large_cap_matches_singular_exactly(alpha, s):
    psi = kernel.evaluate(Singular(alpha), s)
    assert kernel.evaluate(Capped(alpha, psi * 1.01 + 1.0), s) == psi


@pytest.mark.parametrize("w", [Singular(0.3), Capped(0.1, 7.5), RegularCS(2.0, 0.5)])
def test_dict_round_trip(w):
    assert kernel.from_dict(kernel.to_dict(w)) == w


def test_only_singular_is_singular():
    assert kernel.is_singular(Singular(0.2))
    assert not kernel.is_singular(Capped(0.2, 1e9))
