import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from flock.ensemble import AtomicMeasure
from flock.flat_metric import (
    LipschitzObservable,
    OracleTooLarge,
    bl_distance,
    bl_distance_bruteforce,
    clamped_projection,
    constant,
    pairing_bound_check,
    signed_union,
    tv_distance,
)


@st.composite
def measures(draw, dim, k_max=4):
    k = draw(st.integers(1, k_max))
    pts = draw(hnp.arrays(float, (k, dim), elements=st.floats(-2, 2).map(lambda a: round(a, 3))))
    w = draw(hnp.arrays(float, k, elements=st.floats(0.05, 1.0)))
    return AtomicMeasure(pts, w)


@st.composite
def triples(draw, k_max=4):
    dim = draw(st.integers(1, 3))
    return [draw(measures(dim, k_max)) for _ in range(3)]


def delta(x, a=1.0):
    return AtomicMeasure(np.atleast_2d(np.asarray(x, float)), [a])


@given(triples())
def test_matches_oracle(t):
    mu, nu, _ = t
    assert bl_distance(mu, nu) == pytest.approx(bl_distance_bruteforce(mu, nu), abs=1e-9)


@given(triples())
def test_metric_axioms(t):
    a, b, c = t
    dab = bl_distance(a, b)
    assert dab >= 0
    assert dab == pytest.approx(bl_distance(b, a), abs=1e-12)
    assert bl_distance(a, a) == 0.0
    assert bl_distance(a, c) <= dab + bl_distance(b, c) + 1e-9


@given(triples())
def test_dominated_by_total_variation(t):
    mu, nu, _ = t
    assert bl_distance(mu, nu) <= tv_distance(mu, nu) + 1e-12


@given(hnp.arrays(float, 3, elements=st.floats(-5, 5)), hnp.arrays(float, 3, elements=st.floats(-5, 5)))
def test_deltas_at_most_twice_distance(x1, x2):
    assert bl_distance(delta(x1), delta(x2)) <= 2 * np.linalg.norm(x1 - x2) + 1e-12


@pytest.mark.parametrize("s", [0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 10.0])
def test_unit_deltas_closed_form(s):
    assert bl_distance(delta([0.0, 0.0]), delta([s, 0.0])) == min(s, 2.0)


@pytest.mark.parametrize("a, b", [(1.0, 0.5), (0.2, 0.7), (0.4, 0.4)])
def test_colocated_deltas_closed_form(a, b):
    assert bl_distance(delta([1.0, 1.0], a), delta([1.0, 1.0], b)) == abs(a - b)


def test_tv_is_blind_to_distance():
    # TV jumps to 2 for any displacement while the flat distance tends to 0
    for s in (1e-1, 1e-3, 1e-6):
        assert tv_distance(delta([0.0]), delta([s])) == 2.0
        assert bl_distance(delta([0.0]), delta([s])) == pytest.approx(s)


def test_unequal_total_mass():
    mu = AtomicMeasure([[0.0], [1.0]], [0.5, 0.5])
    nu = AtomicMeasure([[0.0]], [0.25])
    assert bl_distance(mu, nu) == pytest.approx(0.75)


def test_empty_measures():
    empty = AtomicMeasure(np.zeros((0, 2)), np.zeros(0))
    assert bl_distance(empty, empty) == 0.0
    assert bl_distance(empty, delta([0.0, 0.0], 0.3)) == pytest.approx(0.3)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        bl_distance(delta([0.0]), delta([0.0, 0.0]))


def test_signed_union_merges_shared_points():
    z, c = signed_union(AtomicMeasure([[0.0], [1.0]], [0.5, 0.5]), AtomicMeasure([[1.0]], [0.5]))
    np.testing.assert_array_equal(z, [[0.0]])
    np.testing.assert_array_equal(c, [0.5])


def test_witness_is_feasible():
    rng = np.random.default_rng(3)
    mu = AtomicMeasure(rng.normal(size=(20, 2)), rng.uniform(0.1, 1, 20))
    nu = AtomicMeasure(rng.normal(size=(15, 2)), rng.uniform(0.1, 1, 15))
    val, z, g = bl_distance(mu, nu, return_witness=True)
    assert np.all(np.abs(g) <= 1 + 1e-9)
    D = np.linalg.norm(z[:, None] - z[None, :], axis=2)
    assert np.all(np.abs(g[:, None] - g[None, :]) <= D + 1e-9)
    _, c = signed_union(mu, nu)
    assert c @ g == pytest.approx(val, abs=1e-9)


def test_constraint_generation_agrees_with_dense_solve():
    import flock.flat_metric as fm

    rng = np.random.default_rng(0)
    mu = AtomicMeasure(rng.uniform(0, 1, (180, 2)), np.full(180, 1 / 180))
    nu = AtomicMeasure(rng.uniform(0, 1, (200, 2)) + 0.05, np.full(200, 1 / 200))
    lazy = bl_distance(mu, nu)  # 380 points, above the dense limit
    old = fm.DENSE_LIMIT
    try:
        fm.DENSE_LIMIT = 10_000
        dense = bl_distance(mu, nu)
    finally:
        fm.DENSE_LIMIT = old
    assert lazy == pytest.approx(dense, abs=1e-9)


def test_oracle_size_limit():
    mu = AtomicMeasure(np.arange(9.0).reshape(-1, 1), np.ones(9))
    with pytest.raises(OracleTooLarge):
        bl_distance_bruteforce(mu, delta([0.5]))


# test functions


def test_clamped_projection():
    g = clamped_projection(1, scale=2.0)
    z = np.array([[0.0, 0.25], [5.0, 3.0], [0.0, -1.0]])
    np.testing.assert_array_equal(g(z), [0.5, 1.0, -1.0])
    np.testing.assert_array_equal(g.gradient(z)[:, 1], [2.0, 0.0, 0.0])
    assert g.spot_check(np.random.default_rng(0).normal(size=(50, 2)), rng=0)


def test_finite_difference_gradient():
    g = LipschitzObservable(lambda z: np.sin(z[:, 0]) * np.cos(z[:, 1]), 1.0, 2.0)
    z = np.array([[0.3, -0.2]])
    np.testing.assert_allclose(g.gradient(z), [[math.cos(0.3) * math.cos(-0.2), math.sin(0.3) * math.sin(0.2)]],
                               atol=1e-8)


def test_spot_check_catches_bad_bounds():
    g = LipschitzObservable(lambda z: 3 * z[:, 0], 1.0, 1.0)
    assert not g.spot_check(np.linspace(-1, 1, 20).reshape(-1, 1), rng=0)


def test_observable_bounds_validated():
    with pytest.raises(ValueError):
        LipschitzObservable(lambda z: z[:, 0], -1.0, 1.0)


@settings(max_examples=60)
@given(triples(k_max=6), st.floats(0.1, 2.0), st.floats(0.1, 3.0), st.floats(0, 2 * math.pi))
def test_pairing_bound(t, a, k, phi):
    mu, nu, _ = t
    dim = mu.points.shape[1]
    vec = np.full(dim, k / math.sqrt(dim))
    g = LipschitzObservable(lambda z: a * np.sin(z @ vec + phi), a, a * k)
    lhs, rhs, holds = pairing_bound_check(g, mu, nu)
    assert holds, (lhs, rhs)


def test_pairing_bound_constant_observable():
    mu = AtomicMeasure([[0.0]], [1.0])
    nu = AtomicMeasure([[3.0]], [0.5])
    lhs, rhs, holds = pairing_bound_check(constant(0.7), mu, nu)
    assert lhs == pytest.approx(0.35) and holds


def test_self_distance_exact_with_duplicate_points():
    mu = AtomicMeasure([[0.0], [0.0], [0.0]], [0.05, 0.05, 0.05])
    assert bl_distance(mu, mu) == 0.0
