import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from flock import fixtures
from flock.ensemble import (
    AtomicMeasure,
    DensitySource,
    Ensemble,
    InvalidEnsemble,
    QuadratureError,
    SampleSource,
    cell_side,
    cosine_bump,
    empirical_measure,
    merge,
    merge_clusters,
    quantize,
    support_radius,
    uniform_box,
)
from flock.flat_metric import bl_distance

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def ensembles(draw, n_max=8, dim_max=3):
    n = draw(st.integers(1, n_max))
    d = draw(st.integers(1, dim_max))
    raw = draw(hnp.arrays(float, n, elements=st.floats(0.01, 10.0)))
    x = draw(hnp.arrays(float, (n, d), elements=finite))
    v = draw(hnp.arrays(float, (n, d), elements=finite))
    t = draw(st.floats(0.0, 100.0))
    return Ensemble(raw / raw.sum(), x, v, t)


def test_basic_properties():
    e = Ensemble([0.25, 0.75], [[0.0, 1.0], [2.0, 0.0]], [[1.0, 0.0], [0.0, -1.0]])
    assert (e.n, e.dim) == (2, 2)
    np.testing.assert_allclose(e.momentum(), [0.25, -0.75])
    assert support_radius(e) == 2.0


def test_arrays_are_read_only_copies():
    x = np.zeros((2, 1))
    e = Ensemble([0.5, 0.5], x, np.ones((2, 1)))
    x[0, 0] = 5.0
    assert e.positions[0, 0] == 0.0
    with pytest.raises(ValueError):
        e.positions[0, 0] = 1.0


@pytest.mark.parametrize("masses, x, v", [
    ([0.5, 0.6], [[0.0], [1.0]], [[0.0], [0.0]]),
    ([1.0, 0.0], [[0.0], [1.0]], [[0.0], [0.0]]),
    ([0.5, 0.5], [[0.0], [1.0]], [[0.0]]),
    ([0.5, 0.5], [[0.0], [math.inf]], [[0.0], [0.0]]),
    ([], np.zeros((0, 1)), np.zeros((0, 1))),
])
def test_invalid_ensembles(masses, x, v):
    with pytest.raises(InvalidEnsemble):
        Ensemble(masses, x, v)


def test_mass_tolerance_is_tight():
    Ensemble([0.5, 0.5 + 5e-13], [[0.0], [1.0]], [[0.0], [0.0]])
    with pytest.raises(InvalidEnsemble):
        Ensemble([0.5, 0.5 + 1e-11], [[0.0], [1.0]], [[0.0], [0.0]])


@given(ensembles())
def test_json_round_trip_is_bit_exact(e):
    back = Ensemble.from_json(e.to_json())
    assert back.same_as(e)
    assert back.time == e.time


@given(ensembles())
def test_csv_is_parseable_at_full_precision(e):
    lines = e.to_csv().strip().split("\n")
    assert len(lines) == e.n + 1
    rows = np.array([[float(a) for a in ln.split(",")[1:]] for ln in lines[1:]])
    np.testing.assert_array_equal(rows[:, 0], e.masses)
    np.testing.assert_array_equal(rows[:, 1:1 + e.dim], e.positions)


@given(ensembles())
def test_empirical_measure_layout(e):
    mu = empirical_measure(e)
    assert mu.points.shape == (e.n, 2 * e.dim)
    assert mu.total == pytest.approx(1.0, abs=1e-12)


def test_atomic_measure_canonical_sums_duplicates():
    mu = AtomicMeasure([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]], [0.2, 0.3, 0.5])
    c = mu.canonical()
    assert c.size == 2
    np.testing.assert_allclose(sorted(c.weights), [0.3, 0.7])


def test_atomic_measure_rejects_negative_weight():
    with pytest.raises(ValueError):
        AtomicMeasure([[0.0, 0.0]], [-1.0])


def test_atomic_measure_dict_round_trip():
    mu = AtomicMeasure([[0.1, 0.2], [0.3, 0.4]], [0.25, 0.75])
    back = AtomicMeasure.from_dict(json.loads(json.dumps(mu.to_dict())))
    np.testing.assert_array_equal(back.points, mu.points)
    np.testing.assert_array_equal(back.weights, mu.weights)


# merging


@given(ensembles(n_max=8), st.data())
def test_merge_conserves_mass_and_momentum(e, data):
    if e.n < 2:
        return
    idx = data.draw(st.lists(st.integers(0, e.n - 1), min_size=2, max_size=e.n, unique=True))
    post = merge(e, idx)
    assert post.n == e.n - len(idx) + 1
    assert post.masses.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(post.momentum(), e.momentum(), atol=1e-12 * (1 + np.abs(e.velocities).max()))
    k = min(idx)
    assert post.masses[k] == pytest.approx(e.masses[idx].sum(), rel=1e-12)


def test_merge_is_exact_for_dyadic_masses():
    e = Ensemble([0.25, 0.25, 0.5], [[0.0], [1.0], [2.0]], [[1.0], [-3.0], [0.5]])
    post = merge(e, [0, 2])
    np.testing.assert_array_equal(post.momentum(), e.momentum())
    assert post.masses.tolist() == [0.75, 0.25]
    assert post.velocities[0, 0] == pytest.approx(2 / 3, rel=1e-15)


def test_merge_keeps_order_of_survivors():
    e = Ensemble([0.25] * 4, [[0.0], [1.0], [2.0], [3.0]], [[0.0], [1.0], [2.0], [3.0]])
    post = merge_clusters(e, [(1, 3)])
    np.testing.assert_array_equal(post.positions[:, 0], [0.0, 2.0, 2.0])


@pytest.mark.parametrize("clusters, exc", [
    ([(0,)], ValueError),
    ([(0, 5)], IndexError),
    ([(0, 1), (1, 2)], ValueError),
])
def test_merge_rejects_bad_clusters(clusters, exc):
    e = Ensemble([0.25] * 4, np.zeros((4, 1)), np.zeros((4, 1)))
    with pytest.raises(exc):
        merge_clusters(e, clusters)


# quantization


def test_cell_side_keeps_diameter_below_h():
    for D in range(1, 9):
        s = cell_side(0.3, D)
        assert s * math.sqrt(D) <= 0.3 + 1e-15


@pytest.mark.parametrize("h, n", [(0.5, 16), (0.25, 64), (0.125, 256)])
def test_uniform_box_atom_counts(h, n):
    e = quantize(fixtures.uniform_box_source(), h)
    assert e.n == n
    np.testing.assert_allclose(e.masses, 1.0 / n)


@pytest.mark.parametrize("h", [0.5, 0.25, 0.125])
def test_quantization_bound_uniform_box(h):
    # independent reference: a much finer quantization stands in for the density
    src = fixtures.uniform_box_source()
    fine = empirical_measure(quantize(src, h / 4))
    d = bl_distance(empirical_measure(quantize(src, h)), fine)
    # the fine grid is itself within h/8 of the density
    assert d <= h / 2 - h / 8


def test_cosine_bump_masses_follow_density():
    e = quantize(cosine_bump([0.0, 0.0], [1.0, 1.0]), 0.25)
    centre = np.argmin(np.linalg.norm(np.hstack([e.positions, e.velocities]) - 0.5, axis=1))
    assert e.masses[centre] == pytest.approx(e.masses.max(), rel=1e-14)


def test_single_sample_is_reproduced():
    src = SampleSource(np.array([[0.3, -0.7, 1.1, 0.2]]))
    for h in (1.0, 0.1, 0.01):
        e = quantize(src, h)
        np.testing.assert_array_equal(e.positions, [[0.3, -0.7]])
        np.testing.assert_array_equal(e.velocities, [[1.1, 0.2]])


@given(hnp.arrays(float, (12, 2), elements=st.floats(-2, 2)), st.sampled_from([0.5, 0.25, 0.1]))
def test_sample_quantization_within_h_over_2(pts, h):
    src = SampleSource(pts)
    e = quantize(src, h)
    mu = AtomicMeasure(pts, np.full(len(pts), 1 / len(pts)))
    assert bl_distance(empirical_measure(e), mu) <= h / 2 + 1e-12


def test_weighted_samples_drop_zero_weights():
    src = SampleSource(np.array([[0.0, 0.0], [5.0, 5.0]]), np.array([1.0, 0.0]))
    assert quantize(src, 0.1).n == 1


def test_quantize_rejects_bad_input():
    with pytest.raises(ValueError):
        quantize(fixtures.uniform_box_source(), 0.0)
    with pytest.raises(ValueError):
        quantize(SampleSource(np.zeros((0, 2))), 0.1)
    with pytest.raises(TypeError):
        quantize(object(), 0.1)
    with pytest.raises(QuadratureError):
        quantize(DensitySource((0.0, 0.0), (1.0, 1.0), lambda z: -np.ones(len(z))), 0.5)
    with pytest.raises(QuadratureError):
        quantize(DensitySource((0.0, 0.0), (1.0, 1.0), lambda z: np.full(len(z), np.nan)), 0.5)


def test_uniform_box_builder_four_dims():
    e = quantize(uniform_box([0, 0, 0, 0], [1, 1, 1, 1]), 0.5)
    assert e.dim == 2
    assert e.n == 4 ** 4


def test_empirical_measure_of_pair():
    e = Ensemble([0.5, 0.5], [[0.0], [1.0]], [[1.0], [-1.0]])
    mu = empirical_measure(e)
    np.testing.assert_array_equal(mu.points, [[0.0, 1.0], [1.0, -1.0]])
    np.testing.assert_array_equal(mu.weights, [0.5, 0.5])


def test_merged_equal_atoms_collapse_to_one_point():
    e = Ensemble([0.5, 0.5], [[0.2], [0.2]], [[0.1], [0.1]])
    assert empirical_measure(e).canonical().size == 1
    assert empirical_measure(merge(e, [0, 1])).size == 1
