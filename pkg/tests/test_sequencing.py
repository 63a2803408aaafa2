import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cutsmc.exceptions import InvalidInputError
from cutsmc.model import GaussianConjugateModel, UniformCut
from cutsmc.sequencing import (
    INTERPOLANT,
    CutSequence,
    DistanceMetric,
    TSPOrdering,
    correlated_normal_sampler,
    draw_cut_sequence,
    hamiltonian_study,
    max_consecutive_distance,
    path_length,
    permute_tsp,
    temper_sequence,
    tsp_path_order,
)

point_sets = st.integers(1, 3).flatmap(
    lambda dim: arrays(np.float64, st.tuples(st.integers(2, 9), st.just(dim)),
                       elements=st.floats(-50, 50, allow_nan=False, width=64)))


def scalar_seq(values):
    return CutSequence.from_draws(np.asarray(values, dtype=float)[:, None])


def test_draw_single_point(uniform_scalar_model):
    seq = draw_cut_sequence(uniform_scalar_model, 0, 1)
    assert len(seq) == 1 and seq.retained.all()


def test_draw_reproducible(testbed):
    a = draw_cut_sequence(testbed, 9, 42)
    b = draw_cut_sequence(testbed, 9, 42)
    assert np.array_equal(a.points, b.points)


def test_draw_uniform_mean():
    m = GaussianConjugateModel([0, 0], 1, 1, cut=UniformCut([0, -2], [1, 2]))
    seq = draw_cut_sequence(m, 999, 3)
    se = np.array([1, 4]) / math.sqrt(12) / math.sqrt(1000)
    assert np.all(np.abs(seq.points.mean(axis=0) - [0.5, 0.0]) < 3 * se)


def test_draw_negative_S(testbed):
    with pytest.raises(InvalidInputError):
        draw_cut_sequence(testbed, -1, 0)


def test_temper_midpoint():
    out = temper_sequence(scalar_seq([0, 1]), 1)
    assert np.array_equal(out.points[:, 0], [0, 0.5, 1])
    assert list(out.retained) == [True, False, True]
    assert out.provenance[1] == INTERPOLANT


def test_temper_zero_is_identity():
    seq = scalar_seq([0.3, -1.0, 2.0])
    assert temper_sequence(seq, 0) is seq


def test_temper_even_spacing():
    out = temper_sequence(scalar_seq([0, 2]), 3)
    assert np.array_equal(out.points[:, 0], [0, 0.5, 1.0, 1.5, 2])


def test_temper_negative_P():
    with pytest.raises(InvalidInputError):
        temper_sequence(scalar_seq([0, 1]), -1)


@given(point_sets, st.integers(0, 4))
def test_temper_then_filter_recovers_input(pts, P):
    seq = CutSequence.from_draws(pts)
    out = temper_sequence(seq, P)
    assert len(out) == (P + 1) * (len(seq) - 1) + 1
    assert out.n_retained == len(seq)
    assert np.array_equal(out.retained_points, seq.points)
    assert np.array_equal(out.origin_index[out.retained], seq.origin_index)


@given(point_sets, st.integers(1, 4))
def test_temper_divides_max_distance(pts, P):
    seq = CutSequence.from_draws(pts)
    before = max_consecutive_distance(seq)
    after = max_consecutive_distance(temper_sequence(seq, P))
    assert after == pytest.approx(before / (P + 1), rel=1e-9, abs=1e-12)


def test_permute_collinear():
    out = permute_tsp(scalar_seq([0, 5, 1, 3]))
    assert np.array_equal(out.points[:, 0], [0, 1, 3, 5])
    assert list(out.origin_index) == [0, 2, 3, 1]


def test_permute_keeps_optimal_order():
    seq = scalar_seq([0, 1, 2, 4, 7])
    out = permute_tsp(seq)
    dist = DistanceMetric().pairwise(seq.points)
    assert path_length(dist, out.origin_index) == path_length(dist, np.arange(5))


def test_permute_short_sequences_identity():
    seq = scalar_seq([3.0])
    assert permute_tsp(seq) is seq
    assert np.array_equal(tsp_path_order(np.array([[0.0], [1.0]])), [0, 1])


@given(point_sets, st.booleans())
def test_permute_properties(pts, bottleneck):
    seq = CutSequence.from_draws(pts)
    out = permute_tsp(seq, bottleneck=bottleneck)
    assert out.origin_index[0] == 0
    assert sorted(out.origin_index) == list(range(len(seq)))
    assert np.array_equal(np.sort(out.points, axis=0), np.sort(seq.points, axis=0))
    dist = DistanceMetric().pairwise(seq.points)
    if not bottleneck:
        assert path_length(dist, out.origin_index) <= path_length(dist, np.arange(len(seq))) + 1e-9


@given(arrays(np.float64, st.tuples(st.integers(3, 7), st.just(2)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_permute_close_to_brute_force_on_small_sets(pts):
    # 2-opt is a local search; on tiny sets it should never be far from optimal
    dist = DistanceMetric().pairwise(pts)
    n = pts.shape[0]
    best = min(path_length(dist, (0,) + p) for p in itertools.permutations(range(1, n)))
    got = path_length(dist, tsp_path_order(pts))
    assert got <= 1.5 * best + 1e-9


def test_bottleneck_does_not_increase_max_edge():
    rng = np.random.default_rng(8)
    for _ in range(20):
        pts = rng.normal(size=(15, 2))
        plain = tsp_path_order(pts)
        bn = tsp_path_order(pts, bottleneck=True)
        assert bn[0] == 0
        assert max_consecutive_distance(pts[bn]) <= max_consecutive_distance(pts[plain]) + 1e-12


def test_max_consecutive_distance_examples():
    assert max_consecutive_distance(np.array([[0, 0], [3, 4], [3, 5]])) == 5.0
    assert max_consecutive_distance(np.zeros((4, 2))) == 0.0
    assert max_consecutive_distance(temper_sequence(scalar_seq([0, 1]), 1)) == 0.5


def test_max_consecutive_distance_single_point():
    with pytest.raises(InvalidInputError):
        max_consecutive_distance(scalar_seq([1.0]))


def test_scaled_metric():
    m = DistanceMetric.for_box([0, 10], [2, 30])
    assert max_consecutive_distance(np.array([[0, 10], [2, 30]]), m) == pytest.approx(math.sqrt(2))
    with pytest.raises(InvalidInputError):
        DistanceMetric("scaled-euclidean")


def test_study_extreme_thresholds():
    assert hamiltonian_study(2, 10, 20, math.inf, rng=1) == (0.0, 0.0)
    assert hamiltonian_study(2, 10, 20, 0.0, rng=1) == (1.0, 1.0)


def test_study_permuted_fraction_smaller():
    rand, perm = hamiltonian_study(2, 25, 1000, 2.0, sampler=correlated_normal_sampler(2, 0.7), rng=5)
    assert perm < rand


def test_study_deterministic():
    a = hamiltonian_study(3, 12, 30, 1.5, rng=77)
    b = hamiltonian_study(3, 12, 30, 1.5, rng=77)
    assert a == b


def test_tsp_transformer():
    X = np.array([[0.0], [5.0], [1.0], [3.0]])
    tr = TSPOrdering().fit(X)
    assert list(tr.order_) == [0, 2, 3, 1]
    assert tr.path_length_ == 5.0
    assert np.array_equal(tr.transform(X)[:, 0], [0, 1, 3, 5])
    assert TSPOrdering(bottleneck=True).get_params()["bottleneck"] is True
