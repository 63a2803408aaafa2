import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cutsmc.baseline import (
    DirectSampler,
    compare_runs,
    energy_distance,
    ks_statistic,
    run_direct,
    split_rhat,
)
from cutsmc.exceptions import DegenerateChainsError, InvalidInputError, KernelFailureError
from cutsmc.kernels import KernelConfig
from cutsmc.model import CallableModel, GaussianConjugateModel, PointMassCut
from cutsmc.rng import StreamKey
from cutsmc.smc import CutSMCSampler

samples = arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3, allow_nan=False))


def test_direct_fixed_nu_mean():
    m = GaussianConjugateModel([2.0, 0.0], 1.0, 1.0, cut=PointMassCut([0.4, -0.6]))
    run = run_direct(m, 0, KernelConfig("slice"), L=10_000, burn_in=1000, rng=3)
    x = run.chains[0]
    assert x.shape == (9000, 2)
    # slice-within-Gibbs on an isotropic Gaussian is close to independent
    # sampling; allow for mild autocorrelation by using batch means
    bm = x.reshape(30, 300, 2).mean(axis=1)
    se = bm.std(axis=0, ddof=1) / math.sqrt(30)
    assert np.all(np.abs(x.mean(axis=0) - [1.2, -0.3]) < 3 * se)


def test_direct_defaults_and_sizes(testbed):
    run = run_direct(testbed, 2, KernelConfig("mala"), rng=0)
    assert run.chain_length == 1000 and run.burn_in == 100
    nu, theta, s, it = run.pooled()
    assert theta.shape == (3 * 900, 2)
    assert np.array_equal(np.unique(s), [0, 1, 2])
    thinned = run_direct(testbed, 2, KernelConfig("mala"), L=100, burn_in=10, rng=0, thin=3)
    assert thinned.pooled()[1].shape[0] == 3 * 30


def test_direct_deterministic(testbed):
    a = run_direct(testbed, 1, KernelConfig("slice"), L=50, rng=8).pooled()[1]
    b = run_direct(testbed, 1, KernelConfig("slice"), L=50, rng=8).pooled()[1]
    assert np.array_equal(a, b)


def test_direct_invalid_lengths(testbed):
    with pytest.raises(InvalidInputError):
        run_direct(testbed, 1, KernelConfig("slice"), L=10, burn_in=10)


def test_direct_kernel_failure_location():
    flat = CallableModel(1, 1, lambda nu, th: 0.0, PointMassCut([0.0]), start=[0.0])
    with pytest.raises(KernelFailureError, match="chain 0 at iteration 0"):
        run_direct(flat, 0, KernelConfig("slice", slice_width=1.0, slice_max_doublings=2), L=5)


def test_direct_cut_mean(testbed):
    run = run_direct(testbed, 199, KernelConfig("mala"), L=60, burn_in=10, rng=4)
    nu, theta, s, _ = run.pooled()
    # per-chain means are independent across cut draws
    per_chain = np.array([c.mean(axis=0) for c in run.chains])
    se = per_chain.std(axis=0, ddof=1) / math.sqrt(len(per_chain))
    assert np.all(np.abs(per_chain.mean(axis=0) - [1.0, 0.0]) < 3 * se)


# --------------------------------------------------------------------------
# R-hat


def test_rhat_stationary_chains():
    rng = StreamKey(1).generator()
    assert split_rhat(rng.standard_normal((2, 20_000))) < 1.01


def test_rhat_disjoint_chains():
    rng = StreamKey(2).generator()
    chains = np.array([[0.0], [5.0]]) + 1e-3 * rng.standard_normal((2, 100))
    assert split_rhat(chains) > 1.1


def test_rhat_chain_with_itself():
    x = StreamKey(3).generator().standard_normal(10_000)
    assert split_rhat(np.vstack([x, x])) == pytest.approx(1.0, abs=0.01)


@given(st.floats(-100, 100), st.floats(0.01, 100), st.integers(0, 2 ** 32))
def test_rhat_affine_invariant(a, b, seed):
    chains = StreamKey(seed).generator().standard_normal((3, 50))
    assert split_rhat(a + b * chains) == pytest.approx(split_rhat(chains), rel=1e-9)


def test_rhat_errors():
    with pytest.raises(DegenerateChainsError):
        split_rhat(np.ones((2, 10)))
    with pytest.raises(InvalidInputError):
        split_rhat(np.zeros((1, 10)))
    with pytest.raises(InvalidInputError):
        split_rhat(np.zeros((2, 3)))


# --------------------------------------------------------------------------
# KS


def test_ks_examples():
    a = np.array([0.1, 0.5, 0.2])
    assert ks_statistic(a, a) == 0.0
    assert ks_statistic(-np.arange(1.0, 5.0), np.arange(1.0, 3.0)) == 1.0


def test_ks_null():
    a = StreamKey(10).generator().standard_normal(10_000)
    b = StreamKey(11).generator().standard_normal(10_000)
    assert ks_statistic(a, b) < 0.03


@given(samples, samples)
def test_ks_symmetric_and_monotone_invariant(a, b):
    k = ks_statistic(a, b)
    assert 0.0 <= k <= 1.0
    assert ks_statistic(b, a) == k
    assert ks_statistic(np.arctan(a / 100), np.arctan(b / 100)) == pytest.approx(k, abs=1e-12) \
        or np.unique(np.arctan(np.r_[a, b] / 100)).size < np.unique(np.r_[a, b]).size


def test_ks_empty():
    with pytest.raises(InvalidInputError):
        ks_statistic([], [1.0])


# --------------------------------------------------------------------------
# energy distance


def test_energy_examples():
    a = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert energy_distance(a, a) == 0.0
    assert energy_distance([[0.0, 0.0]], [[3.0, 4.0]]) == 10.0


def test_energy_separation():
    rng = StreamKey(5).generator()
    a, b, c = rng.standard_normal(10_000), rng.standard_normal(10_000), 3 + rng.standard_normal(10_000)
    assert energy_distance(a, c) > 5 * energy_distance(a, b)


@given(arrays(np.float64, st.tuples(st.integers(1, 15), st.integers(1, 3)),
              elements=st.floats(-100, 100, allow_nan=False)), st.integers(0, 2 ** 32))
def test_energy_nonnegative_and_permutation_invariant(a, seed):
    b = a[np.random.default_rng(seed).permutation(a.shape[0])]
    assert energy_distance(a, b) == pytest.approx(0.0, abs=1e-9)
    shifted = a + 1.0
    assert energy_distance(a, shifted) >= 0.0


def test_energy_1d_matches_cdist_path():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=300), rng.normal(1, 2, size=200)
    direct = 2 * np.abs(a[:, None] - b[None]).mean() - np.abs(a[:, None] - a[None]).mean() \
        - np.abs(b[:, None] - b[None]).mean()
    assert energy_distance(a, b) == pytest.approx(direct, rel=1e-12)


def test_energy_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        energy_distance(np.zeros((3, 2)), np.zeros((3, 1)))


# --------------------------------------------------------------------------
# comparison


def test_compare_with_itself():
    x = np.random.default_rng(1).normal(size=(500, 2))
    rep = compare_runs(x, x, threshold_ed=0.0)
    assert rep.ks == [0.0, 0.0] and rep.energy_distance == 0.0 and rep.passed


def test_compare_gaussian_testbed(testbed):
    smc = CutSMCSampler(N=25, S=9, t=5, kernel="mala", batch_count=10, seed=31).fit(testbed)
    direct = DirectSampler(S=99, L=300, burn_in=30, thin=10, kernel="mala", seed=32).fit(testbed)
    assert smc.theta_.shape[0] >= 2000 and direct.theta_.shape[0] >= 2000
    rep = compare_runs(smc.theta_, direct.theta_, threshold_ks=0.05)
    assert rep.passed, rep.as_dict()


def test_compare_empty():
    with pytest.raises(ValueError):
        compare_runs(np.zeros((0, 2)), np.zeros((3, 2)))


def test_direct_sampler_api(testbed):
    ds = DirectSampler(S=1, L=40, kernel="mala", batch_count=2, seed=1)
    assert ds.get_params()["L"] == 40
    ds.fit(testbed)
    assert ds.theta_.shape == (2 * 2 * 36, 2)
    assert np.isfinite(ds.estimate(lambda nu, th: th[0]))
