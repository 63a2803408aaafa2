import math
import pickle
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from cutsmc.exceptions import (
    ConfigurationError,
    InvalidInputError,
    ModelEvaluationError,
    SingularInputError,
)
from cutsmc.kernels import KernelConfig
from cutsmc.model import (
    APPENDIX_C_Y_OBS,
    AppendixCModel,
    CallableModel,
    ExternalProcessModel,
    GaussianConjugateModel,
    NormalCut,
    PointMassCut,
    UniformCut,
    appendixc_forward,
    gaussian_posterior_params,
    log_unnorm_conditional,
    sample_cut,
    sample_initial_conditional,
)
from cutsmc.rng import StreamKey

finite = st.floats(-5, 5, allow_nan=False)


def test_log_unnorm_at_posterior_mean_is_zero(testbed):
    assert log_unnorm_conditional(testbed, [0, 2], [1, 1]) == 0.0


def test_log_unnorm_kernel_value(testbed):
    assert log_unnorm_conditional(testbed, [0, 2], [2, 2]) == pytest.approx(-2.0, abs=1e-15)


def test_toy_model_outside_prior_box(appc):
    for nu in (0.3, 0.7, 1.0):
        assert log_unnorm_conditional(appc, [nu], [31.0, 0.0]) == -math.inf


def test_log_unnorm_dimension_mismatch(testbed):
    with pytest.raises(InvalidInputError):
        log_unnorm_conditional(testbed, [0.0], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        log_unnorm_conditional(testbed, [0.0, 0.0], [1.0])


def test_nan_from_user_model_is_evaluation_error():
    m = CallableModel(1, 1, lambda nu, th: float("nan"), UniformCut([0], [1]))
    with pytest.raises(ModelEvaluationError):
        log_unnorm_conditional(m, [0.5], [0.0])


@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_log_unnorm_is_pure(nu, theta):
    m = GaussianConjugateModel([2.0, 0.0], 1.0, 1.0, cut=NormalCut([0, 0], scale=0.5))
    a = log_unnorm_conditional(m, nu, theta)
    b = log_unnorm_conditional(m, nu, theta)
    assert a == b


def test_gaussian_kernel_normalizes_in_one_dimension():
    m = GaussianConjugateModel([0.7], 1.3, 0.8, cut=NormalCut([0.0], scale=1.0))
    nu = np.array([0.4])
    mean, c = gaussian_posterior_params(m, nu)
    val, _ = integrate.quad(lambda x: math.exp(m.log_unnorm(nu, np.array([x]))),
                            mean[0] - 40 * math.sqrt(c), mean[0] + 40 * math.sqrt(c),
                            epsabs=1e-13, epsrel=1e-13, limit=200)
    assert abs(val / math.sqrt(2 * math.pi * c) - 1.0) < 1e-8


def test_sample_cut_uniform_reproducible():
    m = GaussianConjugateModel([0.0], 1, 1, cut=UniformCut([0.0], [1.0]))
    a = sample_cut(m, StreamKey(3).generator(), 3)
    b = sample_cut(m, StreamKey(3).generator(), 3)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))


def test_sample_cut_uniform_mean():
    m = GaussianConjugateModel([0.0], 1, 1, cut=UniformCut([0.0], [1.0]))
    x = sample_cut(m, 11, 10_000)
    assert abs(x.mean() - 0.5) < 0.02


def test_sample_cut_point_mass():
    m = GaussianConjugateModel([0.0, 0.0], 1, 1, cut=PointMassCut([0.25, -1.0]))
    x = sample_cut(m, 0, 50)
    assert np.all(x == np.array([0.25, -1.0]))


def test_sample_cut_rejects_zero_count(testbed):
    with pytest.raises(InvalidInputError):
        sample_cut(testbed, 0, 0)


def test_exact_initial_moments(testbed):
    x = sample_initial_conditional(testbed, [0, 2], 5, 100_000)
    assert np.all(np.abs(x.mean(axis=0) - [1, 1]) < 0.01)
    assert np.all(np.abs(x.var(axis=0) / 0.5 - 1) < 0.03)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.integers(0, 2 ** 32))
def test_exact_initial_moment_match_within_5se(nu, seed):
    m = GaussianConjugateModel([2.0, 0.0], 1.0, 1.0, cut=NormalCut([0, 0], scale=0.5))
    n = 20_000
    x = sample_initial_conditional(m, nu, seed, n)
    mean, c = gaussian_posterior_params(m, nu)
    assert np.all(np.abs(x.mean(axis=0) - mean) < 5 * math.sqrt(c / n))
    # var of the sample variance of a normal is 2 c^2 / (n - 1)
    assert np.all(np.abs(x.var(axis=0, ddof=1) - c) < 5 * c * math.sqrt(2 / (n - 1)))


def test_single_initial_draw(testbed):
    x = sample_initial_conditional(testbed, [0, 0], 1, 1)
    assert x.shape == (1, 2) and np.all(np.isfinite(x))


def test_toy_model_warmup_initial_draws_in_box(appc):
    x = sample_initial_conditional(appc, [0.6], 2, 100, KernelConfig("slice", slice_width=6.0),
                                   warmup=500)
    assert x.shape == (100, 2)
    assert np.all(np.abs(x) <= 30)


def test_initial_without_sampler_or_kernel(appc):
    with pytest.raises(ConfigurationError):
        sample_initial_conditional(appc, [0.6], 0, 5)


def test_gaussian_posterior_params_example(testbed):
    mean, c = gaussian_posterior_params(testbed, [0, 2])
    assert np.allclose(mean, [1, 1], rtol=0, atol=1e-15) and c == 0.5


def test_weak_prior_mean_tends_to_data():
    m = GaussianConjugateModel([2.0, -1.0], 1.0, 1e3, cut=NormalCut([0, 0], scale=1))
    mean, _ = gaussian_posterior_params(m, [5.0, 5.0])
    assert np.allclose(mean, [2.0, -1.0], rtol=1e-5)


@given(st.lists(finite, min_size=2, max_size=2))
def test_mean_equals_data_when_f_hits_data(nu):
    y = np.array([0.3, -1.2])
    m = GaussianConjugateModel(y, 2.0, 2.0, f=lambda v: y, cut=NormalCut([0, 0], scale=1))
    mean, _ = gaussian_posterior_params(m, nu)
    assert np.array_equal(mean, y)


def test_forward_examples():
    assert np.array_equal(appendixc_forward(0.0, 0.0, 0.0), [0.0, 0.0])
    out = appendixc_forward(1.0, 2.0, 1.0)
    assert out[0] == pytest.approx(math.sin(1) * math.cos(2) * math.tan(1), rel=1e-14)
    assert out[0] == pytest.approx(-0.545366, abs=5e-7)
    assert out[1] == 6.0
    assert appendixc_forward(1.0, 2.0, 0.3)[1] == pytest.approx(5.09, rel=1e-15)


def test_forward_singular():
    with pytest.raises(SingularInputError):
        appendixc_forward(1.0, 2.0, math.pi / 2)


@given(finite, finite, st.floats(-1.4, 1.4))
def test_forward_odd_in_theta1(t1, t2, nu):
    a = appendixc_forward(t1, t2, nu)
    b = appendixc_forward(-t1, t2, nu)
    assert b[0] == -a[0] and b[1] == a[1]


def test_toy_model_data_regenerates_from_seed():
    noise = StreamKey(1729).generator().normal(size=2) * np.sqrt([0.1, 1.0])
    assert np.allclose(appendixc_forward(1.0, 2.0, 1.0) + noise, APPENDIX_C_Y_OBS, rtol=1e-14, atol=0)


def test_toy_model_gradient_matches_finite_differences(appc):
    nu = np.array([0.8])
    th = np.array([0.9, 1.7])
    g = appc.grad_log_unnorm(nu, th)
    h = 1e-6
    fd = [(appc.log_unnorm(nu, th + e) - appc.log_unnorm(nu, th - e)) / (2 * h)
          for e in np.eye(2) * h]
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-6)


def test_gaussian_gradient(testbed):
    nu, th = np.array([0.1, 0.2]), np.array([0.5, -0.3])
    mean, c = gaussian_posterior_params(testbed, nu)
    assert np.allclose(testbed.grad_log_unnorm(nu, th), -(th - mean) / c)


def test_gaussian_overdispersed_start(testbed):
    x = testbed.overdispersed_start([0, 0], np.random.default_rng(0))
    assert np.allclose(np.abs(x - testbed.mean([0, 0])), 3 * math.sqrt(0.5))


def test_cut_dimension_checked():
    with pytest.raises(InvalidInputError):
        GaussianConjugateModel([0.0, 0.0], 1, 1, cut=UniformCut([0], [1]), d_nu=2)


def test_invalid_sigma():
    with pytest.raises(InvalidInputError):
        GaussianConjugateModel([0.0], 0.0, 1.0)


@pytest.fixture
def external_script(tmp_path):
    script = tmp_path / "model.py"
    script.write_text(textwrap.dedent("""
        import sys
        for line in sys.stdin:
            nu, t1, t2 = map(float, line.split())
            print(repr(-0.5 * ((t1 - nu) ** 2 + t2 ** 2)), flush=True)
    """))
    return [sys.executable, str(script)]


def test_external_model_protocol(external_script):
    m = ExternalProcessModel(external_script, 2, 1, UniformCut([0], [1]),
                             support_box=([-10, -10], [10, 10]))
    try:
        assert m.log_unnorm(np.array([0.5]), np.array([1.5, 2.0])) == -0.5 * (1.0 + 4.0)
        assert m.log_unnorm(np.array([0.5]), np.array([11.0, 0.0])) == -math.inf
        clone = pickle.loads(pickle.dumps(m))
        assert clone.log_unnorm(np.array([0.0]), np.array([0.0, 0.0])) == 0.0
        clone.close()
    finally:
        m.close()


def test_external_model_nan(tmp_path):
    script = tmp_path / "nan.py"
    script.write_text("import sys\nfor line in sys.stdin:\n    print('nan', flush=True)\n")
    m = ExternalProcessModel([sys.executable, str(script)], 1, 1, UniformCut([0], [1]),
                             start=[0.0])
    try:
        with pytest.raises(ModelEvaluationError):
            m.log_unnorm(np.array([0.5]), np.array([0.0]))
    finally:
        m.close()
