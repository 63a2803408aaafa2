"""Target models: a cut distribution plus a conditional posterior known up to
its normalizing constant.

A model exposes ``log_unnorm(nu, theta)`` (log q(theta; nu)), draws from the
cut distribution, and optionally an exact sampler for the conditional
posterior. All densities live in log space. Models hold no random state;
every sampling method takes the caller's generator.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import (
    ConfigurationError,
    InvalidInputError,
    ModelEvaluationError,
    SingularInputError,
)
from .rng import as_generator

__all__ = [
    "UniformCut",
    "NormalCut",
    "PointMassCut",
    "ConditionalTargetModel",
    "CallableModel",
    "GaussianConjugateModel",
    "AppendixCModel",
    "ExternalProcessModel",
    "APPENDIX_C_Y_OBS",
    "appendixc_forward",
    "gaussian_posterior_params",
    "log_unnorm_conditional",
    "sample_cut",
    "sample_initial_conditional",
    "WARMUP_STEPS",
    "WARMUP_THIN",
]

WARMUP_STEPS = 5000
WARMUP_THIN = 10
_TAN_TOL = 1e-12

# y_obs for the non-Gaussian toy: f(1, 2, 1) plus N(0, diag(0.1, 1)) noise
# drawn from StreamKey(1729).generator().normal(size=2).
APPENDIX_C_Y_OBS = (-0.41440182985072194, 5.7376465416968525)


def _vector(x, name="value") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------------
# cut distributions


class UniformCut:
    """Independent uniform coordinates on a box."""

    def __init__(self, low, high):
        self.low = _vector(low, "low")
        self.high = _vector(high, "high")
        if self.low.shape != self.high.shape or np.any(self.high < self.low):
            raise InvalidInputError("uniform cut distribution needs low <= high of equal length")
        self.dim = self.low.size

    @property
    def box(self):
        return self.low, self.high

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    def sample(self, rng, count):
        return self.low + (self.high - self.low) * rng.random((count, self.dim))


class NormalCut:
    """Multivariate normal cut distribution.

    ``scale`` gives an isotropic standard deviation; ``cov`` a full matrix.
    """

    box = None

    def __init__(self, mean, cov=None, scale=None):
        self.mean = _vector(mean, "mean")
        self.dim = self.mean.size
        if cov is None:
            s = 1.0 if scale is None else float(scale)
            if s < 0:
                raise InvalidInputError("scale must be nonnegative")
            cov = (s * s) * np.eye(self.dim)
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if self.cov.shape != (self.dim, self.dim):
            raise InvalidInputError("cov shape does not match mean")
        # Cholesky with a jitter-free fallback for PSD (e.g. degenerate) covariances
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            vals, vecs = np.linalg.eigh(self.cov)
            if np.any(vals < -1e-12 * max(1.0, np.abs(vals).max())):
                raise InvalidInputError("cov must be positive semi-definite")
            self._chol = vecs * np.sqrt(np.clip(vals, 0.0, None))

    def sample(self, rng, count):
        z = rng.standard_normal((count, self.dim))
        return self.mean + z @ self._chol.T


class PointMassCut:
    box = None

    def __init__(self, value):
        self.value = _vector(value, "value")
        self.dim = self.value.size
        self.mean = self.value

    def sample(self, rng, count):
        return np.tile(self.value, (count, 1))


# --------------------------------------------------------------------------
# models


class ConditionalTargetModel:
    """Base class for cut models.

    Subclasses set ``d``, ``d_nu``, ``cut`` (an object with ``sample(rng,
    count)``) and implement :meth:`log_unnorm`. Optional capabilities are
    ``grad_log_unnorm``, ``sample_conditional`` (flagged by
    ``has_exact_sampler``) and ``support_box``.
    """

    d: int
    d_nu: int
    cut = None
    support_box: Optional[tuple] = None
    has_exact_sampler = False
    has_gradient = False

    def _check_dims(self):
        if int(self.d) < 1 or int(self.d_nu) < 1:
            raise InvalidInputError("model dimensions must be >= 1")
        if self.cut is not None and getattr(self.cut, "dim", self.d_nu) != self.d_nu:
            raise InvalidInputError(
                f"cut distribution has dimension {self.cut.dim}, model expects {self.d_nu}"
            )
        if self.support_box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.support_box)
            if lo.shape != (self.d,) or hi.shape != (self.d,) or np.any(hi <= lo):
                raise InvalidInputError("support_box must be two length-d vectors with low < high")
            self.support_box = (lo, hi)

    def log_unnorm(self, nu, theta) -> float:
        raise NotImplementedError

    def grad_log_unnorm(self, nu, theta) -> np.ndarray:
        raise ConfigurationError(f"{type(self).__name__} provides no gradient")

    def sample_cut(self, rng, count) -> np.ndarray:
        if self.cut is None:
            raise ConfigurationError(f"{type(self).__name__} has no cut distribution")
        return np.asarray(self.cut.sample(rng, count), dtype=float).reshape(count, self.d_nu)

    def sample_conditional(self, nu, rng, n) -> np.ndarray:
        raise ConfigurationError(f"{type(self).__name__} has no exact conditional sampler")

    def target(self, nu) -> Callable[[np.ndarray], float]:
        """log q(. ; nu) as a function of theta alone."""
        nu = np.asarray(nu, dtype=float)
        return lambda theta: self.log_unnorm(nu, theta)

    def target_grad(self, nu) -> Callable[[np.ndarray], np.ndarray]:
        nu = np.asarray(nu, dtype=float)
        return lambda theta: self.grad_log_unnorm(nu, theta)

    def overdispersed_start(self, nu, rng) -> np.ndarray:
        """A dispersed starting point for an MCMC chain at ``nu``."""
        if self.support_box is not None:
            lo, hi = self.support_box
            return lo + (hi - lo) * rng.random(self.d)
        raise ConfigurationError(
            f"{type(self).__name__} needs a support box or start point for chain initialization"
        )

    @property
    def cut_box(self):
        return getattr(self.cut, "box", None)

    def default_slice_width(self) -> float:
        if self.support_box is not None:
            lo, hi = self.support_box
            return float(np.min(hi - lo)) / 10.0
        return 1.0


class CallableModel(ConditionalTargetModel):
    """Black-box model assembled from Python callables."""

    def __init__(self, d, d_nu, log_unnorm, cut, *, grad=None, exact_sampler=None,
                 support_box=None, start=None):
        self.d = int(d)
        self.d_nu = int(d_nu)
        self.cut = cut
        self.support_box = support_box
        self._log_unnorm = log_unnorm
        self._grad = grad
        self._exact = exact_sampler
        self._start = None if start is None else _vector(start, "start")
        self.has_exact_sampler = exact_sampler is not None
        self.has_gradient = grad is not None
        self._check_dims()

    def log_unnorm(self, nu, theta):
        if self.support_box is not None:
            lo, hi = self.support_box
            if np.any(theta < lo) or np.any(theta > hi):
                return -math.inf
        return float(self._log_unnorm(nu, theta))

    def grad_log_unnorm(self, nu, theta):
        if self._grad is None:
            return super().grad_log_unnorm(nu, theta)
        return np.asarray(self._grad(nu, theta), dtype=float)

    def sample_conditional(self, nu, rng, n):
        if self._exact is None:
            return super().sample_conditional(nu, rng, n)
        return np.asarray(self._exact(nu, rng, n), dtype=float).reshape(n, self.d)

    def overdispersed_start(self, nu, rng):
        if self._start is not None:
            return self._start.copy()
        return super().overdispersed_start(nu, rng)


class GaussianConjugateModel(ConditionalTargetModel):
    """y | theta ~ N(theta, sigma^2 I), theta | nu ~ N(f(nu), sigma_p^2 I).

    The conditional posterior is N(w y + (1 - w) f(nu), c I) with
    w = sigma^-2 / (sigma^-2 + sigma_p^-2) and c = 1 / (sigma^-2 + sigma_p^-2).
    ``log_unnorm`` is the exact kernel -||theta - m(nu)||^2 / (2c); its
    normalizer (2 pi c)^(d/2) does not depend on nu.
    """

    has_exact_sampler = True
    has_gradient = True

    def __init__(self, y, sigma, sigma_p, f=None, cut=None, *, lipschitz_delta=None,
                 d_nu=None):
        self.y = _vector(y, "y")
        self.d = self.y.size
        self.sigma = float(sigma)
        self.sigma_p = float(sigma_p)
        if not (self.sigma > 0 and self.sigma_p > 0):
            raise InvalidInputError("sigma and sigma_p must be positive")
        self.f = f if f is not None else (lambda nu: np.asarray(nu, dtype=float))
        self.cut = cut
        if d_nu is None:
            d_nu = cut.dim if cut is not None else self.d
        self.d_nu = int(d_nu)
        self.lipschitz_delta = None if lipschitz_delta is None else float(lipschitz_delta)
        prec = self.sigma ** -2 + self.sigma_p ** -2
        self.w = self.sigma ** -2 / prec
        self.c = 1.0 / prec
        self._check_dims()

    def mean(self, nu) -> np.ndarray:
        fnu = np.asarray(self.f(np.asarray(nu, dtype=float)), dtype=float).reshape(-1)
        if fnu.size != self.d:
            raise InvalidInputError(f"f(nu) has length {fnu.size}, expected {self.d}")
        return self.w * self.y + (1.0 - self.w) * fnu

    def log_unnorm(self, nu, theta):
        r = np.asarray(theta, dtype=float) - self.mean(nu)
        return float(-(r @ r) / (2.0 * self.c))

    def grad_log_unnorm(self, nu, theta):
        return -(np.asarray(theta, dtype=float) - self.mean(nu)) / self.c

    def target(self, nu):
        m = self.mean(nu)
        two_c = 2.0 * self.c

        def logq(theta):
            r = theta - m
            return float(-(r @ r) / two_c)

        return logq

    def target_grad(self, nu):
        m = self.mean(nu)
        c = self.c
        return lambda theta: -(theta - m) / c

    def sample_conditional(self, nu, rng, n):
        m = self.mean(nu)
        return m + math.sqrt(self.c) * rng.standard_normal((n, self.d))

    def overdispersed_start(self, nu, rng):
        signs = np.where(rng.random(self.d) < 0.5, -1.0, 1.0)
        return self.mean(nu) + 3.0 * math.sqrt(self.c) * signs


def gaussian_posterior_params(spec: GaussianConjugateModel, nu):
    """Mean vector and scalar variance of pi(theta | y, nu)."""
    return spec.mean(nu), spec.c


def appendixc_forward(theta1, theta2, nu):
    """(sin t1 cos t2 tan nu, t1^2 + t2^2 + nu^2)."""
    cos_nu = math.cos(nu)
    if abs(cos_nu) < _TAN_TOL:
        raise SingularInputError(f"tan(nu) is singular at nu={nu!r}")
    return np.array([
        math.sin(theta1) * math.cos(theta2) * (math.sin(nu) / cos_nu),
        theta1 * theta1 + theta2 * theta2 + nu * nu,
    ])


class AppendixCModel(ConditionalTargetModel):
    """Two calibration parameters, one cut parameter, nonlinear forward map.

    y | theta, nu ~ N(f(theta, nu), diag(0.1, 1)) with theta uniform on
    [-30, 30]^2. The log density drops the Gaussian normalizer, which does
    not depend on nu or theta.
    """

    has_gradient = True
    noise_vars = (0.1, 1.0)
    prior_half_width = 30.0

    def __init__(self, y_obs=APPENDIX_C_Y_OBS, cut=None):
        self.y_obs = _vector(y_obs, "y_obs")
        if self.y_obs.size != 2:
            raise InvalidInputError("y_obs must have two components")
        self.d = 2
        self.d_nu = 1
        self.cut = cut if cut is not None else UniformCut([0.3], [1.0])
        h = self.prior_half_width
        self.support_box = (np.array([-h, -h]), np.array([h, h]))
        self._check_dims()

    def _tan(self, nu):
        nu = float(np.asarray(nu, dtype=float).reshape(-1)[0])
        c = math.cos(nu)
        if abs(c) < _TAN_TOL:
            raise SingularInputError(f"tan(nu) is singular at nu={nu!r}")
        return nu, math.sin(nu) / c

    def target(self, nu):
        nu, tan_nu = self._tan(nu)
        y1, y2 = float(self.y_obs[0]), float(self.y_obs[1])
        v1, v2 = self.noise_vars
        h = self.prior_half_width
        nu2 = nu * nu
        sin, cos = math.sin, math.cos

        def logq(theta):
            t1 = float(theta[0])
            t2 = float(theta[1])
            if not (-h <= t1 <= h and -h <= t2 <= h):
                return -math.inf
            r1 = y1 - sin(t1) * cos(t2) * tan_nu
            r2 = y2 - (t1 * t1 + t2 * t2 + nu2)
            return -(r1 * r1) / (2.0 * v1) - (r2 * r2) / (2.0 * v2)

        return logq

    def target_grad(self, nu):
        nu, tan_nu = self._tan(nu)
        y1, y2 = float(self.y_obs[0]), float(self.y_obs[1])
        v1, v2 = self.noise_vars
        nu2 = nu * nu

        def grad(theta):
            t1, t2 = float(theta[0]), float(theta[1])
            s1, c1, s2, c2 = math.sin(t1), math.cos(t1), math.sin(t2), math.cos(t2)
            r1 = y1 - s1 * c2 * tan_nu
            r2 = y2 - (t1 * t1 + t2 * t2 + nu2)
            return np.array([
                r1 / v1 * c1 * c2 * tan_nu + r2 / v2 * 2.0 * t1,
                -r1 / v1 * s1 * s2 * tan_nu + r2 / v2 * 2.0 * t2,
            ])

        return grad

    def log_unnorm(self, nu, theta):
        return self.target(nu)(theta)

    def grad_log_unnorm(self, nu, theta):
        return self.target_grad(nu)(theta)


class ExternalProcessModel(ConditionalTargetModel):
    """log q evaluated by a long-lived subprocess.

    Wire format, one request per line (UTF-8, LF terminated): the d_nu
    components of nu followed by the d components of theta, space
    separated, written with ``repr`` precision. The process answers with a
    single line holding log q as a decimal float (``-inf`` allowed).
    """

    def __init__(self, command, d, d_nu, cut, *, support_box=None, start=None, cwd=None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.d = int(d)
        self.d_nu = int(d_nu)
        self.cut = cut
        self.support_box = support_box
        self.cwd = cwd
        self._start = None if start is None else _vector(start, "start")
        self._proc = None
        self._lock = threading.Lock()
        self._check_dims()

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_proc"] = None
        state["_lock"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def _process(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, encoding="utf-8", bufsize=1, cwd=self.cwd,
                )
            except OSError as exc:
                raise ModelEvaluationError(f"cannot start external model {self.command!r}: {exc}")
        return self._proc

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def log_unnorm(self, nu, theta):
        theta = np.asarray(theta, dtype=float)
        if self.support_box is not None:
            lo, hi = self.support_box
            if np.any(theta < lo) or np.any(theta > hi):
                return -math.inf
        values = np.concatenate([np.asarray(nu, dtype=float).reshape(-1), theta.reshape(-1)])
        line = " ".join(repr(float(v)) for v in values) + "\n"
        with self._lock:
            proc = self._process()
            try:
                proc.stdin.write(line)
                proc.stdin.flush()
                reply = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ModelEvaluationError(f"external model pipe failed: {exc}")
        if not reply:
            raise ModelEvaluationError("external model closed its output")
        try:
            value = float(reply.strip())
        except ValueError:
            raise ModelEvaluationError(f"external model replied {reply.strip()!r}")
        if math.isnan(value):
            raise ModelEvaluationError(f"external model returned NaN at nu={nu}, theta={theta}")
        return value

    def overdispersed_start(self, nu, rng):
        if self._start is not None:
            return self._start.copy()
        return super().overdispersed_start(nu, rng)


# --------------------------------------------------------------------------
# validated entry points


def log_unnorm_conditional(model: ConditionalTargetModel, nu, theta) -> float:
    nu = _vector(nu, "nu")
    theta = _vector(theta, "theta")
    if nu.size != model.d_nu or theta.size != model.d:
        raise InvalidInputError(
            f"expected nu of length {model.d_nu} and theta of length {model.d}, "
            f"got {nu.size} and {theta.size}"
        )
    value = float(model.log_unnorm(nu, theta))
    if math.isnan(value):
        raise ModelEvaluationError(f"log density is NaN at nu={nu}, theta={theta}")
    return value


def sample_cut(model: ConditionalTargetModel, rng, count: int) -> np.ndarray:
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    return model.sample_cut(as_generator(rng), int(count))


def sample_initial_conditional(model: ConditionalTargetModel, nu0, rng, n: int,
                               kernel=None, *, warmup=WARMUP_STEPS, thin=WARMUP_THIN):
    """Draw ``n`` particles from pi(theta | y, nu0).

    Uses the model's exact sampler when it has one. Otherwise a single chain
    runs ``warmup`` kernel steps from a dispersed start and then keeps every
    ``thin``-th state; the draws are only approximately independent.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = as_generator(rng)
    nu0 = _vector(nu0, "nu0")
    if model.has_exact_sampler:
        return model.sample_conditional(nu0, rng, int(n))
    if kernel is None:
        raise ConfigurationError("model has no exact sampler and no kernel was configured")
    from .kernels import mutate

    target = model.target(nu0)
    grad = model.target_grad(nu0) if kernel.kind == "mala" else None
    theta = model.overdispersed_start(nu0, rng)
    theta = mutate(kernel, target, theta, warmup, rng, gradient=grad)
    out = np.empty((n, model.d))
    for i in range(n):
        theta = mutate(kernel, target, theta, thin, rng, gradient=grad)
        out[i] = theta
    return out
