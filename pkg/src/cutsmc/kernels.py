"""Target-invariant MCMC mutation kernels.

Each step function moves a single state ``theta`` (a 1-d array) under a log
density ``target`` evaluated at a fixed cut point. Steps consume only the
generator they are handed, so a particle's trajectory is a pure function of
its start and its stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import (
    ConfigurationError,
    InvalidStateError,
    KernelFailureError,
    ModelEvaluationError,
)

__all__ = [
    "KernelConfig",
    "MoveStats",
    "mh_accept_prob",
    "mala_log_proposal",
    "rwmh_step",
    "mala_step",
    "slice_step",
    "mutate",
    "resolve_kernel",
]

KINDS = ("random-walk", "mala", "slice")
_MAX_SHRINK = 500


@dataclass(frozen=True)
class KernelConfig:
    """Kernel choice and tuning.

    ``step_size`` is the proposal standard deviation for random-walk and the
    Langevin step h for MALA (drift h^2/2 * grad, noise h * N(0, I)).
    ``slice_width`` is the initial bracket width of the slice sampler; the
    bracket doubles at most ``slice_max_doublings`` times.
    ``gradient`` maps (nu, theta) to grad log q; models with an analytic
    gradient supply it automatically.
    """

    kind: str = "slice"
    step_size: Optional[float] = None
    slice_width: Optional[float] = None
    slice_max_doublings: int = 16
    gradient: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"kernel kind must be one of {KINDS}, got {self.kind!r}")
        if self.step_size is not None and not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise ConfigurationError(f"kernel step_size must be positive, got {self.step_size!r}")
        if self.slice_width is not None and not (self.slice_width > 0 and math.isfinite(self.slice_width)):
            raise ConfigurationError(f"slice_width must be positive, got {self.slice_width!r}")
        if int(self.slice_max_doublings) < 0:
            raise ConfigurationError("slice_max_doublings must be >= 0")


@dataclass
class MoveStats:
    proposals: int = 0
    accepted: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else float("nan")

    def add(self, other: "MoveStats"):
        self.proposals += other.proposals
        self.accepted += other.accepted


def resolve_kernel(cfg: KernelConfig, model) -> KernelConfig:
    """Fill model-dependent defaults into ``cfg``."""
    updates = {}
    if cfg.kind == "slice" and cfg.slice_width is None:
        updates["slice_width"] = model.default_slice_width()
    if cfg.kind in ("random-walk", "mala") and cfg.step_size is None:
        c = getattr(model, "c", None)
        if c is None:
            raise ConfigurationError(f"kernel.step_size is required for {cfg.kind} on this model")
        d = model.d
        if cfg.kind == "mala":
            updates["step_size"] = math.sqrt(c) * d ** (-1.0 / 6.0)
        else:
            updates["step_size"] = 2.38 * math.sqrt(c / d)
    if cfg.kind == "mala" and cfg.gradient is None and not getattr(model, "has_gradient", False):
        raise ConfigurationError("mala requires a gradient and the model provides none")
    return replace(cfg, **updates) if updates else cfg


def mh_accept_prob(log_p_cur, log_p_prop, log_q_fwd=0.0, log_q_rev=0.0) -> float:
    """min(1, pi(prop) q(cur | prop) / (pi(cur) q(prop | cur)))."""
    if log_p_prop == -math.inf:
        return 0.0
    ratio = (log_p_prop + log_q_rev) - (log_p_cur + log_q_fwd)
    return 1.0 if ratio >= 0 else math.exp(ratio)


def mala_log_proposal(theta_to, theta_from, grad_from, h) -> float:
    """log q(theta_to | theta_from) up to an additive constant."""
    mu = theta_from + 0.5 * h * h * grad_from
    r = theta_to - mu
    return -float(r @ r) / (2.0 * h * h)


def _check_state(log_p):
    if not log_p > -math.inf:
        if isinstance(log_p, float) and math.isnan(log_p):
            raise ModelEvaluationError("target log density is NaN at the current state")
        raise InvalidStateError("target log density is -inf at the current state")


def _eval(target, theta):
    v = float(target(theta))
    if math.isnan(v):
        raise ModelEvaluationError(f"target log density is NaN at {theta}")
    return v


def _rwmh(target, theta, log_p, h, rng):
    prop = theta + h * rng.standard_normal(theta.shape[0])
    log_p_prop = _eval(target, prop)
    if rng.random() < mh_accept_prob(log_p, log_p_prop):
        return prop, log_p_prop, True
    return theta, log_p, False


def _grad(gradient, theta):
    g = np.asarray(gradient(theta), dtype=float)
    if not np.all(np.isfinite(g)):
        raise ModelEvaluationError(f"gradient is not finite at {theta}")
    return g


def _mala(target, gradient, theta, log_p, grad, h, rng):
    prop = theta + 0.5 * h * h * grad + h * rng.standard_normal(theta.shape[0])
    log_p_prop = _eval(target, prop)
    u = rng.random()
    if log_p_prop == -math.inf:
        return theta, log_p, grad, False
    grad_prop = _grad(gradient, prop)
    log_q_fwd = mala_log_proposal(prop, theta, grad, h)
    log_q_rev = mala_log_proposal(theta, prop, grad_prop, h)
    if u < mh_accept_prob(log_p, log_p_prop, log_q_fwd, log_q_rev):
        return prop, log_p_prop, grad_prop, True
    return theta, log_p, grad, False


def _slice_coordinate(target, x, k, log_p, w, max_doublings, rng):
    """Neal's doubling procedure plus shrinkage with the acceptability test."""
    x0 = x[k]
    log_y = log_p - rng.standard_exponential()
    probe = x.copy()

    def f(v):
        probe[k] = v
        return _eval(target, probe)

    left = x0 - w * rng.random()
    right = left + w
    f_left, f_right = f(left), f(right)
    doublings = 0
    while log_y < f_left or log_y < f_right:
        if doublings >= max_doublings:
            # stopping at the cap is part of the valid procedure; only a
            # bracket whose ends match the current density is treated as flat
            if log_y < f_left and log_y < f_right and f_left == f_right == log_p:
                raise KernelFailureError(
                    f"slice bracket still inside the slice after {max_doublings} doublings "
                    f"(coordinate {k}); the target looks flat or improper"
                )
            break
        if rng.random() < 0.5:
            left -= right - left
            f_left = f(left)
        else:
            right += right - left
            f_right = f(right)
        doublings += 1

    lo, hi = left, right
    for _ in range(_MAX_SHRINK):
        x1 = lo + (hi - lo) * rng.random()
        f1 = f(x1)
        if log_y < f1 and _acceptable(f, x0, x1, log_y, left, right, w, doublings):
            probe[k] = x1
            return probe, f1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
    raise KernelFailureError(f"slice shrinkage did not terminate (coordinate {k})")


def _acceptable(f, x0, x1, log_y, left, right, w, doublings):
    if doublings == 0:
        return True
    differ = False
    while right - left > 1.1 * w:
        mid = 0.5 * (left + right)
        if (x0 < mid) != (x1 < mid):
            differ = True
        if x1 < mid:
            right = mid
        else:
            left = mid
        if differ and log_y >= f(left) and log_y >= f(right):
            return False
    return True


def rwmh_step(target, theta, cfg: KernelConfig, rng, *, stats: Optional[MoveStats] = None):
    """One random-walk Metropolis-Hastings step with an isotropic Gaussian proposal."""
    if cfg.step_size is None:
        raise ConfigurationError("random-walk needs a step_size")
    theta = np.asarray(theta, dtype=float)
    log_p = _eval(target, theta)
    _check_state(log_p)
    out, _, acc = _rwmh(target, theta, log_p, cfg.step_size, rng)
    if stats is not None:
        stats.proposals += 1
        stats.accepted += acc
    return out


def mala_step(target, gradient, theta, cfg: KernelConfig, rng, *,
              stats: Optional[MoveStats] = None):
    """One Metropolis-adjusted Langevin step."""
    if cfg.step_size is None:
        raise ConfigurationError("mala needs a step_size")
    theta = np.asarray(theta, dtype=float)
    log_p = _eval(target, theta)
    _check_state(log_p)
    grad = _grad(gradient, theta)
    out, _, _, acc = _mala(target, gradient, theta, log_p, grad, cfg.step_size, rng)
    if stats is not None:
        stats.proposals += 1
        stats.accepted += acc
    return out


def slice_step(target, theta, cfg: KernelConfig, rng, *, stats: Optional[MoveStats] = None):
    """One slice-within-Gibbs sweep over the coordinates in ascending order."""
    x = np.array(theta, dtype=float)
    log_p = _eval(target, x)
    _check_state(log_p)
    w = 1.0 if cfg.slice_width is None else cfg.slice_width
    for k in range(x.shape[0]):
        x, log_p = _slice_coordinate(target, x, k, log_p, w, cfg.slice_max_doublings, rng)
    if stats is not None:
        stats.proposals += 1
        stats.accepted += 1
    return x


def mutate(kernel: KernelConfig, target, theta, t: int, rng, *, gradient=None,
           stats: Optional[MoveStats] = None):
    """Apply ``t`` successive kernel steps; ``t == 0`` returns the input.

    Steps draw from ``rng`` in order, so ``mutate(a + b)`` equals ``mutate(a)``
    followed by ``mutate(b)`` on the same generator.
    """
    if t < 0:
        raise ConfigurationError("t must be >= 0")
    theta = np.array(theta, dtype=float)
    if t == 0:
        return theta
    log_p = _eval(target, theta)
    _check_state(log_p)
    kind = kernel.kind
    acc = 0
    if kind == "random-walk":
        if kernel.step_size is None:
            raise ConfigurationError("random-walk needs a step_size")
        for _ in range(t):
            theta, log_p, a = _rwmh(target, theta, log_p, kernel.step_size, rng)
            acc += a
    elif kind == "mala":
        if gradient is None:
            raise ConfigurationError("mala requires a gradient")
        if kernel.step_size is None:
            raise ConfigurationError("mala needs a step_size")
        grad = _grad(gradient, theta)
        for _ in range(t):
            theta, log_p, grad, a = _mala(target, gradient, theta, log_p, grad,
                                          kernel.step_size, rng)
            acc += a
    else:
        w = 1.0 if kernel.slice_width is None else kernel.slice_width
        for _ in range(t):
            for k in range(theta.shape[0]):
                theta, log_p = _slice_coordinate(target, theta, k, log_p, w,
                                                 kernel.slice_max_doublings, rng)
        acc = t
    if stats is not None:
        stats.proposals += t
        stats.accepted += acc
    return theta
