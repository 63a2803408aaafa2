"""Finite-sample requirements for cut-Bayes SMC and chi-squared divergences.

Sample-size formulas (natural logarithms throughout)::

    S >= (2 / eps^2) log(6 / delta)
    N >= log(6 (S + 1) / delta) * max(18 E, 2 / eps^2)
    N >= log(6 ((P + 1) S + 1) / delta) * max(18 E*, 2 / eps^2)   # tempered

E (``e_alpha``) bounds 1 + max consecutive chi^2(mu_s || mu_{s-1}) with
probability at least 1 - delta_alpha. The mixing-time requirement on t
cannot be computed for general targets and is only restated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .exceptions import Chi2OverflowWarning, InvalidInputError
from .rng import as_generator

__all__ = [
    "BoundsRequest",
    "BoundsReport",
    "required_S",
    "required_N",
    "required_N_tempered",
    "chi2_gaussian_closed_form",
    "chi2_lipschitz_bound",
    "chi2_self_normalized_mc",
    "subgaussian_e_alpha",
    "subgaussian_tail",
    "e_alpha_from_sequence",
    "bounds_report",
    "T_REQUIREMENT",
]

OVERFLOW_EXPONENT = 700.0

T_REQUIREMENT = (
    "t must be at least the largest warm mixing time tau_s(delta / (6 N K), M=2) over "
    "all visited steps, where K = S + 1 (or (P + 1) S + 1 when tempering): enough kernel "
    "applications that any 2-warm start is within that total-variation distance of the "
    "step's conditional posterior. It is not computed here; t is taken from the run "
    "configuration. For a Gaussian conditional posterior (condition number 1) MALA "
    "needs t = O*(d^(1/2)), so N S t = O*(d^(1/2) / eps^2 * max(E, 1 / eps^2))."
)


def _check_eps_delta(epsilon, delta):
    if not (0.0 < epsilon < 1.0):
        raise InvalidInputError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if not (0.0 < delta < 0.25):
        raise InvalidInputError(f"delta must lie in (0, 1/4), got {delta!r}")


def _check_e(e_alpha, name="e_alpha"):
    if not (e_alpha > 1.0 and math.isfinite(e_alpha)):
        raise InvalidInputError(f"{name} must be a finite value > 1, got {e_alpha!r}")


def required_S(epsilon: float, delta: float) -> int:
    _check_eps_delta(epsilon, delta)
    return math.ceil((2.0 / epsilon ** 2) * math.log(6.0 / delta))


def required_N(epsilon: float, delta: float, S: int, e_alpha: float) -> int:
    _check_eps_delta(epsilon, delta)
    _check_e(e_alpha)
    if S < 0:
        raise InvalidInputError("S must be >= 0")
    return math.ceil(math.log(6.0 * (S + 1) / delta) * max(18.0 * e_alpha, 2.0 / epsilon ** 2))


def required_N_tempered(epsilon: float, delta: float, S: int, P: int,
                        e_alpha_star: float) -> int:
    _check_eps_delta(epsilon, delta)
    _check_e(e_alpha_star, "e_alpha_star")
    if S < 0 or P < 0:
        raise InvalidInputError("S and P must be >= 0")
    steps = (P + 1) * S + 1
    return math.ceil(math.log(6.0 * steps / delta) * max(18.0 * e_alpha_star, 2.0 / epsilon ** 2))


def _overflows(exponent: float) -> bool:
    if exponent > OVERFLOW_EXPONENT:
        warnings.warn(
            f"chi-squared exponent {exponent:.4g} overflows; reported as +inf. "
            "Temper (P >= 1) or permute the cut sequence to shrink consecutive steps.",
            Chi2OverflowWarning, stacklevel=4,
        )
        return True
    return False


def _expm1_checked(exponent: float) -> float:
    return math.inf if _overflows(exponent) else math.expm1(exponent)


def _exp_checked(exponent: float) -> float:
    return math.inf if _overflows(exponent) else math.exp(exponent)


def chi2_gaussian_closed_form(spec, nu_a, nu_b) -> float:
    """chi^2 between the Gaussian conditional posteriors at two cut points.

    Both are N(w y + (1 - w) f(nu), c I), so
    chi^2 + 1 = exp((1 - w)^2 ||f(nu_a) - f(nu_b)||^2 / c), symmetric in a, b.
    """
    fa = np.asarray(spec.f(np.asarray(nu_a, dtype=float)), dtype=float).reshape(-1)
    fb = np.asarray(spec.f(np.asarray(nu_b, dtype=float)), dtype=float).reshape(-1)
    diff = fa - fb
    return _expm1_checked((1.0 - spec.w) ** 2 * float(diff @ diff) / spec.c)


def chi2_lipschitz_bound(delta_lip: float, w: float, c: float, dist: float) -> float:
    """exp((1 - w)^2 Delta^2 dist^2 / c) - 1, an upper bound for a Delta-Lipschitz f."""
    if not (delta_lip > 0 and c > 0):
        raise InvalidInputError("Lipschitz constant and c must be positive")
    if not (0.0 <= w <= 1.0):
        raise InvalidInputError("w must lie in [0, 1]")
    if dist < 0:
        raise InvalidInputError("distance must be nonnegative")
    return _expm1_checked((1.0 - w) ** 2 * delta_lip ** 2 * dist ** 2 / c)


@dataclass(frozen=True)
class Chi2Estimate:
    value: float
    std_error: float

    def __float__(self):
        return self.value


def chi2_self_normalized_mc(model, nu_a, nu_b, sampler_a=None, n: int = 100_000, rng=0,
                            *, scale_b: float = 0.0) -> Chi2Estimate:
    """Monte Carlo estimate of chi^2(mu_b || mu_a) from exact draws of mu_a.

    With r = q_b / q_a, chi^2 + 1 = E_a[r^2] / E_a[r]^2, which needs neither
    normalizing constant. Ratios are shifted by their maximum in log space.
    ``scale_b`` adds a constant to log q_b (the estimate is invariant to it).
    The standard error is the leave-one-out jackknife.
    """
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    rng = as_generator(rng)
    nu_a = np.asarray(nu_a, dtype=float)
    nu_b = np.asarray(nu_b, dtype=float)
    if sampler_a is None:
        draws = model.sample_conditional(nu_a, rng, n)
    else:
        draws = np.asarray(sampler_a(rng, n), dtype=float)
    qa = model.target(nu_a)
    qb = model.target(nu_b)
    log_r = np.array([qb(th) + scale_b - qa(th) for th in draws])
    if not np.any(log_r > -np.inf):
        raise InvalidInputError("all density ratios are zero (disjoint supports)")
    log_r = log_r - log_r.max()
    r = np.exp(log_r)
    s1 = r.sum()
    s2 = (r * r).sum()
    value = n * s2 / (s1 * s1) - 1.0
    # leave-one-out replicates
    loo = (n - 1) * (s2 - r * r) / (s1 - r) ** 2 - 1.0
    loo = loo[np.isfinite(loo)]
    se = math.sqrt((n - 1) / n * float(((loo - loo.mean()) ** 2).sum())) if loo.size > 1 else math.nan
    return Chi2Estimate(float(value), se)


def subgaussian_e_alpha(d: int, delta_lip: float, sigma_subg: float, w: float, S: int):
    """(E_alpha, delta_alpha) = (exp(20 (1 - w)^2 d Delta^2 / sigma), 2 S e^-d)."""
    if d < 1 or S < 1 or not (delta_lip > 0 and sigma_subg > 0):
        raise InvalidInputError("d, S, Delta and sigma must be positive")
    if not (0.0 <= w <= 1.0):
        raise InvalidInputError("w must lie in [0, 1]")
    e_alpha = _exp_checked(20.0 * (1.0 - w) ** 2 * d * delta_lip ** 2 / sigma_subg)
    return e_alpha, 2.0 * S * math.exp(-d)


def subgaussian_tail(d: int, delta_lip: float, sigma_subg: float, w: float, t_param: float):
    """Threshold exp((4 d (1-w)^2 Delta^2 / sigma)(1 + 2 sqrt(t/d) + 2t/d)) and 2 e^-t."""
    if not t_param > 0:
        raise InvalidInputError("t must be positive")
    if d < 1 or not (delta_lip > 0 and sigma_subg > 0):
        raise InvalidInputError("d, Delta and sigma must be positive")
    base = 4.0 * d * (1.0 - w) ** 2 * delta_lip ** 2 / sigma_subg
    ratio = t_param / d
    return _exp_checked(base * (1.0 + 2.0 * math.sqrt(ratio) + 2.0 * ratio)), 2.0 * math.exp(-t_param)


def e_alpha_from_sequence(model, points, method="closed-form", *, n=100_000, rng=0):
    """1 + max consecutive chi^2 over a realized sequence of cut points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        return 1.0
    rng = as_generator(rng)
    vals = []
    for a, b in zip(pts[:-1], pts[1:]):
        if method == "closed-form":
            vals.append(chi2_gaussian_closed_form(model, a, b))
        elif method == "mc":
            vals.append(chi2_self_normalized_mc(model, a, b, n=n, rng=rng).value)
        else:
            raise InvalidInputError(f"unknown e_alpha method {method!r}")
    return 1.0 + max(vals)


@dataclass(frozen=True)
class BoundsRequest:
    epsilon: float
    delta: float
    e_alpha: float
    P: int = 0
    t_assumed: int = 5
    e_alpha_source: str = "user"

    def __post_init__(self):
        _check_eps_delta(self.epsilon, self.delta)
        _check_e(self.e_alpha)
        if self.P < 0:
            raise InvalidInputError("P must be >= 0")
        if self.t_assumed < 1:
            raise InvalidInputError("t_assumed must be >= 1")


@dataclass(frozen=True)
class BoundsReport:
    S_min: int
    N_min: int
    t_note: str
    total_cost: int
    tempered: bool
    P: int
    e_alpha: float
    e_alpha_source: str
    visited_steps: int

    def as_dict(self):
        return asdict(self)

    def to_text(self) -> str:
        kind = f"tempered (P={self.P})" if self.tempered else "plain"
        return "\n".join([
            f"variant:        {kind}",
            f"E_alpha:        {self.e_alpha!r} ({self.e_alpha_source})",
            f"S_min:          {self.S_min}",
            f"N_min:          {self.N_min}",
            f"visited steps:  {self.visited_steps}",
            f"total cost:     {self.total_cost}  (N_min * S_min * t)",
            f"t requirement:  {self.t_note}",
        ])


def bounds_report(req: BoundsRequest) -> BoundsReport:
    S = required_S(req.epsilon, req.delta)
    if req.P > 0:
        N = required_N_tempered(req.epsilon, req.delta, S, req.P, req.e_alpha)
    else:
        N = required_N(req.epsilon, req.delta, S, req.e_alpha)
    return BoundsReport(
        S_min=S, N_min=N, t_note=T_REQUIREMENT, total_cost=N * S * req.t_assumed,
        tempered=req.P > 0, P=req.P, e_alpha=req.e_alpha, e_alpha_source=req.e_alpha_source,
        visited_steps=(req.P + 1) * S + 1,
    )
