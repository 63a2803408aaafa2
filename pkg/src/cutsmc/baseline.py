"""Direct sampling reference: one MCMC chain per cut draw, pooled.

Also holds the diagnostics used to compare sample sets: split R-hat, the
two-sample Kolmogorov-Smirnov statistic and the energy distance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateChainsError, InvalidInputError, KernelFailureError
from .kernels import KernelConfig, MoveStats, mutate, resolve_kernel
from .rng import CHAIN, CUT_DRAWS, START, as_key
from .sequencing import CutSequence, draw_cut_sequence

__all__ = [
    "DirectRun",
    "ComparisonReport",
    "run_direct",
    "split_rhat",
    "ks_statistic",
    "energy_distance",
    "compare_runs",
    "DirectSampler",
]


@dataclass
class DirectRun:
    sequence: CutSequence
    chains: List[np.ndarray]  # per cut point, (L - burn_in) x d after thinning
    chain_length: int
    burn_in: int
    thin: int
    acceptance_rates: List[float]
    seed: dict
    wall_time: float = 0.0

    def pooled(self):
        """(nu, theta, s, iteration) arrays over every kept state."""
        nus, thetas, ss, its = [], [], [], []
        for s, (nu, ch) in enumerate(zip(self.sequence.points, self.chains)):
            nus.append(np.tile(nu, (ch.shape[0], 1)))
            thetas.append(ch)
            ss.append(np.full(ch.shape[0], s))
            its.append(np.arange(ch.shape[0]))
        return (np.concatenate(nus), np.concatenate(thetas), np.concatenate(ss),
                np.concatenate(its))


def run_direct(model, S: int, kernel: KernelConfig, L: int = 1000, burn_in: Optional[int] = None,
               rng=0, *, thin: int = 1, batch: int = 0, sequence: CutSequence = None) -> DirectRun:
    """Run S + 1 independent chains of length L, one per i.i.d. cut draw.

    Chains start from the model's dispersed start. The first ``burn_in``
    states (default L // 10) are discarded and the rest kept every ``thin``.
    """
    if burn_in is None:
        burn_in = L // 10
    if not (L > burn_in >= 0):
        raise InvalidInputError("need L > burn_in >= 0")
    if thin < 1:
        raise InvalidInputError("thin must be >= 1")
    root = as_key(rng)
    key = root.child(batch)
    kernel = resolve_kernel(kernel, model)
    t0 = time.perf_counter()
    seq = sequence if sequence is not None else draw_cut_sequence(
        model, S, key.child(CUT_DRAWS).generator())
    chains, rates = [], []
    grad_for = (model.target_grad if kernel.gradient is None
                else (lambda nu: (lambda th: kernel.gradient(nu, th))))
    for s, nu in enumerate(seq.points):
        target = model.target(nu)
        grad = grad_for(nu) if kernel.kind == "mala" else None
        theta = model.overdispersed_start(nu, key.child(START, s).generator())
        gen = key.child(CHAIN, s).generator()
        kept = []
        stats = MoveStats()
        for it in range(L):
            try:
                theta = mutate(kernel, target, theta, 1, gen, gradient=grad, stats=stats)
            except KernelFailureError as exc:
                raise KernelFailureError(f"{exc} in chain {s} at iteration {it}") from exc
            if it >= burn_in and (it - burn_in) % thin == 0:
                kept.append(theta)
        chains.append(np.array(kept))
        rates.append(stats.rate)
    return DirectRun(seq, chains, L, burn_in, thin, rates,
                     {"seed": root.seed, "batch": batch, "path": list(key.path)},
                     time.perf_counter() - t0)


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction factor.

    Each chain is cut into two halves (dropping the middle state when the
    length is odd) and the classic between/within variance ratio is taken
    over the 2M halves.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("need an (M >= 2, n) array of chains")
    if x.shape[1] < 4:
        raise InvalidInputError("chains must have length >= 4")
    half = x.shape[1] // 2
    parts = np.vstack([x[:, :half], x[:, x.shape[1] - half:]])
    n = parts.shape[1]
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    if not W > 0:
        raise DegenerateChainsError("within-chain variance is zero")
    B = n * means.var(ddof=1)
    return float(math.sqrt(((n - 1) / n * W + B / n) / W))


def ks_statistic(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| for two empirical distributions."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("both samples must be nonempty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _mean_pairwise(x, y, chunk=2048):
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        total += cdist(x[i: i + chunk], y).sum()
    return total / (x.shape[0] * y.shape[0])


def _mean_pairwise_1d(x, y):
    # mean |x_i - y_j| via sorting: O((n + m) log(n + m))
    y = np.sort(y)
    csum = np.concatenate([[0.0], np.cumsum(y)])
    k = np.searchsorted(y, x, side="right")
    below = k * x - csum[k]
    above = (csum[-1] - csum[k]) - (y.size - k) * x
    return float((below + above).sum()) / (x.size * y.size)


def energy_distance(a, b) -> float:
    """V-statistic energy distance 2 E|A - B| - E|A - A'| - E|B - B'|."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidInputError("both samples must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] == 1:
        pair = _mean_pairwise_1d
        a, b = a[:, 0], b[:, 0]
    else:
        pair = _mean_pairwise
    value = 2.0 * pair(a, b) - pair(a, a) - pair(b, b)
    return max(0.0, float(value))


@dataclass
class ComparisonReport:
    ks: List[float]
    energy_distance: float
    n_a: int
    n_b: int
    threshold_ks: float
    threshold_ed: Optional[float]
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(k <= self.threshold_ks for k in self.ks) and (
            self.threshold_ed is None or self.energy_distance <= self.threshold_ed)

    def as_dict(self):
        return {
            "ks": list(self.ks), "energy_distance": self.energy_distance,
            "n_a": self.n_a, "n_b": self.n_b, "threshold_ks": self.threshold_ks,
            "threshold_ed": self.threshold_ed, "passed": self.passed,
        }


def compare_runs(a, b, threshold_ks: float = 0.1, threshold_ed: Optional[float] = None
                 ) -> ComparisonReport:
    """Per-marginal KS statistics and the joint energy distance between two pools."""
    a = check_array(a, ensure_min_samples=1)
    b = check_array(b, ensure_min_samples=1)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError("sample sets have different dimensions")
    ks = [ks_statistic(a[:, j], b[:, j]) for j in range(a.shape[1])]
    return ComparisonReport(ks, energy_distance(a, b), a.shape[0], b.shape[0],
                            threshold_ks, threshold_ed)


class DirectSampler(BaseEstimator):
    """Direct (multiple-imputation) sampler with a scikit-learn style interface."""

    def __init__(self, S=9, L=1000, burn_in=None, thin=1, kernel="slice", step_size=None,
                 slice_width=None, slice_max_doublings=16, seed=0, batch_count=1):
        self.S = S
        self.L = L
        self.burn_in = burn_in
        self.thin = thin
        self.kernel = kernel
        self.step_size = step_size
        self.slice_width = slice_width
        self.slice_max_doublings = slice_max_doublings
        self.seed = seed
        self.batch_count = batch_count

    def kernel_config(self):
        return KernelConfig(self.kernel, self.step_size, self.slice_width,
                            self.slice_max_doublings)

    def fit(self, model, y=None):
        kern = self.kernel_config()
        self.runs_ = [run_direct(model, self.S, kern, self.L, self.burn_in, self.seed,
                                 thin=self.thin, batch=b) for b in range(self.batch_count)]
        parts = [r.pooled() for r in self.runs_]
        self.nu_ = np.concatenate([p[0] for p in parts])
        self.theta_ = np.concatenate([p[1] for p in parts])
        self.batch_ = np.concatenate([np.full(p[1].shape[0], b) for b, p in enumerate(parts)])
        return self

    def estimate(self, g) -> float:
        check_is_fitted(self, "runs_")
        return float(np.mean([g(nu, th) for nu, th in zip(self.nu_, self.theta_)]))

    def sample(self):
        check_is_fitted(self, "runs_")
        return self.nu_, self.theta_
