"""Sequential Monte Carlo over a sequence of cut points.

Particles start from the conditional posterior at the first cut point. At
each following point they are reweighted by q(theta; nu_cur) / q(theta;
nu_prev), multinomially resampled and moved by ``t`` kernel steps that
leave the new conditional posterior invariant. Particle sets at retained
(independently drawn) points feed the estimator

    (1 / (S + 1)) * sum_s (1 / N) * sum_i g(nu_s, theta_s^i).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    ConfigurationError,
    DegenerateWeightsError,
    InvalidInputError,
    KernelFailureError,
    ModelEvaluationError,
)
from .kernels import KernelConfig, MoveStats, mutate, resolve_kernel
from .model import sample_initial_conditional
from .rng import CUT_DRAWS, INITIAL, MUTATE, RESAMPLE, StreamKey, as_generator, as_key
from .sequencing import (
    CutSequence,
    DistanceMetric,
    draw_cut_sequence,
    permute_tsp,
    temper_sequence,
)

__all__ = [
    "SmcConfig",
    "ParticleSystem",
    "StepDiagnostics",
    "SmcRun",
    "importance_log_weights",
    "resample_multinomial",
    "resample_systematic",
    "effective_sample_size",
    "run_cut_smc",
    "estimate",
    "CutSMCSampler",
]


@dataclass(frozen=True)
class SmcConfig:
    N: int = 25
    t: int = 5
    P: int = 0
    permute: bool = False
    kernel: KernelConfig = field(default_factory=KernelConfig)
    seed: int = 0
    batch_count: int = 1
    resampling: str = "multinomial"
    metric: DistanceMetric = field(default_factory=DistanceMetric)
    bottleneck: bool = False
    particle_threads: int = 1

    def __post_init__(self):
        errors = []
        if int(self.N) < 2:
            errors.append("N must be >= 2")
        if int(self.t) < 0:
            errors.append("t must be >= 0")
        if int(self.P) < 0:
            errors.append("P must be >= 0")
        if int(self.batch_count) < 1:
            errors.append("batch_count must be >= 1")
        if self.resampling not in ("multinomial", "systematic"):
            errors.append(f"unknown resampling scheme {self.resampling!r}")
        if int(self.particle_threads) < 1:
            errors.append("particle_threads must be >= 1")
        if errors:
            raise ConfigurationError("; ".join(errors), errors)


@dataclass
class ParticleSystem:
    step_index: int
    nu: np.ndarray
    particles: np.ndarray
    log_weights_next: Optional[np.ndarray] = None


@dataclass
class StepDiagnostics:
    step: int
    retained: bool
    ess: float
    acceptance_rate: float
    wall_time: float


@dataclass
class SmcRun:
    sequence: CutSequence
    retained_systems: List[ParticleSystem]
    diagnostics: List[StepDiagnostics]
    seed: dict
    init_time: float = 0.0
    approximate_init: bool = False
    wall_time: float = 0.0

    @property
    def N(self) -> int:
        return self.retained_systems[0].particles.shape[0]

    def pooled(self):
        """(nu, theta, step) arrays stacking the retained particle sets."""
        nu = np.concatenate([np.tile(ps.nu, (ps.particles.shape[0], 1))
                             for ps in self.retained_systems])
        theta = np.concatenate([ps.particles for ps in self.retained_systems])
        s = np.concatenate([np.full(ps.particles.shape[0], k)
                            for k, ps in enumerate(self.retained_systems)])
        return nu, theta, s


def _normalized(log_weights, step=None):
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(lw)):
        raise ModelEvaluationError("log weights contain NaN")
    top = lw.max()
    if not np.isfinite(top):
        if top == np.inf:
            raise ModelEvaluationError("log weights contain +inf")
        raise DegenerateWeightsError("all importance weights are zero", step)
    w = np.exp(lw - top)
    return w / w.sum()


def importance_log_weights(model, nu_prev, nu_cur, particles, *, step=None):
    """log q(theta; nu_cur) - log q(theta; nu_prev) per particle."""
    particles = np.asarray(particles, dtype=float)
    prev = model.target(np.asarray(nu_prev, dtype=float))
    cur = model.target(np.asarray(nu_cur, dtype=float))
    out = np.empty(particles.shape[0])
    for i, th in enumerate(particles):
        lp = prev(th)
        lc = cur(th)
        if math.isnan(lp) or math.isnan(lc):
            raise ModelEvaluationError(f"log density is NaN for particle {i}")
        out[i] = -math.inf if lc == -math.inf else lc - lp
    if not np.any(out > -math.inf):
        raise DegenerateWeightsError("all importance weights are zero", step)
    return out


def effective_sample_size(log_weights) -> float:
    """(sum w)^2 / sum w^2 from unnormalized log weights."""
    w = _normalized(log_weights)
    return float(1.0 / np.sum(w * w))


def resample_multinomial(particles, log_weights, rng, *, return_indices=False):
    """N i.i.d. categorical ancestor draws with probabilities proportional to the weights."""
    particles = np.asarray(particles)
    w = _normalized(log_weights)
    rng = as_generator(rng)
    n = particles.shape[0]
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return (particles[idx], idx) if return_indices else particles[idx]


def resample_systematic(particles, log_weights, rng, *, return_indices=False):
    particles = np.asarray(particles)
    w = _normalized(log_weights)
    rng = as_generator(rng)
    n = particles.shape[0]
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, (rng.random() + np.arange(n)) / n, side="right")
    return (particles[idx], idx) if return_indices else particles[idx]


_RESAMPLERS = {"multinomial": resample_multinomial, "systematic": resample_systematic}


def _build_sequence(model, S, cfg: SmcConfig, key: StreamKey) -> CutSequence:
    seq = draw_cut_sequence(model, S, key.child(CUT_DRAWS).generator())
    if cfg.permute:
        seq = permute_tsp(seq, cfg.metric, bottleneck=cfg.bottleneck)
    if cfg.P:
        seq = temper_sequence(seq, cfg.P)
    return seq


def _gradient_factory(model, kernel: KernelConfig):
    if kernel.kind != "mala":
        return lambda nu: None
    if kernel.gradient is not None:
        g = kernel.gradient
        return lambda nu: (lambda theta: g(nu, theta))
    return model.target_grad


def run_cut_smc(model, S: int, cfg: SmcConfig, rng=None, *, sequence: CutSequence = None,
                batch: int = 0) -> SmcRun:
    """Run one batch of cut-Bayes SMC.

    ``rng`` is a :class:`StreamKey` or integer seed (defaults to
    ``cfg.seed``); all streams of batch ``b`` live under ``key.child(b)``.
    A prebuilt ``sequence`` overrides the draw/permute/temper stage.
    """
    if S < 0:
        raise InvalidInputError("S must be >= 0")
    root = as_key(cfg.seed if rng is None else rng)
    key = root.child(batch)
    kernel = resolve_kernel(cfg.kernel, model)
    grad_for = _gradient_factory(model, kernel)
    resample = _RESAMPLERS[cfg.resampling]
    N, t = int(cfg.N), int(cfg.t)

    t_start = time.perf_counter()
    seq = sequence if sequence is not None else _build_sequence(model, S, cfg, key)
    points = seq.points
    approximate = not model.has_exact_sampler
    particles = np.asarray(sample_initial_conditional(
        model, points[0], key.child(INITIAL).generator(), N, kernel), dtype=float)
    init_time = time.perf_counter() - t_start

    retained: List[ParticleSystem] = []
    diagnostics: List[StepDiagnostics] = []
    if seq.retained[0]:
        retained.append(ParticleSystem(0, points[0].copy(), particles.copy()))
    diagnostics.append(StepDiagnostics(0, bool(seq.retained[0]), float(N), float("nan"), init_time))

    pool = ThreadPoolExecutor(cfg.particle_threads) if cfg.particle_threads > 1 else None
    try:
        for k in range(1, len(seq)):
            t0 = time.perf_counter()
            logw = importance_log_weights(model, points[k - 1], points[k], particles, step=k)
            if retained and retained[-1].step_index == k - 1:
                retained[-1].log_weights_next = logw
            ess = effective_sample_size(logw)
            particles = resample(particles, logw, key.child(RESAMPLE, k).generator())
            target = model.target(points[k])
            grad = grad_for(points[k])

            def move(i, theta, k=k, target=target, grad=grad):
                stats = MoveStats()
                try:
                    out = mutate(kernel, target, theta, t,
                                 key.child(MUTATE, k, i).generator(), gradient=grad, stats=stats)
                except KernelFailureError as exc:
                    raise KernelFailureError(str(exc), particle=i, step=k) from exc
                return out, stats

            if pool is None:
                results = [move(i, particles[i]) for i in range(N)]
            else:
                results = list(pool.map(move, range(N), list(particles)))
            particles = np.array([r[0] for r in results])
            stats = MoveStats()
            for _, st in results:
                stats.add(st)
            if seq.retained[k]:
                retained.append(ParticleSystem(k, points[k].copy(), particles.copy()))
            diagnostics.append(StepDiagnostics(k, bool(seq.retained[k]), ess, stats.rate,
                                               time.perf_counter() - t0))
    finally:
        if pool is not None:
            pool.shutdown()

    return SmcRun(
        sequence=seq,
        retained_systems=retained,
        diagnostics=diagnostics,
        seed={"seed": root.seed, "batch": batch, "path": list(key.path)},
        init_time=init_time,
        approximate_init=approximate,
        wall_time=time.perf_counter() - t_start,
    )


def evaluate_g(run: SmcRun, g: Callable) -> np.ndarray:
    """g over every retained particle; shape (S + 1, N)."""
    out = np.empty((len(run.retained_systems), run.N))
    for s, ps in enumerate(run.retained_systems):
        for i, th in enumerate(ps.particles):
            v = float(g(ps.nu, th))
            if not math.isfinite(v):
                raise ModelEvaluationError(f"g is not finite at retained step {s}, particle {i}")
            out[s, i] = v
    return out


def estimate(run: SmcRun, g: Callable) -> float:
    """Average over retained steps of the particle average of g(nu, theta)."""
    if not run.retained_systems:
        raise InvalidInputError("run has no retained particle systems")
    vals = evaluate_g(run, g)
    return float(vals.mean(axis=1).mean())


class CutSMCSampler(BaseEstimator):
    """Cut-Bayes SMC with a scikit-learn style interface.

    ``fit(model)`` runs ``batch_count`` independent batches of ``S + 1`` cut
    draws each and pools their retained particles. Variants are selected by
    ``P`` (linear tempering) and ``permute`` (travelling-salesman order).

    Attributes set by fit: ``runs_``, ``nu_``, ``theta_`` (pooled samples),
    ``batch_`` (batch index per sample).
    """

    def __init__(self, N=25, S=9, t=5, P=0, permute=False, kernel="slice", step_size=None,
                 slice_width=None, slice_max_doublings=16, resampling="multinomial",
                 metric="euclidean", metric_scale=None, bottleneck=False, seed=0,
                 batch_count=1, particle_threads=1):
        self.N = N
        self.S = S
        self.t = t
        self.P = P
        self.permute = permute
        self.kernel = kernel
        self.step_size = step_size
        self.slice_width = slice_width
        self.slice_max_doublings = slice_max_doublings
        self.resampling = resampling
        self.metric = metric
        self.metric_scale = metric_scale
        self.bottleneck = bottleneck
        self.seed = seed
        self.batch_count = batch_count
        self.particle_threads = particle_threads

    def config(self) -> SmcConfig:
        scale = None if self.metric_scale is None else tuple(self.metric_scale)
        return SmcConfig(
            N=self.N, t=self.t, P=self.P, permute=self.permute,
            kernel=KernelConfig(self.kernel, self.step_size, self.slice_width,
                                self.slice_max_doublings),
            seed=self.seed, batch_count=self.batch_count, resampling=self.resampling,
            metric=DistanceMetric(self.metric, scale), bottleneck=self.bottleneck,
            particle_threads=self.particle_threads,
        )

    def fit(self, model, y=None):
        cfg = self.config()
        if self.S < 0:
            raise ConfigurationError("S must be >= 0")
        self.runs_ = [run_cut_smc(model, self.S, cfg, batch=b) for b in range(cfg.batch_count)]
        self._pool()
        return self

    def _pool(self):
        parts = [r.pooled() for r in self.runs_]
        self.nu_ = np.concatenate([p[0] for p in parts])
        self.theta_ = np.concatenate([p[1] for p in parts])
        self.batch_ = np.concatenate([np.full(p[1].shape[0], b) for b, p in enumerate(parts)])

    def estimate(self, g: Callable) -> float:
        """Pooled estimator: mean of g over all retained particles of all batches."""
        check_is_fitted(self, "runs_")
        vals = np.concatenate([evaluate_g(r, g).ravel() for r in self.runs_])
        return float(vals.mean())

    def sample(self):
        check_is_fitted(self, "runs_")
        return self.nu_, self.theta_
