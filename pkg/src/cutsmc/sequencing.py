"""Orderings of cut-parameter draws visited by the sampler.

Three constructions: the raw i.i.d. draws, linear tempering (evenly spaced
interpolants between consecutive draws) and a travelling-salesman
reordering that keeps the first draw fixed and shortens the path through
the rest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidInputError
from .rng import StreamKey, STUDY, as_generator, as_key

__all__ = [
    "CutSequence",
    "DistanceMetric",
    "draw_cut_sequence",
    "temper_sequence",
    "permute_tsp",
    "tsp_path_order",
    "path_length",
    "max_consecutive_distance",
    "hamiltonian_study",
    "correlated_normal_sampler",
    "TSPOrdering",
]

INDEPENDENT = "independent"
INTERPOLANT = "interpolant"


@dataclass(frozen=True)
class CutSequence:
    """Ordered cut points with retention flags.

    ``points`` has shape (K, d_nu). ``origin_index`` is the position of a
    retained point in the original draw order and -1 for interpolants.
    """

    points: np.ndarray
    retained: np.ndarray
    provenance: tuple
    origin_index: np.ndarray

    def __len__(self):
        return self.points.shape[0]

    @property
    def n_retained(self) -> int:
        return int(self.retained.sum())

    @property
    def retained_points(self) -> np.ndarray:
        return self.points[self.retained]

    @classmethod
    def from_draws(cls, draws) -> "CutSequence":
        pts = np.asarray(draws, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidInputError("cut draws must be a nonempty (K, d_nu) array")
        k = pts.shape[0]
        return cls(pts, np.ones(k, dtype=bool), (INDEPENDENT,) * k, np.arange(k))


@dataclass(frozen=True)
class DistanceMetric:
    """Euclidean distance, optionally after dividing each coordinate by a scale."""

    kind: str = "euclidean"
    scale: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "scaled-euclidean"):
            raise InvalidInputError(f"unknown metric kind {self.kind!r}")
        if self.kind == "scaled-euclidean":
            if self.scale is None:
                raise InvalidInputError("scaled-euclidean needs per-coordinate scales")
            s = np.asarray(self.scale, dtype=float)
            if np.any(s <= 0):
                raise InvalidInputError("scales must be positive")
            object.__setattr__(self, "scale", tuple(float(v) for v in s.ravel()))

    @classmethod
    def for_box(cls, low, high) -> "DistanceMetric":
        """Scaled metric that maps a uniform box onto the unit cube."""
        return cls("scaled-euclidean", tuple(np.asarray(high, float) - np.asarray(low, float)))

    def _prepare(self, points):
        pts = np.asarray(points, dtype=float)
        if self.kind == "scaled-euclidean":
            pts = pts / np.asarray(self.scale)
        return pts

    def pairwise(self, points) -> np.ndarray:
        pts = self._prepare(points)
        diff = pts[:, None, :] - pts[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def consecutive(self, points) -> np.ndarray:
        pts = self._prepare(points)
        return np.linalg.norm(np.diff(pts, axis=0), axis=1)


def draw_cut_sequence(model, S: int, rng) -> CutSequence:
    """S + 1 i.i.d. draws from the cut distribution, all retained."""
    if S < 0:
        raise InvalidInputError("S must be >= 0")
    return CutSequence.from_draws(model.sample_cut(as_generator(rng), int(S) + 1))


def temper_sequence(seq: CutSequence, P: int) -> CutSequence:
    """Insert ``P`` evenly spaced interpolants between consecutive points."""
    if P < 0:
        raise InvalidInputError("P must be >= 0")
    if not seq.retained.all():
        raise InvalidInputError("temper_sequence expects an all-retained sequence")
    if P == 0 or len(seq) < 2:
        return seq
    pts = seq.points
    k, dim = pts.shape
    fracs = np.arange(1, P + 1) / (P + 1)
    out = np.empty(((P + 1) * (k - 1) + 1, dim))
    retained = np.zeros(out.shape[0], dtype=bool)
    origin = np.full(out.shape[0], -1, dtype=int)
    for s in range(k - 1):
        base = s * (P + 1)
        out[base] = pts[s]
        retained[base] = True
        origin[base] = seq.origin_index[s]
        out[base + 1: base + P + 1] = pts[s] + fracs[:, None] * (pts[s + 1] - pts[s])
    out[-1] = pts[-1]
    retained[-1] = True
    origin[-1] = seq.origin_index[-1]
    prov = tuple(INDEPENDENT if r else INTERPOLANT for r in retained)
    return CutSequence(out, retained, prov, origin)


def path_length(dist: np.ndarray, order) -> float:
    order = np.asarray(order)
    return float(dist[order[:-1], order[1:]].sum())


def _max_edge(dist, order):
    return float(dist[order[:-1], order[1:]].max()) if len(order) > 1 else 0.0


def _nearest_neighbor(dist, start):
    n = dist.shape[0]
    visited = np.zeros(n, dtype=bool)
    order = [start]
    visited[start] = True
    cur = start
    for _ in range(n - 1):
        row = np.where(visited, np.inf, dist[cur])
        cur = int(np.argmin(row))
        visited[cur] = True
        order.append(cur)
    return np.array(order)


def _two_opt(dist, tour):
    """2-opt on a closed tour whose position 0 stays fixed (first-improvement)."""
    tour = tour.copy()
    n = tour.size
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            a, b = tour[i - 1], tour[i]
            js = np.arange(i + 1, n)
            c = tour[js]
            d = tour[(js + 1) % n]
            delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
            best = int(np.argmin(delta))
            if delta[best] < -1e-12 * max(1.0, dist[a, b] + dist[c[best], d[best]]):
                j = int(js[best])
                tour[i: j + 1] = tour[i: j + 1][::-1].copy()
                improved = True
    return tour


def _bottleneck_pass(dist, path):
    """2-opt moves on an open path accepted only if they lower the max edge."""
    path = path.copy()
    n = path.size
    current = _max_edge(dist, path)
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                cand = path.copy()
                cand[i: j + 1] = cand[i: j + 1][::-1]
                m = _max_edge(dist, cand)
                if m < current - 1e-12:
                    path, current, improved = cand, m, True
    return path


def tsp_path_order(points, metric: DistanceMetric = DistanceMetric(), *, bottleneck=False):
    """Approximate shortest Hamiltonian path from point 0 through all points.

    A dummy node at distance 0 from the start and a large distance from
    every other node turns the open path into a closed tour. The tour is
    built by nearest neighbour from the dummy and improved by 2-opt; the
    input order is also 2-opt improved and the shorter of the two kept, so
    the result is never longer than the input order.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n < 3:
        return np.arange(n)
    dist = metric.pairwise(pts)
    big = (n + 1) * (float(dist.max()) + 1.0)
    full = np.zeros((n + 1, n + 1))
    full[:n, :n] = dist
    full[n, :n] = big
    full[:n, n] = big
    full[n, 0] = full[0, n] = 0.0

    identity_tour = np.concatenate([[n], np.arange(n)])
    nn_tour = _nearest_neighbor(full, n)
    candidates = []
    for tour in (nn_tour, identity_tour):
        tour = _two_opt(full, tour)
        path = tour[1:]
        if path[0] != 0:
            # the dummy's zero edge sits at the end; read the tour backwards
            path = np.concatenate([[tour[0]], tour[1:][::-1]])[1:]
        candidates.append(path)
    lengths = [path_length(dist, p) for p in candidates]
    best = candidates[int(np.argmin(lengths))]
    if path_length(dist, np.arange(n)) < path_length(dist, best):
        best = np.arange(n)
    if bottleneck:
        best = _bottleneck_pass(dist, best)
    return best


def permute_tsp(seq: CutSequence, metric: DistanceMetric = DistanceMetric(), *,
                bottleneck=False) -> CutSequence:
    """Reorder an all-retained sequence along an approximate shortest path."""
    if not seq.retained.all():
        raise InvalidInputError("permute_tsp expects an all-retained sequence")
    if len(seq) < 2:
        return seq
    order = tsp_path_order(seq.points, metric, bottleneck=bottleneck)
    return CutSequence(seq.points[order].copy(), seq.retained[order].copy(),
                       tuple(seq.provenance[i] for i in order), seq.origin_index[order].copy())


def max_consecutive_distance(seq, metric: DistanceMetric = DistanceMetric()) -> float:
    pts = seq.points if isinstance(seq, CutSequence) else np.asarray(seq, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise InvalidInputError("max_consecutive_distance needs at least two points")
    return float(metric.consecutive(pts).max())


def correlated_normal_sampler(dim=2, rho=0.7, scale=1.0):
    """Sampler for N(0, scale^2 * R) with equicorrelation ``rho``."""
    cov = (scale ** 2) * ((1 - rho) * np.eye(dim) + rho * np.ones((dim, dim)))
    chol = np.linalg.cholesky(cov)

    def sample(rng, count):
        return rng.standard_normal((count, dim)) @ chol.T

    return sample


def hamiltonian_study(dim: int, n_points: int, n_resamples: int, threshold: float,
                      sampler=None, rng=0, metric: DistanceMetric = DistanceMetric()):
    """Fractions of resamples whose max consecutive distance exceeds ``threshold``.

    Returns ``(random_order_fraction, permuted_fraction)``. Each resample uses
    its own derived stream, so results do not depend on evaluation order.
    """
    if n_points < 2 or n_resamples < 1:
        raise InvalidInputError("need n_points >= 2 and n_resamples >= 1")
    if sampler is None:
        sampler = correlated_normal_sampler(dim)
    key = as_key(rng) if not isinstance(rng, np.random.Generator) else \
        StreamKey(int(rng.integers(2 ** 63)))
    rand_max, perm_max = study_max_distances(dim, n_points, n_resamples, sampler, key, metric)
    return float(np.mean(rand_max > threshold)), float(np.mean(perm_max > threshold))


def study_max_distances(dim, n_points, n_resamples, sampler, key: StreamKey,
                        metric: DistanceMetric = DistanceMetric()):
    rand_max = np.empty(n_resamples)
    perm_max = np.empty(n_resamples)
    for r in range(n_resamples):
        pts = np.asarray(sampler(key.child(STUDY, r).generator(), n_points), dtype=float)
        if pts.shape != (n_points, dim):
            raise InvalidInputError(f"sampler returned shape {pts.shape}, expected {(n_points, dim)}")
        order = tsp_path_order(pts, metric)
        rand_max[r] = metric.consecutive(pts).max()
        perm_max[r] = metric.consecutive(pts[order]).max()
    return rand_max, perm_max


class TSPOrdering(TransformerMixin, BaseEstimator):
    """Transformer that reorders rows of a cut-draw matrix along a short path.

    ``fit`` computes ``order_`` (row 0 stays first); ``transform`` applies it.
    """

    def __init__(self, metric="euclidean", scale=None, bottleneck=False):
        self.metric = metric
        self.scale = scale
        self.bottleneck = bottleneck

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        metric = DistanceMetric(self.metric, None if self.scale is None else tuple(self.scale))
        self.order_ = tsp_path_order(X, metric, bottleneck=self.bottleneck)
        self.path_length_ = path_length(metric.pairwise(X), self.order_) if len(X) > 1 else 0.0
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "order_")
        X = check_array(X, ensure_min_samples=1)
        if X.shape[0] != self.order_.size:
            raise InvalidInputError("transform expects the matrix that was fitted")
        return X[self.order_]
