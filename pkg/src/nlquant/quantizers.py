"""Scalar activation quantizers.

Every quantizer is a sorted set of centers ``C`` plus the floor-type
references ``R`` derived from them (``R[0] = C[0]``, ``R[i]`` the midpoint
of ``C[i-1]`` and ``C[i]``). Comparing an input against ``R`` and taking
the largest reference not above it reproduces nearest-center rounding.

Fitters:

* ``bskmq``      boundary-suppressed k-means (clamp, drop samples sitting
                 on either bound, cluster the interior into ``2^b - 2``
                 centers, add the bounds back)
* ``linear``     equispaced centers over the range
* ``lloyd_max``  Lloyd-Max iteration on the clamped pool
* ``cdf``        equal-mass bins from empirical quantiles
* ``kmeans``     plain k-means with ``2^b`` centers on the clamped pool
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .calibration import _sorted_percentile
from .cluster import _assign_sorted, kmeans_1d_core, segment_means

METHODS = ("bskmq", "linear", "lloyd_max", "cdf", "kmeans")
MAX_BITS = 7  # replica column: 252 usable cells >= 2^7 - 1 steps
SOFTWARE_MAX_BITS = 8
DEFAULT_RESTARTS = 10


class FitError(ValueError):
    pass


def map_references(centers: Sequence[float]) -> tuple:
    c = [float(v) for v in centers]
    if not c:
        raise ValueError("need at least one center")
    if any(b <= a for a, b in zip(c, c[1:])):
        raise ValueError("centers must be strictly increasing")
    refs = [c[0]] + [(a + b) / 2 for a, b in zip(c, c[1:])]
    if any(b <= a for a, b in zip(refs, refs[1:])):
        raise ValueError("centers too close to yield distinct references")
    return tuple(refs)


@dataclass(frozen=True)
class QuantizerModel:
    bits: int
    centers: tuple
    references: tuple
    method: str
    g_min: float
    g_max: float
    padded: bool = False
    hw_projected: bool = False
    meta: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        object.__setattr__(self, "references", tuple(float(r) for r in self.references))
        if not 1 <= self.bits <= SOFTWARE_MAX_BITS:
            raise ValueError(f"bits must be in [1, {SOFTWARE_MAX_BITS}], got {self.bits}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        n = 1 << self.bits
        if len(self.centers) != n or len(self.references) != n:
            raise ValueError(f"{self.bits}-bit model needs {n} centers and references")
        c, r = np.array(self.centers), np.array(self.references)
        if np.any(np.diff(c) <= 0):
            raise ValueError("centers must be strictly increasing")
        if np.any(np.diff(r) <= 0):
            raise ValueError("references must be strictly increasing")
        if not self.g_min < self.g_max:
            raise ValueError("range must satisfy g_min < g_max")
        if not self.hw_projected and self.references != map_references(self.centers):
            raise ValueError("references are not the midpoint map of the centers")
        if self.method == "bskmq" and (c[0] != self.g_min or c[-1] != self.g_max):
            raise ValueError("bskmq centers must start at g_min and end at g_max")

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def range(self) -> tuple:
        return (self.g_min, self.g_max)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "bits": self.bits,
            "g_min": self.g_min,
            "g_max": self.g_max,
            "centers": list(self.centers),
            "references": list(self.references),
            "padded": self.padded,
            "hw_projected": self.hw_projected,
            "fit": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QuantizerModel":
        return cls(
            bits=int(d["bits"]),
            centers=tuple(d["centers"]),
            references=tuple(d["references"]),
            method=d["method"],
            g_min=float(d["g_min"]),
            g_max=float(d["g_max"]),
            padded=bool(d.get("padded", False)),
            hw_projected=bool(d.get("hw_projected", False)),
            meta=dict(d.get("fit", {})),
        )


def dumps(obj) -> str:
    """Canonical JSON text; floats use shortest round-trip repr."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def save_model(model: QuantizerModel, path, extra: Mapping | None = None) -> None:
    d = model.to_dict()
    if extra:
        d.update(extra)
    Path(path).write_text(dumps(d), encoding="utf-8")


def load_model(path) -> QuantizerModel:
    return QuantizerModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _check_bits(bits: int, max_bits: int) -> int:
    if isinstance(bits, bool) or int(bits) != bits:
        raise FitError(f"bits must be an integer, got {bits!r}")
    bits = int(bits)
    if not 1 <= bits <= max_bits:
        raise FitError(f"bits must be in [1, {max_bits}], got {bits}")
    return bits


def _check_range(bounds) -> tuple:
    g_min, g_max = (float(v) for v in bounds)
    if not g_min < g_max:
        raise FitError(f"degenerate range ({g_min}, {g_max})")
    return g_min, g_max


def _clamped(pool, g_min: float, g_max: float) -> np.ndarray:
    x = np.asarray(pool, dtype=np.float64).ravel()
    if x.size == 0:
        raise FitError("empty pool")
    return np.clip(x, g_min, g_max)


def pad_centers(centers, count: int, lo: float, hi: float, anchored: bool = False):
    """Deduplicate ``centers`` and top them up to ``count`` distinct values.

    Missing centers are inserted at the midpoint of the widest gap between
    neighbouring points, where ``lo`` and ``hi`` also act as gap endpoints.
    With ``anchored`` the bounds are themselves centers.
    Returns ``(centers, padded)``.
    """
    pts = sorted(set(float(c) for c in centers))
    padded = len(pts) < len(list(centers))
    if len(pts) > count:
        raise FitError(f"{len(pts)} distinct centers exceed {count} levels")
    while len(pts) < count:
        ends = sorted(set([lo, hi] + pts)) if anchored else [lo] + pts + [hi]
        gaps = np.diff(ends)
        i = int(np.argmax(gaps))
        mid = ends[i] + gaps[i] / 2
        if gaps[i] <= 0 or mid in pts or not ends[i] < mid < ends[i + 1]:
            raise FitError("cannot pad centers: range exhausted")
        pts = sorted(pts + [mid])
        padded = True
    return pts, padded


def _model(centers, bits, method, g_min, g_max, padded=False, **meta) -> QuantizerModel:
    centers = tuple(centers)
    return QuantizerModel(
        bits=bits,
        centers=centers,
        references=map_references(centers),
        method=method,
        g_min=g_min,
        g_max=g_max,
        padded=padded,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# fitters
# ---------------------------------------------------------------------------


def fit_bskmq(pool, bounds, bits: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0, max_bits: int = MAX_BITS):
    bits = _check_bits(bits, max_bits)
    g_min, g_max = _check_range(bounds)
    x = _clamped(pool, g_min, g_max)
    interior = x[(x != g_min) & (x != g_max)]
    k = (1 << bits) - 2
    inner: list = []
    if k > 0 and interior.size:
        distinct = np.unique(interior).size
        kk = min(k, distinct)
        inner = list(kmeans_1d_core(interior, kk, restarts=restarts, seed=seed)[0])
    centers, padded = pad_centers([g_min, *inner, g_max], 1 << bits, g_min, g_max, anchored=True)
    return _model(
        centers, bits, "bskmq", g_min, g_max, padded,
        seed=seed, pool_size=int(x.size), interior_size=int(interior.size),
    )


def fit_linear(bounds, bits: int, max_bits: int = MAX_BITS):
    bits = _check_bits(bits, max_bits)
    g_min, g_max = _check_range(bounds)
    n = (1 << bits) - 1
    step = (g_max - g_min) / n
    centers = [g_min + i * step for i in range(n)] + [g_max]
    return _model(centers, bits, "linear", g_min, g_max)


def lloyd_max_trace(pool, bounds, bits: int, max_iter: int = 500, tol: float | None = None, max_bits: int = MAX_BITS):
    """Run Lloyd-Max on the clamped pool from the linear quantizer.

    Alternates midpoint decision boundaries with conditional-mean centers
    until no center moves by ``tol`` (default ``1e-9 * (g_max - g_min)``)
    or ``max_iter`` rounds pass. Returns ``(centers, moves, costs)`` where
    ``moves[i]`` is the largest center displacement of round ``i`` and
    ``costs[i]`` the nearest-center MSE after it.
    """
    bits = _check_bits(bits, max_bits)
    g_min, g_max = _check_range(bounds)
    xs = np.sort(_clamped(pool, g_min, g_max))
    if tol is None:
        tol = 1e-9 * (g_max - g_min)
    k = 1 << bits
    c = np.array(fit_linear((g_min, g_max), bits, max_bits=max_bits).centers)
    csum = np.concatenate([[0.0], np.cumsum(xs)])
    moves, costs = [], []
    for _ in range(max_iter):
        new, _ = segment_means(xs, csum, c)
        new.sort()
        moves.append(float(np.max(np.abs(new - c))))
        c = new
        costs.append(float(np.mean((xs - c[_assign_sorted(xs, c)]) ** 2)))
        if moves[-1] < tol:
            break
    return c, moves, costs


def fit_lloyd_max(pool, bounds, bits: int, max_iter: int = 500, tol: float | None = None, max_bits: int = MAX_BITS):
    c, moves, _ = lloyd_max_trace(pool, bounds, bits, max_iter=max_iter, tol=tol, max_bits=max_bits)
    g_min, g_max = _check_range(bounds)
    centers, padded = pad_centers(c, 1 << bits, g_min, g_max)
    return _model(
        centers, bits, "lloyd_max", g_min, g_max, padded,
        iterations=len(moves), final_move=moves[-1] if moves else 0.0, pool_size=int(np.size(pool)),
    )


def cdf_bins(pool, bits: int):
    """Equal-mass binning of a (clamped) pool.

    Returns ``(edges, labels)``: ``edges`` are the ``2^b + 1`` empirical
    quantiles and ``labels[i]`` the bin of ``pool[i]``; a sample equal to an
    inner edge belongs to the bin above it.
    """
    x = np.asarray(pool, dtype=np.float64).ravel()
    xs = np.sort(x)
    k = 1 << bits
    edges = np.array([_sorted_percentile(xs, j / k) for j in range(k + 1)])
    labels = np.searchsorted(edges[1:k], x, side="right")
    return edges, labels


def fit_cdf(pool, bounds, bits: int, max_bits: int = MAX_BITS):
    bits = _check_bits(bits, max_bits)
    g_min, g_max = _check_range(bounds)
    x = _clamped(pool, g_min, g_max)
    k = 1 << bits
    _, labels = cdf_bins(x, bits)
    counts = np.bincount(labels, minlength=k)
    sums = np.bincount(labels, weights=x, minlength=k)
    full = counts > 0
    centers, padded = pad_centers(sums[full] / counts[full], k, g_min, g_max)
    return _model(
        centers, bits, "cdf", g_min, g_max, padded or not full.all(),
        collapsed_bins=int(k - full.sum()), pool_size=int(x.size),
    )


def fit_kmeans(pool, bounds, bits: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0, max_bits: int = MAX_BITS):
    bits = _check_bits(bits, max_bits)
    g_min, g_max = _check_range(bounds)
    x = _clamped(pool, g_min, g_max)
    k = 1 << bits
    if x.size < k:
        raise FitError(f"kmeans needs at least {k} samples, got {x.size}")
    centers, _, wcss = kmeans_1d_core(x, k, restarts=restarts, seed=seed)
    centers, padded = pad_centers(centers, k, g_min, g_max)
    return _model(centers, bits, "kmeans", g_min, g_max, padded, seed=seed, wcss=wcss, pool_size=int(x.size))


def fit(method: str, pool, bounds, bits: int, seed: int = 0, max_bits: int = MAX_BITS, **kwargs) -> QuantizerModel:
    """Dispatch to the fitter for ``method``."""
    if method == "bskmq":
        return fit_bskmq(pool, bounds, bits, seed=seed, max_bits=max_bits, **kwargs)
    if method == "linear":
        return fit_linear(bounds, bits, max_bits=max_bits)
    if method == "lloyd_max":
        return fit_lloyd_max(pool, bounds, bits, max_bits=max_bits, **kwargs)
    if method == "cdf":
        return fit_cdf(pool, bounds, bits, max_bits=max_bits)
    if method == "kmeans":
        return fit_kmeans(pool, bounds, bits, seed=seed, max_bits=max_bits, **kwargs)
    raise FitError(f"unknown method {method!r}; expected one of {METHODS}")


def with_centers(model: QuantizerModel, centers) -> QuantizerModel:
    """Copy of ``model`` decoding to different centers; references kept."""
    return replace(model, centers=tuple(centers), hw_projected=True)
