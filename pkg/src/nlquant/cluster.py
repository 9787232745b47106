"""One-dimensional k-means.

:func:`kmeans_1d_core` is the production clusterer (k-means++ seeding,
Lloyd refinement on sorted data). :func:`dp_optimal_1d` is an exact
O(k n^2) dynamic program over contiguous segments, used as a test oracle.
"""

from __future__ import annotations

import numpy as np

from . import rng

MAX_ITER = 300


def _kmeanspp(z: np.ndarray, k: int, g: np.random.Generator) -> np.ndarray:
    """Pick ``k`` seed indices into ``z`` by greedy D^2 sampling.

    Each step draws ``2 + floor(ln k)`` candidates and keeps the one that
    leaves the smallest total squared distance.
    """
    n = z.size
    trials = 2 + int(np.log(k))
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = g.integers(n)
    d2 = (z - z[chosen[0]]) ** 2
    for i in range(1, k):
        cum = np.cumsum(d2)
        total = cum[-1]
        if total > 0:
            cand = np.searchsorted(cum, g.random(trials) * total, side="right")
            cand = np.minimum(cand, n - 1)
        else:
            cand = g.integers(n, size=trials)
        best_j, best_d2, best_pot = -1, None, np.inf
        for j in cand:
            nd = np.minimum(d2, (z - z[j]) ** 2)
            pot = nd.sum()
            if pot < best_pot:
                best_j, best_d2, best_pot = int(j), nd, pot
        chosen[i] = best_j
        d2 = best_d2
    return chosen


def _assign_sorted(xs: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Labels for sorted samples against sorted centers; ties go up."""
    mids = 0.5 * (centers[:-1] + centers[1:])
    return np.searchsorted(mids, xs, side="right")


def segment_means(xs: np.ndarray, csum: np.ndarray, centers: np.ndarray):
    """One Lloyd update on sorted samples.

    ``csum`` is the prefix sum of ``xs`` with a leading zero. Cell ``j``
    owns the samples at or above the midpoint below ``centers[j]`` and
    strictly under the midpoint above it. Returns ``(means, counts)``;
    empty cells keep their old center.
    """
    mids = 0.5 * (centers[:-1] + centers[1:])
    cuts = np.concatenate([[0], np.searchsorted(xs, mids, side="left"), [xs.size]])
    counts = np.diff(cuts)
    sums = csum[cuts[1:]] - csum[cuts[:-1]]
    means = centers.copy()
    full = counts > 0
    means[full] = sums[full] / counts[full]
    return means, counts


def _lloyd(xs: np.ndarray, centers: np.ndarray, max_iter: int, csum: np.ndarray):
    for _ in range(max_iter):
        new, counts = segment_means(xs, csum, centers)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # reseed empty clusters at the worst-served samples
            d2 = (xs - new[_assign_sorted(xs, new)]) ** 2
            for j in empty:
                far = int(np.argmax(d2))
                if d2[far] == 0:
                    break
                new[j] = xs[far]
                d2[far] = 0.0
        new.sort()
        if np.array_equal(new, centers):
            break
        centers = new
    labels = _assign_sorted(xs, centers)
    wcss = float(np.sum((xs - centers[labels]) ** 2))
    return centers, labels, wcss


def kmeans_1d_core(samples, k: int, restarts: int = 10, seed: int = 0, max_iter: int = MAX_ITER):
    """Cluster scalars into ``k`` groups.

    Seeding runs on min-max normalised samples so results are equivariant
    under positive affine maps of the input. Restart ``r`` draws from
    stream ``r`` of ``seed``; the lowest-WCSS restart wins, ties going to
    the lower restart index.

    Returns ``(centers, assignments, wcss)`` with centers sorted ascending
    and ``assignments`` aligned with ``samples``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds sample count {n}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    span = xs[-1] - xs[0]
    z = (xs - xs[0]) / span if span > 0 else np.zeros_like(xs)

    csum = np.concatenate([[0.0], np.cumsum(xs)])
    best = None
    for r in range(restarts):
        g = rng.stream(seed, r)
        init = np.sort(xs[_kmeanspp(z, k, g)])
        result = _lloyd(xs, init, max_iter, csum)
        if best is None or result[2] < best[2]:
            best = result
    centers, labels_sorted, wcss = best
    labels = np.empty(n, dtype=np.int64)
    labels[order] = labels_sorted
    return centers, labels, wcss


def dp_optimal_1d(samples, k: int):
    """Globally optimal 1-D k-means via dynamic programming.

    Optimal 1-D clusters are contiguous runs of the sorted data, so
    ``D[m][L]`` (best cost of the first ``L`` points in ``m`` clusters)
    satisfies ``D[m][L] = min_j D[m-1][j] + cost(j, L)``.
    Returns ``(centers, wcss)``.
    """
    xs = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = xs.size
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    s1 = np.concatenate([[0.0], np.cumsum(xs)])
    s2 = np.concatenate([[0.0], np.cumsum(xs * xs)])

    def seg_cost(j, L):
        # cost of xs[j:L] for an array of starts j
        m = L - j
        s = s1[L] - s1[j]
        return np.maximum(s2[L] - s2[j] - s * s / m, 0.0)

    inf = np.inf
    D = np.full((k + 1, n + 1), inf)
    arg = np.zeros((k + 1, n + 1), dtype=np.int64)
    D[0, 0] = 0.0
    for m in range(1, k + 1):
        for L in range(m, n - (k - m) + 1):
            j = np.arange(m - 1, L)
            c = D[m - 1, j] + seg_cost(j, L)
            i = int(np.argmin(c))
            D[m, L] = c[i]
            arg[m, L] = j[i]
    bounds = [n]
    L = n
    for m in range(k, 0, -1):
        L = int(arg[m, L])
        bounds.append(L)
    bounds.reverse()
    segments = [xs[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    centers = np.array([seg.mean() for seg in segments])
    wcss = float(sum(np.sum((seg - c) ** 2) for seg, c in zip(segments, centers)))
    return centers, wcss
