"""Robust per-layer range calibration.

Each calibration batch is tail-trimmed at the ``alpha`` / ``1 - alpha``
percentiles; the min/max of the surviving samples feed an exponential
moving average that tracks the layer range ``(g_min, g_max)``. Surviving
samples are pooled for the clustering stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rng
from .data import ActivationBatch

DEFAULT_ALPHA = 0.005
DEFAULT_EMA = (0.9, 0.1)
DEFAULT_POOL_LIMIT = 1 << 20


def percentile(samples, q: float) -> float:
    """Linear-interpolation percentile at fraction ``q``.

    With ``x`` sorted and ``r = q * (n - 1)`` the result is
    ``x[floor(r)] + frac(r) * (x[floor(r) + 1] - x[floor(r)])``.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("percentile of empty input")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    return _sorted_percentile(x, q)


def _sorted_percentile(x: np.ndarray, q: float) -> float:
    r = q * (x.size - 1)
    lo = math.floor(r)
    frac = r - lo
    if lo >= x.size - 1:
        return float(x[-1])
    return float(x[lo] + frac * (x[lo + 1] - x[lo]))


def trim_batch(batch: ActivationBatch | Sequence[float], alpha: float = DEFAULT_ALPHA):
    """Drop both tails of a batch.

    Returns ``(central, b_min, b_max)`` where ``central`` keeps the samples
    ``v`` with ``p_low <= v <= p_high`` in their original order. If no
    sample lies inside the bounds the median sample(s) are kept.
    """
    x = batch.samples if isinstance(batch, ActivationBatch) else np.asarray(batch, dtype=np.float64)
    if x.size < 2:
        raise ValueError("trim_batch needs at least 2 samples")
    s = np.sort(x)
    p_low = _sorted_percentile(s, alpha)
    p_high = _sorted_percentile(s, 1.0 - alpha)
    keep = (x >= p_low) & (x <= p_high)
    if not keep.any():
        # tiny batches: interpolated bounds can fall strictly between samples
        n = s.size
        keep = (x >= s[(n - 1) // 2]) & (x <= s[n // 2])
    central = x[keep]
    return central, float(central.min()), float(central.max())


@dataclass(frozen=True)
class CalibrationState:
    """Running calibration of one layer. Instances are immutable; use
    :func:`observe_batch` to advance."""

    alpha: float = DEFAULT_ALPHA
    ema: tuple = DEFAULT_EMA
    pool_limit: int = DEFAULT_POOL_LIMIT
    seed: int = 0
    g_min: float = math.nan
    g_max: float = math.nan
    t: int = 0
    n_seen: int = 0
    chunks: tuple = field(default=(), repr=False)
    trimmed_fractions: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        keep, new = self.ema
        if not (0.0 <= keep <= 1.0 and 0.0 <= new <= 1.0):
            raise ValueError("EMA weights must lie in [0, 1]")
        if self.pool_limit < 1:
            raise ValueError("pool_limit must be positive")
        rng.check_seed(self.seed)

    @property
    def pool(self) -> np.ndarray:
        if not self.chunks:
            return np.empty(0)
        return np.concatenate(self.chunks)


def observe_batch(state: CalibrationState, batch: ActivationBatch) -> CalibrationState:
    central, b_min, b_max = trim_batch(batch, state.alpha)
    t = state.t + 1
    if t == 1:
        g_min, g_max = b_min, b_max
    else:
        keep, new = state.ema
        g_min = keep * state.g_min + new * b_min
        g_max = keep * state.g_max + new * b_max
    chunks, n_seen = _add_to_pool(state, central)
    return replace(
        state,
        g_min=g_min,
        g_max=g_max,
        t=t,
        n_seen=n_seen,
        chunks=chunks,
        trimmed_fractions=state.trimmed_fractions + (1.0 - central.size / len(batch),),
    )


def _add_to_pool(state: CalibrationState, central: np.ndarray):
    n_seen = state.n_seen + central.size
    if n_seen <= state.pool_limit:
        return state.chunks + (central,), n_seen
    # reservoir sampling (algorithm R) once the cap is exceeded
    pool = state.pool
    start = state.n_seen
    if pool.size < state.pool_limit:
        fill = state.pool_limit - pool.size
        pool = np.concatenate([pool, central[:fill]])
        central = central[fill:]
        start += fill
    else:
        pool = pool.copy()
    if central.size:
        g = rng.stream(state.seed, state.t + 1)
        slots = g.integers(0, np.arange(start, start + central.size) + 1)
        hit = np.flatnonzero(slots < state.pool_limit)
        for i in hit:
            pool[slots[i]] = central[i]
    return (pool,), n_seen


@dataclass(frozen=True)
class CalibrationResult:
    g_min: float
    g_max: float
    pool: np.ndarray
    degenerate: bool = False
    batches: int = 0
    trimmed_fractions: tuple = ()

    @property
    def range(self) -> tuple:
        return (self.g_min, self.g_max)


def finish(state: CalibrationState) -> CalibrationResult:
    if state.t < 1:
        raise ValueError("no batches observed")
    g_min, g_max = state.g_min, state.g_max
    degenerate = g_min == g_max
    if degenerate:
        eps = max(1e-9, 1e-9 * abs(g_min))
        g_min, g_max = g_min - eps, g_min + eps
    return CalibrationResult(
        g_min=g_min,
        g_max=g_max,
        pool=state.pool,
        degenerate=degenerate,
        batches=state.t,
        trimmed_fractions=state.trimmed_fractions,
    )


def calibrate(batches: Sequence[ActivationBatch], alpha: float = DEFAULT_ALPHA, **kwargs) -> CalibrationResult:
    """Run the whole stage over a sequence of batches."""
    state = CalibrationState(alpha=alpha, **kwargs)
    for b in batches:
        state = observe_batch(state, b)
    return finish(state)
