"""Behavioral model of the in-memory nonlinear ramp ADC.

The converter shares one 256-cell replica column: 4 cells drive the
zero-crossing calibration and the remaining 252 generate the ramp. Step
``i`` of the ramp enables ``m_i`` cells, so the ramp rises by
``m_i * unit_step``; the output code is the number of ramp levels at or
below the input (a thermometer count). That is a floor conversion against
the projected references.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import rng
from .quantizers import MAX_BITS, QuantizerModel

ARRAY_CELLS = 256
CALIB_CELLS = 4
DEFAULT_BUDGET = ARRAY_CELLS - CALIB_CELLS
MAC_ROWS = 256
CORNERS = ("TT", "FF", "SS")
GRID_POINTS = 256

TT_MU = 0.21
TT_SIGMA = 1.07
SS_SIGMA_SCALE = 1.2


class InfeasibleProjection(ValueError):
    pass


@dataclass(frozen=True)
class CornerNoise:
    """Per-conversion Gaussian error, in units of ``unit_step``."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")


def corner_noise(corner: str, ff: CornerNoise | None = None) -> CornerNoise:
    """Conversion error for a process corner.

    FF has no published figures; it falls back to TT unless ``ff`` is given.
    """
    corner = corner.upper()
    if corner == "TT":
        return CornerNoise(TT_MU, TT_SIGMA)
    if corner == "SS":
        return CornerNoise(TT_MU, TT_SIGMA * SS_SIGMA_SCALE)
    if corner == "FF":
        return ff if ff is not None else CornerNoise(TT_MU, TT_SIGMA)
    raise ValueError(f"unknown corner {corner!r}; expected one of {CORNERS}")


@dataclass(frozen=True)
class AdcHardwareConfig:
    bits: int
    unit_step: float
    multipliers: tuple
    min_multiplier: int = 1
    budget: int = DEFAULT_BUDGET
    calib_cells: int = CALIB_CELLS
    zero_offset: float = 0.0
    corner: str = "TT"

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(int(m) for m in self.multipliers))
        if not 1 <= self.bits <= MAX_BITS:
            raise ValueError(f"hardware resolution must be 1..{MAX_BITS} bits, got {self.bits}")
        if not self.unit_step > 0:
            raise ValueError("unit_step must be positive")
        if len(self.multipliers) != (1 << self.bits) - 1:
            raise ValueError(f"{self.bits}-bit ramp needs {(1 << self.bits) - 1} multipliers")
        if self.min_multiplier < 1 or any(m < self.min_multiplier for m in self.multipliers):
            raise ValueError(f"every multiplier must be >= min_multiplier={self.min_multiplier}")
        if self.cells_used > self.budget:
            raise ValueError(f"ramp uses {self.cells_used} cells, budget is {self.budget}")
        if self.budget + self.calib_cells > ARRAY_CELLS:
            raise ValueError("budget plus calibration cells exceed the replica column")
        if self.corner not in CORNERS:
            raise ValueError(f"unknown corner {self.corner!r}")

    @property
    def cells_used(self) -> int:
        return sum(self.multipliers)

    def noise(self, ff: CornerNoise | None = None) -> CornerNoise:
        return corner_noise(self.corner, ff)

    def to_dict(self) -> dict:
        return {
            "bits": self.bits,
            "unit_step": self.unit_step,
            "multipliers": list(self.multipliers),
            "min_multiplier": self.min_multiplier,
            "budget": self.budget,
            "calib_cells": self.calib_cells,
            "zero_offset": self.zero_offset,
            "corner": self.corner,
        }

    @classmethod
    def from_dict(cls, d) -> "AdcHardwareConfig":
        return cls(
            bits=int(d["bits"]),
            unit_step=float(d["unit_step"]),
            multipliers=tuple(d["multipliers"]),
            min_multiplier=int(d.get("min_multiplier", 1)),
            budget=int(d.get("budget", DEFAULT_BUDGET)),
            calib_cells=int(d.get("calib_cells", CALIB_CELLS)),
            zero_offset=float(d.get("zero_offset", 0.0)),
            corner=d.get("corner", "TT"),
        )


def ramp_levels(cfg: AdcHardwareConfig, base: float) -> np.ndarray:
    """Reference levels realised by the ramp, starting from ``base``."""
    steps = np.concatenate([[0], np.cumsum(cfg.multipliers)])
    return base + cfg.unit_step * steps


# ---------------------------------------------------------------------------
# floor conversion
# ---------------------------------------------------------------------------


def quantize_floor(x, model: QuantizerModel):
    """Index of the largest reference not above ``x``.

    Inputs below ``R[0]`` give code 0, inputs above the top reference give
    the top code. Works on scalars and arrays.
    """
    refs = np.asarray(model.references)
    codes = np.searchsorted(refs, x, side="right") - 1
    codes = np.clip(codes, 0, refs.size - 1)
    return int(codes) if np.ndim(codes) == 0 else codes


def dequantize(code, model: QuantizerModel):
    centers = np.asarray(model.centers)
    c = np.asarray(code)
    if np.any((c < 0) | (c >= centers.size)):
        raise ValueError(f"code out of range for a {model.bits}-bit model")
    out = centers[c]
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# hardware projection
# ---------------------------------------------------------------------------


def _round(v: float) -> int:
    return math.floor(v + 0.5)


def _multipliers_for(u: float, offsets: np.ndarray, min_mult: int) -> list:
    # round the cumulative target so errors do not accumulate along the ramp
    out, total = [], 0
    for t in offsets / u:
        m = max(min_mult, _round(t - total))
        out.append(m)
        total += m
    return out


def _max_error(u: float, mults, offsets: np.ndarray) -> float:
    return float(np.max(np.abs(u * np.cumsum(mults) - offsets)))


def _refine(u, mults, offsets, min_mult, budget):
    """Greedy single-step moves until no +-1 change lowers the max error."""
    mults = list(mults)
    err = _max_error(u, mults, offsets)
    while True:
        best = None
        for i in range(len(mults)):
            for d in (-1, 1):
                m = mults[i] + d
                if m < min_mult or sum(mults) + d > budget:
                    continue
                trial = mults[:i] + [m] + mults[i + 1 :]
                e = _max_error(u, trial, offsets)
                if e < err and (best is None or e < best[0]):
                    best = (e, trial)
        if best is None:
            return mults, err
        err, mults = best


def project_hw(
    model: QuantizerModel,
    min_multiplier: int = 1,
    budget: int = DEFAULT_BUDGET,
    corner: str = "TT",
    grid_points: int = GRID_POINTS,
):
    """Approximate the model's references with an integer-step ramp.

    Sweeps the unit step ``u`` over a geometric grid between
    ``span / budget`` and ``span / ((2^b - 1) * min_multiplier)``, plus
    the exact value ``min(dR) / min_multiplier``. For each ``u`` the step
    multipliers round the cumulative reference offsets; the ``u`` with the
    smallest worst-case reference error wins (ties go to the larger ``u``),
    then single multipliers are nudged while that error drops.

    Returns ``(config, projected_model, max_ref_error)``. The projected
    model keeps the original centers.
    """
    if model.bits > MAX_BITS:
        raise InfeasibleProjection(f"{model.bits}-bit model exceeds the {MAX_BITS}-bit ramp limit")
    if min_multiplier < 1:
        raise ValueError("min_multiplier must be >= 1")
    refs = np.asarray(model.references)
    offsets = refs[1:] - refs[0]
    n_steps = offsets.size
    if n_steps * min_multiplier > budget:
        raise InfeasibleProjection(
            f"{n_steps} steps of at least {min_multiplier} cells need {n_steps * min_multiplier} > budget {budget}"
        )
    span = float(offsets[-1])
    u_lo = span / budget
    u_hi = span / (n_steps * min_multiplier)
    u_exact = float(np.min(np.diff(refs))) / min_multiplier
    grid = set(np.geomspace(u_lo, u_hi, grid_points).tolist()) | {u_exact}

    best = None
    for u in sorted(grid, reverse=True):
        mults = _multipliers_for(u, offsets, min_multiplier)
        if sum(mults) > budget:
            continue
        err = _max_error(u, mults, offsets)
        if best is None or err < best[0]:
            best = (err, u, mults)
    if best is None:
        raise InfeasibleProjection(f"no unit step fits the {budget}-cell budget")
    _, u, mults = best
    mults, err = _refine(u, mults, offsets, min_multiplier, budget)
    cfg = AdcHardwareConfig(
        bits=model.bits, unit_step=u, multipliers=tuple(mults),
        min_multiplier=min_multiplier, budget=budget, corner=corner,
    )
    projected = replace(model, references=tuple(ramp_levels(cfg, refs[0])), hw_projected=True)
    return cfg, projected, err


def calibrate_zero_offset(cfg: AdcHardwareConfig, first_level_error: float) -> AdcHardwareConfig:
    """Cancel a measured error of the ramp's starting level."""
    return replace(cfg, zero_offset=-float(first_level_error))


# ---------------------------------------------------------------------------
# ramp conversion
# ---------------------------------------------------------------------------


def conversion_noise(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Standard normal draws for conversions ``offset .. offset + n - 1``.

    Conversion ``i`` uses uniforms ``2i`` and ``2i + 1`` of the seed's
    Philox stream (Box-Muller), so any slice of a batch can be produced
    independently.
    """
    bitgen = np.random.Philox(key=rng.check_seed(seed))
    skip = 2 * offset
    bitgen.advance(skip // 4)
    g = np.random.Generator(bitgen)
    g.random(skip % 4)
    u = g.random(2 * n).reshape(n, 2) if n else np.empty((0, 2))
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def convert(
    x,
    cfg: AdcHardwareConfig,
    model: QuantizerModel,
    noise_seed: int | None = None,
    noise: CornerNoise | None = None,
    offset: int = 0,
) -> np.ndarray:
    """Ramp conversion of a batch of inputs.

    Each conversion draws one Gaussian error ``e`` (``noise``, default the
    config's corner) in unit steps and compares ``x + e * unit_step``
    against every ramp level. With no ``noise_seed`` the conversion is
    ideal.
    """
    if cfg.bits != model.bits:
        raise ValueError("config and model resolution differ")
    x = np.asarray(x, dtype=np.float64).ravel()
    ramp = ramp_levels(cfg, model.references[0])[1:] + cfg.zero_offset
    eff = x
    if noise_seed is not None:
        nz = noise if noise is not None else cfg.noise()
        eps = nz.mu + nz.sigma * conversion_noise(noise_seed, x.size, offset)
        eff = x + eps * cfg.unit_step
    # thermometer count of ramp levels at or below the input
    return np.searchsorted(ramp, eff, side="right")


def simulate_ramp(
    x,
    cfg: AdcHardwareConfig,
    model: QuantizerModel,
    noise_seed: int | None = None,
    noise: CornerNoise | None = None,
):
    """Convert inputs by stepping the ramp and counting comparator trips.

    Accepts a scalar (returns an int) or an array (returns int codes of the
    same shape). Noise draws follow ``convert``, one per conversion.
    """
    if cfg.bits != model.bits:
        raise ValueError("config and model resolution differ")
    ramp = ramp_levels(cfg, model.references[0])[1:] + cfg.zero_offset
    scalar = np.ndim(x) == 0
    v = np.asarray(x, dtype=np.float64)
    if noise_seed is not None:
        nz = noise if noise is not None else cfg.noise()
        eps = nz.mu + nz.sigma * conversion_noise(noise_seed, v.size).reshape(v.shape)
        v = v + eps * cfg.unit_step
    code = np.zeros(v.shape, dtype=np.int64)
    for level in ramp:
        code += level <= v
    return int(code) if scalar else code


# ---------------------------------------------------------------------------
# output LUT
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CenterLut:
    entries: tuple
    out_bits: int
    g_min: float
    g_max: float

    def __post_init__(self):
        e = self.entries
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError("LUT entries must be strictly increasing")
        if e and (e[0] < 0 or e[-1] >= 1 << self.out_bits):
            raise ValueError("LUT entry outside the output grid")

    def value(self, index: int) -> float:
        top = (1 << self.out_bits) - 1
        if index == top:
            return self.g_max
        return self.g_min + index * (self.g_max - self.g_min) / top

    def values(self) -> tuple:
        return tuple(self.value(i) for i in self.entries)


def build_center_lut(model: QuantizerModel, out_bits: int) -> CenterLut:
    """Snap each center to the nearest level of a uniform ``2^out_bits``
    grid over the model range; collisions are bumped to keep the map
    strictly increasing."""
    if out_bits < model.bits:
        raise ValueError("out_bits must be >= model bits")
    top = (1 << out_bits) - 1
    if model.levels > top + 1:
        raise ValueError("more centers than grid levels")
    scale = top / (model.g_max - model.g_min)
    idx = [min(top, max(0, _round((c - model.g_min) * scale))) for c in model.centers]
    for i in range(1, len(idx)):
        if idx[i] <= idx[i - 1]:
            idx[i] = idx[i - 1] + 1
    if idx[-1] > top:
        idx[-1] = top
        for i in range(len(idx) - 2, -1, -1):
            if idx[i] >= idx[i + 1]:
                idx[i] = idx[i + 1] - 1
    return CenterLut(tuple(idx), out_bits, model.g_min, model.g_max)


def lut_model(model: QuantizerModel, out_bits: int) -> QuantizerModel:
    """The model decoding through its LUT instead of exact centers."""
    lut = build_center_lut(model, out_bits)
    return replace(model, centers=lut.values(), hw_projected=True)


# ---------------------------------------------------------------------------
# MAC column golden model
# ---------------------------------------------------------------------------


def weight_cell_cost(weight_bits: int) -> int:
    """Cells per signed weight: magnitude bits map to 1, 2, 4, ... parallel
    cells and the sign comes from the differential read path."""
    if not 2 <= weight_bits <= 4:
        raise ValueError("weight_bits must be in [2, 4]")
    return (1 << (weight_bits - 1)) - 1


def _check_weights(weights: Sequence[int], weight_bits: int) -> np.ndarray:
    w = np.asarray(weights)
    limit = weight_cell_cost(weight_bits)
    if w.size > MAC_ROWS:
        raise ValueError(f"column has {MAC_ROWS} rows, got {w.size} weights")
    if not np.issubdtype(w.dtype, np.integer) and not np.all(w == np.round(w)):
        raise ValueError("weights must be integers")
    w = w.astype(np.int64)
    if np.any(np.abs(w) > limit):
        raise ValueError(f"{weight_bits}-bit weights must lie in [-{limit}, {limit}]")
    return w


def mac_column(weights: Sequence[int], inputs: Sequence[float], weight_bits: int = 2) -> float:
    """Differential bitline result ``sum_k w_k x_k`` of one column.

    Each weight is expanded into its binary-weighted ternary cells and the
    cell contributions are summed.
    """
    w = _check_weights(weights, weight_bits)
    x = np.asarray(inputs, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError(f"length mismatch: {w.size} weights, {x.size} inputs")
    terms = []
    mag = np.abs(w)
    sign = np.sign(w)
    for j in range(weight_bits - 1):
        on = (mag >> j) & 1
        cell = sign * on
        # 2^j identical cells in parallel
        terms.extend(((cell * x)[on == 1]).tolist() * (1 << j))
    return math.fsum(terms)


def active_cells(weights: Sequence[int], weight_bits: int = 2) -> int:
    """Number of cells that discharge a bitline; zero weights draw nothing."""
    return int(np.sum(np.abs(_check_weights(weights, weight_bits))))
