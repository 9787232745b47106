"""Activation sample batches: data model, file formats and synthetic sources.

Two on-disk formats are supported:

``csv``
    UTF-8 text, one batch per line: ``count;v1,v2,...``. ``count`` must
    equal the number of values on the line.
``raw_f32le``
    Per batch a little-endian ``uint32`` count followed by ``count``
    little-endian float32 values; batches are concatenated.

Samples are always held as float64 in memory.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng

FORMATS = ("csv", "raw_f32le")
KINDS = ("relu_gauss", "relu_mixture", "lognormal", "uniform")

_F32_MAX = float(np.finfo(np.float32).max)


class BatchParseError(ValueError):
    """Base class for batch file parse failures.

    ``offset`` is a 1-based line number for csv files and a 0-based byte
    offset for raw files.
    """

    def __init__(self, message: str, offset: int | None = None, unit: str = "line"):
        self.offset = offset
        self.unit = unit
        if offset is not None:
            message = f"{message} (at {unit} {offset})"
        super().__init__(message)


class NoBatchesError(BatchParseError):
    pass


class MalformedHeaderError(BatchParseError):
    pass


class NonFiniteValueError(BatchParseError):
    pass


class EmptyBatchError(BatchParseError):
    pass


@dataclass(frozen=True, eq=False)
class ActivationBatch:
    samples: np.ndarray
    batch_id: int = 1
    source_tag: str = ""

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64).ravel()
        if arr.size == 0:
            raise ValueError("activation batch is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("activation batch contains non-finite values")
        if self.batch_id < 0:
            raise ValueError("batch_id must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationBatch):
            return NotImplemented
        return (
            self.batch_id == other.batch_id
            and self.source_tag == other.source_tag
            and np.array_equal(self.samples, other.samples)
        )


def make_batches(arrays: Sequence, source_tag: str = "") -> list[ActivationBatch]:
    """Wrap raw arrays as batches numbered 1, 2, ... in order."""
    return [ActivationBatch(a, batch_id=i + 1, source_tag=source_tag) for i, a in enumerate(arrays)]


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _check_format(fmt: str) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown batch format {fmt!r}; expected one of {FORMATS}")
    return fmt


def save_batches(batches: Sequence[ActivationBatch], path, format: str = "raw_f32le") -> None:
    _check_format(format)
    if not batches:
        raise ValueError("no batches to save")
    path = Path(path)
    if format == "csv":
        lines = []
        for b in batches:
            vals = ",".join(repr(float(v)) for v in b.samples)
            lines.append(f"{len(b)};{vals}\n")
        path.write_text("".join(lines), encoding="utf-8")
        return
    chunks = []
    for b in batches:
        if np.any(np.abs(b.samples) > _F32_MAX):
            raise ValueError(f"batch {b.batch_id} has values outside the float32 range")
        chunks.append(struct.pack("<I", len(b)))
        chunks.append(b.samples.astype("<f4").tobytes())
    path.write_bytes(b"".join(chunks))


def load_batches(path, format: str = "raw_f32le") -> list[ActivationBatch]:
    _check_format(format)
    path = Path(path)
    tag = path.stem
    if format == "csv":
        arrays = _parse_csv(path.read_text(encoding="utf-8"))
    else:
        arrays = _parse_raw(path.read_bytes())
    return make_batches(arrays, source_tag=tag)


def _parse_csv(text: str) -> list[np.ndarray]:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise NoBatchesError("no batches")
    out = []
    for lineno, line in enumerate(lines, start=1):
        head, sep, body = line.partition(";")
        if not sep:
            raise MalformedHeaderError("missing 'count;' header", lineno)
        try:
            count = int(head.strip())
        except ValueError:
            raise MalformedHeaderError(f"bad count {head.strip()!r}", lineno) from None
        if count < 0:
            raise MalformedHeaderError(f"negative count {count}", lineno)
        fields = [f for f in body.split(",")] if body.strip() else []
        if count == 0 or not fields:
            raise EmptyBatchError("empty batch", lineno)
        if len(fields) != count:
            raise MalformedHeaderError(f"count {count} does not match {len(fields)} values", lineno)
        try:
            vals = np.array([float(f) for f in fields], dtype=np.float64)
        except ValueError as exc:
            raise MalformedHeaderError(f"unparseable value: {exc}", lineno) from None
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValueError("non-finite value", lineno)
        out.append(vals)
    return out


def _parse_raw(data: bytes) -> list[np.ndarray]:
    if not data:
        raise NoBatchesError("no batches")
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise MalformedHeaderError("truncated batch count", pos, unit="byte")
        (count,) = struct.unpack_from("<I", data, pos)
        if count == 0:
            raise EmptyBatchError("empty batch", pos, unit="byte")
        start = pos + 4
        end = start + 4 * count
        if end > len(data):
            raise MalformedHeaderError(
                f"batch declares {count} values but only {(len(data) - start) // 4} remain", pos, unit="byte"
            )
        vals = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise NonFiniteValueError("non-finite value", start + 4 * int(bad[0]), unit="byte")
        out.append(vals.astype(np.float64))
        pos = end
    return out


# ---------------------------------------------------------------------------
# Synthetic activations
# ---------------------------------------------------------------------------

DEFAULT_PARAMS: dict[str, dict] = {
    "relu_gauss": {"mean": 0.0, "sigma": 1.0},
    # a narrow low bulk plus a broad heavy component, like post-BN ReLU outputs
    "relu_mixture": {"weights": [0.8, 0.2], "means": [0.2, 1.5], "sigmas": [0.12, 1.5]},
    "lognormal": {"mu": 0.0, "sigma": 1.0},
    "uniform": {"low": 0.0, "high": 1.0},
}


@dataclass(frozen=True)
class SyntheticDistSpec:
    """Recipe for a synthetic activation stream.

    ``boundary_mass`` is the fraction of every batch forced exactly onto the
    lower boundary (0, or ``low`` for uniform). All kinds accept an optional
    ``clamp`` parameter capping samples from above.
    """

    kind: str
    params: Mapping = field(default_factory=dict)
    boundary_mass: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not 0.0 <= self.boundary_mass < 1.0:
            raise ValueError("boundary_mass must lie in [0, 1)")
        rng.check_seed(self.seed)
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        _validate_params(self.kind, merged)

    @property
    def lower_boundary(self) -> float:
        return float(self.params["low"]) if self.kind == "uniform" else 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "boundary_mass": self.boundary_mass, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticDistSpec":
        return cls(d["kind"], d.get("params", {}), float(d.get("boundary_mass", 0.0)), int(d.get("seed", 0)))

    @classmethod
    def parse(cls, text: str, seed: int | None = None) -> "SyntheticDistSpec":
        """Accept a bare kind name or a JSON object."""
        text = text.strip()
        d = json.loads(text) if text.startswith("{") else {"kind": text}
        if seed is not None and "seed" not in d:
            d["seed"] = seed
        return cls.from_dict(d)


def _validate_params(kind: str, p: Mapping) -> None:
    clamp = p.get("clamp")
    if clamp is not None and not clamp > 0:
        raise ValueError("clamp ceiling must be positive")
    if kind in ("relu_gauss", "lognormal"):
        if p["sigma"] < 0:
            raise ValueError("sigma must be non-negative")
    elif kind == "relu_mixture":
        w, m, s = (np.asarray(p[k], dtype=float) for k in ("weights", "means", "sigmas"))
        if not (w.shape == m.shape == s.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("mixture weights, means and sigmas must be equal-length lists")
        if np.any(s < 0):
            raise ValueError("sigma must be non-negative")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
    elif kind == "uniform":
        if not p["low"] < p["high"]:
            raise ValueError("uniform requires low < high")


def _draw(spec: SyntheticDistSpec, g: np.random.Generator, n: int) -> np.ndarray:
    p = spec.params
    if spec.kind == "relu_gauss":
        x = np.maximum(g.normal(p["mean"], p["sigma"], n), 0.0)
    elif spec.kind == "relu_mixture":
        w = np.asarray(p["weights"], dtype=float)
        comp = g.choice(w.size, size=n, p=w / w.sum())
        z = g.standard_normal(n)
        x = np.maximum(np.asarray(p["means"])[comp] + np.asarray(p["sigmas"])[comp] * z, 0.0)
    elif spec.kind == "lognormal":
        x = g.lognormal(p["mu"], p["sigma"], n)
    else:
        x = g.uniform(p["low"], p["high"], n)
    if p.get("clamp") is not None:
        x = np.minimum(x, p["clamp"])
    return x


def generate(spec: SyntheticDistSpec, n_batches: int, batch_size: int) -> list[ActivationBatch]:
    if n_batches < 1:
        raise ValueError("n_batches must be positive")
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    n_boundary = round(spec.boundary_mass * batch_size)
    arrays = []
    for t in range(n_batches):
        g = rng.stream(spec.seed, t)
        x = _draw(spec, g, batch_size)
        if n_boundary:
            x[g.permutation(batch_size)[:n_boundary]] = spec.lower_boundary
        arrays.append(x)
    return make_batches(arrays, source_tag=spec.kind)
