"""Quantization error metrics, a desk-scale PTQ study and CSV reports."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import adc, rng
from .calibration import DEFAULT_ALPHA, CalibrationState, calibrate, finish, observe_batch
from .data import ActivationBatch, SyntheticDistSpec, generate
from .quantizers import METHODS, SOFTWARE_MAX_BITS, FitError, QuantizerModel, fit

CSV_HEADER = ("method", "bits", "mse", "max_abs_err", "hw_err", "acc_float", "acc_ptq", "acc_noise", "seed")


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------


def _samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return x


def reconstruct(samples, model: QuantizerModel) -> np.ndarray:
    """Floor-convert and decode every sample."""
    x = _samples(samples)
    return np.asarray(model.centers)[adc.quantize_floor(x, model)]


def mse(samples, model: QuantizerModel) -> float:
    x = _samples(samples)
    return float(np.mean((x - reconstruct(x, model)) ** 2))


def max_abs_error(samples, model: QuantizerModel) -> float:
    x = _samples(samples)
    return float(np.max(np.abs(x - reconstruct(x, model))))


def code_histogram(samples, model: QuantizerModel) -> np.ndarray:
    return np.bincount(adc.quantize_floor(_samples(samples), model), minlength=model.levels)


def mse_from_histogram(samples, model: QuantizerModel) -> float:
    """MSE as sum over cells of (cell mass) x (mean squared distance to the cell center)."""
    x = _samples(samples)
    codes = adc.quantize_floor(x, model)
    counts = np.bincount(codes, minlength=model.levels)
    sq = np.bincount(codes, weights=(x - np.asarray(model.centers)[codes]) ** 2, minlength=model.levels)
    used = counts > 0
    mass = counts[used] / x.size
    return float(np.sum(mass * (sq[used] / counts[used])))


def weight_quantize_linear(weights, bits: int) -> np.ndarray:
    """Symmetric per-tensor uniform quantization with ``2^bits - 1`` levels
    over ``[-max|w|, max|w|]`` (zero is a level); nearest-level rounding."""
    if not 2 <= bits <= 8:
        raise ValueError("weight bits must be in [2, 8]")
    w = np.asarray(weights, dtype=np.float64)
    top = float(np.max(np.abs(w))) if w.size else 0.0
    if top == 0.0:
        return w.copy()
    half = (1 << (bits - 1)) - 1
    step = top / half
    return np.clip(np.round(w / step), -half, half) * step


# ---------------------------------------------------------------------------
# method comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HwOptions:
    min_multiplier: int = 1
    budget: int = adc.DEFAULT_BUDGET
    out_bits: int | None = None


@dataclass
class EvalRow:
    method: str
    bits: int
    seed: int
    mse: float
    max_abs_err: float
    code_histogram: list
    hw_err: float | None = None
    mse_hw: float | None = None
    mse_lut: float | None = None
    mse_noise: float | None = None
    acc_float: float | None = None
    acc_ptq: float | None = None
    acc_noise: float | None = None

    def sort_key(self):
        return (METHODS.index(self.method), self.bits, self.seed)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self, method: str, bits: int | None = None) -> EvalRow:
        for r in self.rows:
            if r.method == method and (bits is None or r.bits == bits):
                return r
        raise KeyError(method)

    def sorted(self) -> "EvalReport":
        return EvalReport(sorted(self.rows, key=EvalRow.sort_key), dict(self.meta))

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Iterable[EvalRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(rows, key=EvalRow.sort_key):
        w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def evaluate_methods(
    pool,
    bounds,
    bits: int,
    methods: Sequence[str] = METHODS,
    samples=None,
    hw: HwOptions | None = None,
    corner: str | None = None,
    seed: int = 0,
) -> EvalReport:
    """Fit every method on the same pool and range and score it.

    Errors are measured on ``samples`` (default: the pool). With ``hw`` the
    model is also projected onto the ramp and scored through the projected
    references (and through the output LUT when ``hw.out_bits`` is set).
    ``corner`` adds noisy ramp conversions; it implies default ``hw``.
    """
    x = _samples(pool if samples is None else samples)
    if corner is not None and hw is None:
        hw = HwOptions()
    report = EvalReport(meta={"seed": seed, "pool_size": int(np.size(pool)), "samples": int(x.size), "bits": bits})
    for method in [m for m in METHODS if m in set(methods)]:
        try:
            model = fit(method, pool, bounds, bits, seed=seed)
        except (FitError, ValueError) as exc:
            raise FitError(f"{method}: {exc}") from exc
        row = EvalRow(
            method=method,
            bits=bits,
            seed=seed,
            mse=mse(x, model),
            max_abs_err=max_abs_error(x, model),
            code_histogram=code_histogram(x, model).tolist(),
        )
        if hw is not None:
            try:
                cfg, projected, err = adc.project_hw(model, hw.min_multiplier, hw.budget, corner=corner or "TT")
            except adc.InfeasibleProjection as exc:
                raise adc.InfeasibleProjection(f"{method}: {exc}") from exc
            row.hw_err = err
            row.mse_hw = mse(x, projected)
            if hw.out_bits is not None:
                row.mse_lut = mse(x, adc.lut_model(projected, hw.out_bits))
            if corner is not None:
                codes = adc.convert(x, cfg, projected, noise_seed=seed)
                row.mse_noise = float(np.mean((x - np.asarray(model.centers)[codes]) ** 2))
        report.rows.append(row)
    return report


# ---------------------------------------------------------------------------
# desk-scale PTQ
# ---------------------------------------------------------------------------


@dataclass
class Blobs:
    """Seeded 10-class Gaussian-blob classification set."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_cal: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def make_blobs(
    seed: int, n_train: int = 2000, n_test: int = 500, n_cal: int = 512, dim: int = 16, classes: int = 10,
    spread: float = 1.25,
) -> Blobs:
    g = rng.stream(seed, 0)
    means = g.normal(0.0, spread, size=(classes, dim))

    def draw(n):
        y = g.integers(classes, size=n)
        return means[y] + g.standard_normal((n, dim)), y

    x_train, y_train = draw(n_train)
    x_cal, _ = draw(n_cal)
    x_test, y_test = draw(n_test)
    return Blobs(x_train, y_train, x_cal, x_test, y_test)


class UntrainedNetwork(RuntimeError):
    pass


@dataclass
class TinyMlp:
    """ReLU perceptron; the hidden layers are the quantized activations."""

    weights: list
    biases: list

    @classmethod
    def init(cls, sizes: Sequence[int] = (16, 32, 32, 10), seed: int = 0) -> "TinyMlp":
        g = rng.stream(seed, 1)
        ws = [g.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(ws, [np.zeros(b) for b in sizes[1:]])

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    def forward(self, x, act=None, weights=None, record=None):
        """Logits for ``x``.

        ``act(layer, z)`` replaces the hidden activation (default ReLU);
        ``record`` collects the plain ReLU outputs of every hidden layer.
        """
        ws = self.weights if weights is None else weights
        h = np.asarray(x, dtype=np.float64)
        for i, (w, b) in enumerate(zip(ws, self.biases)):
            z = h @ w + b
            if i == len(ws) - 1:
                return z
            if record is not None:
                record.append(np.maximum(z, 0.0))
            h = np.maximum(z, 0.0) if act is None else act(i, z)

    def accuracy(self, x, y, **kw) -> float:
        return float(np.mean(np.argmax(self.forward(x, **kw), axis=1) == y))


def train_mlp(data: Blobs, seed: int = 0, epochs: int = 40, lr: float = 0.05, batch: int = 64) -> TinyMlp:
    """Minibatch gradient descent on softmax cross-entropy."""
    net = TinyMlp.init(seed=seed)
    g = rng.stream(seed, 2)
    x, y = data.x_train, data.y_train
    n = x.shape[0]
    onehot = np.eye(net.weights[-1].shape[1])[y]
    for _ in range(epochs):
        order = g.permutation(n)
        for s in range(0, n, batch):
            idx = order[s : s + batch]
            acts = [x[idx]]
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                z = acts[-1] @ w + b
                acts.append(z if i == len(net.weights) - 1 else np.maximum(z, 0.0))
            logits = acts[-1]
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            delta = (p - onehot[idx]) / idx.size
            for i in range(len(net.weights) - 1, -1, -1):
                gw = acts[i].T @ delta
                gb = delta.sum(axis=0)
                if i:
                    delta = (delta @ net.weights[i].T) * (acts[i] > 0)
                net.weights[i] -= lr * gw
                net.biases[i] -= lr * gb
    return net


@dataclass(frozen=True)
class PtqResult:
    acc_float: float
    acc_ptq: float
    acc_noise: float | None
    models: tuple = ()


def calibrate_layers(net: TinyMlp, x_cal, batch: int = 64, alpha: float = DEFAULT_ALPHA, seed: int = 0):
    """Per-layer range calibration from the float network's hidden activations."""
    states = [CalibrationState(alpha=alpha, seed=seed) for _ in range(net.hidden_layers)]
    for s in range(0, x_cal.shape[0], batch):
        rec: list = []
        net.forward(x_cal[s : s + batch], record=rec)
        for i, a in enumerate(rec):
            states[i] = observe_batch(states[i], ActivationBatch(a.ravel(), batch_id=states[i].t + 1))
    return [finish(st) for st in states]


def ptq_study(
    net: TinyMlp,
    data: Blobs,
    bits_act: int,
    bits_w: int,
    method: str,
    corner: str | None = None,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
    min_multiplier: int = 10,
    budget: int = adc.DEFAULT_BUDGET,
    min_float_acc: float = 0.9,
) -> PtqResult:
    """Post-training quantization of the tiny network.

    Hidden activations are quantized per layer with ``method`` at
    ``bits_act`` (fitted on the calibration split); weights are linearly
    quantized at ``bits_w``. With ``corner`` every activation conversion
    goes through the projected ramp with that corner's noise.
    """
    if data.x_cal.shape[0] == 0:
        raise ValueError("empty calibration split")
    cals = calibrate_layers(net, data.x_cal, alpha=alpha, seed=seed)

    def clamp(i, z):
        return np.minimum(np.maximum(z, 0.0), cals[i].g_max)

    acc_float = net.accuracy(data.x_test, data.y_test, act=clamp)
    if acc_float < min_float_acc:
        raise UntrainedNetwork(f"float accuracy {acc_float:.3f} below {min_float_acc}")
    models = [
        fit(method, c.pool, c.range, bits_act, seed=seed, max_bits=SOFTWARE_MAX_BITS) for c in cals
    ]
    qw = [weight_quantize_linear(w, bits_w) for w in net.weights]

    def quant(i, z):
        return reconstruct(np.maximum(z, 0.0), models[i]).reshape(z.shape)

    acc_ptq = net.accuracy(data.x_test, data.y_test, act=quant, weights=qw)
    acc_noise = None
    if corner is not None and bits_act <= adc.MAX_BITS:
        hws = [adc.project_hw(m, min_multiplier, budget, corner=corner)[:2] for m in models]
        noise_seeds = [int(rng.stream(seed, 100 + i).integers(1 << 62)) for i in range(len(models))]

        def noisy(i, z):
            cfg, pm = hws[i]
            codes = adc.convert(np.maximum(z, 0.0), cfg, pm, noise_seed=noise_seeds[i])
            return np.asarray(models[i].centers)[codes].reshape(z.shape)

        acc_noise = net.accuracy(data.x_test, data.y_test, act=noisy, weights=qw)
    return PtqResult(acc_float, acc_ptq, acc_noise, tuple(models))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepTask:
    spec: SyntheticDistSpec
    methods: tuple
    bits: tuple
    n_batches: int
    batch_size: int
    alpha: float = DEFAULT_ALPHA
    corner: str | None = None
    hw: HwOptions | None = None
    ptq: bool = False
    bits_w: int = 8


def add_accuracy(rows: Sequence[EvalRow], seed: int, corner: str | None = None, bits_w: int = 8) -> None:
    """Fill the accuracy columns of ``rows`` from a tiny network trained
    with ``seed``. Seeds whose network misses the float-accuracy floor keep
    empty columns."""
    data = make_blobs(seed)
    net = train_mlp(data, seed=seed)
    for row in rows:
        try:
            res = ptq_study(net, data, row.bits, bits_w, row.method, corner=corner, seed=seed)
        except UntrainedNetwork:
            return
        row.acc_float, row.acc_ptq, row.acc_noise = res.acc_float, res.acc_ptq, res.acc_noise


def run_seed(task: SweepTask) -> list:
    """All (method, bits) rows for one seed."""
    seed = task.spec.seed
    batches = generate(task.spec, task.n_batches, task.batch_size)
    cal = calibrate(batches, alpha=task.alpha, seed=seed)
    raw = np.concatenate([b.samples for b in batches])
    rows = []
    for bits in task.bits:
        rep = evaluate_methods(
            cal.pool, cal.range, bits, task.methods, samples=raw, hw=task.hw, corner=task.corner, seed=seed
        )
        rows.extend(rep.rows)
    if task.ptq or task.corner is not None:
        add_accuracy(rows, seed, task.corner, task.bits_w)
    return rows


def sweep(
    spec: SyntheticDistSpec,
    seeds: Sequence[int],
    bits: Sequence[int],
    methods: Sequence[str] = METHODS,
    n_batches: int = 32,
    batch_size: int = 4096,
    jobs: int = 1,
    **kwargs,
) -> EvalReport:
    """Evaluate every (method, bits, seed); row order never depends on ``jobs``."""
    tasks = [
        SweepTask(replace(spec, seed=s), tuple(methods), tuple(bits), n_batches, batch_size, **kwargs) for s in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(run_seed, tasks))
    else:
        chunks = [run_seed(t) for t in tasks]
    rows = sorted((r for c in chunks for r in c), key=EvalRow.sort_key)
    return EvalReport(rows, {"seeds": list(seeds), "bits": list(bits), "methods": list(methods)})
