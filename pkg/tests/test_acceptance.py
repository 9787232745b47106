"""End-to-end acceptance criteria, each checked at its stated tolerance and time limit."""

import time
from pathlib import Path

import numpy as np
import pytest

from nlquant import adc, cli, fixtures
from nlquant import evaluation as ev
from nlquant import quantizers as q
from nlquant.calibration import calibrate
from nlquant.cluster import dp_optimal_1d, kmeans_1d_core
from nlquant.data import SyntheticDistSpec, generate, save_batches

KINDS = ("relu_mixture", "lognormal", "relu_gauss", "uniform")


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_c01_worked_example(verdict):
    with Timer() as t:
        refs = q.map_references([0, 0.125, 0.25, 0.5, 1, 2, 4, 8])
        m = fixtures.worked_model()
        lo, hi = int(adc.quantize_floor(0.05, m)), int(adc.quantize_floor(0.07, m))
    want = (0.0, 0.0625, 0.1875, 0.375, 0.75, 1.5, 3.0, 6.0)
    exact = refs == want and all(a.hex() == float(b).hex() for a, b in zip(refs, want))
    ok = exact and m.centers[lo] == 0.0 and m.centers[hi] == 0.125 and t.elapsed < 1
    assert verdict("1 worked-example exactness", ok, f"codes {lo},{hi}; {t.elapsed:.3f}s")


def test_c02_floor_ramp_equivalence(verdict):
    g = np.random.default_rng(2024)
    mismatches = 0
    with Timer() as t:
        for i in range(100):
            spec = SyntheticDistSpec(KINDS[i % 4], boundary_mass=float(g.uniform(0, 0.5)), seed=int(g.integers(1 << 32)))
            res = calibrate(generate(spec, 2, 1024))
            m = q.fit(q.METHODS[i % len(q.METHODS)], res.pool, res.range, int(g.integers(2, 6)), seed=i)
            cfg, proj, _ = adc.project_hw(m)
            span = m.g_max - m.g_min
            x = g.uniform(m.g_min - 0.1 * span, m.g_max + 0.1 * span, 10_000)
            x[: proj.levels] = proj.references
            mismatches += int(np.count_nonzero(adc.simulate_ramp(x, cfg, proj) != adc.quantize_floor(x, proj)))
    ok = mismatches == 0 and t.elapsed < 30
    assert verdict("2 floor/ramp equivalence", ok, f"{mismatches} mismatches in 10^6; {t.elapsed:.1f}s")


def test_c03_clustering_oracle(verdict):
    g = np.random.default_rng(3)
    worst = 0.0
    with Timer() as t:
        for i in range(50):
            n = int(g.integers(16, 513))
            k = int(g.integers(2, 9))
            kind = i % 3
            if kind == 0:
                x = g.gamma(1.5, size=n)
            elif kind == 1:
                x = np.concatenate([g.normal(g.uniform(-3, 3), g.uniform(0.1, 1), n // 2), g.exponential(size=n - n // 2)])
            else:
                x = np.maximum(g.normal(0.3, 1.0, n), 0.0)
            w = kmeans_1d_core(x, k, seed=i)[2]
            opt = dp_optimal_1d(x, k)[1]
            worst = max(worst, w / opt if opt > 0 else (0.0 if w == 0 else np.inf))
    ok = worst <= 1.05 and t.elapsed < 60
    assert verdict("3 clustering oracle", ok, f"worst ratio {worst:.4f}; {t.elapsed:.1f}s")


def test_c04_mse_ordering(verdict):
    lowest = {}
    ratio_ok = {}
    with Timer() as t:
        for bm in (0.3, 0.5):
            lowest[bm] = ratio_ok[bm] = 0
            for seed in range(20):
                batches = generate(SyntheticDistSpec("relu_mixture", boundary_mass=bm, seed=seed), 8, 4096)
                res = calibrate(batches)
                raw = np.concatenate([b.samples for b in batches])
                err = {m: ev.mse(raw, q.fit(m, res.pool, res.range, 3, seed=seed)) for m in q.METHODS}
                others = [err[m] for m in q.METHODS if m != "bskmq"]
                lowest[bm] += err["bskmq"] < min(others)
                ratio_ok[bm] += err["linear"] / err["bskmq"] >= 2
    ok = all(lowest[b] >= 18 and ratio_ok[b] >= 18 for b in lowest) and t.elapsed < 120
    detail = ", ".join(f"bm {b}: lowest {lowest[b]}/20, ratio>=2 {ratio_ok[b]}/20" for b in lowest)
    assert verdict("4 MSE ordering", ok, f"{detail}; {t.elapsed:.1f}s")


def test_c05_lloyd_max_uniform(verdict):
    with Timer() as t:
        x = np.random.default_rng(5).uniform(size=100_000)
        m = q.fit_lloyd_max(x, (0.0, 1.0), 2)
    dev = float(np.max(np.abs(np.array(m.centers) - [0.125, 0.375, 0.625, 0.875])))
    ok = dev <= 0.01 and t.elapsed < 10
    assert verdict("5 Lloyd-Max analytic check", ok, f"max deviation {dev:.4f}; {t.elapsed:.2f}s")


def test_c06_cdf_equal_mass(verdict):
    g = np.random.default_rng(6)
    worst = 0.0
    with Timer() as t:
        for i in range(20):
            n = int(g.integers(200, 20_000))
            bits = int(g.integers(1, 6))
            k = 1 << bits
            if i < 15:
                x = [g.normal(size=n), g.lognormal(size=n), g.gamma(0.5, size=n), g.uniform(size=n), g.standard_t(2, n)][i % 5]
                atom = -np.inf
            else:
                # relu pools: the zero atom fills (and collapses) the low bins;
                # every bin above it must still hold its equal share
                x = np.maximum(g.normal(0.2, 1.0, n), 0.0)
                atom = 0.0
            edges, labels = q.cdf_bins(x, bits)
            counts = np.bincount(labels, minlength=k)
            check = (edges[:-1] < edges[1:]) & (edges[:-1] > atom)
            worst = max(worst, float(np.max(np.abs(counts[check] - n / k))))
    ok = worst <= 1 and t.elapsed < 10
    assert verdict("6 CDF equal-mass", ok, f"worst occupancy deviation {worst:.2f}; {t.elapsed:.2f}s")


def test_c07_hardware_budget(verdict):
    g = np.random.default_rng(7)
    worst_sum = 0
    with Timer() as t:
        for i in range(60):
            spec = SyntheticDistSpec(KINDS[i % 4], boundary_mass=float(g.uniform(0, 0.5)), seed=i)
            res = calibrate(generate(spec, 2, 512))
            m = q.fit(q.METHODS[i % len(q.METHODS)], res.pool, res.range, int(g.integers(1, 8)), seed=i)
            try:
                cfg, _, _ = adc.project_hw(m)
            except adc.InfeasibleProjection:
                continue
            worst_sum = max(worst_sum, cfg.cells_used)
        cfg, proj, err = adc.project_hw(fixtures.worked_model())
        step_cfg, _, step_err = adc.project_hw(fixtures.step_pattern_model())
    ok = (
        worst_sum <= 252
        and cfg.multipliers == fixtures.WORKED_MULTIPLIERS
        and err == 0.0
        and proj.references == fixtures.WORKED_REFERENCES
        and step_cfg.cells_used == 32
        and step_cfg.multipliers == fixtures.STEP_PATTERN_4BIT
        and step_err == 0.0
        and t.elapsed < 5
    )
    detail = f"max cells {worst_sum}; worked m={cfg.multipliers}; 4-bit sum {step_cfg.cells_used}; {t.elapsed:.2f}s"
    assert verdict("7 hardware budget", ok, detail)


def test_c08_corner_noise(verdict):
    with Timer() as t:
        bits = 7
        lin = q.fit_linear((0.0, 127.0), bits)
        refs = tuple(float(i) for i in range(128))
        model = q.QuantizerModel(bits, lin.centers, refs, "linear", 0.0, 127.0, hw_projected=True)
        cfg = adc.AdcHardwareConfig(bits=bits, unit_step=1.0, multipliers=(1,) * 127, corner="TT")
        n = 100_000
        x = np.arange(n) % 100 + 14.5
        shift = adc.convert(x, cfg, model, noise_seed=8) - adc.convert(x, cfg, model)
        # mid-cell inputs: the integer code shift is the rounded error, whose
        # variance carries an extra 1/12 step^2
        mu = float(shift.mean())
        sigma = float(np.sqrt(shift.var() - 1.0 / 12.0))
        tt, ss = adc.corner_noise("TT"), adc.corner_noise("SS")
    ratio = ss.sigma / tt.sigma
    ok = abs(mu - 0.21) <= 0.05 and abs(sigma - 1.07) <= 0.05 * 1.07 and ratio == pytest.approx(1.2, rel=1e-15)
    ok = ok and t.elapsed < 30
    assert verdict("8 corner noise statistics", ok, f"mean {mu:.3f}, sigma {sigma:.3f}, SS/TT {ratio!r}; {t.elapsed:.2f}s")


@pytest.fixture(scope="module")
def networks():
    t0 = time.perf_counter()
    out = []
    for seed in range(10):
        data = ev.make_blobs(seed)
        out.append((seed, data, ev.train_mlp(data, seed=seed)))
    return out, time.perf_counter() - t0


def test_c09_ptq_eight_bit(verdict, networks):
    nets, train_time = networks
    worst = 0.0
    with Timer() as t:
        for seed, data, net in nets:
            for method in ("bskmq", "linear"):
                r = ev.ptq_study(net, data, 8, 8, method, seed=seed)
                worst = max(worst, abs(r.acc_ptq - r.acc_float))
    total = train_time + t.elapsed
    ok = worst <= 0.01 and total < 300
    assert verdict("9a PTQ 8-bit within 1 point of float", ok, f"worst gap {100 * worst:.2f} pt; {total:.1f}s")


def test_c09_ptq_three_bit(verdict, networks):
    nets, train_time = networks
    wins = 0
    diffs = []
    with Timer() as t:
        for seed, data, net in nets:
            b = ev.ptq_study(net, data, 3, 8, "bskmq", seed=seed).acc_ptq
            lin = ev.ptq_study(net, data, 3, 8, "linear", seed=seed).acc_ptq
            wins += b >= lin
            diffs.append(100 * (b - lin))
    total = train_time + t.elapsed
    ok = wins >= 8 and total < 300
    detail = f"bskmq >= linear on {wins}/10 seeds, mean gain {np.mean(diffs):+.2f} pt; {total:.1f}s"
    assert verdict("9b PTQ 3-bit bskmq >= linear", ok, detail)


def _run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def _snapshot(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _all_commands(root: Path, jobs: int) -> None:
    raw = root / "worked.raw"
    save_batches(fixtures.worked_batches(), raw)
    mix = '{"kind": "relu_mixture", "boundary_mass": 0.3}'
    steps = [
        ("calibrate", "--input", raw, "--out", root / "worked.json"),
        ("calibrate", "--synthetic", mix, "--batches", 4, "--batch-size", 2048, "--seed", 11, "--out", root / "mix.json"),
        ("fit", root / "worked.json", "--bits", 3, "--out", root / "q_worked.json"),
        ("fit", root / "mix.json", "--method", "kmeans", "--bits", 4, "--seed", 11, "--out", root / "q_mix.json"),
        ("project-hw", root / "q_mix.json", "--corner", "SS", "--out", root / "hw_mix.json"),
        ("project-hw", root / "q_worked.json", "--min-multiplier", 1, "--out", root / "hw_worked.json"),
        ("evaluate", root / "mix.json", "--bits", "2-4", "--project-hw", "--out-bits", 8, "--out", root / "eval.csv"),
        ("evaluate", root / "worked.json", "--bits", 3, "--corner", "TT", "--seed", 2, "--out", root / "eval_tt.csv"),
        ("sweep", "--synthetic", mix, "--bits", "2-4", "--seeds", "0-7", "--batches", 2, "--batch-size", 1024,
         "--jobs", jobs, "--out", root / "sweep.csv"),
        ("sweep", "--synthetic", "relu_gauss", "--bits", 3, "--seeds", "0-1", "--corner", "TT", "--batches", 2,
         "--batch-size", 512, "--jobs", jobs, "--out", root / "sweep_tt.csv"),
        ("--paper-fixtures", "--out", root / "fixtures"),
    ]
    for argv in steps:
        assert _run(*argv) == 0, argv


def test_c10_determinism(verdict, tmp_path):
    with Timer() as t:
        snaps = []
        for jobs in (1, 1, 4):
            root = tmp_path / "run"
            if root.exists():
                for p in sorted(root.rglob("*"), reverse=True):
                    p.rmdir() if p.is_dir() else p.unlink()
            root.mkdir(exist_ok=True)
            _all_commands(root, jobs)
            snaps.append(_snapshot(root))
    same = snaps[0] == snaps[1] == snaps[2]
    ok = same and len(snaps[0]) >= 14 and t.elapsed < 120
    assert verdict("10 determinism", ok, f"{len(snaps[0])} outputs x 3 runs (jobs 1,1,4); {t.elapsed:.1f}s")
