"""``nlquant`` command-line front end.

Every command resolves its options as flag > ``--config`` file > default,
and embeds the tool version, the resolved options and the seed in what
it writes. Exit codes: 0 ok, 2 validation error, 3 infeasible hardware
projection, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, adc, fixtures
from .calibration import DEFAULT_ALPHA, calibrate
from .data import FORMATS, SyntheticDistSpec, generate, load_batches
from .evaluation import EvalRow, HwOptions, add_accuracy, evaluate_methods, rows_to_csv, sweep
from .quantizers import METHODS, QuantizerModel, dumps, fit

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

DEFAULTS = {
    "calibrate": {
        "input": None,
        "format": "raw_f32le",
        "synthetic": None,
        "alpha": DEFAULT_ALPHA,
        "batches": 32,
        "batch_size": 4096,
        "allow_degenerate": False,
        "out": "calibration.json",
    },
    "fit": {"summary": None, "method": "bskmq", "bits": 3, "out": "quantizer.json"},
    "project-hw": {
        "model": None,
        "budget": adc.DEFAULT_BUDGET,
        "min_multiplier": 1,
        "corner": "TT",
        "out": "quantizer_hw.json",
    },
    "evaluate": {
        "summary": None,
        "method": ",".join(METHODS),
        "bits": "3",
        "corner": None,
        "project_hw": False,
        "budget": adc.DEFAULT_BUDGET,
        "min_multiplier": 1,
        "out_bits": None,
        "ptq": False,
        "bits_w": 8,
        "out": "report.csv",
    },
    "sweep": {
        "synthetic": None,
        "method": ",".join(METHODS),
        "bits": "2-5",
        "seeds": None,
        "alpha": DEFAULT_ALPHA,
        "batches": 32,
        "batch_size": 4096,
        "corner": None,
        "project_hw": False,
        "budget": adc.DEFAULT_BUDGET,
        "min_multiplier": 1,
        "ptq": False,
        "bits_w": 8,
        "jobs": 1,
        "out": "sweep.csv",
    },
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def parse_int_list(text) -> list[int]:
    """``"2-5"`` -> [2, 3, 4, 5]; ``"2,4"`` -> [2, 4]; mixes allowed."""
    if isinstance(text, int):
        return [text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                a, b = int(lo), int(hi)
                if b < a:
                    raise ValueError
                out.extend(range(a, b + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise CliError(f"bad integer list {text!r}") from None
    if not out:
        raise CliError(f"empty integer list {text!r}")
    return out


def parse_methods(text) -> list[str]:
    names = text if isinstance(text, list) else [m.strip() for m in str(text).split(",") if m.strip()]
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise CliError(f"unknown method(s) {bad}; expected a subset of {list(METHODS)}")
    return names


def env_seed() -> int:
    raw = os.environ.get("NLQ_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"NLQ_SEED must be an integer, got {raw!r}") from None


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    cfg = dict(DEFAULTS[command])
    cfg["seed"] = None
    path = getattr(args, "config", None)
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from None
        try:
            from_file = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(from_file, dict):
            raise CliError(f"config {path} must hold a JSON object")
        for key, value in from_file.items():
            key = key.replace("-", "_")
            if key not in cfg:
                raise CliError(f"unknown config key {key!r} for {command}")
            cfg[key] = value
    for key, value in vars(args).items():
        if key in cfg:
            cfg[key] = value
    if cfg["seed"] is None:
        cfg["seed"] = env_seed()
    return cfg


# execution knobs that cannot change any result stay out of recorded configs
_NOT_RECORDED = ("jobs",)


def header(command: str, cfg: dict) -> dict:
    recorded = {k: v for k, v in cfg.items() if k not in _NOT_RECORDED}
    return {"tool": {"name": "nlquant", "version": __version__}, "command": command, "config": recorded, "seed": cfg["seed"]}


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from None


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_calibrate(cfg: dict) -> int:
    if (cfg["input"] is None) == (cfg["synthetic"] is None):
        raise CliError("give exactly one of --input or --synthetic")
    if cfg["input"] is not None:
        try:
            batches = load_batches(cfg["input"], cfg["format"])
        except OSError as exc:
            raise CliError(f"cannot read {cfg['input']}: {exc}", EXIT_IO) from None
        source = {"input": str(cfg["input"]), "source_tag": batches[0].source_tag}
    else:
        spec = SyntheticDistSpec.parse(cfg["synthetic"], seed=cfg["seed"])
        batches = generate(spec, cfg["batches"], cfg["batch_size"])
        source = {"synthetic": spec.to_dict()}
    res = calibrate(batches, alpha=cfg["alpha"], seed=cfg["seed"])
    pool = res.pool
    out = header("calibrate", cfg)
    out.update(
        source=source,
        g_min=res.g_min,
        g_max=res.g_max,
        degenerate=res.degenerate,
        batches=res.batches,
        trimmed_fractions=list(res.trimmed_fractions),
        pool_stats={
            "size": int(pool.size),
            "min": float(pool.min()),
            "max": float(pool.max()),
            "mean": float(pool.mean()),
        },
        pool=pool.tolist(),
    )
    write_text(cfg["out"], dumps(out))
    fr = ", ".join(f"{f:.4f}" for f in res.trimmed_fractions)
    print(f"T={res.batches}")
    print(f"trimmed fractions: {fr}")
    print(f"range: [{res.g_min!r}, {res.g_max!r}]")
    if res.degenerate:
        msg = f"degenerate range: all central samples equal {0.5 * (res.g_min + res.g_max)!r}"
        if not cfg["allow_degenerate"]:
            raise CliError(msg + " (pass --allow-degenerate to accept)")
        print("warning: " + msg, file=sys.stderr)
    return EXIT_OK


def _summary_pool(path):
    summary = read_json(path)
    try:
        pool = np.asarray(summary["pool"], dtype=np.float64)
        bounds = (float(summary["g_min"]), float(summary["g_max"]))
    except (KeyError, TypeError) as exc:
        raise CliError(f"{path} is not a calibration summary: missing {exc}") from None
    return summary, pool, bounds


def cmd_fit(cfg: dict) -> int:
    _, pool, bounds = _summary_pool(cfg["summary"])
    model = fit(cfg["method"], pool, bounds, int(cfg["bits"]), seed=cfg["seed"])
    out = header("fit", cfg)
    out.update(model.to_dict())
    write_text(cfg["out"], dumps(out))
    print(f"{model.method} {model.bits}-bit centers: {', '.join(repr(c) for c in model.centers)}")
    return EXIT_OK


def cmd_project_hw(cfg: dict) -> int:
    d = read_json(cfg["model"])
    model = QuantizerModel.from_dict(d)
    hw, projected, err = adc.project_hw(model, int(cfg["min_multiplier"]), int(cfg["budget"]), corner=cfg["corner"])
    out = header("project-hw", cfg)
    out.update(model.to_dict())
    out.update(
        hw=hw.to_dict(),
        hw_error=err,
        cells_used=hw.cells_used,
        projected_references=list(projected.references),
        fitted_with=d.get("config"),
    )
    write_text(cfg["out"], dumps(out))
    print(f"multipliers: {list(hw.multipliers)} (cells {hw.cells_used}/{hw.budget})")
    print(f"unit_step={hw.unit_step!r} max reference error={err!r}")
    return EXIT_OK


def _hw_options(cfg: dict) -> HwOptions | None:
    if not (cfg["project_hw"] or cfg.get("out_bits") is not None):
        return None
    return HwOptions(int(cfg["min_multiplier"]), int(cfg["budget"]), cfg.get("out_bits"))


def _extras(rows) -> list:
    keys = ("method", "bits", "seed", "code_histogram", "mse_hw", "mse_lut", "mse_noise")
    return [{k: getattr(r, k) for k in keys} for r in sorted(rows, key=EvalRow.sort_key)]


def _write_report(cfg: dict, command: str, rows, meta: dict) -> None:
    write_text(cfg["out"], rows_to_csv(rows))
    side = header(command, cfg)
    side.update(meta)
    side["rows"] = _extras(rows)
    write_text(Path(cfg["out"]).with_suffix(".meta.json"), dumps(side))


def cmd_evaluate(cfg: dict) -> int:
    summary, pool, bounds = _summary_pool(cfg["summary"])
    methods = parse_methods(cfg["method"])
    seed = cfg["seed"]
    rows = []
    for bits in parse_int_list(cfg["bits"]):
        rep = evaluate_methods(pool, bounds, bits, methods, hw=_hw_options(cfg), corner=cfg["corner"], seed=seed)
        rows.extend(rep.rows)
    if cfg["ptq"] or cfg["corner"] is not None:
        add_accuracy(rows, seed, cfg["corner"], int(cfg["bits_w"]))
    meta = {"pool_size": int(pool.size), "source": summary.get("source")}
    _write_report(cfg, "evaluate", rows, meta)
    print(f"wrote {len(rows)} rows to {cfg['out']}")
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    if cfg["synthetic"] is None:
        raise CliError("sweep needs --synthetic")
    spec = SyntheticDistSpec.parse(cfg["synthetic"], seed=cfg["seed"])
    seeds = parse_int_list(cfg["seeds"]) if cfg["seeds"] is not None else [cfg["seed"]]
    if int(cfg["jobs"]) < 1:
        raise CliError("--jobs must be at least 1")
    report = sweep(
        spec,
        seeds,
        parse_int_list(cfg["bits"]),
        parse_methods(cfg["method"]),
        n_batches=int(cfg["batches"]),
        batch_size=int(cfg["batch_size"]),
        jobs=int(cfg["jobs"]),
        alpha=cfg["alpha"],
        corner=cfg["corner"],
        hw=_hw_options(cfg),
        ptq=bool(cfg["ptq"]),
        bits_w=int(cfg["bits_w"]),
    )
    meta = dict(report.meta)
    meta["distribution"] = spec.to_dict()
    _write_report(cfg, "sweep", report.rows, meta)
    print(f"wrote {len(report.rows)} rows to {cfg['out']}")
    return EXIT_OK


def write_fixtures(directory) -> int:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {d}: {exc}", EXIT_IO) from None
    meta = {"tool": {"name": "nlquant", "version": __version__}}
    for name, body in fixtures.all_fixtures().items():
        write_text(d / f"{name}.json", dumps({**meta, "fixture": name, **body}))
        print(d / f"{name}.json")
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "fit": cmd_fit,
    "project-hw": cmd_project_hw,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _opt(p, *names, **kw):
    kw.setdefault("default", argparse.SUPPRESS)
    p.add_argument(*names, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlquant", description="Nonlinear activation quantization toolkit.")
    parser.add_argument("--version", action="version", version=f"nlquant {__version__}")
    parser.add_argument("--paper-fixtures", action="store_true", help="write the named reference fixtures and exit")
    parser.add_argument("--out", dest="fixture_dir", help="directory for --paper-fixtures")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        _opt(p, "--config", help="JSON file of option values (flags take precedence)")
        _opt(p, "--seed", type=int, help="seed (default: $NLQ_SEED or 0)")

    p = sub.add_parser("calibrate", help="stage 1: robust range calibration")
    common(p)
    _opt(p, "--input", help="batch file to read")
    _opt(p, "--format", choices=FORMATS)
    _opt(p, "--synthetic", help="distribution kind or JSON spec")
    _opt(p, "--alpha", type=float)
    _opt(p, "--batches", type=int, help="synthetic batch count T")
    _opt(p, "--batch-size", dest="batch_size", type=int)
    _opt(p, "--allow-degenerate", dest="allow_degenerate", action="store_true")
    _opt(p, "--out")

    p = sub.add_parser("fit", help="stage 2: fit a quantizer to a calibration summary")
    common(p)
    _opt(p, "summary")
    _opt(p, "--method", choices=METHODS)
    _opt(p, "--bits", type=int)
    _opt(p, "--out")

    p = sub.add_parser("project-hw", help="map a quantizer onto the ramp converter")
    common(p)
    _opt(p, "model")
    _opt(p, "--budget", type=int)
    _opt(p, "--min-multiplier", dest="min_multiplier", type=int)
    _opt(p, "--corner", choices=adc.CORNERS)
    _opt(p, "--out")

    def report_opts(p):
        _opt(p, "--method", help="comma-separated methods")
        _opt(p, "--bits", help="bit widths, e.g. 3 or 2-5 or 2,4")
        _opt(p, "--corner", choices=adc.CORNERS)
        _opt(p, "--project-hw", dest="project_hw", action="store_true")
        _opt(p, "--budget", type=int)
        _opt(p, "--min-multiplier", dest="min_multiplier", type=int)
        _opt(p, "--ptq", action="store_true", help="add tiny-network accuracy columns")
        _opt(p, "--bits-w", dest="bits_w", type=int)
        _opt(p, "--out")

    p = sub.add_parser("evaluate", help="compare methods on a calibration summary")
    common(p)
    _opt(p, "summary")
    report_opts(p)
    _opt(p, "--out-bits", dest="out_bits", type=int, help="also score through a center LUT of this width")

    p = sub.add_parser("sweep", help="evaluate methods x bits x seeds on synthetic data")
    common(p)
    _opt(p, "--synthetic")
    _opt(p, "--seeds", help="seed list, e.g. 0-19")
    _opt(p, "--alpha", type=float)
    _opt(p, "--batches", type=int)
    _opt(p, "--batch-size", dest="batch_size", type=int)
    _opt(p, "--jobs", type=int)
    report_opts(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.paper_fixtures:
            return write_fixtures(args.fixture_dir or "fixtures")
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("nlquant: error: a command is required", file=sys.stderr)
            return EXIT_VALIDATION
        cfg = resolve(args.command, args)
        if args.command in ("fit", "project-hw", "evaluate") and cfg[
            {"fit": "summary", "project-hw": "model", "evaluate": "summary"}[args.command]
        ] is None:
            raise CliError(f"{args.command} needs an input file")
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"nlquant: error: {exc}", file=sys.stderr)
        return exc.code
    except adc.InfeasibleProjection as exc:
        print(f"nlquant: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"nlquant: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"nlquant: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
