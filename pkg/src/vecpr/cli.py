"""Command-line entry point: ``vecpr {simulate,retrieve,benchmark,psf-compare,diagnose}``.

Configs are INI files with an ``[experiment]`` section whose keys mirror
:class:`vecpr.harness.ExperimentConfig`, or the same keys as a JSON object.
Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O failure.
Failures also print a JSON error record on stderr and, when possible, write
``error.json`` into the output directory.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from vecpr import __version__
from vecpr import harness as H
from vecpr.io import read_array, read_json, write_array, write_json, write_text
from vecpr.optics import build_aperture
from vecpr.solvers import NumericalError, check_almost_averaged, estimate_linear_rate, fit_log_linear

log = logging.getLogger("vecpr")

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4


class ConfigError(ValueError):
    pass


# -- config ----------------------------------------------------------------------


def _coerce(name, raw, default):
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = raw if isinstance(raw, (list, tuple)) else str(raw).replace(",", " ").split()
            return tuple(float(v) for v in items)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {raw!r}") from None
    return str(raw)


def _parse_algorithms(raw):
    """``"VAM, DRAP:30+20:0.95"`` or a JSON list of names / objects."""
    if isinstance(raw, list):
        return [a if isinstance(a, dict) else _parse_algorithms(str(a))[0] for a in raw]
    out = []
    for item in str(raw).split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        entry = {"name": parts[0]}
        if len(parts) > 1 and parts[1]:
            entry["iterations"] = parts[1]
        if len(parts) > 2 and parts[2]:
            entry["beta"] = float(parts[2])
        out.append(entry)
    return out


def load_config(path) -> dict:
    """Raw key/value mapping from an INI or JSON config file."""
    path = Path(path)
    text = path.read_text()  # OSError -> I/O failure
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return data.get("config", data)
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    data = {}
    for section in parser.sections():
        data.update(parser[section])
    return data


def make_config(raw: dict, args=None) -> H.ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(H.ExperimentConfig)}
    defaults = H.ExperimentConfig()
    kwargs = {}
    for key, value in raw.items():
        name = key.strip().lower().replace("-", "_")
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        if name == "algorithms":
            kwargs[name] = _parse_algorithms(value)
        else:
            kwargs[name] = _coerce(name, value, getattr(defaults, name))
    if args is not None:
        if args.seed is not None:
            kwargs["seed"] = args.seed
        if args.known_amplitude:
            kwargs["known_amplitude"] = True
        if args.model:
            kwargs["model"] = args.model
        if args.algo:
            kwargs["algorithms"] = _parse_algorithms(args.algo)
        if args.beta is not None or args.iters:
            algos = kwargs.get("algorithms") or [dataclasses.asdict(a) for a in defaults.algorithms]
            for a in algos:
                if args.beta is not None:
                    a["beta"] = args.beta
                if args.iters:
                    a["iterations"] = args.iters
            kwargs["algorithms"] = algos
    try:
        return H.ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _aperture(cfg: H.ExperimentConfig):
    try:
        return build_aperture(cfg.n, cfg.na, cfg.wavelength, cfg.pixel_size, cfg.amplitude, cfg.fill)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(cfg, args, out: Path) -> dict:
    ap = _aperture(cfg)
    phase, ms = H.realization_data(cfg, ap, 0)
    write_array(out / "phase", phase)
    write_array(out / "intensities", ms.intensities)
    write_array(out / "diversities", ms.diversities)
    if ms.noise_record is not None:
        write_array(out / "noise", ms.noise_record)
    meta = {"config": cfg.to_dict(), "aperture": ap.metadata(), "field_scale": ms.field_scale,
            "m": ms.m, "seed": cfg.seed, "version": __version__}
    write_json(out / "measurement.json", meta)
    write_json(out / "config.json", cfg.to_dict())
    return {"written": ["phase", "intensities", "diversities", "measurement.json"]}


def _load_measurements(data_dir: Path):
    meta = read_json(data_dir / "measurement.json")
    ms = H.MeasurementSet(read_array(data_dir / "intensities"), read_array(data_dir / "diversities"),
                          field_scale=float(meta["field_scale"]))
    truth = read_array(data_dir / "phase") if (data_dir / "phase.json").exists() else None
    return meta, ms, truth


def _run_one(cfg, args, data_dir: Path):
    meta, ms, truth = _load_measurements(data_dir)
    ap = _aperture(make_config(meta["config"]))
    # retrieve/diagnose run one method: the first configured one, VAM if none was chosen
    alg = cfg.algorithms[0] if getattr(args, "explicit_algos", True) else H.AlgorithmConfig("VAM")
    est, trace = H.retrieve(ap, ms, alg.name, alg.iterations, alg.beta, cfg.model, cfg.known_amplitude,
                            cfg.random_init, seed=cfg.seed)
    return ap, ms, truth, alg, est, trace


def cmd_retrieve(cfg, args, out: Path) -> dict:
    data_dir = Path(args.data) if args.data else out
    ap, ms, truth, alg, est, trace = _run_one(cfg, args, data_dir)
    trace.rate_estimate = estimate_linear_rate(trace)
    write_array(out / "phase_estimate", est)
    write_json(out / "trace.json", trace.to_dict())
    result = {"algorithm": alg.name, "iterations": str(alg.iterations), "beta": alg.beta,
              "final_residual": trace.residuals[-1], "rate_estimate": trace.rate_estimate}
    if truth is not None:
        result["error"] = H.relative_rms(est, truth, ap.mask)
    write_json(out / "result.json", result)
    return result


def cmd_benchmark(cfg, args, out: Path) -> dict:
    report = H.run_benchmark(cfg)
    write_json(out / "report.json", report.to_dict())
    write_json(out / "config.json", cfg.to_dict())
    write_text(out / "table.csv", report.table_csv())
    write_text(out / "boxplot.csv", report.boxplot_csv())
    return {name: s["mean"] for name, s in report.summary.items()}


def cmd_psf_compare(cfg, args, out: Path) -> dict:
    na_list = [float(v) for v in args.na.split(",")] if args.na else [0.15, 0.55, 0.95]
    try:
        rows = H.compare_psf_models(na_list, n=cfg.n, normalization=args.normalization, fill=cfg.fill)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["na", "pixel", "flat_scalar", "flat_vectorial", "aberrated_scalar", "aberrated_vectorial"])
    for r in rows:
        for i in range(cfg.n):
            w.writerow([r["na"], i - cfg.n // 2] + [repr(float(r[k][i])) for k in
                       ("flat_scalar", "flat_vectorial", "aberrated_scalar", "aberrated_vectorial")])
    write_text(out / "psf_cross_sections.csv", buf.getvalue())
    summary = [{"na": r["na"], "discrepancy": r["discrepancy"], "flat_discrepancy": r["flat_discrepancy"],
                "aberrated_discrepancy": r["aberrated_discrepancy"]} for r in rows]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["na", "discrepancy", "flat_discrepancy", "aberrated_discrepancy"])
    for s in summary:
        w.writerow([s["na"], repr(s["discrepancy"]), repr(s["flat_discrepancy"]), repr(s["aberrated_discrepancy"])])
    write_text(out / "psf_discrepancy.csv", buf.getvalue())
    write_json(out / "psf_discrepancy.json", summary)
    return {"discrepancy": [s["discrepancy"] for s in summary]}


def cmd_diagnose(cfg, args, out: Path) -> dict:
    data_dir = Path(args.data) if args.data else out
    ap, ms, truth, alg, est, trace = _run_one(cfg, args, data_dir)
    family, model, scalar = H.parse_algorithm(alg.name, cfg.known_amplitude, cfg.model)
    geom = ap.as_scalar() if scalar else ap
    amp = ms.field_scale * ap.amplitude if model.endswith("p") else None
    spec = H.build_problem(geom, ms, family, model, alg.beta, amp).averaging_stage()
    scale = float(np.sqrt(np.sum(np.abs(trace.x) ** 2)))
    cert = check_almost_averaged(spec, trace.x, args.radius * scale, args.samples, args.alpha, seed=cfg.seed)
    fit = fit_log_linear(trace.residuals)
    result = {
        "algorithm": alg.name,
        "certificate": cert.to_dict(),
        "radius": args.radius * scale,
        "rate_estimate": estimate_linear_rate(trace),
        "rate_fit": None if fit is None else {"rate": fit[0], "r_squared": fit[1]},
        "trace": trace.to_dict(),
    }
    if truth is not None:
        result["error"] = H.relative_rms(est, truth, ap.mask)
    write_json(out / "diagnose.json", result)
    return {"epsilon": cert.epsilon, "worst_ratio": cert.worst_ratio, "rate_estimate": result["rate_estimate"]}


COMMANDS = {
    "simulate": cmd_simulate,
    "retrieve": cmd_retrieve,
    "benchmark": cmd_benchmark,
    "psf-compare": cmd_psf_compare,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI or JSON experiment config")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int)
    common.add_argument("--algo", help="NAME[,NAME...]; NAME may carry :ITERS[:BETA]")
    common.add_argument("--beta", type=float)
    common.add_argument("--iters", help="K1 or K1+K2")
    common.add_argument("--known-amplitude", action="store_true")
    common.add_argument("--model", choices=H.MODELS)
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--quiet", action="store_true")
    verb.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vecpr", description="Vectorial phase retrieval experiments.")
    parser.add_argument("--version", action="version", version=f"vecpr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate one measurement set and its ground truth")
    for name, text in (("retrieve", "run one algorithm on a measurement set"),
                       ("diagnose", "averagedness certificate and rate estimate for one run")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", help="directory written by 'simulate' (default: --out)")
        if name == "diagnose":
            p.add_argument("--alpha", type=float, default=2 / 3)
            p.add_argument("--radius", type=float, default=1e-3, help="ball radius relative to ||x||")
            p.add_argument("--samples", type=int, default=50)
    sub.add_parser("benchmark", parents=[common], help="run the benchmark suite")
    p = sub.add_parser("psf-compare", parents=[common], help="scalar vs vectorial PSF cross-sections")
    p.add_argument("--na", help="comma-separated NA list (default 0.15,0.55,0.95)")
    p.add_argument("--normalization", choices=("peak", "energy"), default="peak")
    return parser


def _fail(code: int, kind: str, exc: BaseException, out) -> int:
    record = {"status": "error", "code": code, "kind": kind, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    try:
        write_json(Path(out) / "error.json", record)
    except OSError:
        pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        raw = load_config(args.config) if args.config else {}
        cfg = make_config(raw, args)
        args.explicit_algos = bool(args.algo) or any(k.strip().lower() == "algorithms" for k in raw)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc, out)
    except (NumericalError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc, out)
    except (OSError, KeyError) as exc:
        return _fail(EXIT_IO, "io", exc, out)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "config", exc, out)
    if not args.quiet:
        print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
