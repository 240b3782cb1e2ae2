"""Command-line interface.

Usage::

    equity-activity all --input trades.csv.gz --calendar sessions.txt --out results/
    equity-activity synth --out results/ --seed 7

Settings come from an INI file (``--config``) and are overridden by flags.
Exit status: 0 success, 1 validation error, 2 stage failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dfa import DfaConfig
from .ingest import SamplingInterval
from .pipeline import STAGES, ConfigError, RunConfig, StageError, run_all, run_stage

log = logging.getLogger("equity_activity")

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE, EXIT_IO = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _intervals(text: str) -> list[SamplingInterval]:
    return [SamplingInterval.parse(t) for t in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equity-activity", description=__doc__.split("\n\n")[0])
    parser.add_argument("stage", choices=[*STAGES, "all"], help="pipeline stage to run")
    parser.add_argument("--config", type=Path, help="INI configuration file")
    parser.add_argument("--input", nargs="+", type=Path, help="trade files (.csv or .csv.gz)")
    parser.add_argument("--calendar", type=Path, help="session dates, one ISO date per line")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--intervals", help="comma-separated sampling intervals, e.g. 5m,30m,1d,5d,20d")
    parser.add_argument("--min-days", type=int, dest="min_days")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--delimiter")
    parser.add_argument("--out-of-session", choices=["drop", "reject"], dest="out_of_session")
    parser.add_argument("--bins-per-decade", type=int, dest="bins_per_decade")
    parser.add_argument("--detrend-order", type=int, dest="detrend_order")
    parser.add_argument("--log-transform", action="store_true", default=None, dest="log_transform",
                        help="run DFA on ln V instead of V")
    parser.add_argument("--schedule", help="target Hurst exponents for synth, e.g. 0.5,0.6,0.75,0.9")
    parser.add_argument("--ensemble", type=int)
    parser.add_argument("--length", type=int)
    parser.add_argument("--log-sigma", type=float, dest="log_sigma")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _read_ini(path: Path) -> dict:
    """Flatten an INI file into RunConfig keyword values.

    Relative paths are resolved against the config file's directory.
    """
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    base = path.parent
    vals: dict = {}
    dfa: dict = {}

    def rel(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    try:
        if cp.has_section("data"):
            d = cp["data"]
            if "input" in d:
                vals["inputs"] = [rel(p) for p in d["input"].split()]
            if "calendar" in d:
                vals["calendar"] = rel(d["calendar"])
            if "intervals" in d:
                vals["intervals"] = _intervals(d["intervals"])
            if "min_days" in d:
                vals["min_days"] = d.getint("min_days")
            if "delimiter" in d:
                vals["delimiter"] = d["delimiter"]
            if "out_of_session" in d:
                vals["out_of_session"] = d["out_of_session"]
        if cp.has_section("analysis"):
            a = cp["analysis"]
            for key in ("bins_per_decade", "min_count", "pdf_bins", "pattern_slot", "size_bins_per_decade"):
                if key in a:
                    vals[key] = a.getint(key)
        if cp.has_section("dfa"):
            f = cp["dfa"]
            for key in ("detrend_order", "windows_per_decade", "min_window"):
                if key in f:
                    dfa[key] = f.getint(key)
            if "max_window_fraction" in f:
                dfa["max_window_fraction"] = f.getfloat("max_window_fraction")
            if "fit_range" in f:
                lo, hi = _floats(f["fit_range"])
                dfa["fit_range"] = (lo, hi)
            if "log_transform" in f:
                vals["log_transform"] = f.getboolean("log_transform")
        if cp.has_section("surrogate"):
            s = cp["surrogate"]
            if "schedule" in s:
                vals["schedule"] = _floats(s["schedule"])
            for key in ("ensemble", "length", "aggregation_levels"):
                if key in s:
                    vals[key] = s.getint(key)
            for key in ("log_mu", "log_sigma"):
                if key in s:
                    vals[key] = s.getfloat(key)
        if cp.has_section("run"):
            r = cp["run"]
            if "out" in r:
                vals["out"] = rel(r["out"])
            if "threads" in r:
                vals["threads"] = r.getint("threads")
            if "seed" in r:
                vals["seed"] = r.getint("seed")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    vals["_dfa"] = dfa
    return vals


def config_from_args(args: argparse.Namespace) -> RunConfig:
    vals = _read_ini(args.config) if args.config else {"_dfa": {}}
    dfa_kw = vals.pop("_dfa")
    try:
        if args.input:
            vals["inputs"] = list(args.input)
        for key in ("calendar", "out", "min_days", "threads", "seed", "delimiter", "out_of_session",
                    "bins_per_decade", "log_transform", "ensemble", "length", "log_sigma"):
            v = getattr(args, key)
            if v is not None:
                vals[key] = v
        if args.intervals:
            vals["intervals"] = _intervals(args.intervals)
        if args.schedule:
            vals["schedule"] = _floats(args.schedule)
        if args.detrend_order is not None:
            dfa_kw["detrend_order"] = args.detrend_order
        if "out" not in vals:
            raise ConfigError("no output directory given (--out)")
        cfg = RunConfig(**vals)
        if dfa_kw:
            cfg = replace(cfg, dfa=DfaConfig(**dfa_kw))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        cfg.validate(args.stage)
        if args.stage == "all":
            path = run_all(cfg)
        else:
            path = run_stage(args.stage, cfg).root / "manifest.json"
        log.info("wrote %s", path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        if isinstance(exc.__cause__, OSError):
            print(f"I/O error: {exc.__cause__}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
