"""Pipeline stages behind the command-line front end.

Each stage reads the artifacts of earlier stages from the output directory,
writes its own files under ``<out>/<stage>/`` and finishes with a
``manifest.json`` listing every file it wrote together with its SHA-256.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._csvio import dumps_json, write_csv, write_json
from .dfa import (
    DfaConfig,
    hurst_cross_section,
    hurst_vs_size,
    size_bins,
    write_cross_section_csv,
    write_curves_csv,
)
from .distribution import (
    fit_lognormal,
    moments_vs_interval,
    normalize_logs,
    pdf_histogram,
    positive_values,
    write_moments_csv,
)
from .growth import LN2, GrowthObservations, conditional_stats, fit_beta, growth_rates
from .ingest import (
    ActivitySeries,
    SamplingInterval,
    TradeSchema,
    aggregate_universe,
    cross_measure_report,
    filter_universe,
    mean_activity,
    read_calendar,
    read_series_csv,
    read_trades,
    write_series_csv,
)
from .pattern import PatternError, deseasonalize, intraday_pattern, market_pattern, write_market_pattern_csv
from .surrogate import SurrogateSpec, relation_experiment, write_relation_csv

logger = logging.getLogger(__name__)

STAGES = ("ingest", "pattern", "dist", "growth", "dfa", "relation", "synth")
PIPELINE = ("ingest", "pattern", "dist", "growth", "dfa", "relation")
DAILY = SamplingInterval(days=1)
Z_EDGES = np.linspace(-5.0, 5.0, 51)


class ConfigError(ValueError):
    """Invalid run configuration (exit status 1)."""


class DependencyError(ConfigError):
    """A stage's input artifact from an earlier stage is missing."""


class StageError(RuntimeError):
    """A stage failed while running (exit status 2)."""


@dataclass
class RunConfig:
    out: Path
    inputs: list[Path] = field(default_factory=list)
    calendar: Path | None = None
    intervals: list[SamplingInterval] = field(
        default_factory=lambda: [SamplingInterval.parse(s) for s in ("5m", "30m", "1d", "5d", "20d")]
    )
    min_days: int = 480
    delimiter: str = ","
    out_of_session: str = "drop"
    bins_per_decade: int = 8
    min_count: int = 10
    pdf_bins: int = 50
    pattern_slot: int = 10
    dfa: DfaConfig = field(default_factory=DfaConfig)
    log_transform: bool = False
    size_bins_per_decade: int = 4
    schedule: list[float] = field(default_factory=lambda: [0.5, 0.6, 0.75, 0.9])
    ensemble: int = 32
    length: int = 2**16
    log_mu: float = 0.0
    log_sigma: float = 0.25
    aggregation_levels: int = 10
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    seed: int = 0

    def validate(self, stage: str) -> None:
        if not self.intervals:
            raise ConfigError("intervals must not be empty")
        if self.min_days < 1:
            raise ConfigError("min_days must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if stage in ("ingest", "all"):
            if not self.inputs:
                raise ConfigError("no input trade files given (--input)")
            for p in self.inputs:
                if not Path(p).is_file():
                    raise ConfigError(f"input file not found: {p}")
            if self.calendar is None or not Path(self.calendar).is_file():
                raise ConfigError(f"calendar file not found: {self.calendar}")
        if stage == "synth":
            if self.length < 2**14 or self.length & (self.length - 1):
                raise ConfigError(f"length must be a power of two >= 2**14, got {self.length}")
            if self.ensemble < 16:
                raise ConfigError(f"ensemble must be >= 16, got {self.ensemble}")
            if any(not 0.0 < h < 1.0 for h in self.schedule):
                raise ConfigError(f"schedule values must lie in (0, 1): {self.schedule}")
            if self.log_sigma < 0:
                raise ConfigError("log_sigma must be non-negative")
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {self.out} is not writable: {exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out} is not writable")

    def parameters(self) -> dict:
        return {
            "intervals": [iv.label for iv in self.intervals],
            "min_days": self.min_days,
            "delimiter": self.delimiter,
            "out_of_session": self.out_of_session,
            "bins_per_decade": self.bins_per_decade,
            "min_count": self.min_count,
            "pdf_bins": self.pdf_bins,
            "pattern_slot": self.pattern_slot,
            "dfa": {
                "detrend_order": self.dfa.detrend_order,
                "windows_per_decade": self.dfa.windows_per_decade,
                "min_window": self.dfa.window_min,
                "max_window_fraction": self.dfa.max_window_fraction,
                "fit_range": list(self.dfa.fit_range) if self.dfa.fit_range else None,
                "log_transform": self.log_transform,
            },
            "size_bins_per_decade": self.size_bins_per_decade,
            "surrogate": {
                "schedule": self.schedule,
                "ensemble": self.ensemble,
                "length": self.length,
                "log_mu": self.log_mu,
                "log_sigma": self.log_sigma,
                "aggregation_levels": self.aggregation_levels,
            },
            "seed": self.seed,
        }


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class StageContext:
    """Tracks files written by one stage and emits its manifest."""

    def __init__(self, cfg: RunConfig, name: str):
        self.cfg = cfg
        self.name = name
        self.root = cfg.out / name
        self.written: list[Path] = []
        self.inputs: list[Path] = []
        self.figures: dict[str, str] = {}
        self.notes: dict = {}

    def path(self, rel: str) -> Path:
        return self.root / rel

    def record(self, path: Path) -> Path:
        self.written.append(Path(path))
        return path

    def csv(self, rel: str, header, rows, figure: str | None = None) -> Path:
        p = self.record(write_csv(self.path(rel), header, rows))
        if figure:
            self.figures[figure] = self.relpath(p)
        return p

    def json(self, rel: str, obj) -> Path:
        return self.record(write_json(self.path(rel), obj))

    def relpath(self, p: Path) -> str:
        return Path(p).relative_to(self.cfg.out).as_posix()

    def manifest(self, status: str, error: str | None = None) -> Path:
        artifacts = [
            {"path": self.relpath(p), "sha256": sha256_file(p), "bytes": p.stat().st_size}
            for p in sorted(set(self.written)) if p.exists()
        ]
        doc = {
            "stage": self.name,
            "status": status,
            "version": __version__,
            "parameters": self.cfg.parameters(),
            "inputs": [
                {"path": str(p) if not _inside(p, self.cfg.out) else Path(p).relative_to(self.cfg.out).as_posix(),
                 "sha256": sha256_file(p)}
                for p in dict.fromkeys(self.inputs)
            ],
            "artifacts": artifacts,
            "figures": self.figures,
            "notes": self.notes,
        }
        if error is not None:
            doc["error"] = error
            doc["partial"] = True
        path = self.root / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_json(doc), encoding="utf-8")
        return path


def _inside(p: Path, root: Path) -> bool:
    try:
        Path(p).resolve().relative_to(Path(root).resolve())
        return True
    except ValueError:
        return False


def _require(cfg: RunConfig, rel: str, producer: str) -> Path:
    p = cfg.out / rel
    if not p.is_file():
        raise DependencyError(f"missing artifact {rel}; run the '{producer}' stage first")
    return p


def _load_ingest(cfg: RunConfig, ctx: StageContext) -> dict[str, dict[str, ActivitySeries]]:
    """``{interval_label: {symbol: series}}`` from the ingest stage."""
    index_path = _require(cfg, "ingest/series_manifest.json", "ingest")
    ctx.inputs.append(index_path)
    index = json.loads(index_path.read_text(encoding="utf-8"))
    out: dict[str, dict[str, ActivitySeries]] = {}
    for entry in index["series"]:
        iv = SamplingInterval.parse(entry["interval"])
        p = _require(cfg, entry["path"], "ingest")
        out.setdefault(iv.label, {})[entry["instrument"]] = read_series_csv(
            p, entry["instrument"], iv, entry["day_count"]
        )
    return out


def _load_adjusted(cfg: RunConfig, ctx: StageContext) -> dict[str, dict[str, ActivitySeries]]:
    """Ingested series with intraday ones replaced by their deseasonalized form."""
    raw = _load_ingest(cfg, ctx)
    index_path = _require(cfg, "pattern/deseasonalized_manifest.json", "pattern")
    ctx.inputs.append(index_path)
    index = json.loads(index_path.read_text(encoding="utf-8"))
    adjusted: dict[str, dict[str, ActivitySeries]] = {}
    for entry in index["series"]:
        iv = SamplingInterval.parse(entry["interval"])
        p = _require(cfg, entry["path"], "pattern")
        base = raw[iv.label][entry["instrument"]]
        adjusted.setdefault(iv.label, {})[entry["instrument"]] = read_series_csv(
            p, entry["instrument"], iv, base.trading_day_count
        )
    # intraday instruments without a defined pattern are dropped, not used raw
    for label in raw:
        if SamplingInterval.parse(label).is_intraday:
            raw[label] = adjusted.get(label, {})
    return raw


def _ordered(labels) -> list[SamplingInterval]:
    return sorted((SamplingInterval.parse(l) for l in labels), key=lambda iv: iv.length_minutes)


def stage_ingest(cfg: RunConfig, ctx: StageContext) -> None:
    calendar = read_calendar(cfg.calendar)
    ctx.inputs.extend(Path(p) for p in cfg.inputs)
    ctx.inputs.append(Path(cfg.calendar))
    schema = TradeSchema(delimiter=cfg.delimiter)

    def parse(p):
        return read_trades(p, schema, cfg.out_of_session)

    with ThreadPoolExecutor(max_workers=max(1, min(cfg.threads, len(cfg.inputs)))) as pool:
        parsed = list(pool.map(parse, cfg.inputs))
    records = [r for res in parsed for r in res.records]
    ctx.notes["parse"] = {
        str(p): {"records": len(res.records), "malformed": res.malformed, "out_of_session": res.out_of_session}
        for p, res in zip(cfg.inputs, parsed)
    }
    intervals = list(dict.fromkeys([*cfg.intervals, DAILY]))
    universe = aggregate_universe(records, intervals, calendar, cfg.threads)
    kept, report = filter_universe(universe, cfg.min_days)
    ctx.notes["excluded"] = report.excluded
    ctx.notes["retained"] = report.retained

    entries = []
    for sym in sorted(kept):
        for iv in _ordered(kept[sym]):
            s = kept[sym][iv.label]
            p = ctx.path(f"series/{iv.label}/{sym}.csv")
            write_series_csv(s, p)
            ctx.record(p)
            entries.append({
                "instrument": sym, "interval": iv.label, "day_count": s.trading_day_count,
                "bin_count": len(s), "path": ctx.relpath(p),
            })
    ctx.json("series_manifest.json", {"series": entries})

    daily = {sym: kept[sym][DAILY.label] for sym in kept}
    averages = {sym: mean_activity(s) for sym, s in daily.items()}
    ctx.csv(
        "fig1_cross_measure.csv",
        ["symbol", "mean_V", "mean_N", "mean_Q"],
        ((sym, *averages[sym]) for sym in sorted(averages)),
        figure="fig1",
    )
    try:
        rep = cross_measure_report(daily)
        summary = {
            "instruments": len(rep.averages),
            "pearson_logN_logV": rep.pearson_logNV,
            "pearson_logQ_logV": rep.pearson_logQV,
            "exponent_N_V": rep.exponent_NV,
            "exponent_Q_V": rep.exponent_QV,
            "stderr_N_V": rep.stderr_NV,
            "stderr_Q_V": rep.stderr_QV,
            "excluded": rep.excluded,
        }
    except ValueError as exc:
        summary = {"error": str(exc)}
    ctx.json("fig1_summary.json", summary)


def stage_pattern(cfg: RunConfig, ctx: StageContext) -> None:
    universe = _load_ingest(cfg, ctx)
    intraday = [iv for iv in _ordered(universe) if iv.is_intraday]
    if not intraday:
        raise StageError("no intraday interval was ingested; the pattern stage needs one")
    entries, skipped = [], {}
    for iv in intraday:
        for sym, s in sorted(universe[iv.label].items()):
            try:
                pat = intraday_pattern(s)
                adj = deseasonalize(s, pat)
            except PatternError as exc:
                skipped[f"{iv.label}/{sym}"] = str(exc)
                continue
            ctx.csv(f"patterns/{iv.label}/{sym}.csv", ["slot_start_minute", "A"], zip(pat.slot_starts, pat.values))
            p = ctx.path(f"deseasonalized/{iv.label}/{sym}.csv")
            write_series_csv(adj, p)
            ctx.record(p)
            entries.append({"instrument": sym, "interval": iv.label, "path": ctx.relpath(p)})
    ctx.json("deseasonalized_manifest.json", {"series": entries})
    ctx.notes["skipped"] = skipped

    base = next((iv for iv in intraday if cfg.pattern_slot % iv.minutes == 0), intraday[0])
    slot = cfg.pattern_slot if cfg.pattern_slot % base.minutes == 0 else base.minutes
    patterns = []
    for sym, s in sorted(universe[base.label].items()):
        try:
            patterns.append(intraday_pattern(s, slot))
        except PatternError as exc:
            skipped[f"{base.label}/{sym}@{slot}m"] = str(exc)
    if not patterns:
        raise StageError("no instrument has a defined intraday pattern")
    mp = market_pattern(patterns)
    p = ctx.path("fig2_intraday_pattern.csv")
    write_market_pattern_csv(mp, p)
    ctx.record(p)
    ctx.figures["fig2"] = ctx.relpath(p)
    ctx.notes["fig2"] = {"interval": base.label, "slot_length": slot, "instruments": mp.n_instruments}


def stage_dist(cfg: RunConfig, ctx: StageContext) -> None:
    universe = _load_adjusted(cfg, ctx)
    rows, fits, moment_input = [], [], {}
    for iv in _ordered(universe):
        series = [universe[iv.label][s] for s in sorted(universe[iv.label])]
        vals, zeros = positive_values(series)
        entry = {"interval": iv.label, "n": int(vals.size), "excluded_zeros": zeros}
        if vals.size:
            moment_input[iv] = [vals]
        try:
            pdf = pdf_histogram(vals, cfg.pdf_bins, "log")
            rows.extend((iv.label, "V", c, d) for c, d in zip(pdf.centers, pdf.densities))
            zpdf = pdf_histogram(normalize_logs(vals), scheme="linear", edges=Z_EDGES)
            rows.extend((iv.label, "z", c, d) for c, d in zip(zpdf.centers, zpdf.densities))
            fit = fit_lognormal(vals)
            entry.update(mu=fit.mu, sigma=fit.sigma, ks=fit.ks)
        except ValueError as exc:
            entry["error"] = str(exc)
        fits.append(entry)
    ctx.csv("fig3_distribution.csv", ["interval", "panel", "x", "density"], rows, figure="fig3")
    ctx.json("fit_summary.json", {"fits": fits})
    if moment_input:
        write_moments_csv(moments_vs_interval(moment_input), ctx.path("moments_vs_interval.csv"))
        ctx.record(ctx.path("moments_vs_interval.csv"))


def _beta_entry(obs: GrowthObservations, cfg: RunConfig) -> tuple[dict, object]:
    if len(obs) == 0:
        return {"error": "no growth observations", "observations": 0, "skipped": obs.skipped}, None
    stat = conditional_stats(obs, cfg.bins_per_decade, cfg.min_count)
    entry = {"observations": len(obs), "skipped": obs.skipped}
    try:
        fit = fit_beta(stat)
        entry.update(beta=fit.exponent, stderr=fit.stderr, range=[fit.lo, fit.hi], bins_used=fit.n_bins)
    except ValueError as exc:
        entry["error"] = str(exc)
    return entry, stat


def stage_growth(cfg: RunConfig, ctx: StageContext) -> None:
    universe = _load_adjusted(cfg, ctx)
    rows, per_interval, pooled = [], {}, []
    for iv in _ordered(universe):
        parts = []
        for sym in sorted(universe[iv.label]):
            s = universe[iv.label][sym]
            if len(s) >= 2:
                parts.append(growth_rates(s))
        obs = GrowthObservations.pool(parts)
        pooled.append(obs)
        entry, stat = _beta_entry(obs, cfg)
        per_interval[iv.label] = entry
        if stat is not None:
            occ = stat.occupied
            rows.extend(
                (iv.label, c, n, m, sd, LN2)
                for c, n, m, sd in zip(stat.centers[occ], stat.count[occ], stat.mean[occ], stat.std[occ])
            )
    all_entry, _ = _beta_entry(GrowthObservations.pool(pooled), cfg)
    ctx.csv("fig4_growth.csv", ["interval", "bin_center", "count", "mean_g", "std_g", "ln2"], rows, figure="fig4")
    ctx.json("beta_fit.json", {"intervals": per_interval, "pooled": all_entry, "ln2_reference": LN2})


def stage_dfa(cfg: RunConfig, ctx: StageContext) -> None:
    universe = _load_adjusted(cfg, ctx)
    intraday = [iv for iv in _ordered(universe) if iv.is_intraday]
    if not intraday:
        raise StageError("DFA needs an intraday series (e.g. 5m)")
    base = intraday[0]
    raw_daily = _load_ingest(cfg, ctx).get(DAILY.label, {})
    mean_v = {sym: mean_activity(s)[0] for sym, s in raw_daily.items()}
    cs = hurst_cross_section(universe[base.label], mean_v, cfg.dfa, cfg.log_transform, cfg.threads)
    p = ctx.path("dfa_curves.csv")
    write_curves_csv(cs.curves, p)
    ctx.record(p)
    p = ctx.path("fig5_hurst.csv")
    write_cross_section_csv(cs, p)
    ctx.record(p)
    ctx.figures["fig5"] = ctx.relpath(p)

    summary = {
        "interval": base.label,
        "instruments": len(cs.rows),
        "mean_H": cs.mean_h,
        "std_H": cs.std_h,
        "ks": cs.ks,
        "low_n": cs.low_n,
        "failures": cs.failures,
    }
    bin_rows = []
    try:
        bins = size_bins(cs, cfg.size_bins_per_decade)
        bin_rows = list(zip(bins.centers, bins.count, bins.mean_h, bins.std_h, bins.mean_log_v))
        reg = hurst_vs_size(cs, cfg.size_bins_per_decade)
        summary["size_regression"] = {"slope": reg.slope, "intercept": reg.intercept, "stderr": reg.stderr}
    except ValueError as exc:
        summary["size_regression"] = {"error": str(exc)}
    ctx.csv("fig6_hurst_vs_size.csv", ["bin_center", "count", "mean_H", "std_H", "mean_lnV"], bin_rows, figure="fig6")
    ctx.json("summary.json", summary)


def stage_relation(cfg: RunConfig, ctx: StageContext) -> None:
    beta_path = _require(cfg, "growth/beta_fit.json", "growth")
    dfa_path = _require(cfg, "dfa/summary.json", "dfa")
    ctx.inputs += [beta_path, dfa_path]
    beta = json.loads(beta_path.read_text(encoding="utf-8"))["pooled"]
    dfa_sum = json.loads(dfa_path.read_text(encoding="utf-8"))
    doc = {"beta": beta.get("beta"), "beta_stderr": beta.get("stderr"), "mean_H": dfa_sum.get("mean_H")}
    if doc["beta"] is not None and doc["mean_H"] is not None:
        doc["one_minus_H"] = 1.0 - doc["mean_H"]
        doc["beta_plus_H_minus_1"] = doc["beta"] + doc["mean_H"] - 1.0
    else:
        doc["error"] = beta.get("error") or "mean H unavailable"
    ctx.json("relation.json", doc)


def stage_synth(cfg: RunConfig, ctx: StageContext) -> None:
    template = SurrogateSpec(cfg.length, 0.5, cfg.log_mu, cfg.log_sigma, cfg.seed)
    report = relation_experiment(
        cfg.schedule, cfg.ensemble, template, cfg.aggregation_levels, cfg.dfa,
        cfg.bins_per_decade, cfg.min_count, cfg.threads,
    )
    p = ctx.path("relation_experiment.csv")
    write_relation_csv(report, p)
    ctx.record(p)
    ctx.json("summary.json", {
        "ensemble": report.ensemble,
        "length": report.length,
        "aggregation_levels": report.aggregation_levels,
        "rows": [
            {"target_H": r.target_h, "measured_H": r.measured_h, "beta": r.beta,
             "beta_plus_H_minus_1": r.beta + r.measured_h - 1.0, "observations": r.observations,
             "error": r.error}
            for r in report.rows
        ],
    })


_RUNNERS = {
    "ingest": stage_ingest,
    "pattern": stage_pattern,
    "dist": stage_dist,
    "growth": stage_growth,
    "dfa": stage_dfa,
    "relation": stage_relation,
    "synth": stage_synth,
}


def run_stage(name: str, cfg: RunConfig) -> StageContext:
    """Run one stage and write its manifest; failures leave a 'failed' manifest."""
    ctx = StageContext(cfg, name)
    try:
        _RUNNERS[name](cfg, ctx)
    except ConfigError:
        raise
    except OSError:
        ctx.manifest("failed", "I/O error")
        raise
    except Exception as exc:
        ctx.manifest("failed", f"{type(exc).__name__}: {exc}")
        raise StageError(f"stage {name} failed: {exc}") from exc
    ctx.manifest("ok")
    return ctx


def run_all(cfg: RunConfig) -> Path:
    figures = {}
    stages = []
    for name in PIPELINE:
        ctx = run_stage(name, cfg)
        figures.update(ctx.figures)
        stages.append({"stage": name, "manifest": f"{name}/manifest.json",
                       "sha256": sha256_file(ctx.root / "manifest.json")})
    doc = {
        "stages": stages,
        "figures": {
            k: {"path": v, "sha256": sha256_file(cfg.out / v)} for k, v in sorted(figures.items())
        },
        "parameters": cfg.parameters(),
        "version": __version__,
    }
    path = cfg.out / "manifest.json"
    path.write_text(dumps_json(doc), encoding="utf-8")
    return path
