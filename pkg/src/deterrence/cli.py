"""Command-line front end.

Subcommands: simulate, ingest, panel, fit, recover, gam, report. Every
command accepts ``--config`` (plain-text key = value), ``--seed``,
``--out-dir`` and repeatable ``--set key=value`` overrides, and writes
``resolved_config.txt`` beside its outputs. Logs go to stderr; data goes to
files only.

Exit status: 0 success, 1 usage/config error, 2 data error, 3 recovery
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gam as gam_mod
from .config import ConfigError, RunConfig, load_config
from .geogrid import (
    EffortRaster,
    IngestReport,
    ObservationRaster,
    bin_observations,
    grid_from_dict,
    grid_to_dict,
    rasterize_effort,
    read_observations,
    read_raster,
    read_waypoints,
    segment_tracks,
    write_raster,
)
from .model import (
    FitResult,
    ModelVariant,
    fit,
    format_table,
    format_table_csv,
    summarize,
)
from .optimizer import OptimizationError
from .panel import PanelError, assemble_panel, write_panel, write_stats
from .simulator import SimConfig, simulate, simulate_features, write_ground_truth

log = logging.getLogger("deterrence")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RECOVERY = 0, 1, 2, 3


class DataError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> config key, for the options that get their own flag
FLAG_KEYS = {
    "seed": "seed",
    "waypoints": "waypoints",
    "observations": "observations",
    "features": "features",
    "input_dir": "raster_dir",
    "pairing": "pairing",
    "variant": "variant",
    "neighbor_window": "neighbor_window",
    "seeds": "seeds",
}


def _resolve(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for attr, key in FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = str(v)
    return RunConfig(values)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(cfg.echo())
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_rasters(cfg: RunConfig) -> tuple[EffortRaster, ObservationRaster]:
    d = cfg.path("raster_dir")
    for name in ("grid.json", "effort.csv", "observations.csv"):
        if not (d / name).is_file():
            raise ConfigError(f"raster directory {d} has no {name}")
    try:
        grid, binning = grid_from_dict(json.loads((d / "grid.json").read_text()))
        effort = read_raster(d / "effort.csv", grid, binning, EffortRaster)
        obs = read_raster(d / "observations.csv", grid, binning, ObservationRaster)
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot read rasters from {d}: {exc}") from exc
    return effort, obs


def _write_rasters(out: Path, effort, obs) -> None:
    write_raster(out / "effort.csv", effort)
    write_raster(out / "observations.csv", obs)
    _write_json(out / "grid.json", grid_to_dict(effort.grid, effort.binning))


def _table_label(cfg: RunConfig, variant: ModelVariant) -> str:
    if variant is ModelVariant.PAST_ILLEGAL_NEIGHBORS:
        nb = cfg.neighbors()
        return nb.label if nb else ""
    return cfg.str("pairing")


def _sim_config(cfg: RunConfig, seed: int) -> SimConfig:
    variant = cfg.variant()
    lags = cfg.lags()
    bin_length = cfg.bin_length_days()
    if bin_length != lags.current_bin_length:
        raise ConfigError(f"bin_length ({bin_length} d) does not match pairing "
                          f"{cfg.str('pairing')} ({lags.current_bin_length} d)")
    m = {k: cfg.get(k) for k in ("n_cols", "n_rows", "n_bins", "mean_a", "std_a", "beta",
                                 "gamma", "rho", "eta", "policy", "effort_scale", "effort_cv")
         if cfg.get(k) not in (None, "")}
    for coef in ("gamma", "rho", "eta"):
        if coef not in variant.coefficients and coef not in m:
            m[coef] = 0.0
    nb = cfg.neighbors()
    m.update(variant=variant, bin_length=bin_length, past_bins=lags.k, seed=seed,
             neighbor_window=nb.window if nb else 3)
    try:
        return SimConfig.from_mapping(m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _panel(cfg: RunConfig, effort, obs):
    try:
        return assemble_panel(effort, obs, cfg.lags(), cfg.neighbors(), cfg.str("neighbor_source"))
    except PanelError as exc:
        raise DataError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig) -> int:
    sim = simulate(_sim_config(cfg, cfg.int("seed")))
    out = _out_dir(args, cfg)
    _write_rasters(out, sim.effort, sim.observations)
    write_ground_truth(out / "ground_truth.json", sim)
    feats = gam_mod.FeatureTable(sim.config.n_cols, sim.config.n_rows, simulate_features(sim))
    gam_mod.write_feature_table(out / "features.csv", feats)
    log.info("simulated %d cells x %d bins, detection rate %.4f", sim.config.n_cells,
             sim.config.n_bins, sim.ground_truth()["detection_rate"])
    return EXIT_OK


def cmd_ingest(args, cfg: RunConfig) -> int:
    wp_path = cfg.path("waypoints")
    obs_path = cfg.path("observations") if cfg.get("observations") else None
    grid, binning = cfg.grid(), cfg.binning()
    max_gap, max_dist = cfg.gaps()
    report = IngestReport()
    try:
        waypoints = read_waypoints(wp_path, report)
        obs = read_observations(obs_path, report) if obs_path else []
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    tracks = segment_tracks(waypoints, max_gap, max_dist, report)
    effort = rasterize_effort(tracks, grid, binning, report)
    obs_raster = bin_observations(obs, grid, binning, report)
    out = _out_dir(args, cfg)
    _write_rasters(out, effort, obs_raster)
    (out / "ingest_report.txt").write_text(report.to_text())
    if not waypoints:
        log.error("no valid waypoints in %s", wp_path)
        return EXIT_DATA
    log.info("ingested %d waypoints into %d tracks; %.3f km of effort",
             len(waypoints), len(tracks), effort.total)
    return EXIT_OK


def cmd_panel(args, cfg: RunConfig) -> int:
    effort, obs = _load_rasters(cfg)
    panel, stats = _panel(cfg, effort, obs)
    out = _out_dir(args, cfg)
    write_panel(out / "panel.csv", panel)
    write_stats(out / "panel_stats.json", stats)
    log.info("panel with %d rows, %d detections", len(panel), int(panel.y.sum()))
    return EXIT_OK


def cmd_fit(args, cfg: RunConfig) -> int:
    variant = cfg.variant()
    if variant is ModelVariant.PAST_ILLEGAL_NEIGHBORS and cfg.neighbors() is None:
        raise ConfigError("variant past_illegal_neighbors needs neighbor_window in {3, 5, 7}")
    effort, obs = _load_rasters(cfg)
    panel, stats = _panel(cfg, effort, obs)
    try:
        result = fit(panel, variant, cfg.fit_config(), label=_table_label(cfg, variant))
    except (OptimizationError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    out = _out_dir(args, cfg)
    d = result.to_dict()
    d["normalization"] = stats.to_dict()
    _write_json(out / "fit_result.json", d)
    rows = summarize(result)
    (out / "table.txt").write_text(format_table(rows, variant))
    (out / "table.csv").write_text(format_table_csv(rows, variant))
    log.info("fit %s in %d iterations: %s", variant.value, result.iterations,
             ", ".join(f"{c}={result.coefficient(c):.3f}" for c in variant.coefficients))
    return EXIT_OK


def recover(cfg: RunConfig, seeds, tolerance: float):
    """Simulate, build a panel and fit for each seed; compare to the truth.

    Returns (passed, report_text).
    """
    variant = cfg.variant()
    lines = []
    estimates = {c: [] for c in variant.coefficients}
    failures = 0
    for seed in seeds:
        sc = _sim_config(cfg, seed)
        truth = {c: getattr(sc, c) for c in variant.coefficients}
        try:
            sim = simulate(sc)
            nb = cfg.neighbors()
            if variant is ModelVariant.PAST_ILLEGAL_NEIGHBORS and nb is None:
                raise ConfigError("variant past_illegal_neighbors needs neighbor_window in {3, 5, 7}")
            panel, _ = assemble_panel(sim.effort, sim.observations, cfg.lags(), nb,
                                      cfg.str("neighbor_source"))
            res = fit(panel, variant, cfg.fit_config())
        except (PanelError, OptimizationError) as exc:
            failures += 1
            lines.append(f"seed {seed}: ERROR {exc}")
            continue
        parts, ok = [], True
        for c in variant.coefficients:
            est = res.coefficient(c)
            err = est - truth[c]
            sign = np.sign(est) == np.sign(truth[c])
            estimates[c].append(est)
            ok &= abs(err) <= tolerance
            parts.append(f"{c}={est:.4f} (true {truth[c]:.4f}, err {err:+.4f}, "
                         f"sign {'ok' if sign else 'MISMATCH'})")
        failures += not ok
        lines.append(f"seed {seed}: {'PASS' if ok else 'FAIL'} " + "; ".join(parts))

    flags = []
    spread = {c: float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")
              for c, v in estimates.items()}
    n_fitted = min(len(v) for v in estimates.values()) if estimates else 0
    if n_fitted < len(seeds) or any(s > tolerance for s in spread.values()):
        flags.append("WIDE-VARIANCE")
    passed = failures == 0 and not flags
    head = [f"recovery check: variant {variant.value}, {len(seeds)} seeds, tolerance {tolerance}",
            "across-seed std: " + ", ".join(f"{c}={s:.4f}" for c, s in spread.items())]
    if flags:
        head.append("flags: " + ", ".join(flags))
    head.append(f"result: {'PASS' if passed else 'FAIL'} ({len(seeds) - failures}/{len(seeds)} seeds within tolerance)")
    return passed, "\n".join(head + lines) + "\n"


def cmd_recover(args, cfg: RunConfig) -> int:
    n = cfg.int("seeds", 10)
    if n < 1:
        raise ConfigError("recover needs at least one seed")
    base = cfg.int("seed")
    tol = cfg.float("recover_tolerance", 0.05)
    passed, text = recover(cfg, list(range(base, base + n)), tol)
    out = _out_dir(args, cfg)
    (out / "recovery_report.txt").write_text(text)
    log.info("%s", next(ln for ln in text.splitlines() if ln.startswith("result:")))
    return EXIT_OK if passed else EXIT_RECOVERY


def cmd_gam(args, cfg: RunConfig) -> int:
    feat_path = cfg.path("features") if cfg.get("features") else None
    if feat_path is None:
        raise ConfigError("gam needs a features file (--features)")
    effort, obs = _load_rasters(cfg)
    try:
        table = gam_mod.read_feature_table(feat_path, effort.grid.n_cols, effort.grid.n_rows)
    except (gam_mod.GamError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    panel, stats = _panel(cfg, effort, obs)
    cols = gam_mod.join_features(panel, table, stats)
    lam = cfg.float("gam_lambda", 1.0)
    try:
        fitted = gam_mod.fit_gam(cols, panel.y, lam)
    except gam_mod.GamError as exc:
        raise DataError(str(exc)) from exc
    out = _out_dir(args, cfg)
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    n_grid = cfg.int("gam_grid", 200)
    for f in fitted.features:
        gam_mod.write_curve(curves / f"curve_{f}.csv", gam_mod.component_curve(fitted, f, n_grid))
    tests = [gam_mod.term_significance(fitted, f) for f in fitted.features]
    (out / "significance.txt").write_text(gam_mod.format_significance(tests))
    lines = ["GAM summary", f"rows: {fitted.n_obs}", f"lambda: {lam}",
             f"intercept: {fitted.intercept:.4f}"]
    for f in fitted.features:
        slope = gam_mod.linear_slope(fitted, f)
        sign = "negative" if slope < 0 else "positive" if slope > 0 else "zero"
        lines.append(f"{f}: edf {fitted.edf[f]:.2f}, best-fit linear slope {slope:+.4f} ({sign})")
    (out / "gam_summary.txt").write_text("\n".join(lines) + "\n")
    if "past_effort" in fitted.features:
        log.info("past_effort component slope: %+.4f", gam_mod.linear_slope(fitted, "past_effort"))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    if not args.results:
        raise ConfigError("report needs at least one fit_result.json")
    results = []
    for p in args.results:
        path = Path(p)
        if not path.is_file():
            raise ConfigError(f"fit result not found: {path}")
        try:
            results.append(FitResult.from_dict(json.loads(path.read_text())))
        except (ValueError, KeyError) as exc:
            raise DataError(f"{path}: {exc}") from exc
    variant = results[0].variant
    try:
        rows = summarize(results, variant)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = _out_dir(args, cfg)
    (out / "table.txt").write_text(format_table(rows, variant))
    (out / "table.csv").write_text(format_table_csv(rows, variant))
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic park with known parameters"),
    "ingest": (cmd_ingest, "rasterize waypoint and observation CSVs"),
    "panel": (cmd_panel, "build the standardized regression panel"),
    "fit": (cmd_fit, "fit a deterrence model and emit its coefficient table"),
    "recover": (cmd_recover, "check coefficient recovery on simulated data"),
    "gam": (cmd_gam, "fit the additive model and export component curves"),
    "report": (cmd_report, "tabulate one or more fit results"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="plain-text key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="deterrence", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        if name == "ingest":
            p.add_argument("--waypoints")
            p.add_argument("--observations")
        if name in ("panel", "fit", "gam"):
            p.add_argument("--input-dir", help="directory holding effort.csv, observations.csv, grid.json")
        if name in ("panel", "fit", "recover", "gam", "simulate"):
            p.add_argument("--pairing")
            p.add_argument("--neighbor-window", type=int)
        if name in ("fit", "recover", "simulate"):
            p.add_argument("--variant")
        if name == "recover":
            p.add_argument("--seeds", type=int, help="number of seeds (default 10)")
        if name == "gam":
            p.add_argument("--features")
        if name == "report":
            p.add_argument("results", nargs="*", help="fit_result.json files")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func = COMMANDS[args.command][0]
    try:
        cfg = _resolve(args)
        return func(args, cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, PanelError, gam_mod.GamError, OptimizationError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
