"""``osnoise`` command-line entry point.

Subcommands::

    osnoise simulate --config CFG [--run NAME] --out PATH
    osnoise analyze DATASET --out DIR [--band LO:HI] [--format csv|json]
    osnoise budget --config CFG [--run NAME] --out DIR
    osnoise fit INPUT --mode ringdown|modes --init INIT --out FILE

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 bad data,
5 fit failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np
from scipy import stats

from . import __version__, io
from .config import bundled_config, load_config, tomllib
from .errors import (
    ConfigError,
    DatasetFormatError,
    EmptyResultError,
    FitError,
    InvalidInputError,
    ModelEvaluationError,
    SingularLoopError,
)
from .estimator import (
    coherence,
    fit_ringdown,
    uncorrelated_noise_estimate,
    welch_cpsd,
    welch_psd,
)
from .noise_models import MechanicalMode, ModeSet
from .pipeline import (
    build_noise_budget,
    calibrate_s0,
    calibrate_s1,
    db_below_sql,
    fit_modal_masses,
    normalize_to_sql,
)
from .spectrum import MASKED, Spectrum
from .synth import synthesize_run

log = logging.getLogger("osnoise")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA, EXIT_FIT = 0, 2, 3, 4, 5
BUNDLED_PREFIX = "bundled:"


class _FitFailure(Exception):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def _band(text):
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("band must look like LO:HI in Hz") from None
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError("band must satisfy 0 < LO < HI")
    return lo, hi


def _load_experiment(spec):
    if spec is None:
        return bundled_config("cantilever_runs")
    if spec.startswith(BUNDLED_PREFIX):
        return bundled_config(spec[len(BUNDLED_PREFIX):])
    return load_config(spec)


def _selected_runs(exp, run):
    if run is None or run == "all":
        return list(exp.runs.items())
    return [(run, exp.run(run))]


def _apply_overrides(cfg, args):
    changes = {}
    if getattr(args, "seed_override", None) is not None:
        changes["seed"] = args.seed_override
    if getattr(args, "segments", None) is not None:
        changes["n_segments"] = args.segments
    try:
        return cfg.replace(**changes) if changes else cfg
    except InvalidInputError as exc:
        raise ConfigError(str(exc), "command line") from None


def _write_spectrum(out_dir, name, spec, fmt):
    path = Path(out_dir) / f"{name}.{fmt}"
    if fmt == "csv":
        io.write_spectrum_csv(path, spec)
    else:
        io.write_spectrum_json(path, spec)
    return path


# ---------------------------------------------------------------- simulate


def cmd_simulate(args):
    exp = _load_experiment(args.config)
    runs = _selected_runs(exp, args.run)
    out = Path(args.out)
    multi = len(runs) > 1 or out.suffix == "" or out.is_dir()
    for name, cfg in runs:
        cfg = _apply_overrides(cfg, args)
        ds = synthesize_run(cfg, threads=args.threads)
        path = out / f"{name}.osnd" if multi else out
        io.write_dataset(path, ds)
        io.write_sidecar(path, kind="dataset", run=name, config_source=exp.source)
        band = cfg.analysis_band or (float(ds.freq[0]), float(ds.freq[-1]))
        print(
            f"{name}: {ds.n_segments} segments, {ds.freq.size} bins, "
            f"band {band[0]:g}-{band[1]:g} Hz, seed {cfg.seed} -> {path}"
        )
    return EXIT_OK


# ---------------------------------------------------------------- analyze


def _residual_summary(est, truth, band, tolerance, n_sub=5):
    """Fraction of valid bins within ``tolerance`` of ``truth``, per sub-band."""
    edges = np.linspace(band[0], band[1], n_sub + 1)
    f = est.freq
    v = np.real(est.values)
    t = np.real(truth)
    ok = est.valid & np.isfinite(t) & (t > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ok, v / np.where(ok, t, 1.0) - 1.0, np.nan)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (f >= lo) & (f <= hi) & ok
        n = int(np.count_nonzero(sel))
        frac = float(np.mean(np.abs(rel[sel]) < tolerance)) if n else None
        rows.append(
            {
                "band_hz": [float(lo), float(hi)],
                "n_bins": n,
                "fraction_within_tolerance": frac,
                "median_relative_error": float(np.median(rel[sel])) if n else None,
                "pass": bool(n and frac >= 0.95),
            }
        )
    sel = (f >= band[0]) & (f <= band[1]) & ok
    total = float(np.mean(np.abs(rel[sel]) < tolerance)) if np.any(sel) else None
    return {
        "tolerance": tolerance,
        "fraction_within_tolerance": total,
        "pass": bool(total is not None and total >= 0.95),
        "sub_bands": rows,
    }


def analyze_dataset(ds, band=None, threads=1, tolerance=0.1):
    """Run the full estimation chain on a dataset.

    Returns ``(spectra, report)``: a dict of named :class:`Spectrum` objects
    and a JSON-serialisable report.
    """
    cfg = ds.config
    if cfg is None:
        raise DatasetFormatError("dataset carries no run configuration (K_m unknown)")
    if band is None:
        band = cfg.analysis_band or (float(ds.freq[0]), float(ds.freq[-1]))
    lo, hi = band
    if not np.any((ds.freq >= lo) & (ds.freq <= hi)):
        raise InvalidInputError(f"band {lo:g}-{hi:g} Hz contains no bins of the dataset")
    k = cfg.calibration
    m = cfg.optical.reduced_mass
    s = {
        "S_FF": welch_psd(ds, "F", threads),
        "S_LL": welch_psd(ds, "L", threads),
        "S_MM": welch_psd(ds, "M", threads),
        "S_LM": welch_cpsd(ds, "L", "M", threads),
        "S_FL": welch_cpsd(ds, "F", "L", threads),
    }
    s["C"] = coherence(s["S_FF"], s["S_LL"], s["S_FL"])
    s["uncorrelated"] = uncorrelated_noise_estimate(s["S_LL"], s["S_LM"], ds)
    degenerate = all(not np.any(ds.channel(ch)) for ch in ds.channels)
    report = {
        "run": cfg.name,
        "n_segments": ds.n_segments,
        "band_hz": [lo, hi],
        "calibration_m_per_w": k,
        "seed": ds.seed,
        "degenerate_input": degenerate,
        "osnoise_version": __version__,
    }
    zero = Spectrum(ds.freq, np.zeros(ds.freq.size), units="m^2/Hz",
                    flags=np.full(ds.freq.size, MASKED, np.uint8))
    s["S0"] = calibrate_s0(s["S_FF"], s["C"], k)
    report["warnings"] = []
    if np.all(s["S0"].mask):
        report["warnings"].append("S0: every bin masked (no coherent frequency-noise reference)")
    try:
        s["S1"] = calibrate_s1(s["S_FF"], s["S_LM"], s["S_FL"], k, os_freq=cfg.os_freq)
    except EmptyResultError as exc:
        s["S1"] = zero
        report["warnings"].append(f"S1: {exc}")
    for key in ("S0", "S1"):
        s[f"{key}_over_SQL"] = normalize_to_sql(s[key], m)
        try:
            mn = db_below_sql(s[f"{key}_over_SQL"], band)
            report[f"db_below_sql_{key}"] = {"min_db": mn.min_ratio_db, "at_hz": mn.at_freq}
        except InvalidInputError:
            report[f"db_below_sql_{key}"] = None
    # depth to which the shot noise cancels in the cross spectrum
    sel = (ds.freq >= lo) & (ds.freq <= hi)
    ll = np.real(s["S_LL"].values)[sel]
    if np.all(ll > 0):
        depth = float(np.median(np.abs(np.real(s["S_LM"].values))[sel] / ll))
        report["cancellation_depth"] = {
            "median_abs_re_S_LM_over_S_LL": depth,
            # |Re L M*| of uncorrelated shot noise: half-normal with sigma S_LL / sqrt(2N)
            "expected_for_pure_shot": float(stats.norm.ppf(0.75) / np.sqrt(2 * ds.n_segments)),
        }
    if ds.truth and not degenerate:
        tr = ds.truth
        target = tr["thermal"].values + tr["qrpn_suppressed"].values
        report["residuals"] = {
            "S0_vs_model": _residual_summary(s["S0"], tr["S0_expected"].values, band, tolerance),
            "S1_vs_model": _residual_summary(s["S1"], tr["S1_expected"].values, band, tolerance),
            "S1_vs_thermal_plus_qrpn": _residual_summary(s["S1"], target, band, tolerance),
        }
        with np.errstate(divide="ignore", invalid="ignore"):
            for key, ref in (("S0", "S0_expected"), ("S1", "S1_expected")):
                t = tr[ref].values
                good = np.isfinite(t) & (t != 0)
                s[f"{key}_residual"] = Spectrum(
                    ds.freq,
                    np.where(good, np.real(s[key].values) / np.where(good, t, 1.0) - 1.0, 0.0),
                    units="dimensionless",
                    flags=s[key].flags | np.where(good, 0, MASKED).astype(np.uint8),
                    name=f"{key}_residual",
                )
    return s, report


def cmd_analyze(args):
    ds = io.read_dataset(args.dataset)
    spectra, report = analyze_dataset(ds, args.band, args.threads, args.tolerance)
    out = Path(args.out)
    for name, spec in spectra.items():
        _write_spectrum(out, name, spec, args.format)
        if args.clamp and not spec.is_complex and name in ("S0", "S1"):
            _write_spectrum(out, f"{name}_clamped", spec.clamped(), args.format)
    report["dataset"] = Path(args.dataset).name
    io.write_json(out / "report.json", report)
    io.write_sidecar(out / "report.json", kind="analysis")
    res = report.get("residuals", {}).get("S1_vs_thermal_plus_qrpn")
    line = f"{report['run']}: {ds.n_segments} segments analysed -> {out}"
    if report["degenerate_input"]:
        line += " (degenerate input: all channels zero)"
    elif res is not None and res["fraction_within_tolerance"] is not None:
        line += (
            f"; S1 within {100 * res['tolerance']:g}% of thermal+QRPN in "
            f"{100 * res['fraction_within_tolerance']:.1f}% of bins"
        )
    print(line)
    return EXIT_OK


# ---------------------------------------------------------------- budget


def budget_summary(budget, band):
    f = budget.freq
    sel = (f >= band[0]) & (f <= band[1])
    th = budget.components["thermal"].values[sel]
    q = budget.components["qrpn_suppressed"].values[sel]
    summary = {"variant": budget.variant, "band_hz": list(band)}
    with np.errstate(divide="ignore", invalid="ignore"):
        summary["qrpn_to_thermal_mean"] = float(np.mean(q / th)) if np.all(th > 0) else None
    for key in ("thermal", "total"):
        try:
            mn = db_below_sql(budget.ratio_to_sql(key), band)
            summary[f"db_below_sql_{key}"] = {"min_db": mn.min_ratio_db, "at_hz": mn.at_freq}
        except InvalidInputError:
            summary[f"db_below_sql_{key}"] = None
    return summary


def cmd_budget(args):
    exp = _load_experiment(args.config)
    band = args.band or exp.analysis_band
    runs = _selected_runs(exp, args.run)
    out = Path(args.out)
    report = {"experiment": exp.name, "runs": {}}
    for name, cfg in runs:
        b = band or (float(cfg.freq_grid[0]), float(cfg.freq_grid[-1]))
        grid = np.linspace(b[0], b[1], int(exp.report["budget_points"]))
        report["runs"][name] = {}
        for variant in ("s0", "s1"):
            bud = build_noise_budget(cfg, exp.calibration, variant=variant, freq=grid)
            for cname, spec in bud.all_curves().items():
                _write_spectrum(out / name, f"{variant}_{cname}", spec, args.format)
            report["runs"][name][variant] = budget_summary(bud, b)
    if len(runs) > 1:
        ratios = [report["runs"][n]["s0"]["qrpn_to_thermal_mean"] for n, _ in runs]
        order = [n for _, n in sorted(zip(ratios, [n for n, _ in runs]), reverse=True)]
        report["qrpn_ordering"] = order
    io.write_json(out / "budget.json", report)
    io.write_sidecar(out / "budget.json", kind="budget", config_source=exp.source)
    for name, r in report["runs"].items():
        d = r["s0"]["db_below_sql_thermal"]
        msg = f"{name}: QRPN/thermal {r['s0']['qrpn_to_thermal_mean']:.3g}"
        if d is not None:
            msg += f", thermal min {d['min_db']:+.2f} dB re SQL at {d['at_hz']:.0f} Hz"
        print(msg)
    return EXIT_OK


# ---------------------------------------------------------------- fit

_INIT_SCHEMA = {
    "type": "object",
    "properties": {
        "f0_hz": {"type": "number", "exclusiveMinimum": 0},
        "temperature_k": {"type": "number", "minimum": 0},
        "quality_factor": {"type": "number", "exclusiveMinimum": 1},
        "fit_band_hz": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "fit_frequencies": {"type": "boolean"},
        "window_frac": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "modes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["freq_hz", "modal_mass_ng"],
                "properties": {
                    "freq_hz": {"type": "number", "exclusiveMinimum": 0},
                    "modal_mass_ng": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
    },
}


def _read_init(path):
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    try:
        jsonschema.validate(data, _INIT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(exc.message, ".".join(str(p) for p in exc.absolute_path) or "<root>") from None
    return data


def _read_ringdown(path):
    try:
        arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError:
        arr = np.loadtxt(path, delimiter=",", comments="#", skiprows=1, ndmin=2)
    if arr.shape[1] < 2:
        raise DatasetFormatError("ring-down file needs columns time_s, amplitude")
    return arr[:, 0], arr[:, 1]


def _read_psd(path):
    p = Path(path)
    if p.suffix == ".json":
        return io.read_spectrum_json(p)
    if p.suffix == ".csv":
        return io.read_spectrum_csv(p)
    ds = io.read_dataset(p)
    spectra, _ = analyze_dataset(ds)
    s1 = spectra["S1"]
    return s1.with_flags(s1.freq > ds.config.os_freq, MASKED)


def cmd_fit(args):
    init = _read_init(args.init)
    if args.mode == "ringdown":
        if "f0_hz" not in init:
            raise ConfigError("required for ring-down fits", "f0_hz")
        t, a = _read_ringdown(args.input)
        try:
            res = fit_ringdown(t, a, init["f0_hz"])
        except (FitError, InvalidInputError) as exc:
            raise _FitFailure(str(exc), {"n_samples": int(t.size)}) from None
        lo, hi = res.q_interval(0.95)
        out = {
            "mode": "ringdown",
            "q": res.q,
            "q_uncertainty": res.q_uncertainty,
            "q_interval_95": [lo, hi],
            "tau_s": res.tau,
            "tau_uncertainty_s": res.tau_uncertainty,
            "amplitude": res.amplitude,
            "f0_hz": res.f0,
            "n_samples": res.n_samples,
            "residual_rms_log": res.residual_rms,
        }
        msg = f"Q = {res.q:.6g} +/- {res.q_uncertainty:.2g}"
    else:
        for key in ("modes", "temperature_k", "quality_factor", "fit_band_hz"):
            if key not in init:
                raise ConfigError("required for mode fits", key)
        modes = [MechanicalMode.from_hz(m["modal_mass_ng"] * 1e-12, m["freq_hz"]) for m in init["modes"]]
        ms = ModeSet.from_q(modes, init["quality_factor"], init["temperature_k"])
        spec = _read_psd(args.input)
        try:
            res = fit_modal_masses(
                spec,
                ms,
                tuple(init["fit_band_hz"]),
                fit_frequencies=init.get("fit_frequencies", False),
                window_frac=init.get("window_frac", 0.1),
            )
        except FitError as exc:
            raise _FitFailure(str(exc), {"input": str(args.input)}) from None
        if not res.success:
            raise _FitFailure(res.message, {"log_rms": res.log_rms, "n_bins": res.n_bins})
        out = {
            "mode": "modes",
            "modal_mass_kg": res.modeset.masses,
            "modal_mass_uncertainty_kg": res.mass_uncertainty,
            "freq_hz": res.modeset.freqs_hz,
            "freq_uncertainty_hz": res.freq_uncertainty,
            "log_rms": res.log_rms,
            "n_bins": res.n_bins,
        }
        msg = "masses [ng]: " + ", ".join(f"{m * 1e12:.6g}" for m in res.modeset.masses)
    io.write_json(args.out, out)
    io.write_sidecar(args.out, kind=f"fit-{args.mode}")
    print(msg)
    return EXIT_OK


# ---------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="osnoise", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="synthesize run datasets from a config")
    sp.add_argument("--config", help="TOML config path or bundled:NAME (default bundled:cantilever_runs)")
    sp.add_argument("--run", help="run name, or 'all' (default)")
    sp.add_argument("--out", required=True, help="dataset file, or directory for several runs")
    sp.add_argument("--seed-override", type=int)
    sp.add_argument("--segments", type=int)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="estimate spectra and S0/S1 from a dataset")
    sp.add_argument("dataset")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--band", type=_band, help="analysis band LO:HI in Hz")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--tolerance", type=float, default=0.1,
                    help="relative tolerance for the truth comparison (default 0.1)")
    sp.add_argument("--clamp", action="store_true",
                    help="also write S0/S1 with negative bins clamped to 0 (plotting only)")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("budget", help="write model noise budgets")
    sp.add_argument("--config")
    sp.add_argument("--run")
    sp.add_argument("--out", required=True)
    sp.add_argument("--band", type=_band)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_budget)

    sp = sub.add_parser("fit", help="ring-down Q or modal-mass fit")
    sp.add_argument("input", help="ring-down CSV, spectrum CSV/JSON, or dataset file")
    sp.add_argument("--mode", choices=("ringdown", "modes"), required=True)
    sp.add_argument("--init", required=True, help="TOML file with initial parameters")
    sp.add_argument("--out", required=True, help="output JSON file")
    sp.set_defaults(func=cmd_fit)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _FitFailure as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        for k, v in exc.diagnostics.items():
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_FIT
    except DatasetFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidInputError, EmptyResultError, ModelEvaluationError, SingularLoopError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
