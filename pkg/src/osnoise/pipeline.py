"""Calibration and subtraction chain from detector spectra to free-mass noise.

Detector-unit (W^2/Hz) PD_L noise is referred to free-mass displacement as
``2 K_m^2 S / |G_os|^2``; the factor 2 is there because each detector of
the 50:50 split carries half of the displacement signal power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

from .errors import EmptyResultError, InvalidInputError, ModeNotFoundError
from .noise_models import sql_psd, thermal_psd
from .spectrum import MASKED, NEGATIVE, UNDEFINED, UNRELIABLE, Spectrum, check_grid
from .synth import injected_truth, model_terms

__all__ = [
    "CalibrationConstant",
    "NoiseBudget",
    "ModeFit",
    "SqlMinimum",
    "calibrate_s0",
    "calibrate_s1",
    "normalize_to_sql",
    "subtract_model",
    "add_model",
    "average_runs",
    "fit_modal_masses",
    "db_below_sql",
    "build_noise_budget",
    "COHERENCE_FLOOR",
]

COHERENCE_FLOOR = 1e-4


@dataclass(frozen=True)
class CalibrationConstant:
    """Conversion ``K_m`` from detector units to displacement [m/W or m/V]."""

    k_m: float
    note: str = ""

    def __post_init__(self):
        if not self.k_m > 0:
            raise InvalidInputError("K_m must be > 0")


def _k(k):
    return k.k_m if isinstance(k, CalibrationConstant) else float(k)


def _coherence_calibrate(s_ff, c, k_m, extra_flags, name, floor):
    cv = np.asarray(c, dtype=float)
    bad = ~(cv >= floor) | ((extra_flags & (MASKED | UNDEFINED)) != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(bad, 0.0, k_m**2 * np.real(s_ff.values) * (1.0 - cv) / np.where(bad, 1.0, cv))
    flags = extra_flags | np.where(bad, MASKED, 0).astype(np.uint8)
    flags = flags | np.where(~bad & (s < 0), NEGATIVE, 0).astype(np.uint8)
    return Spectrum(
        s_ff.freq, s, units="m^2/Hz", n_averages=s_ff.n_averages, flags=flags, name=name
    )


def calibrate_s0(s_ff, coh, k, floor=COHERENCE_FLOOR):
    """Cavity spectrum ``K_m^2 S_FF (1 - C) / C`` in m^2/Hz.

    Bins with coherence below ``floor`` (or already masked/undefined) are
    masked and set to 0.
    """
    s_ff.require_same_grid(coh)
    return _coherence_calibrate(s_ff, coh.values, _k(k), coh.flags.copy(), "S0", floor)


def calibrate_s1(s_ff, s_lm, s_fl, k, floor=COHERENCE_FLOOR, os_freq=None):
    """Shot-noise-cancelled spectrum: the S0 recipe with ``Re S_LM`` in place of S_LL.

    Bins where ``Re S_LM <= 0`` are masked. With ``os_freq`` given, bins
    above it are flagged UNRELIABLE (kept, not masked).
    """
    s_ff.require_same_grid(s_lm)
    s_ff.require_same_grid(s_fl)
    re_lm = np.real(s_lm.values)
    ff = np.real(s_ff.values)
    den = ff * re_lm
    undefined = ~(den > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.where(undefined, 0.0, np.abs(s_fl.values) ** 2 / np.where(undefined, 1.0, den))
    flags = (s_ff.flags | s_lm.flags | s_fl.flags) & MASKED
    flags = flags | np.where(undefined, UNDEFINED, 0).astype(np.uint8)
    out = _coherence_calibrate(s_ff, c1, _k(k), flags, "S1", floor)
    if np.all(out.mask):
        raise EmptyResultError("every S1 bin is masked")
    if os_freq is not None:
        out = out.with_flags(out.freq > os_freq, UNRELIABLE)
    return out


def normalize_to_sql(spec, m):
    """Amplitude ratio ``sqrt(S / S_SQL)``; negative bins give 0 and keep their flag."""
    sql = sql_psd(m, spec.freq).values
    ratio = np.sqrt(np.maximum(np.real(spec.values), 0.0) / sql)
    return Spectrum(
        spec.freq,
        ratio,
        units="dimensionless",
        n_averages=spec.n_averages,
        flags=spec.flags,
        name=f"{spec.name}/SQL" if spec.name else "ratio_to_sql",
    )


def _two_diff(a, b):
    """``a - b`` rounded, and the exact rounding error (Knuth's TwoSum)."""
    d = a - b
    bb = d - a
    err = (a - (d - bb)) + (-b - bb)
    return d, err


def subtract_model(measured, model):
    """``measured - model`` per bin; negative results are flagged, not clamped.

    The rounding error of the subtraction and the input flags/uncertainty are
    kept in ``meta['_residual_of']`` so that :func:`add_model` restores
    ``measured`` bit for bit.
    """
    measured.require_same_grid(model)
    if measured.units != model.units:
        raise InvalidInputError(f"units differ: {measured.units} vs {model.units}")
    a = np.real(measured.values)
    diff, err = _two_diff(a, np.real(model.values))
    flags = (measured.flags | model.flags) & ~np.uint8(NEGATIVE)
    flags = flags | np.where(diff < 0, NEGATIVE, 0).astype(np.uint8)
    unc = measured.uncertainty
    if unc is not None and model.uncertainty is not None:
        unc = np.hypot(unc, model.uncertainty)
    return Spectrum(
        measured.freq,
        diff,
        units=measured.units,
        n_averages=measured.n_averages,
        uncertainty=unc,
        flags=flags,
        name=f"{measured.name}-model" if measured.name else "residual",
        meta={
            "_residual_of": {
                "error": err,
                # the sign of a zero is lost in (-0.0 - 0.0) + 0.0
                "negative_zero": (a == 0) & np.signbit(a),
                "flags": measured.flags,
                "uncertainty": measured.uncertainty,
                "name": measured.name,
            }
        },
    )


def add_model(residual, model):
    """Inverse of :func:`subtract_model`: ``residual + model``.

    For a residual produced by :func:`subtract_model` the original spectrum
    is reproduced exactly; otherwise this is a plain per-bin sum.
    """
    residual.require_same_grid(model)
    if residual.units != model.units:
        raise InvalidInputError(f"units differ: {residual.units} vs {model.units}")
    src = residual.meta.get("_residual_of")
    d = np.real(residual.values)
    b = np.real(model.values)
    if src is None:
        return residual.with_values(d + b, flags=residual.flags & ~np.uint8(NEGATIVE), meta={})
    s = d + b
    bb = s - d
    e2 = (d - (s - bb)) + (b - bb)
    vals = s + (e2 + src["error"])
    vals = np.where(vals == 0, np.where(src["negative_zero"], -0.0, 0.0), vals)
    return Spectrum(
        residual.freq,
        vals,
        units=residual.units,
        n_averages=residual.n_averages,
        uncertainty=src["uncertainty"],
        flags=src["flags"],
        name=src["name"],
    )


def average_runs(estimates, weights=None):
    """Per-bin weighted mean of several spectra on one grid.

    Weights default to inverse variance when every input carries an
    uncertainty, uniform otherwise. Masked bins drop out bin by bin.
    """
    estimates = list(estimates)
    if not estimates:
        raise InvalidInputError("need at least one estimate")
    ref = estimates[0]
    for e in estimates[1:]:
        ref.require_same_grid(e)
        if e.units != ref.units:
            raise InvalidInputError("estimates have different units")
    vals = np.array([np.real(e.values) for e in estimates])
    valid = np.array([e.valid for e in estimates])
    have_unc = all(e.uncertainty is not None for e in estimates)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape not in ((len(estimates),), vals.shape):
            raise InvalidInputError("weights must be one per estimate or per estimate and bin")
        w = np.broadcast_to(w.reshape(len(estimates), -1), vals.shape).astype(float)
    elif have_unc:
        unc = np.array([e.uncertainty for e in estimates])
        with np.errstate(divide="ignore"):
            w = np.where(unc > 0, 1.0 / unc**2, 0.0)
        valid &= unc > 0
    else:
        w = np.ones_like(vals)
    w = np.where(valid, w, 0.0)
    wsum = w.sum(axis=0)
    empty = ~(wsum > 0)
    if np.all(empty):
        raise EmptyResultError("no bin is unmasked in any estimate")
    safe = np.where(empty, 1.0, wsum)
    mean = np.where(empty, 0.0, (w * vals).sum(axis=0) / safe)
    unc_out = None
    if have_unc:
        unc = np.array([e.uncertainty for e in estimates])
        var = (w**2 * unc**2).sum(axis=0) / safe**2
        unc_out = np.where(empty, 0.0, np.sqrt(var))
    flags = np.where(empty, MASKED, 0).astype(np.uint8)
    flags |= np.where(~empty & (mean < 0), NEGATIVE, 0).astype(np.uint8)
    unrel = np.array([(e.flags & UNRELIABLE) != 0 for e in estimates])
    flags |= np.where(np.any(unrel & valid, axis=0), UNRELIABLE, 0).astype(np.uint8)
    return Spectrum(
        ref.freq,
        mean,
        units=ref.units,
        n_averages=sum(e.n_averages for e in estimates),
        uncertainty=unc_out,
        flags=flags,
        name="average",
    )


@dataclass(frozen=True)
class ModeFit:
    modeset: object
    mass_uncertainty: np.ndarray
    freq_uncertainty: np.ndarray | None
    log_rms: float
    n_bins: int
    success: bool = True
    message: str = ""

    def mass_interval(self, level=0.95):
        """Two-sided confidence intervals on the masses, shape ``(n_modes, 2)``."""
        t = stats.t.ppf(0.5 + level / 2, max(self.n_bins - len(self.mass_uncertainty), 1))
        m = self.modeset.masses
        return np.column_stack([m - t * self.mass_uncertainty, m + t * self.mass_uncertainty])


def _mode_windows(freq, values, modeset, fit_band, window_frac, prominence):
    lo, hi = fit_band
    sel = np.zeros(freq.shape, bool)
    peaks = []
    for k, mode in enumerate(modeset.modes):
        f0 = mode.freq_hz
        win = (freq >= max(lo, f0 * (1 - window_frac))) & (freq <= min(hi, f0 * (1 + window_frac)))
        if np.count_nonzero(win) < 3:
            raise ModeNotFoundError(k, f0, "fewer than 3 bins in its fit window")
        v = values[win]
        j = int(np.argmax(v))
        if not v[j] > prominence * np.median(v):
            raise ModeNotFoundError(k, f0, "no peak above the local median")
        peaks.append(freq[win][j])
        sel |= win
    return sel, np.array(peaks)


def fit_modal_masses(
    measured,
    init,
    fit_band,
    fit_frequencies=False,
    window_frac=0.1,
    prominence=3.0,
    debias=None,
):
    """Fit modal masses (and optionally frequencies) to a thermal-noise PSD.

    All modes are fitted jointly by nonlinear least squares on the log-PSD,
    using bins within ``window_frac`` of each initial mode frequency and
    inside ``fit_band``. Loss angles and temperature are held at ``init``.
    Frequencies, when fitted, start at the located peak and stay within 10%
    of ``init``.

    The log of an average of ``N`` periodograms is biased low by
    ``ln N - digamma(N)`` (about ``1/(2N)``). With ``debias`` left at None the
    correction is applied when ``measured.n_averages > 1``; model curves
    (``n_averages == 1``) are fitted as they are.

    Returns
    -------
    ModeFit
        Updated ModeSet, 1-sigma mass (and frequency) uncertainties, and the
        RMS of the log residuals.
    """
    f = np.asarray(measured.freq, dtype=float)
    v = np.real(np.asarray(measured.values))
    ok = measured.valid & (v > 0) & np.isfinite(v)
    lo, hi = map(float, fit_band)
    if not lo < hi:
        raise InvalidInputError("fit_band must satisfy lo < hi")
    sel, peaks = _mode_windows(
        np.where(ok, f, -1.0), np.where(ok, v, 0.0), init, (lo, hi), window_frac, prominence
    )
    sel &= ok
    ff, logv = f[sel], np.log(v[sel])
    if debias is None:
        debias = measured.n_averages > 1
    if debias:
        n_avg = measured.n_averages
        logv = logv + (np.log(n_avg) - special.digamma(n_avg))
    n_modes = len(init)
    f_init = init.freqs_hz
    m0 = init.masses

    def unpack(p):
        masses = m0 * np.exp(p[:n_modes])
        freqs = f_init * (1 + p[n_modes:]) if fit_frequencies else f_init
        return masses, freqs

    def model(p):
        masses, freqs = unpack(p)
        ms = init.with_masses(masses).with_freqs_hz(freqs) if fit_frequencies else init.with_masses(masses)
        return thermal_psd(ms, ff).values

    def resid(p):
        return np.log(model(p)) - logv

    # start masses from the mean log offset, which is exact for a pure scale error
    p0 = np.zeros(n_modes)
    bounds_lo, bounds_hi = -np.inf * np.ones(n_modes), np.inf * np.ones(n_modes)
    if fit_frequencies:
        p0 = np.concatenate([p0, peaks / f_init - 1])
        bounds_lo = np.concatenate([bounds_lo, -0.1 * np.ones(n_modes)])
        bounds_hi = np.concatenate([bounds_hi, 0.1 * np.ones(n_modes)])
    p0[:n_modes] += np.mean(resid(p0))
    res = optimize.least_squares(
        resid, p0, bounds=(bounds_lo, bounds_hi), x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14
    )
    masses, freqs = unpack(res.x)
    dof = max(ff.size - res.x.size, 1)
    s2 = float(np.sum(res.fun**2)) / dof
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj) * s2
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    fitted = init.with_masses(masses)
    freq_unc = None
    if fit_frequencies:
        fitted = fitted.with_freqs_hz(freqs)
        freq_unc = sig[n_modes:] * f_init
    return ModeFit(
        modeset=fitted,
        mass_uncertainty=sig[:n_modes] * masses,
        freq_uncertainty=freq_unc,
        log_rms=float(np.sqrt(np.mean(res.fun**2))),
        n_bins=int(ff.size),
        success=bool(res.success),
        message=str(res.message),
    )


@dataclass(frozen=True)
class SqlMinimum:
    min_ratio_db: float
    at_freq: float


def db_below_sql(ratio, band):
    """Minimum of an SQL-normalised amplitude ratio over ``band`` in dB (20 log10)."""
    lo, hi = map(float, band)
    f = ratio.freq
    sel = (f >= lo) & (f <= hi) & ratio.valid & (np.real(ratio.values) > 0)
    if not np.any(sel):
        raise InvalidInputError(f"no usable bins in band [{lo}, {hi}] Hz")
    vals = np.real(ratio.values)[sel]
    j = int(np.argmin(vals))
    return SqlMinimum(float(20 * np.log10(vals[j])), float(f[sel][j]))


@dataclass(frozen=True, eq=False)
class NoiseBudget:
    """Model noise curves on a common grid, referred to free-mass displacement.

    ``components`` are summed into ``total``; ``references`` (the SQL and the
    unsuppressed QRPN) are shown for comparison only.
    """

    freq: np.ndarray
    components: dict
    references: dict
    total: Spectrum
    variant: str = "s0"
    measured: Spectrum | None = None
    name: str = ""

    reduced_mass: float = 0.0

    def ratio_to_sql(self, which="total"):
        spec = self.total if which == "total" else self.components[which]
        return normalize_to_sql(spec, self.reduced_mass)

    def all_curves(self):
        out = dict(self.components)
        out.update(self.references)
        out["total"] = self.total
        return out


def build_noise_budget(cfg, k=None, variant="s0", freq=None):
    """Assemble the model noise budget of a run.

    ``variant='s0'`` refers PD_L shot and electronics noise by
    ``1/|G_os|^2``; ``variant='s1'`` weights that term by the feedback
    imprint coefficient ``-Re G_fb``, which is what survives the
    correlation measurement.
    """
    if variant not in ("s0", "s1"):
        raise InvalidInputError("variant must be 's0' or 's1'")
    f = check_grid(cfg.freq_grid if freq is None else freq)
    k_m = cfg.calibration if k is None else _k(k)
    t = model_terms(cfg, f)
    ag2 = np.abs(t["g_os"]) ** 2
    weight = np.ones_like(f) if variant == "s0" else -np.real(t["g_fb"])
    shot = 2 * k_m**2 * t["shot_l"] / ag2 * weight
    el = 2 * k_m**2 * t["el_l"] / ag2 * weight
    lfn_res = np.zeros_like(f)
    if np.any(t["el_f"] > 0) and np.any(t["lfn"] > 0):
        # PD_F electronics dilute the coherence; what is left over is not cancelled
        truth = injected_truth(cfg, f)
        key = "S0_expected" if variant == "s0" else "S1_expected"
        core = t["thermal"] + t["qrpn_suppressed"]
        ref = 2 * cfg.calibration**2 * (t["shot_l"] + t["el_l"]) / ag2 * weight
        lfn_res = np.nan_to_num(truth[key].values - core - ref, nan=0.0)

    def disp(name, v):
        return Spectrum(f, v, units="m^2/Hz", name=name)

    components = {
        "thermal": disp("thermal", t["thermal"]),
        "qrpn_suppressed": disp("qrpn_suppressed", t["qrpn_suppressed"]),
        "shot_referred": disp("shot_referred", shot),
        "electronics_referred": disp("electronics_referred", el),
        "lfn_residual": disp("lfn_residual", lfn_res),
    }
    references = {
        "qrpn_unsuppressed": disp("qrpn_unsuppressed", t["qrpn"]),
        "sql": sql_psd(cfg.optical.reduced_mass, f),
    }
    total_v = np.zeros_like(f)
    for c in components.values():
        total_v = total_v + c.values
    total = Spectrum(f, total_v, units="m^2/Hz", name="total")
    return NoiseBudget(
        f, components, references, total, variant=variant, name=cfg.name,
        reduced_mass=cfg.optical.reduced_mass,
    )
