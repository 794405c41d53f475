"""Frequency-domain synthesis of correlated PD_L / PD_M / PD_F data.

Every Welch segment is drawn independently, bin by bin, from unit circular
complex Gaussian variates:

    v0   cavity-port vacuum (enters PD_L and PD_M with the same sign)
    vbs  beamsplitter-port vacuum (opposite signs, cancels in the CPSD)
    vf   laser frequency noise
    vth  thermal force noise
    vrp  radiation-pressure (amplitude-quadrature) vacuum
    elL, elM, elF  detector electronics

With ``x`` the sprung displacement ``G_os (a_th vth + a_f vf + s a_rp vrp)``
and ``u`` the PD_L signal before feedback,

    u    = (shot_L (v0 + vbs) + x / K_m) / sqrt(2) + el_L elL
    PD_L = u / (1 + G_fb)
    PD_M = (shot_M (v0 - vbs) + x / K_m) / sqrt(2) + el_M elM - G_fb / (1 + G_fb) u
    PD_F = a_f / K_m vf + el_F elF

Segment values are scaled so that ``E|X|^2`` is the one-sided PSD of the
channel in detector units (W^2/Hz).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError, ModelEvaluationError
from .noise_models import (
    ModeSet,
    OpticalConfig,
    qrpn_asd_free_mass,
    qrpn_suppression_factor,
    shot_noise_rpn_psd,
    thermal_psd,
)
from .spectrum import Spectrum
from .spring_loop import CLOSED_LOOP_BOUND, LoopModel

log = logging.getLogger(__name__)

__all__ = [
    "PowerLawPSD",
    "RunConfig",
    "RunDataset",
    "SegmentSpectra",
    "synthesize_run",
    "injected_truth",
    "model_terms",
    "ALL_SOURCES",
    "CHANNELS",
    "RNG_ALGORITHM",
]

ALL_SOURCES = frozenset({"thermal", "qrpn", "lfn", "shot", "electronics"})
CHANNELS = ("L", "M", "F")
RNG_ALGORITHM = "numpy.random.Philox(SeedSequence(seed, spawn_key=(segment,))) v1"
_N_VARIATES = 8


@dataclass(frozen=True)
class PowerLawPSD:
    """``level * (ref_freq / f) ** exponent`` [m^2/Hz]."""

    level: float = 0.0
    exponent: float = 2.0
    ref_freq: float = 1e3

    def __post_init__(self):
        if not self.level >= 0:
            raise InvalidInputError("PSD level must be >= 0")
        if not self.ref_freq > 0:
            raise InvalidInputError("ref_freq must be > 0")

    def __call__(self, freq):
        f = np.asarray(freq, dtype=float)
        return self.level * (self.ref_freq / f) ** self.exponent


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to synthesize one measurement run.

    Powers are in W, electronics PSDs in W^2/Hz at the detector, the
    calibration ``K_m`` in m/W. ``sources`` switches whole noise families on
    or off.
    """

    optical: OpticalConfig
    modeset: ModeSet
    loop: LoopModel
    lfn_model: PowerLawPSD = field(default_factory=PowerLawPSD)
    electronics_psd_l: float = 0.0
    electronics_psd_m: float = 0.0
    electronics_psd_f: float = 0.0
    detected_power_l: float = 1e-3
    detected_power_m: float = 1e-3
    calibration: float = 1.0
    qrpn_suppression: bool = True
    sources: frozenset = ALL_SOURCES
    segment_length: int = 512
    n_segments: int = 256
    sample_rate: float = 131072.0
    seed: int = 0
    analysis_band: tuple | None = None
    name: str = "run"

    def __post_init__(self):
        object.__setattr__(self, "sources", frozenset(self.sources))
        unknown = self.sources - ALL_SOURCES
        if unknown:
            raise InvalidInputError(f"unknown noise sources {sorted(unknown)}")
        n = int(self.segment_length)
        if n < 256 or n & (n - 1):
            raise InvalidInputError("segment_length must be a power of two >= 256")
        if int(self.n_segments) < 1:
            raise InvalidInputError("n_segments must be >= 1")
        if not self.sample_rate > 0:
            raise InvalidInputError("sample_rate must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        for name in ("electronics_psd_l", "electronics_psd_m", "electronics_psd_f",
                     "detected_power_l", "detected_power_m"):
            if not getattr(self, name) >= 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if not self.calibration > 0:
            raise InvalidInputError("calibration must be > 0")
        if self.analysis_band is not None:
            lo, hi = map(float, self.analysis_band)
            if not 0 < lo < hi:
                raise InvalidInputError("analysis_band must satisfy 0 < lo < hi")
            if not self.sample_rate > 2 * hi:
                raise InvalidInputError(
                    f"sample_rate {self.sample_rate:g} Hz violates Nyquist for band edge {hi:g} Hz"
                )
            object.__setattr__(self, "analysis_band", (lo, hi))
        object.__setattr__(self, "segment_length", n)
        object.__setattr__(self, "n_segments", int(self.n_segments))
        object.__setattr__(self, "seed", int(self.seed))

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def freq_grid(self):
        """One-sided FFT bin frequencies without DC: ``k fs / N``, k = 1..N/2."""
        k = np.arange(1, self.segment_length // 2 + 1)
        return k * (self.sample_rate / self.segment_length)

    @property
    def os_freq(self):
        return self.loop.spring.os_freq

    def to_dict(self):
        o, ms = self.optical, self.modeset
        return {
            "name": self.name,
            "optical": {
                "wavelength_m": o.wavelength,
                "input_power_w": o.input_power,
                "detuning_linewidths": o.detuning,
                "reduced_mass_kg": o.reduced_mass,
                "max_circulating_power_w": o.max_circulating_power,
                "cavity_length_m": o.cavity_length,
                "input_transmission": o.input_transmission,
            },
            "modes": {
                "loss_angle": ms.loss_angle,
                "temperature_k": ms.temperature,
                "mode": [
                    {
                        "modal_mass_kg": m.modal_mass,
                        "angular_freq_rad_s": m.angular_freq,
                        "loss_angle": m.loss_angle,
                    }
                    for m in ms.modes
                ],
            },
            "loop": self.loop.to_dict(),
            "lfn": {
                "level_m2_per_hz": self.lfn_model.level,
                "exponent": self.lfn_model.exponent,
                "ref_freq_hz": self.lfn_model.ref_freq,
            },
            "noise": {
                "electronics_l_w2_per_hz": self.electronics_psd_l,
                "electronics_m_w2_per_hz": self.electronics_psd_m,
                "electronics_f_w2_per_hz": self.electronics_psd_f,
                "detected_power_l_w": self.detected_power_l,
                "detected_power_m_w": self.detected_power_m,
                "calibration_m_per_w": self.calibration,
                "qrpn_suppression": self.qrpn_suppression,
                "sources": sorted(self.sources),
            },
            "synthesis": {
                "segment_length": self.segment_length,
                "n_segments": self.n_segments,
                "sample_rate_hz": self.sample_rate,
                "seed": self.seed,
                "analysis_band_hz": None if self.analysis_band is None else list(self.analysis_band),
            },
        }

    @classmethod
    def from_dict(cls, d):
        from .noise_models import MechanicalMode

        o, md, nz, sy, lf = d["optical"], d["modes"], d["noise"], d["synthesis"], d["lfn"]
        p0 = o.get("max_circulating_power_w")
        t = o.get("input_transmission")
        optical = OpticalConfig(
            wavelength=o["wavelength_m"],
            input_power=o["input_power_w"],
            detuning=o["detuning_linewidths"],
            reduced_mass=o["reduced_mass_kg"],
            # P0 is derived from T when both are stored
            max_circulating_power=None if t is not None else p0,
            cavity_length=o.get("cavity_length_m"),
            input_transmission=t,
        )
        modes = tuple(
            MechanicalMode(m["modal_mass_kg"], m["angular_freq_rad_s"], m.get("loss_angle"))
            for m in md["mode"]
        )
        band = sy.get("analysis_band_hz")
        return cls(
            optical=optical,
            modeset=ModeSet(modes, md["loss_angle"], md["temperature_k"]),
            loop=LoopModel.from_dict(d["loop"]),
            lfn_model=PowerLawPSD(lf["level_m2_per_hz"], lf["exponent"], lf["ref_freq_hz"]),
            electronics_psd_l=nz["electronics_l_w2_per_hz"],
            electronics_psd_m=nz["electronics_m_w2_per_hz"],
            electronics_psd_f=nz["electronics_f_w2_per_hz"],
            detected_power_l=nz["detected_power_l_w"],
            detected_power_m=nz["detected_power_m_w"],
            calibration=nz["calibration_m_per_w"],
            qrpn_suppression=bool(nz["qrpn_suppression"]),
            sources=frozenset(nz["sources"]),
            segment_length=sy["segment_length"],
            n_segments=sy["n_segments"],
            sample_rate=sy["sample_rate_hz"],
            seed=sy["seed"],
            analysis_band=None if band is None else tuple(band),
            name=d.get("name", "run"),
        )


@dataclass(frozen=True, eq=False)
class SegmentSpectra:
    """One segment's one-sided complex amplitudes for every channel."""

    index: int
    freq: np.ndarray
    channels: dict
    units: str = "W^2/Hz"


@dataclass(frozen=True, eq=False)
class RunDataset:
    """Per-segment complex spectra of a run, plus provenance.

    ``segments[ch]`` has shape ``(n_segments, n_bins)``; ``|X|^2`` averaged
    over segments is the one-sided PSD in ``units``.
    """

    freq: np.ndarray
    segments: dict
    units: str = "W^2/Hz"
    sample_rate: float | None = None
    segment_length: int | None = None
    window: str = "rectangular"
    seed: int | None = None
    config: RunConfig | None = None
    truth: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.array(self.freq, dtype=float)
        f.setflags(write=False)
        object.__setattr__(self, "freq", f)
        segs = {}
        n = None
        for name, arr in self.segments.items():
            a = np.array(arr, dtype=complex)
            if a.ndim != 2 or a.shape[1] != f.size:
                raise InvalidInputError(f"channel {name!r} must have shape (n_segments, {f.size})")
            if n is not None and a.shape[0] != n:
                raise InvalidInputError("channels have different segment counts")
            n = a.shape[0]
            a.setflags(write=False)
            segs[name] = a
        object.__setattr__(self, "segments", segs)

    @property
    def channels(self):
        return tuple(self.segments)

    @property
    def n_segments(self):
        return next(iter(self.segments.values())).shape[0] if self.segments else 0

    def channel(self, name):
        try:
            return self.segments[name]
        except KeyError:
            raise InvalidInputError(
                f"channel {name!r} absent; available: {', '.join(self.segments)}"
            ) from None

    def segment(self, i):
        return SegmentSpectra(i, self.freq, {k: v[i] for k, v in self.segments.items()}, self.units)

    def head(self, n):
        """Dataset restricted to its first ``n`` segments."""
        if not 1 <= n <= self.n_segments:
            raise InvalidInputError(f"n must lie in [1, {self.n_segments}]")
        return replace(self, segments={k: v[:n] for k, v in self.segments.items()})

    def band(self, lo, hi):
        sel = (self.freq >= lo) & (self.freq <= hi)
        if not np.any(sel):
            raise InvalidInputError(f"no bins in band [{lo}, {hi}] Hz")
        truth = {k: v.band(lo, hi) for k, v in self.truth.items()}
        return replace(
            self,
            freq=self.freq[sel],
            segments={k: v[:, sel] for k, v in self.segments.items()},
            truth=truth,
        )


def model_terms(cfg, freq=None):
    """Per-bin model quantities for ``cfg`` on ``freq`` (default: the FFT grid).

    Returns a dict of arrays: free-mass displacement PSDs ``thermal``,
    ``qrpn`` (unsuppressed), ``qrpn_suppressed``, ``lfn`` [m^2/Hz]; detector
    PSDs ``shot_l``, ``shot_m``, ``el_l``, ``el_m``, ``el_f`` [W^2/Hz];
    complex ``g_os`` and ``g_fb``; and the QRPN amplitude ``suppression``.
    Switched-off sources are zero.
    """
    f = cfg.freq_grid if freq is None else np.asarray(freq, dtype=float)
    src = cfg.sources
    zeros = np.zeros_like(f)
    thermal = thermal_psd(cfg.modeset, f).values if "thermal" in src else zeros
    if "qrpn" in src and cfg.optical.input_power > 0:
        qrpn = qrpn_asd_free_mass(cfg.optical, f).values ** 2
    else:
        qrpn = zeros
    supp = qrpn_suppression_factor(f, cfg.os_freq) if cfg.qrpn_suppression else np.ones_like(f)
    lfn = np.asarray(cfg.lfn_model(f), dtype=float) * np.ones_like(f) if "lfn" in src else zeros
    if "shot" in src:
        lam = cfg.optical.wavelength
        pl, pm = cfg.detected_power_l, cfg.detected_power_m
        shot_l = pl * pl * shot_noise_rpn_psd(pl, lam) if pl > 0 else 0.0
        shot_m = pm * pm * shot_noise_rpn_psd(pm, lam) if pm > 0 else 0.0
    else:
        shot_l = shot_m = 0.0
    el = (cfg.electronics_psd_l, cfg.electronics_psd_m, cfg.electronics_psd_f)
    if "electronics" not in src:
        el = (0.0, 0.0, 0.0)
    terms = {
        "thermal": thermal,
        "qrpn": qrpn,
        "qrpn_suppressed": qrpn * supp**2,
        "suppression": supp,
        "lfn": lfn,
        "shot_l": zeros + shot_l,
        "shot_m": zeros + shot_m,
        "el_l": zeros + el[0],
        "el_m": zeros + el[1],
        "el_f": zeros + el[2],
        "g_os": cfg.loop.spring.gain(f),
        "g_fb": cfg.loop.open_loop_gain(f),
    }
    for name, arr in terms.items():
        if not np.all(np.isfinite(arr)):
            raise ModelEvaluationError(f"model term {name!r} is not finite on the grid")
    if np.any(np.abs(1.0 + terms["g_fb"]) < 1e-12):
        raise ModelEvaluationError("1 + G_fb vanishes on the grid")
    if np.any(np.abs(1.0 / (1.0 + terms["g_fb"])) > CLOSED_LOOP_BOUND):
        raise ModelEvaluationError(f"|1/(1+G_fb)| exceeds {CLOSED_LOOP_BOUND:g}")
    return terms


def _expected_channels(t, k_m):
    """Exact ensemble spectra of the three channels implied by ``model_terms``."""
    g, gfb = t["g_os"], t["g_fb"]
    c = 1.0 / (1.0 + gfb)
    d = gfb / (1.0 + gfb)
    ag2 = np.abs(g) ** 2
    y_f = ag2 * t["lfn"] / (2 * k_m**2)
    y = ag2 * (t["thermal"] + t["lfn"] + t["qrpn_suppressed"]) / (2 * k_m**2)
    u = t["shot_l"] + t["el_l"] + y
    s_ll = np.abs(c) ** 2 * u
    s_mm = t["shot_m"] + t["el_m"] + y + np.abs(d) ** 2 * u - 2 * np.real(d) * y
    s_lm = c * (y - np.conj(d) * u)
    s_ff = t["lfn"] / k_m**2 + t["el_f"]
    s_fl = t["lfn"] / (k_m**2 * np.sqrt(2)) * np.conj(c * g)
    return {"S_FF": s_ff, "S_LL": s_ll, "S_MM": s_mm, "S_LM": s_lm, "S_FL": s_fl, "Y_f": y_f}


def injected_truth(cfg, freq=None):
    """Exact model spectra behind a synthetic run.

    Keys: ``thermal``, ``qrpn``, ``qrpn_suppressed``, ``lfn`` (free-mass
    m^2/Hz); ``shot_l``, ``shot_m``, ``electronics_l``, ``electronics_m``,
    ``electronics_f`` (W^2/Hz); ``os_gain_sq`` and ``closed_loop_sq``;
    the expected channel spectra ``S_FF``, ``S_LL``, ``S_MM``, ``S_LM``,
    ``S_FL``; ``uncorrelated_fm`` (PD_L shot + electronics referred to
    free-mass displacement, ``2 K_m^2 (S_sn + S_el) / |G_os|^2``);
    ``imprint_coefficient`` (``-Re G_fb``, the weight of that term in S1);
    and the compositions ``S0`` and ``S1`` the calibration chain converges to.
    """
    f = cfg.freq_grid if freq is None else np.asarray(freq, dtype=float)
    t = model_terms(cfg, f)
    k = cfg.calibration
    ch = _expected_channels(t, k)
    ag2 = np.abs(t["g_os"]) ** 2
    unc_fm = 2 * k**2 * (t["shot_l"] + t["el_l"]) / ag2
    imprint = -np.real(t["g_fb"])
    core = t["thermal"] + t["qrpn_suppressed"]

    def disp(name, v):
        return Spectrum(f, v, units="m^2/Hz", name=name)

    def det(name, v):
        return Spectrum(f, v, units="W^2/Hz", name=name)

    def dimless(name, v):
        return Spectrum(f, v, units="dimensionless", name=name)

    truth = {
        "thermal": disp("thermal", t["thermal"]),
        "qrpn": disp("qrpn", t["qrpn"]),
        "qrpn_suppressed": disp("qrpn_suppressed", t["qrpn_suppressed"]),
        "lfn": disp("lfn", t["lfn"]),
        "shot_l": det("shot_l", t["shot_l"]),
        "shot_m": det("shot_m", t["shot_m"]),
        "electronics_l": det("electronics_l", t["el_l"]),
        "electronics_m": det("electronics_m", t["el_m"]),
        "electronics_f": det("electronics_f", t["el_f"]),
        "os_gain_sq": dimless("os_gain_sq", ag2),
        "closed_loop_sq": dimless("closed_loop_sq", np.abs(1.0 / (1.0 + t["g_fb"])) ** 2),
        "imprint_coefficient": dimless("imprint_coefficient", imprint),
        "uncorrelated_fm": disp("uncorrelated_fm", unc_fm),
        "S0": disp("S0", core + unc_fm),
        "S1": disp("S1", core + imprint * unc_fm),
    }
    for name in ("S_FF", "S_LL", "S_MM", "S_LM", "S_FL"):
        truth[name] = det(name, ch[name])
    # what the coherence calibration returns when fed the exact channel spectra;
    # differs from S0/S1 only through PD_F electronics
    fl2 = np.abs(ch["S_FL"]) ** 2
    ok = fl2 > 0
    s0x = np.full(f.shape, np.nan)
    s1x = np.full(f.shape, np.nan)
    kff = k**2 * ch["S_FF"]
    s0x[ok] = kff[ok] * (ch["S_FF"][ok] * ch["S_LL"][ok] / fl2[ok] - 1.0)
    s1x[ok] = kff[ok] * (ch["S_FF"][ok] * np.real(ch["S_LM"][ok]) / fl2[ok] - 1.0)
    truth["S0_expected"] = disp("S0_expected", s0x)
    truth["S1_expected"] = disp("S1_expected", s1x)
    truth["lfn_residual"] = disp("lfn_residual", s0x - (core + unc_fm))
    return truth


def _segment_seed(seed, index):
    return np.random.SeedSequence(entropy=seed, spawn_key=(index,))


def _draw(seed, index, n_bins):
    rng = np.random.Generator(np.random.Philox(_segment_seed(seed, index)))
    z = rng.standard_normal((_N_VARIATES, n_bins, 2))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


def _coefficients(t, k_m):
    g, gfb = t["g_os"], t["g_fb"]
    return {
        "c": 1.0 / (1.0 + gfb),
        "d": gfb / (1.0 + gfb),
        "x_th": g * np.sqrt(t["thermal"]) / k_m,
        "x_f": g * np.sqrt(t["lfn"]) / k_m,
        "x_rp": g * np.sqrt(t["qrpn_suppressed"]) / k_m,
        "shot_l": np.sqrt(t["shot_l"]),
        "shot_m": np.sqrt(t["shot_m"]),
        "el_l": np.sqrt(t["el_l"]),
        "el_m": np.sqrt(t["el_m"]),
        "el_f": np.sqrt(t["el_f"]),
        "f_f": np.sqrt(t["lfn"]) / k_m,
    }


def _synthesize_block(cf, seed, start, stop, n_bins):
    out = {ch: np.empty((stop - start, n_bins), complex) for ch in CHANNELS}
    r2 = np.sqrt(0.5)
    for j, i in enumerate(range(start, stop)):
        v0, vbs, vf, vth, vrp, e_l, e_m, e_f = _draw(seed, i, n_bins)
        y = cf["x_th"] * vth + cf["x_f"] * vf + cf["x_rp"] * vrp
        u = r2 * (cf["shot_l"] * (v0 + vbs) + y) + cf["el_l"] * e_l
        m0 = r2 * (cf["shot_m"] * (v0 - vbs) + y) + cf["el_m"] * e_m
        out["L"][j] = cf["c"] * u
        out["M"][j] = m0 - cf["d"] * u
        out["F"][j] = cf["f_f"] * vf + cf["el_f"] * e_f
    return out


def synthesize_run(cfg, threads=1, block_size=256):
    """Draw a synthetic :class:`RunDataset` for ``cfg``.

    Segment ``i`` uses its own Philox stream seeded from ``(cfg.seed, i)``,
    so the result is bit-identical for any ``threads``/``block_size``.
    """
    f = cfg.freq_grid
    terms = model_terms(cfg, f)
    cf = _coefficients(terms, cfg.calibration)
    n, nb = cfg.n_segments, f.size
    blocks = [(s, min(s + block_size, n)) for s in range(0, n, block_size)]
    log.debug("synthesizing %d segments x %d bins in %d blocks", n, nb, len(blocks))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda b: _synthesize_block(cf, cfg.seed, b[0], b[1], nb), blocks))
    else:
        parts = [_synthesize_block(cf, cfg.seed, a, b, nb) for a, b in blocks]
    segments = {ch: np.concatenate([p[ch] for p in parts]) for ch in CHANNELS}
    return RunDataset(
        freq=f,
        segments=segments,
        units="W^2/Hz",
        sample_rate=cfg.sample_rate,
        segment_length=cfg.segment_length,
        window="rectangular",
        seed=cfg.seed,
        config=cfg,
        truth=injected_truth(cfg, f),
        meta={"rng": RNG_ALGORITHM, "source": "synthetic"},
    )
