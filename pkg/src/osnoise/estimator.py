"""Welch-averaged spectra, coherence, and ring-down fitting.

Datasets hold per-segment one-sided spectra already scaled so that
``|X|^2`` is a PSD density. Averages are reduced over fixed blocks of
segments and the block sums are combined in order, so results do not depend
on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import signal, stats

from .errors import FitError, InvalidInputError
from .spectrum import MASKED, NEGATIVE, UNDEFINED, Spectrum
from .synth import RunDataset

__all__ = [
    "segment_time_series",
    "welch_psd",
    "welch_cpsd",
    "coherence",
    "uncorrelated_noise_estimate",
    "fit_ringdown",
    "RingdownFit",
]

_BLOCK = 256
WINDOWS = ("rectangular", "hann")


def segment_time_series(channels, sample_rate, segment_length, window="hann", overlap=None):
    """Cut time series into windowed segments and FFT them into a dataset.

    Parameters
    ----------
    channels : dict of str -> array_like
        Equal-length real time series.
    sample_rate : float
        Sampling rate [Hz].
    segment_length : int
        Samples per segment.
    window : {'hann', 'rectangular'}
        Taper applied to each segment. The scaling is power-normalised, so
        white noise of variance s^2 gives a PSD of ``s^2 / f_nyq``.
    overlap : float, optional
        Fractional overlap; defaults to 0.5 for Hann and 0 for rectangular.

    Returns
    -------
    RunDataset
        With the DC bin included in the grid.
    """
    if window not in WINDOWS:
        raise InvalidInputError(f"window must be one of {WINDOWS}")
    if overlap is None:
        overlap = 0.5 if window == "hann" else 0.0
    if not 0 <= overlap < 1:
        raise InvalidInputError("overlap must lie in [0, 1)")
    n = int(segment_length)
    if n < 2:
        raise InvalidInputError("segment_length must be >= 2")
    if not channels:
        raise InvalidInputError("no channels given")
    data = {k: np.asarray(v, dtype=float) for k, v in channels.items()}
    lengths = {v.size for v in data.values()}
    if len(lengths) != 1:
        raise InvalidInputError("channels must have equal length")
    total = lengths.pop()
    if total < n:
        raise InvalidInputError("record shorter than one segment")
    step = max(1, int(round(n * (1 - overlap))))
    starts = np.arange(0, total - n + 1, step)
    w = np.ones(n) if window == "rectangular" else signal.get_window("hann", n)
    scale = np.full(n // 2 + 1, 2.0 / (sample_rate * np.sum(w * w)))
    scale[0] /= 2
    if n % 2 == 0:
        scale[-1] /= 2
    scale = np.sqrt(scale)
    idx = starts[:, None] + np.arange(n)[None, :]
    segs = {k: np.fft.rfft(v[idx] * w, axis=1) * scale for k, v in data.items()}
    return RunDataset(
        freq=np.fft.rfftfreq(n, 1.0 / sample_rate),
        segments=segs,
        units="V^2/Hz",
        sample_rate=float(sample_rate),
        segment_length=n,
        window=window,
        meta={"source": "time_series", "overlap": overlap},
    )


def _blocks(n):
    return [(a, min(a + _BLOCK, n)) for a in range(0, n, _BLOCK)]


def _reduce(product, n, threads):
    """Mean and 1-sigma error of the mean (real part) of ``product(a, b)`` over segments."""
    blocks = _blocks(n)

    def run(fn):
        if threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                return list(ex.map(fn, blocks))
        return [fn(b) for b in blocks]

    sums = run(lambda b: np.sum(product(*b), axis=0))
    mean = sums[0]
    for s in sums[1:]:
        mean = mean + s
    mean = mean / n
    mre = np.real(mean)
    sq = run(lambda b: np.sum((np.real(product(*b)) - mre) ** 2, axis=0))
    ss = sq[0]
    for s in sq[1:]:
        ss = ss + s
    if n > 1:
        err = np.sqrt(ss / (n - 1) / n)
    else:
        err = np.abs(mre).astype(float)
    return mean, err


def welch_psd(dataset, channel, threads=1):
    """Segment-averaged one-sided PSD of one channel."""
    x = dataset.channel(channel)
    mean, err = _reduce(lambda a, b: np.abs(x[a:b]) ** 2, x.shape[0], threads)
    return Spectrum(
        dataset.freq,
        np.real(mean),
        units=dataset.units,
        n_averages=x.shape[0],
        uncertainty=err,
        name=f"S_{channel}{channel}",
    )


def welch_cpsd(dataset, ch_a, ch_b, threads=1):
    """Segment-averaged CPSD ``<X_a conj(X_b)>``; uncertainty refers to the real part."""
    a = dataset.channel(ch_a)
    b = dataset.channel(ch_b)
    if a.shape != b.shape:
        raise InvalidInputError("channels differ in segment count or grid")
    mean, err = _reduce(lambda i, j: a[i:j] * np.conj(b[i:j]), a.shape[0], threads)
    return Spectrum(
        dataset.freq,
        mean,
        units=dataset.units,
        n_averages=a.shape[0],
        uncertainty=err,
        name=f"S_{ch_a}{ch_b}",
    )


def coherence(s_ff, s_ll, s_fl):
    """``|S_FL|^2 / (S_FF S_LL)`` clamped to [0, 1].

    Bins with a non-positive denominator are flagged UNDEFINED (value 0)
    instead of raising.
    """
    s_ff.require_same_grid(s_ll)
    s_ff.require_same_grid(s_fl)
    den = np.real(s_ff.values) * np.real(s_ll.values)
    bad = ~(den > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(bad, 0.0, np.abs(s_fl.values) ** 2 / np.where(bad, 1.0, den))
    flags = (s_ff.flags | s_ll.flags | s_fl.flags) & MASKED
    flags = flags | np.where(bad, UNDEFINED, 0).astype(np.uint8)
    return Spectrum(
        s_ff.freq,
        np.clip(c, 0.0, 1.0),
        units="dimensionless",
        n_averages=min(s_ff.n_averages, s_ll.n_averages, s_fl.n_averages),
        flags=flags,
        name="coherence",
    )


def uncorrelated_noise_estimate(s_ll, s_lm, dataset=None, channels=("L", "M")):
    """Estimate of PD_L shot + electronics noise, ``S_LL - Re S_LM``.

    The uncertainty is the segment scatter of ``|L|^2 - Re(L M*)`` when the
    dataset is given, otherwise the quadrature sum of the two input
    uncertainties (conservative, since the errors are positively correlated).
    Negative bins are kept and flagged NEGATIVE.
    """
    s_ll.require_same_grid(s_lm)
    est = np.real(s_ll.values) - np.real(s_lm.values)
    if dataset is not None:
        l_ = dataset.channel(channels[0])
        m_ = dataset.channel(channels[1])
        _, unc = _reduce(
            lambda a, b: np.abs(l_[a:b]) ** 2 - np.real(l_[a:b] * np.conj(m_[a:b])),
            l_.shape[0],
            1,
        )
    elif s_ll.uncertainty is not None and s_lm.uncertainty is not None:
        unc = np.hypot(s_ll.uncertainty, s_lm.uncertainty)
    else:
        unc = None
    flags = (s_ll.flags | s_lm.flags) | np.where(est < 0, NEGATIVE, 0).astype(np.uint8)
    return Spectrum(
        s_ll.freq,
        est,
        units=s_ll.units,
        n_averages=s_ll.n_averages,
        uncertainty=unc,
        flags=flags,
        name="uncorrelated",
    )


@dataclass(frozen=True)
class RingdownFit:
    q: float
    q_uncertainty: float
    tau: float
    tau_uncertainty: float
    amplitude: float
    f0: float
    n_samples: int
    residual_rms: float

    def q_interval(self, level=0.95):
        """Two-sided confidence interval on Q from the t distribution."""
        t = stats.t.ppf(0.5 + level / 2, self.n_samples - 2)
        return self.q - t * self.q_uncertainty, self.q + t * self.q_uncertainty


def fit_ringdown(times, amplitudes, f0):
    """Quality factor from an exponential amplitude decay.

    Fits ``ln A = ln A0 - t / tau`` by least squares and returns
    ``Q = pi f0 tau`` with its uncertainty from the fit covariance.
    """
    t = np.asarray(times, dtype=float)
    a = np.asarray(amplitudes, dtype=float)
    if t.shape != a.shape or t.ndim != 1:
        raise InvalidInputError("times and amplitudes must be 1-D and equal length")
    if t.size < 10:
        raise InvalidInputError("need at least 10 samples")
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise InvalidInputError("amplitudes must be finite and > 0")
    if not f0 > 0:
        raise InvalidInputError("f0 must be > 0")
    res = stats.linregress(t, np.log(a))
    if not res.slope < 0:
        raise FitError(f"amplitude does not decay (slope {res.slope:.3g} 1/s)")
    tau = -1.0 / res.slope
    if np.ptp(t) < tau:
        raise InvalidInputError(
            f"record spans {np.ptp(t):.3g} s, less than one decay time ({tau:.3g} s)"
        )
    tau_err = res.stderr / res.slope**2
    resid = np.log(a) - (res.intercept + res.slope * t)
    return RingdownFit(
        q=np.pi * f0 * tau,
        q_uncertainty=np.pi * f0 * tau_err,
        tau=tau,
        tau_uncertainty=tau_err,
        amplitude=float(np.exp(res.intercept)),
        f0=float(f0),
        n_samples=t.size,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )
