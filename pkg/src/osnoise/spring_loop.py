"""Optical-spring gain and feedback-loop transfer functions.

``G_os`` is the ratio of the sprung-mirror displacement response to the
free-mass response for a common force; ``G_fb`` is the open-loop gain of the
lock that feeds back on the PD_L signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SingularLoopError
from .spectrum import Spectrum, check_grid

__all__ = [
    "SpringModel",
    "LoopModel",
    "optical_spring_gain",
    "closed_loop_factor",
    "imprint_factor",
    "refer_to_free_mass",
    "refer_to_sprung",
    "CLOSED_LOOP_BOUND",
]

CLOSED_LOOP_BOUND = 1e3
_SINGULAR = 1e-12


@dataclass(frozen=True)
class SpringModel:
    os_freq: float
    damping_ratio: float = 0.1

    def __post_init__(self):
        if not self.os_freq > 0:
            raise InvalidInputError("os_freq must be > 0")
        if not 0 < self.damping_ratio <= 2:
            raise InvalidInputError("damping_ratio must lie in (0, 2]")

    def gain(self, freq):
        """Complex ``G_os`` on an array of frequencies [Hz]."""
        f = np.asarray(freq, dtype=float)
        fo = self.os_freq
        return f * f / (f * f - fo * fo - 2j * self.damping_ratio * fo * f)

    def to_dict(self):
        return {"os_freq_hz": self.os_freq, "damping_ratio": self.damping_ratio}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["os_freq_hz"]), float(d.get("damping_ratio", 0.1)))


@dataclass(frozen=True)
class LoopModel:
    """Optical spring plus feedback open-loop gain.

    ``G_fb(f) = gain * prod(i f + z) / prod(i f + p)`` with zeros ``z`` and
    poles ``p`` in Hz (a pole at 0 is an integrator, a zero at 0 a
    differentiator). Alternatively a tabulated response ``table=(freq,
    complex_values)`` is interpolated linearly in real and imaginary parts.
    """

    spring: SpringModel
    gain: float = 0.0
    zeros_hz: tuple = ()
    poles_hz: tuple = ()
    table: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "zeros_hz", tuple(float(z) for z in self.zeros_hz))
        object.__setattr__(self, "poles_hz", tuple(float(p) for p in self.poles_hz))
        if any(z < 0 for z in self.zeros_hz) or any(p < 0 for p in self.poles_hz):
            raise InvalidInputError("zeros and poles are given as non-negative corner frequencies")
        if self.table is not None:
            tf, tv = self.table
            tf = check_grid(tf, allow_zero=True, name="table freq")
            tv = np.asarray(tv, dtype=complex)
            if tv.shape != tf.shape or not np.all(np.isfinite(tv)):
                raise InvalidInputError("tabulated response must be finite and match its grid")
            object.__setattr__(self, "table", (tf, tv))

    @classmethod
    def open(cls, spring):
        return cls(spring)

    @classmethod
    def integrator(cls, spring, unity_freq=10e3):
        """``G_fb = f_u / (i f)``: strong below ``f_u``, negligible above."""
        return cls(spring, gain=float(unity_freq), poles_hz=(0.0,))

    @classmethod
    def differentiator(cls, spring, unity_freq=10e3):
        """``G_fb = i f / f_u``: negligible below ``f_u``, strong above."""
        return cls(spring, gain=1.0 / float(unity_freq), zeros_hz=(0.0,))

    @classmethod
    def tabulated(cls, spring, freq, response):
        return cls(spring, table=(freq, response))

    def open_loop_gain(self, freq):
        f = np.asarray(freq, dtype=float)
        if self.table is not None:
            tf, tv = self.table
            if np.any(f < tf[0]) or np.any(f > tf[-1]):
                raise InvalidInputError("frequency outside the tabulated G_fb range")
            return np.interp(f, tf, tv.real) + 1j * np.interp(f, tf, tv.imag)
        s = 1j * f
        num = np.full(f.shape, complex(self.gain))
        for z in self.zeros_hz:
            num = num * (s + z)
        den = np.ones(f.shape, complex)
        for p in self.poles_hz:
            den = den * (s + p)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = num / den
        if not np.all(np.isfinite(g)):
            raise InvalidInputError("G_fb is not finite on the grid (pole at 0 Hz evaluated?)")
        return g

    def to_dict(self):
        d = {"spring": self.spring.to_dict()}
        if self.table is not None:
            tf, tv = self.table
            d["table"] = {
                "freq_hz": tf.tolist(),
                "real": tv.real.tolist(),
                "imag": tv.imag.tolist(),
            }
        else:
            d.update(gain=self.gain, zeros_hz=list(self.zeros_hz), poles_hz=list(self.poles_hz))
        return d

    @classmethod
    def from_dict(cls, d):
        spring = SpringModel.from_dict(d["spring"])
        if "table" in d:
            t = d["table"]
            resp = np.asarray(t["real"], float) + 1j * np.asarray(t["imag"], float)
            return cls.tabulated(spring, t["freq_hz"], resp)
        return cls(
            spring,
            gain=float(d.get("gain", 0.0)),
            zeros_hz=tuple(d.get("zeros_hz", ())),
            poles_hz=tuple(d.get("poles_hz", ())),
        )


def optical_spring_gain(spring, freq_grid):
    """``G_os(w) = w^2 / (w^2 - w_os^2 - 2i zeta w_os w)`` as a complex spectrum."""
    f = check_grid(freq_grid)
    return Spectrum(f, spring.gain(f), units="dimensionless", name="G_os")


def closed_loop_factor(loop, freq_grid, bound=None):
    """``1 / (1 + G_fb)`` on the grid.

    Raises SingularLoopError where ``|1 + G_fb| < 1e-12``, and also where the
    magnitude exceeds ``bound`` if one is given.
    """
    f = check_grid(freq_grid)
    den = 1.0 + loop.open_loop_gain(f)
    if np.any(np.abs(den) < _SINGULAR):
        bad = f[np.abs(den) < _SINGULAR]
        raise SingularLoopError(f"1 + G_fb vanishes at {bad[:5]} Hz")
    cl = 1.0 / den
    if bound is not None and np.any(np.abs(cl) > bound):
        raise SingularLoopError(f"|1/(1+G_fb)| exceeds {bound:g} on the grid")
    return Spectrum(f, cl, units="dimensionless", name="closed_loop")


def imprint_factor(loop, freq_grid):
    """``G_fb / (1 + G_fb)``: fraction of the PD_L signal fed back onto the light."""
    f = check_grid(freq_grid)
    g = loop.open_loop_gain(f)
    den = 1.0 + g
    if np.any(np.abs(den) < _SINGULAR):
        raise SingularLoopError("1 + G_fb vanishes on the grid")
    return Spectrum(f, g / den, units="dimensionless", name="imprint")


def _gain_on(spec, spring, gain):
    if gain is None:
        return spring.gain(check_grid(spec.freq))
    if not spec.same_grid(gain):
        raise InvalidInputError("spectrum grid does not match the G_os grid")
    return gain.values


def _scaled(spec, factor):
    unc = None if spec.uncertainty is None else spec.uncertainty * factor
    return spec.with_values(spec.values * factor, uncertainty=unc)


def refer_to_free_mass(spec, spring, gain=None):
    """Divide a sprung displacement PSD by ``|G_os|^2``.

    ``gain`` may be a precomputed ``optical_spring_gain`` spectrum; its grid
    must match ``spec`` exactly.
    """
    g = _gain_on(spec, spring, gain)
    return _scaled(spec, 1.0 / np.abs(g) ** 2)


def refer_to_sprung(spec, spring, gain=None):
    """Inverse of :func:`refer_to_free_mass`."""
    g = _gain_on(spec, spring, gain)
    return _scaled(spec, np.abs(g) ** 2)
