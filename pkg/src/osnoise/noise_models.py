"""Closed-form noise sources of a detuned optomechanical cavity.

All frequency grids are in Hz and converted to angular frequency with
exactly ``2*pi``. Power spectral densities are one-sided.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import constants as const
from .errors import InvalidInputError
from .spectrum import Spectrum, check_grid

__all__ = [
    "MechanicalMode",
    "ModeSet",
    "OpticalConfig",
    "thermal_psd",
    "sql_psd",
    "circulating_power",
    "qrpn_asd_free_mass",
    "qrpn_suppression_factor",
    "shot_noise_rpn_psd",
]


@dataclass(frozen=True)
class MechanicalMode:
    """One mechanical mode: modal mass [kg], resonance [rad/s], optional loss angle."""

    modal_mass: float
    angular_freq: float
    loss_angle: float | None = None

    def __post_init__(self):
        if not self.modal_mass > 0:
            raise InvalidInputError("modal_mass must be > 0")
        if not self.angular_freq > 0:
            raise InvalidInputError("angular_freq must be > 0")
        if self.loss_angle is not None and not 0 < self.loss_angle < 1:
            raise InvalidInputError("loss_angle override must lie in (0, 1)")

    @classmethod
    def from_hz(cls, modal_mass, freq_hz, loss_angle=None):
        return cls(float(modal_mass), const.TWO_PI * float(freq_hz), loss_angle)

    @property
    def freq_hz(self):
        return self.angular_freq / const.TWO_PI


@dataclass(frozen=True)
class ModeSet:
    """Ordered mechanical modes sharing a temperature and a default loss angle."""

    modes: tuple
    loss_angle: float
    temperature: float

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        if not modes:
            raise InvalidInputError("a ModeSet needs at least one mode")
        w = [m.angular_freq for m in modes]
        if any(b <= a for a, b in zip(w, w[1:])):
            raise InvalidInputError("mode frequencies must be strictly increasing")
        if not 0 < self.loss_angle < 1:
            raise InvalidInputError("loss_angle must lie in (0, 1)")
        if not self.temperature >= 0:
            raise InvalidInputError("temperature must be >= 0")

    @classmethod
    def from_q(cls, modes, quality_factor, temperature):
        return cls(tuple(modes), 1.0 / quality_factor, temperature)

    @property
    def quality_factor(self):
        return 1.0 / self.loss_angle

    def __len__(self):
        return len(self.modes)

    def mode_loss(self, k):
        phi = self.modes[k].loss_angle
        return self.loss_angle if phi is None else phi

    @property
    def masses(self):
        return np.array([m.modal_mass for m in self.modes])

    @property
    def freqs_hz(self):
        return np.array([m.freq_hz for m in self.modes])

    def with_masses(self, masses):
        if len(masses) != len(self.modes):
            raise InvalidInputError("one mass per mode required")
        modes = tuple(replace(m, modal_mass=float(mk)) for m, mk in zip(self.modes, masses))
        return replace(self, modes=modes)

    def with_freqs_hz(self, freqs):
        if len(freqs) != len(self.modes):
            raise InvalidInputError("one frequency per mode required")
        modes = tuple(
            replace(m, angular_freq=const.TWO_PI * float(f)) for m, f in zip(self.modes, freqs)
        )
        return replace(self, modes=modes)

    def scaled_masses(self, factor):
        return self.with_masses(self.masses * factor)

    def single(self, k):
        """ModeSet holding only mode ``k`` (with its effective loss angle)."""
        return replace(self, modes=(replace(self.modes[k], loss_angle=self.mode_loss(k)),))


@dataclass(frozen=True)
class OpticalConfig:
    """Laser and cavity parameters.

    ``detuning`` is in cavity linewidths; negative values are on the
    blue-detuned optical-spring side. If ``max_circulating_power`` is not
    given it is derived from the input-mirror transmission as
    ``4 * input_power / input_transmission``.
    """

    wavelength: float
    input_power: float
    detuning: float
    reduced_mass: float
    max_circulating_power: float | None = None
    cavity_length: float | None = None
    input_transmission: float | None = None

    def __post_init__(self):
        if not self.wavelength > 0:
            raise InvalidInputError("wavelength must be > 0")
        if not self.input_power >= 0:
            raise InvalidInputError("input_power must be >= 0")
        if not self.reduced_mass > 0:
            raise InvalidInputError("reduced_mass must be > 0")
        if self.cavity_length is not None and not self.cavity_length > 0:
            raise InvalidInputError("cavity_length must be > 0")
        t = self.input_transmission
        if t is not None and not 0 < t <= 1:
            raise InvalidInputError("input_transmission must lie in (0, 1]")
        p0 = self.max_circulating_power
        if p0 is None:
            if t is None:
                raise InvalidInputError(
                    "give max_circulating_power or input_transmission"
                )
            object.__setattr__(self, "max_circulating_power", 4.0 * self.input_power / t)
        else:
            if not p0 >= 0:
                raise InvalidInputError("max_circulating_power must be >= 0")
            if t is not None:
                expected = 4.0 * self.input_power / t
                if abs(p0 - expected) > 1e-9 * max(abs(expected), abs(p0)):
                    raise InvalidInputError(
                        "max_circulating_power inconsistent with 4*input_power/input_transmission"
                    )

    @property
    def optical_frequency(self):
        return const.C / self.wavelength

    @property
    def circulating_power(self):
        return circulating_power(self.max_circulating_power, self.detuning)


def _omega(freq_grid):
    return const.TWO_PI * check_grid(freq_grid)


def thermal_psd(modeset, freq_grid):
    """Structural-damping thermal displacement PSD summed over modes [m^2/Hz].

    Each mode contributes
    ``4 kB T w_k phi / (m_k [(w_k^2 - w^2)^2 + w^2 w_k^2 phi^2])``.
    """
    f = check_grid(freq_grid)
    if modeset.temperature < 0:
        raise InvalidInputError("temperature must be >= 0")
    w2 = (const.TWO_PI * f) ** 2
    kT4 = 4.0 * const.K_B * modeset.temperature
    total = np.zeros_like(f)
    for k, mode in enumerate(modeset.modes):
        phi = modeset.mode_loss(k)
        wk = mode.angular_freq
        wk2 = wk * wk
        total += kT4 * wk * phi / (mode.modal_mass * ((wk2 - w2) ** 2 + w2 * wk2 * phi**2))
    return Spectrum(f, total, units="m^2/Hz", name="thermal")


def sql_psd(reduced_mass, freq_grid):
    """Free-mass standard quantum limit ``2 hbar / (m w^2)`` [m^2/Hz]."""
    if not reduced_mass > 0:
        raise InvalidInputError("reduced_mass must be > 0")
    f = check_grid(freq_grid)
    w = const.TWO_PI * f
    return Spectrum(f, 2.0 * const.HBAR / (reduced_mass * w * w), units="m^2/Hz", name="sql")


def circulating_power(p0, detuning):
    """Circulating power ``P0 / (1 + detuning^2)`` [W]; works on arrays."""
    p0 = np.asarray(p0, dtype=float)
    if np.any(p0 < 0):
        raise InvalidInputError("p0 must be >= 0")
    out = p0 / (1.0 + np.asarray(detuning, dtype=float) ** 2)
    return float(out) if out.ndim == 0 else out


def qrpn_asd_free_mass(optical, freq_grid):
    """Radiation-pressure displacement ASD of a free mass [m/sqrt(Hz)].

    ``(1 / (m w^2)) * (2 P_c / c) * sqrt(2 h nu / P_in)``
    """
    if not optical.input_power > 0:
        raise InvalidInputError("input_power must be > 0 for QRPN")
    f = check_grid(freq_grid)
    w = const.TWO_PI * f
    nu = optical.optical_frequency
    force = 2.0 * optical.circulating_power / const.C * np.sqrt(2.0 * const.H * nu / optical.input_power)
    return Spectrum(f, force / (optical.reduced_mass * w * w), units="m/rtHz", name="qrpn_asd")


def qrpn_suppression_factor(freq, os_freq):
    """Amplitude suppression ``min(f / f_os, 1)`` of QRPN below the spring frequency."""
    if not os_freq > 0:
        raise InvalidInputError("os_freq must be > 0")
    f = np.asarray(freq, dtype=float)
    out = np.minimum(f / os_freq, 1.0)
    return float(out) if out.ndim == 0 else out


def shot_noise_rpn_psd(detected_power, wavelength):
    """Relative power noise of shot noise, ``2 h nu / P`` [1/Hz], flat in frequency."""
    if not detected_power > 0:
        raise InvalidInputError("detected_power must be > 0")
    if not wavelength > 0:
        raise InvalidInputError("wavelength must be > 0")
    return 2.0 * const.H * (const.C / wavelength) / detected_power
