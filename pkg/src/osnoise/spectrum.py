"""Frequency-domain data container used throughout the package."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "Spectrum",
    "MASKED",
    "NEGATIVE",
    "UNRELIABLE",
    "UNDEFINED",
    "UNITS",
    "check_grid",
]

# bit flags stored per bin in ``Spectrum.flags``
MASKED = 1  # excluded from downstream use
NEGATIVE = 2  # negative value kept as estimation noise
UNRELIABLE = 4  # outside the validity band of the estimate (e.g. above the OS frequency)
UNDEFINED = 8  # zero denominator or otherwise undefined

UNITS = ("m^2/Hz", "m/rtHz", "W^2/Hz", "V^2/Hz", "1/Hz", "dimensionless")


def check_grid(freq, allow_zero=False, name="freq_grid"):
    """Validate a frequency grid and return it as a float array.

    Raises
    ------
    InvalidInputError
        If the grid is empty, not 1-D, non-finite, not strictly increasing,
        or contains non-positive frequencies (zero allowed when
        ``allow_zero``).
    """
    f = np.atleast_1d(np.asarray(freq, dtype=float))
    if f.ndim != 1 or f.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(f)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if allow_zero:
        if np.any(f < 0):
            raise InvalidInputError(f"{name} must be >= 0")
    elif np.any(f <= 0):
        raise InvalidInputError(f"{name} must be > 0")
    if f.size > 1 and np.any(np.diff(f) <= 0):
        raise InvalidInputError(f"{name} must be strictly increasing")
    return f


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Values on a frequency grid, with a units tag and per-bin flags.

    ``values`` is real for power spectra and complex for cross spectra.
    ``uncertainty`` is a 1-sigma per-bin statistical error (of the real part
    for complex spectra) or ``None`` for exact model curves.
    """

    freq: np.ndarray
    values: np.ndarray
    units: str = "dimensionless"
    n_averages: int = 1
    uncertainty: np.ndarray | None = None
    flags: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = check_grid(self.freq, allow_zero=True, name="freq")
        v = np.asarray(self.values)
        if not (np.issubdtype(v.dtype, np.complexfloating)):
            v = v.astype(float)
        else:
            v = v.astype(complex)
        if v.shape != f.shape:
            raise InvalidInputError(
                f"values shape {v.shape} does not match grid shape {f.shape}"
            )
        if self.units not in UNITS:
            raise InvalidInputError(f"unknown units tag {self.units!r}")
        if int(self.n_averages) < 1:
            raise InvalidInputError("n_averages must be >= 1")
        object.__setattr__(self, "freq", _frozen(f))
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "n_averages", int(self.n_averages))
        if self.uncertainty is not None:
            u = np.asarray(self.uncertainty, dtype=float)
            if u.shape != f.shape:
                raise InvalidInputError("uncertainty shape does not match grid")
            object.__setattr__(self, "uncertainty", _frozen(u))
        flags = np.zeros(f.shape, np.uint8) if self.flags is None else self.flags
        flags = np.asarray(flags, dtype=np.uint8)
        if flags.shape != f.shape:
            raise InvalidInputError("flags shape does not match grid")
        object.__setattr__(self, "flags", _frozen(flags))

    def __len__(self):
        return self.freq.size

    @property
    def is_complex(self):
        return np.iscomplexobj(self.values)

    @property
    def is_uniform(self):
        if self.freq.size < 3:
            return True
        d = np.diff(self.freq)
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=0))

    @property
    def df(self):
        """Bin spacing of a uniform grid."""
        if not self.is_uniform:
            raise InvalidInputError("grid is not uniform")
        return float(self.freq[1] - self.freq[0]) if self.freq.size > 1 else 0.0

    @property
    def mask(self):
        """Boolean array, True where the bin is excluded."""
        return (self.flags & (MASKED | UNDEFINED)) != 0

    @property
    def valid(self):
        return ~self.mask

    @property
    def real(self):
        return np.real(self.values)

    @property
    def magnitude(self):
        return np.abs(self.values)

    @property
    def phase(self):
        return np.angle(self.values)

    def asd(self):
        """Amplitude spectral density of a PSD (negative bins give NaN)."""
        if self.is_complex:
            raise InvalidInputError("ASD of a complex spectrum is undefined")
        with np.errstate(invalid="ignore"):
            vals = np.sqrt(self.values)
        units = {"m^2/Hz": "m/rtHz"}.get(self.units, self.units)
        return replace(self, values=vals, units=units, uncertainty=None)

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)

    def with_flags(self, where, flag):
        flags = self.flags.copy()
        flags[np.asarray(where, dtype=bool)] |= flag
        return replace(self, flags=flags)

    def clamped(self, floor=0.0):
        """View with negative bins clamped to ``floor`` (for plotting only)."""
        if self.is_complex:
            raise InvalidInputError("cannot clamp a complex spectrum")
        return replace(self, values=np.maximum(self.values, floor))

    def band(self, lo, hi):
        """Restrict to ``lo <= f <= hi``."""
        sel = (self.freq >= lo) & (self.freq <= hi)
        if not np.any(sel):
            raise InvalidInputError(f"no bins in band [{lo}, {hi}] Hz")
        return replace(
            self,
            freq=self.freq[sel],
            values=self.values[sel],
            uncertainty=None if self.uncertainty is None else self.uncertainty[sel],
            flags=self.flags[sel],
        )

    def same_grid(self, other):
        return self.freq.shape == other.freq.shape and np.array_equal(
            self.freq, other.freq
        )

    def require_same_grid(self, other, what="spectra"):
        if not self.same_grid(other):
            raise InvalidInputError(f"{what} do not share a frequency grid")

    def equals(self, other):
        """Bit-level equality of grid, values, units, flags, uncertainty and averages."""

        def _eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.units == other.units
            and self.n_averages == other.n_averages
            and _eq(self.freq, other.freq)
            and _eq(self.values, other.values)
            and _eq(self.uncertainty, other.uncertainty)
            and _eq(self.flags, other.flags)
        )

    def __repr__(self):
        kind = "CPSD" if self.is_complex else "PSD"
        return (
            f"Spectrum({self.name or kind!s}, {self.freq.size} bins "
            f"{self.freq[0]:.4g}-{self.freq[-1]:.4g} Hz, units={self.units}, "
            f"n_averages={self.n_averages})"
        )
