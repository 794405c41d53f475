"""Arbitrary-precision reference implementations (mpmath, 50 digits).

Written from the physics formulas directly, sharing no code with the
package. Constants are the exact SI values, entered as decimal strings.
"""

import mpmath as mp

mp.mp.dps = 50

KB = mp.mpf("1.380649e-23")
H = mp.mpf("6.62607015e-34")
HBAR = H / (2 * mp.pi)
C = mp.mpf("299792458")


def omega(f_hz):
    return 2 * mp.pi * mp.mpf(f_hz)


def thermal(modes, phi, temperature, f_hz):
    """modes: list of (mass_kg, f0_hz[, phi_k])."""
    w = omega(f_hz)
    T = mp.mpf(temperature)
    total = mp.mpf(0)
    for m in modes:
        mass, f0 = mp.mpf(m[0]), m[1]
        ph = mp.mpf(m[2]) if len(m) > 2 else mp.mpf(phi)
        wk = omega(f0)
        total += 4 * KB * T * wk * ph / (mass * ((wk**2 - w**2) ** 2 + w**2 * wk**2 * ph**2))
    return total


def sql(mass, f_hz):
    return 2 * HBAR / (mp.mpf(mass) * omega(f_hz) ** 2)


def circulating(p0, detuning):
    return mp.mpf(p0) / (1 + mp.mpf(detuning) ** 2)


def qrpn_asd(p_in, detuning, transmission, wavelength, mass, f_hz):
    p_in = mp.mpf(p_in)
    p0 = 4 * p_in / mp.mpf(transmission)
    pc = circulating(p0, detuning)
    nu = C / mp.mpf(wavelength)
    return (1 / (mp.mpf(mass) * omega(f_hz) ** 2)) * (2 * pc / C) * mp.sqrt(2 * H * nu / p_in)


def os_gain(f_hz, f_os, zeta):
    f, fo, z = mp.mpf(f_hz), mp.mpf(f_os), mp.mpf(zeta)
    return f**2 / (f**2 - fo**2 - 2j * z * fo * f)


def single_mode_peak(mass, f0, q, temperature):
    """4 kB T Q / (m w0^3)."""
    return 4 * KB * mp.mpf(temperature) * mp.mpf(q) / (mp.mpf(mass) * omega(f0) ** 3)
