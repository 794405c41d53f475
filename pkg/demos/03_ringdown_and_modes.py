"""Mechanical parameters from a ring-down and from the thermal spectrum.

The quality factor comes from the exponential decay of a freely ringing
mode. With Q and temperature fixed, the height of each thermal peak sets
its modal mass.

Run with ``python demos/03_ringdown_and_modes.py``.
"""

import numpy as np

from osnoise.config import bundled_config
from osnoise.estimator import fit_ringdown
from osnoise.noise_models import ModeSet, thermal_psd
from osnoise.pipeline import fit_modal_masses
from osnoise.spectrum import Spectrum

rng = np.random.default_rng(3)

# --- ring-down ------------------------------------------------------------
f0, q = 876.0, 25000.0
tau = q / (np.pi * f0)
t = np.linspace(0.0, 3 * tau, 300)
amplitude = np.exp(-t / tau) * (1 + 0.01 * rng.standard_normal(t.size))
r = fit_ringdown(t, amplitude, f0)
lo, hi = r.q_interval(0.95)
print(f"ring-down: Q = {r.q:.0f} (95% interval {lo:.0f}-{hi:.0f}), tau = {r.tau:.2f} s")

# --- modal masses -----------------------------------------------------------
full = bundled_config("cantilever_runs").run("os69k").modeset
truth = ModeSet(full.modes[:3], full.loss_angle, full.temperature)

# dense points across each peak so the resonances are resolved
f = np.unique(np.concatenate(
    [np.linspace(500, 50e3, 2000)] + [fk + np.linspace(-3, 3, 121) * fk / q for fk in truth.freqs_hz]
))
n_avg = 1024
psd = thermal_psd(truth, f).values * rng.gamma(n_avg, 1 / n_avg, f.size)
measured = Spectrum(f, psd, units="m^2/Hz", n_averages=n_avg)

guess = truth.with_masses(truth.masses * [1.3, 0.8, 1.2])
fit = fit_modal_masses(measured, guess, (500, 50e3))
print("\nmode    true [ng]    fitted [ng]     1-sigma")
for k, fk in enumerate(truth.freqs_hz):
    print(f"{fk:7.0f} {truth.masses[k] * 1e12:12.1f} {fit.modeset.masses[k] * 1e12:12.1f} "
          f"{fit.mass_uncertainty[k] * 1e12:10.1f}")
