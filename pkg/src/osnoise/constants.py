"""Physical constants (CODATA 2018, SI)."""

from math import pi

#: Boltzmann constant [J/K] (exact)
K_B = 1.380649e-23
#: Planck constant [J s] (exact)
H = 6.62607015e-34
#: Reduced Planck constant [J s]
HBAR = H / (2 * pi)
#: Speed of light in vacuum [m/s] (exact)
C = 299792458.0

TWO_PI = 2 * pi
