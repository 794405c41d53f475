"""Noise budgets and cross-spectral thermal-noise extraction for
optical-spring optomechanical cavities.

The package is organised as

- :mod:`osnoise.noise_models`: closed-form thermal, SQL, QRPN and shot noise
- :mod:`osnoise.spring_loop`: optical-spring gain and feedback-loop factors
- :mod:`osnoise.synth`: seeded synthesis of correlated detector spectra
- :mod:`osnoise.estimator`: Welch PSD/CPSD, coherence, ring-down fits
- :mod:`osnoise.pipeline`: calibration, SQL normalisation, budgets, mode fits
- :mod:`osnoise.config`, :mod:`osnoise.io`, :mod:`osnoise.cli`: files and commands
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DatasetFormatError,
    EmptyResultError,
    FitError,
    InvalidInputError,
    ModeNotFoundError,
    ModelEvaluationError,
    SingularLoopError,
)
from .spectrum import MASKED, NEGATIVE, UNDEFINED, UNRELIABLE, Spectrum  # noqa: E402

__all__ = [
    "__version__",
    "Spectrum",
    "MASKED",
    "NEGATIVE",
    "UNRELIABLE",
    "UNDEFINED",
    "ConfigError",
    "DatasetFormatError",
    "EmptyResultError",
    "FitError",
    "InvalidInputError",
    "ModeNotFoundError",
    "ModelEvaluationError",
    "SingularLoopError",
]
