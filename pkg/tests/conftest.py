import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from osnoise.config import bundled_config
from osnoise.noise_models import MechanicalMode, ModeSet, OpticalConfig
from osnoise.spring_loop import LoopModel, SpringModel
from osnoise.synth import PowerLawPSD, RunConfig

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def bundled():
    return bundled_config("cantilever_runs")


@pytest.fixture
def small_run():
    """A cheap run with every noise source switched on."""
    modes = ModeSet.from_q([MechanicalMode.from_hz(1e-9, 876.0)], 25000, 25.0)
    optical = OpticalConfig(1064e-9, 1e-3, -1.5, 50e-12, input_transmission=0.005)
    loop = LoopModel.differentiator(SpringModel(40e3, 0.1), 80e3)
    return RunConfig(
        optical=optical,
        modeset=modes,
        loop=loop,
        lfn_model=PowerLawPSD(1e-28, 3.0),
        electronics_psd_l=1e-24,
        electronics_psd_m=1e-24,
        calibration=3e-8,
        segment_length=256,
        n_segments=16,
        sample_rate=65536.0,
        seed=7,
    )


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.abs(b))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
