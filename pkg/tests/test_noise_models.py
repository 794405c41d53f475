import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from osnoise import InvalidInputError
from osnoise.noise_models import (
    MechanicalMode,
    ModeSet,
    OpticalConfig,
    circulating_power,
    qrpn_asd_free_mass,
    qrpn_suppression_factor,
    shot_noise_rpn_psd,
    sql_psd,
    thermal_psd,
)

RNG = np.random.default_rng(12345)


def _points(n=25):
    return [
        dict(
            m=10 ** RNG.uniform(-12, -6),
            f0=10 ** RNG.uniform(2, 5),
            q=10 ** RNG.uniform(2, 6),
            T=RNG.uniform(0.1, 400),
            f=10 ** RNG.uniform(1, 5.5),
        )
        for _ in range(n)
    ]


@pytest.mark.parametrize("p", _points())
def test_thermal_matches_oracle(p):
    ms = ModeSet.from_q([MechanicalMode.from_hz(p["m"], p["f0"])], p["q"], p["T"])
    got = thermal_psd(ms, [p["f"]]).values[0]
    ref = oracles.thermal([(p["m"], p["f0"])], 1 / mp.mpf(p["q"]), p["T"], p["f"])
    assert abs(got - float(ref)) / float(ref) < 1e-10


def test_thermal_multimode_oracle():
    modes = [(5e-9, 876.0), (2e-8, 21300.0, 1e-4), (4e-8, 38900.0)]
    ms = ModeSet(
        tuple(MechanicalMode.from_hz(*m) for m in modes), loss_angle=4e-5, temperature=25.0
    )
    f = np.geomspace(10, 1e5, 40)
    got = thermal_psd(ms, f).values
    ref = np.array([float(oracles.thermal(modes, mp.mpf("4e-5"), 25, x)) for x in f])
    np.testing.assert_allclose(got, ref, rtol=1e-10)


@pytest.mark.parametrize("p", _points())
def test_sql_matches_oracle(p):
    got = sql_psd(p["m"], [p["f"]]).values[0]
    assert abs(got / float(oracles.sql(p["m"], p["f"])) - 1) < 1e-10


@pytest.mark.parametrize("p", _points())
def test_qrpn_matches_oracle(p):
    pin = 10 ** RNG.uniform(-4, -1)
    det = RNG.uniform(-5, 5)
    t = 10 ** RNG.uniform(-3, -1)
    lam = RNG.uniform(500e-9, 2000e-9)
    oc = OpticalConfig(lam, pin, det, p["m"], input_transmission=t)
    got = qrpn_asd_free_mass(oc, [p["f"]]).values[0]
    ref = oracles.qrpn_asd(pin, det, t, lam, p["m"], p["f"])
    assert abs(got / float(ref) - 1) < 1e-10


def test_circulating_power_oracle():
    for _ in range(25):
        p0, d = 10 ** RNG.uniform(-3, 2), RNG.uniform(-10, 10)
        assert abs(circulating_power(p0, d) / float(oracles.circulating(p0, d)) - 1) < 1e-12


def test_circulating_power_examples():
    assert circulating_power(1.0, 0.0) == 1.0
    assert circulating_power(2.0, 1.0) == 1.0
    np.testing.assert_allclose(circulating_power([1.0, 1.0], [0.0, 3.0]), [1.0, 0.1])
    with pytest.raises(InvalidInputError):
        circulating_power(-1.0, 0.0)


def test_single_mode_peak():
    m, f0, q, T = 50e-9, 876.0, 25000.0, 25.0
    ms = ModeSet.from_q([MechanicalMode.from_hz(m, f0)], q, T)
    df = f0 / q / 20
    f = f0 + df * np.arange(-200, 201)
    peak = thermal_psd(ms, f).values.max()
    ref = float(oracles.single_mode_peak(m, f0, q, T))
    assert abs(peak / ref - 1) < 1e-3


def test_thermal_zero_temperature_and_scaling():
    ms = ModeSet.from_q([MechanicalMode.from_hz(1e-9, 1e3)], 1e4, 0.0)
    assert np.all(thermal_psd(ms, [10.0, 1e3, 1e4]).values == 0)
    a = thermal_psd(ModeSet.from_q([MechanicalMode.from_hz(1e-9, 1e3)], 1e4, 10.0), [500.0]).values
    b = thermal_psd(ModeSet.from_q([MechanicalMode.from_hz(2e-9, 1e3)], 1e4, 20.0), [500.0]).values
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_per_mode_loss_angle_override():
    base = ModeSet.from_q([MechanicalMode.from_hz(1e-9, 1e3)], 1e4, 10.0)
    over = ModeSet((MechanicalMode.from_hz(1e-9, 1e3, 1e-4),), 0.5, 10.0)
    np.testing.assert_array_equal(thermal_psd(base, [900.0]).values, thermal_psd(over, [900.0]).values)


@given(
    m=st.floats(1e-12, 1e-3),
    f=st.floats(1.0, 1e6),
)
def test_sql_positive_and_inverse_square(m, f):
    s = sql_psd(m, [f, 2 * f]).values
    assert s[0] > 0
    assert s[0] / s[1] == pytest.approx(4.0, rel=1e-12)


@given(
    t=st.floats(0.0, 500.0),
    q=st.floats(10.0, 1e7),
    f=st.floats(1.0, 1e5),
)
def test_thermal_nonnegative_and_linear_in_temperature(t, q, f):
    ms = ModeSet.from_q([MechanicalMode.from_hz(1e-9, 876.0)], q, t)
    ms2 = ModeSet.from_q([MechanicalMode.from_hz(1e-9, 876.0)], q, 2 * t)
    a, b = thermal_psd(ms, [f]).values[0], thermal_psd(ms2, [f]).values[0]
    assert a >= 0
    assert b == pytest.approx(2 * a, rel=1e-12, abs=0)


def test_suppression_factor():
    assert qrpn_suppression_factor(10e3, 20e3) == 0.5
    assert qrpn_suppression_factor(30e3, 20e3) == 1.0
    np.testing.assert_array_equal(qrpn_suppression_factor([0.0, 1e4, 4e4], 2e4), [0, 0.5, 1])
    with pytest.raises(InvalidInputError):
        qrpn_suppression_factor(1.0, 0.0)


def test_shot_noise_rpn():
    lam, p = 1064e-9, 1e-3
    rel = shot_noise_rpn_psd(p, lam)
    h, c = 6.62607015e-34, 299792458.0
    assert rel == pytest.approx(2 * h * c / lam / p, rel=1e-14)
    assert shot_noise_rpn_psd(2 * p, lam) == pytest.approx(rel / 2, rel=1e-14)
    with pytest.raises(InvalidInputError):
        shot_noise_rpn_psd(0.0, lam)


def test_optical_config_validation():
    oc = OpticalConfig(1064e-9, 1e-3, -1.0, 50e-12, input_transmission=0.01)
    assert oc.max_circulating_power == pytest.approx(0.4)
    assert oc.circulating_power == pytest.approx(0.2)
    OpticalConfig(1064e-9, 1e-3, -1.0, 50e-12, max_circulating_power=0.4, input_transmission=0.01)
    with pytest.raises(InvalidInputError):
        OpticalConfig(1064e-9, 1e-3, -1.0, 50e-12, max_circulating_power=0.5, input_transmission=0.01)
    with pytest.raises(InvalidInputError):
        OpticalConfig(1064e-9, 1e-3, -1.0, 50e-12)
    with pytest.raises(InvalidInputError):
        OpticalConfig(-1.0, 1e-3, -1.0, 50e-12, max_circulating_power=1.0)
    with pytest.raises(InvalidInputError):
        qrpn_asd_free_mass(OpticalConfig(1064e-9, 0.0, 0.0, 1e-9, max_circulating_power=0.0), [1.0])


def test_modeset_validation_and_helpers():
    a = MechanicalMode.from_hz(1e-9, 1e3)
    b = MechanicalMode.from_hz(2e-9, 2e3)
    with pytest.raises(InvalidInputError):
        ModeSet((b, a), 1e-4, 1.0)
    with pytest.raises(InvalidInputError):
        ModeSet((), 1e-4, 1.0)
    with pytest.raises(InvalidInputError):
        MechanicalMode(0.0, 1.0)
    ms = ModeSet((a, b), 1e-4, 1.0)
    assert ms.quality_factor == pytest.approx(1e4)
    np.testing.assert_allclose(ms.scaled_masses(3).masses, [3e-9, 6e-9])
    np.testing.assert_allclose(ms.with_freqs_hz([1.5e3, 2.5e3]).freqs_hz, [1.5e3, 2.5e3])
    assert len(ms.single(1)) == 1


@pytest.mark.parametrize("bad", [[], [0.0, 1.0], [2.0, 1.0], [1.0, np.nan]])
def test_bad_grids(bad):
    ms = ModeSet.from_q([MechanicalMode.from_hz(1e-9, 1e3)], 1e4, 1.0)
    with pytest.raises(InvalidInputError):
        thermal_psd(ms, bad)
