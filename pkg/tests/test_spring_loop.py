import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from osnoise import InvalidInputError, SingularLoopError, Spectrum
from osnoise.spring_loop import (
    LoopModel,
    SpringModel,
    closed_loop_factor,
    imprint_factor,
    optical_spring_gain,
    refer_to_free_mass,
    refer_to_sprung,
)


def test_spring_gain_matches_oracle():
    sp = SpringModel(69e3, 0.1)
    f = np.geomspace(100, 3e5, 30)
    got = optical_spring_gain(sp, f).values
    ref = np.array([complex(oracles.os_gain(x, 69e3, 0.1)) for x in f])
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_spring_gain_limits():
    sp = SpringModel(50e3, 0.05)
    g = sp.gain(np.array([10.0, 50e3, 1e8]))
    assert abs(g[0]) == pytest.approx((10 / 50e3) ** 2, rel=1e-6)
    assert abs(g[1]) == pytest.approx(1 / (2 * 0.05), rel=1e-12)
    assert abs(g[2]) == pytest.approx(1.0, rel=1e-6)


@given(
    g_re=st.floats(-50, 50),
    g_im=st.floats(-50, 50),
)
def test_closed_loop_plus_imprint_is_one(g_re, g_im):
    g = complex(g_re, g_im)
    if abs(1 + g) < 1e-6:
        return
    loop = LoopModel.tabulated(SpringModel(1e4), [1.0, 2.0], [g, g])
    c = closed_loop_factor(loop, [1.5]).values[0]
    d = imprint_factor(loop, [1.5]).values[0]
    assert c + d == pytest.approx(1.0, abs=1e-12)


def test_integrator_and_differentiator():
    sp = SpringModel(1e4)
    f = np.array([1e3, 1e4, 1e5])
    gi = LoopModel.integrator(sp, 1e4).open_loop_gain(f)
    gd = LoopModel.differentiator(sp, 1e4).open_loop_gain(f)
    np.testing.assert_allclose(gi, 1e4 / (1j * f))
    np.testing.assert_allclose(gd, 1j * f / 1e4)
    assert np.all(np.real(gi) == 0) and np.all(np.real(gd) == 0)
    assert LoopModel.open(sp).open_loop_gain(f).tolist() == [0, 0, 0]
    # an integrator cannot be evaluated at DC
    with pytest.raises(InvalidInputError):
        LoopModel.integrator(sp).open_loop_gain(np.array([0.0]))


def test_zpk_general():
    loop = LoopModel(SpringModel(1e4), gain=2.0, zeros_hz=(100.0,), poles_hz=(10.0, 1000.0))
    f = np.array([50.0, 500.0])
    s = 1j * f
    np.testing.assert_allclose(loop.open_loop_gain(f), 2 * (s + 100) / ((s + 10) * (s + 1000)))


def test_singular_loop():
    loop = LoopModel.tabulated(SpringModel(1e4), [1.0, 3.0], [-1.0 + 0j, -1.0 + 0j])
    with pytest.raises(SingularLoopError):
        closed_loop_factor(loop, [2.0])
    with pytest.raises(SingularLoopError):
        imprint_factor(loop, [2.0])
    loop = LoopModel.tabulated(SpringModel(1e4), [1.0, 3.0], [-0.9999, -0.9999])
    closed_loop_factor(loop, [2.0])
    with pytest.raises(SingularLoopError):
        closed_loop_factor(loop, [2.0], bound=1e3)


def test_tabulated_range_and_roundtrip():
    loop = LoopModel.tabulated(SpringModel(1e4, 0.2), [10.0, 20.0], [1 + 1j, 3 - 1j])
    assert loop.open_loop_gain(np.array([15.0]))[0] == pytest.approx(2 + 0j)
    with pytest.raises(InvalidInputError):
        loop.open_loop_gain(np.array([25.0]))
    back = LoopModel.from_dict(loop.to_dict())
    np.testing.assert_array_equal(back.open_loop_gain(np.array([12.0])), loop.open_loop_gain(np.array([12.0])))
    zpk = LoopModel.integrator(SpringModel(2e4), 5e3)
    assert LoopModel.from_dict(zpk.to_dict()) == zpk


def test_spring_validation():
    with pytest.raises(InvalidInputError):
        SpringModel(0.0)
    with pytest.raises(InvalidInputError):
        SpringModel(1e3, 0.0)
    with pytest.raises(InvalidInputError):
        LoopModel(SpringModel(1e3), zeros_hz=(-1.0,))


@given(st.lists(st.floats(1e-30, 1e-10), min_size=3, max_size=3))
def test_referral_round_trip(vals):
    sp = SpringModel(3e4, 0.1)
    spec = Spectrum([1e3, 2e4, 5e4], vals, units="m^2/Hz", uncertainty=np.array(vals) * 0.1)
    back = refer_to_sprung(refer_to_free_mass(spec, sp), sp)
    np.testing.assert_allclose(back.values, spec.values, rtol=1e-12)
    np.testing.assert_allclose(back.uncertainty, spec.uncertainty, rtol=1e-12)


def test_referral_grid_mismatch():
    sp = SpringModel(3e4)
    spec = Spectrum([1e3, 2e3], [1.0, 1.0], units="m^2/Hz")
    g = optical_spring_gain(sp, [1e3, 3e3])
    with pytest.raises(InvalidInputError):
        refer_to_free_mass(spec, sp, g)
    g = optical_spring_gain(sp, [1e3, 2e3])
    np.testing.assert_array_equal(
        refer_to_free_mass(spec, sp, g).values, refer_to_free_mass(spec, sp).values
    )
