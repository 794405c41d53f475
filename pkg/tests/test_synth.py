import numpy as np
import pytest

from osnoise import InvalidInputError
from osnoise.spring_loop import LoopModel, SpringModel
from osnoise.synth import RunConfig, injected_truth, model_terms, synthesize_run


def _complex_loop_run(run):
    # a loop with a real part, so the d* terms of the model are exercised
    loop = LoopModel(SpringModel(30e3, 0.15), gain=0.8, poles_hz=(5e3,), zeros_hz=(1e3,))
    return run.replace(loop=loop)


def test_deterministic_and_thread_independent(small_run):
    a = synthesize_run(small_run)
    b = synthesize_run(small_run, threads=4, block_size=3)
    for ch in "LMF":
        assert a.channel(ch).tobytes() == b.channel(ch).tobytes()
    c = synthesize_run(small_run.replace(seed=8))
    assert a.channel("L").tobytes() != c.channel("L").tobytes()


def test_segments_are_prefix_stable(small_run):
    # segment i depends only on (seed, i), so a longer run extends a shorter one
    a = synthesize_run(small_run)
    b = synthesize_run(small_run.replace(n_segments=20))
    np.testing.assert_array_equal(b.channel("M")[:16], a.channel("M"))


@pytest.mark.parametrize("complex_loop", [False, True])
def test_monte_carlo_matches_expected_channels(small_run, complex_loop):
    cfg = small_run.replace(n_segments=4000)
    if complex_loop:
        cfg = _complex_loop_run(cfg)
    ds = synthesize_run(cfg)
    tr = ds.truth
    n = ds.n_segments
    L, M, F = ds.channel("L"), ds.channel("M"), ds.channel("F")
    checks = {
        "S_LL": np.abs(L) ** 2,
        "S_MM": np.abs(M) ** 2,
        "S_FF": np.abs(F) ** 2,
        "S_LM": L * np.conj(M),
        "S_FL": F * np.conj(L),
    }
    for name, prod in checks.items():
        mean = prod.mean(axis=0)
        sig_re = prod.real.std(axis=0) / np.sqrt(n)
        sig_im = prod.imag.std(axis=0) / np.sqrt(n)
        expected = tr[name].values
        z_re = (mean.real - np.real(expected)) / sig_re
        assert np.max(np.abs(z_re)) < 5.5, name
        if np.iscomplexobj(expected):
            ok = sig_im > 0
            z_im = (mean.imag - np.imag(expected))[ok] / sig_im[ok]
            assert np.max(np.abs(z_im)) < 5.5, name


def test_truth_compositions(small_run):
    tr = injected_truth(small_run)
    core = tr["thermal"].values + tr["qrpn_suppressed"].values
    # no PD_F electronics: the calibration chain converges exactly to S0 / S1
    np.testing.assert_allclose(tr["S0_expected"].values, tr["S0"].values, rtol=1e-9)
    np.testing.assert_allclose(tr["S1_expected"].values, tr["S1"].values, rtol=1e-9)
    np.testing.assert_allclose(tr["S0"].values - core, tr["uncorrelated_fm"].values, rtol=1e-9)
    # differentiator loop: Re G_fb = 0, the shot term drops out of S1 entirely
    np.testing.assert_allclose(tr["S1"].values, core, rtol=1e-12)


def test_truth_with_complex_loop(small_run):
    cfg = _complex_loop_run(small_run)
    tr = injected_truth(cfg)
    g = cfg.loop.open_loop_gain(cfg.freq_grid)
    diff = tr["S0_expected"].values - tr["S1_expected"].values
    np.testing.assert_allclose(diff, (1 + g.real) * tr["uncorrelated_fm"].values, rtol=1e-8)


def test_pd_f_electronics_leave_residual(small_run):
    cfg = small_run.replace(electronics_psd_f=1e-30)
    tr = injected_truth(cfg)
    assert np.all(tr["lfn_residual"].values > 0)


def test_sources_switch(small_run):
    cfg = small_run.replace(sources={"thermal"})
    t = model_terms(cfg)
    for key in ("qrpn", "lfn", "shot_l", "el_l", "el_f"):
        assert not np.any(t[key])
    tr = injected_truth(cfg)
    g2 = np.abs(t["g_os"]) ** 2
    c2 = np.abs(1 / (1 + t["g_fb"])) ** 2
    np.testing.assert_allclose(
        tr["S_LL"].values, c2 * g2 * t["thermal"] / (2 * cfg.calibration**2), rtol=1e-12
    )
    ds = synthesize_run(cfg.replace(n_segments=2))
    assert not np.any(ds.channel("F"))


def test_qrpn_suppression_flag(small_run):
    on = model_terms(small_run)
    off = model_terms(small_run.replace(qrpn_suppression=False))
    np.testing.assert_array_equal(off["qrpn_suppressed"], off["qrpn"])
    f = small_run.freq_grid
    below = f < small_run.os_freq
    np.testing.assert_allclose(
        on["qrpn_suppressed"][below], on["qrpn"][below] * (f[below] / small_run.os_freq) ** 2
    )


def test_config_dict_round_trip(small_run, bundled):
    for cfg in [small_run, *bundled.runs.values()]:
        assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_run_config_validation(small_run):
    with pytest.raises(InvalidInputError):
        small_run.replace(segment_length=300)
    with pytest.raises(InvalidInputError):
        small_run.replace(analysis_band=(1e3, 40e3))
    with pytest.raises(InvalidInputError):
        small_run.replace(sources={"thermal", "seismic"})
    with pytest.raises(InvalidInputError):
        small_run.replace(calibration=0.0)
    with pytest.raises(InvalidInputError):
        small_run.replace(seed=-1)


def test_dataset_views(small_run):
    ds = synthesize_run(small_run)
    assert ds.channels == ("L", "M", "F")
    assert ds.head(4).n_segments == 4
    sub = ds.band(5e3, 10e3)
    assert sub.freq.min() >= 5e3 and sub.freq.max() <= 10e3
    assert sub.truth["thermal"].freq.size == sub.freq.size
    seg = ds.segment(3)
    np.testing.assert_array_equal(seg.channels["L"], ds.channel("L")[3])
    with pytest.raises(InvalidInputError):
        ds.channel("X")
    with pytest.raises(InvalidInputError):
        ds.head(0)
    with pytest.raises(InvalidInputError):
        ds.band(1e6, 2e6)
