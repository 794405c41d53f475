import textwrap

import pytest

from osnoise import ConfigError
from osnoise.config import bundled_config, deep_merge, load_config, parse_config

BASE = textwrap.dedent(
    """
    schema_version = 1
    [experiment]
    analysis_band_hz = [1000.0, 20000.0]
    [defaults]
    wavelength_nm = 1064.0
    reduced_mass_ng = 50.0
    input_transmission = 0.005
    temperature_k = 25.0
    quality_factor = 25000.0
    calibration_m_per_w = 1e-8
    modes = [{ freq_hz = 876.0, modal_mass_ng = 100.0 }]
    segment_length = 256
    sample_rate_hz = 65536.0
    [defaults.lfn]
    level_m2_per_hz = 1e-27
    exponent = 3.0
    [defaults.loop]
    kind = "integrator"
    unity_freq_hz = 5000.0
    [runs.a]
    input_power_mw = 1.0
    detuning_linewidths = -1.0
    os_freq_hz = 30000.0
    [runs.b]
    input_power_mw = 2.0
    detuning_linewidths = -2.0
    os_freq_hz = 25000.0
    loop = { kind = "zpk", gain = 2.0, zeros_hz = [10.0], poles_hz = [0.0, 100.0] }
    """
)


def test_parse_and_merge():
    exp = parse_config(BASE)
    assert exp.run_names == ("a", "b")
    a, b = exp.run("a"), exp.run("b")
    assert a.optical.input_power == pytest.approx(1e-3)
    assert a.optical.reduced_mass == pytest.approx(50e-12)
    assert a.loop.poles_hz == (0.0,) and a.loop.gain == 5000.0
    assert b.loop.zeros_hz == (10.0,) and b.loop.poles_hz == (0.0, 100.0)
    assert a.analysis_band == (1000.0, 20000.0)
    assert exp.calibration.k_m == 1e-8


def test_deep_merge():
    base = {"x": {"a": 1, "b": [1, 2]}, "y": 1}
    out = deep_merge(base, {"x": {"b": [3]}, "z": 2})
    assert out == {"x": {"a": 1, "b": [3]}, "y": 1, "z": 2}
    assert base["x"]["b"] == [1, 2]


@pytest.mark.parametrize(
    "edit, path",
    [
        (("input_power_mw = 1.0", "input_power_mw = -1.0"), "runs.a.input_power_mw"),
        (("quality_factor = 25000.0", "quality_factor = 'high'"), "runs.a.quality_factor"),
        (("schema_version = 1", "schema_version = 2"), "schema_version"),
        (("modal_mass_ng = 100.0", "modal_mass_kg = 1e-10"), "runs.a.modes.0"),
        (("kind = \"integrator\"", "kind = \"pid\""), "runs.a.loop.kind"),
        (("detuning_linewidths = -1.0\n", "detuning_linewidths = -1.0\nbogus_key = 1\n"), "runs.a"),
    ],
)
def test_schema_errors_carry_field_path(edit, path):
    text = BASE.replace(*edit, 1)
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.path == path


def test_missing_unity_frequency():
    text = BASE.replace("unity_freq_hz = 5000.0", "")
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.path == "runs.a.loop.unity_freq_hz"


def test_nyquist_violation_is_config_error():
    text = BASE.replace("analysis_band_hz = [1000.0, 20000.0]", "analysis_band_hz = [1000.0, 40000.0]")
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert "Nyquist" in str(ei.value)


def test_syntax_error_and_missing_run():
    with pytest.raises(ConfigError):
        parse_config("schema_version = ")
    exp = parse_config(BASE)
    with pytest.raises(ConfigError) as ei:
        exp.run("c")
    assert "a, b" in str(ei.value)


def test_load_from_file(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(BASE)
    assert load_config(p).name == "cfg"
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.toml")


def test_bundled_bundled_config(bundled):
    runs = bundled.runs
    assert list(runs) == ["os69k", "os63k", "os58k", "os50k"]
    triples = [(r.optical.input_power, r.optical.detuning, r.os_freq) for r in runs.values()]
    assert triples == [
        (pytest.approx(0.7e-3), -1.2, 69e3),
        (pytest.approx(2.5e-3), -2.5, 63e3),
        (pytest.approx(5e-3), -3.5, 58e3),
        (pytest.approx(7e-3), -4.4, 50e3),
    ]
    r = runs["os69k"]
    assert r.optical.wavelength == pytest.approx(1064e-9)
    assert r.optical.cavity_length == pytest.approx(0.01)
    assert r.optical.reduced_mass == pytest.approx(50e-12)
    assert r.modeset.freqs_hz[0] == pytest.approx(876.0)
    assert r.modeset.quality_factor == pytest.approx(25000.0)
    assert r.modeset.temperature == 25.0
    with pytest.raises(ConfigError):
        bundled_config("nope")
