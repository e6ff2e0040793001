import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from turbulux.channel import (
    ChannelConfig,
    config_to_dict,
    db_to_efficiency,
    derive_channel,
    fresnel_w0,
    load_config,
    reference_channel,
)
from turbulux.errors import ConfigError


def test_fresnel_choice_gives_unit_fresnel_number():
    ch = derive_channel(reference_channel(1000.0))
    assert ch.fresnel_number == pytest.approx(1.0, abs=1e-14)
    assert ch.k == pytest.approx(2 * math.pi / 808e-9, rel=1e-15)


def test_rytov_reference_value():
    # direct evaluation in long arithmetic
    k = 2 * math.pi / 808e-9
    expected = 1.23e-15 * k ** (7 / 6) * 1000.0 ** (11 / 6)
    ch = derive_channel(reference_channel(1000.0))
    assert ch.rytov == pytest.approx(expected, rel=1e-14)
    assert ch.rytov == pytest.approx(0.0426, abs=5e-5)


def test_zero_turbulence():
    ch = derive_channel(reference_channel(1000.0, cn2=0.0))
    assert ch.rytov == 0.0
    assert math.isinf(ch.coherence_radius)


def test_coherence_radius_has_length_dimension():
    cfg = reference_channel(1000.0)
    ch = derive_channel(cfg)
    expected = (1.46 * cfg.cn2 * ch.k**2 * cfg.length) ** (-0.6)
    assert ch.coherence_radius == pytest.approx(expected, rel=1e-14)
    # rho0 scales like lambda^(6/5) at fixed path
    ch2 = derive_channel(cfg.replace(wavelength=2 * cfg.wavelength))
    assert ch2.coherence_radius / ch.coherence_radius == pytest.approx(2 ** 1.2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(10.0, 1e5), st.floats(400e-9, 2e-6))
def test_rytov_length_scaling(length, wavelength):
    cfg = ChannelConfig(wavelength, length, 0.01, 1e-15, 1e-6, 5e3, 0.01)
    r1 = derive_channel(cfg).rytov
    r2 = derive_channel(cfg.replace(length=2 * length, f0=2 * length)).rytov
    assert r2 / r1 == pytest.approx(2 ** (11 / 6), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(10.0, 1e5), st.floats(400e-9, 2e-6))
def test_fresnel_number_is_one_for_fresnel_waist(length, wavelength):
    cfg = ChannelConfig(wavelength, length, fresnel_w0(length, wavelength), 0.0, 1e-6, 5e3, 0.01)
    assert derive_channel(cfg).fresnel_number == pytest.approx(1.0, rel=1e-13)


def test_derive_is_deterministic():
    cfg = reference_channel(1500.0)
    assert derive_channel(cfg) == derive_channel(cfg)


@pytest.mark.parametrize("change", [
    {"length": 0.0},
    {"wavelength": -1e-6},
    {"w0": float("nan")},
    {"cn2": -1e-15},
    {"inner_scale": 6e3},
    {"eta_c": 0.0},
    {"eta_c": 1.2},
    {"aperture": float("inf")},
])
def test_invalid_configs_rejected(change):
    with pytest.raises(ConfigError):
        reference_channel(1000.0).replace(**change)


def test_infinite_outer_scale_and_collimated_allowed():
    cfg = reference_channel(1000.0).replace(outer_scale=math.inf, f0=math.inf)
    assert not cfg.focused
    assert derive_channel(cfg).rytov > 0


def test_json_round_trip(tmp_path):
    cfg = reference_channel(2000.0, eta_c=0.48).replace(outer_scale=math.inf)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(config_to_dict(cfg)))
    assert load_config(path) == cfg


def test_key_value_with_fresnel_waist(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text(
        "# reference channel\n"
        "wavelength_m = 808e-9\n"
        "length_m = 1000\n"
        "w0_m = fresnel\n"
        "cn2 = 1e-15\n"
        "l0_m = 1e-6\n"
        "outer_m = inf\n"
        "aperture_m = 0.012\n"
    )
    cfg = load_config(path)
    assert cfg.w0 == pytest.approx(math.sqrt(1000 * 808e-9 / math.pi))
    assert cfg.focused and cfg.eta_c == 1.0


@pytest.mark.parametrize("doc", [
    {"wavelength_m": 808e-9},
    {**config_to_dict(reference_channel(1000.0)), "colour": "blue"},
    {**config_to_dict(reference_channel(1000.0)), "cn2": "lots"},
])
def test_bad_documents(doc):
    with pytest.raises(ConfigError):
        load_config(doc)


def test_db_to_efficiency():
    assert db_to_efficiency(3.2) == pytest.approx(10 ** -0.32)
    assert db_to_efficiency(0.0) == 1.0
