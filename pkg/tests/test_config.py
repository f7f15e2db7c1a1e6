import json
import math

import numpy as np
import pytest

from readout_t1.config import dump_config, load_config, parse_config
from readout_t1.errors import ConfigError
from readout_t1.io import bath_document, format_value, read_trace_csv, write_csv, write_trace_csv
from readout_t1.bath import synth_inversion_recovery

from conftest import TWO_PI, mhz, asymmetric_device

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

ASYMMETRIC_TOML = """
[device]
qubit_frequency = { value = 0.0, unit = "MHz_over_2pi" }
resonator_frequency = { value = 6779.6, unit = "MHz_over_2pi" }
chi = { value = -8.8, unit = "MHz_over_2pi" }
kappa_g = { value = 9.0, unit = "MHz_over_2pi" }
kappa_e = { value = 6.6, unit = "MHz_over_2pi" }
eta = 0.1294

[drive]
point = "g"
gamma_m = { value = 0.5, unit = "MHz_over_2pi" }

[bath]
background = { value = 0.11, unit = "MHz_rate" }

[[bath.tls]]
detuning = { value = -6.0, unit = "MHz_over_2pi" }
coupling = { value = 0.19, unit = "MHz_over_2pi" }
gamma_2 = { value = 1.35, unit = "MHz_rate" }

[sweep]
points = ["g", "mid", "e"]
delta_alpha = [0.5, 1.0]

[oracle]
t_sim = { value = 3.0, unit = "us" }

[numerics]
seed = 4
"""


def parse(text):
    return parse_config(tomllib.loads(text))


def test_device_parsed_in_internal_units():
    cfg = parse(ASYMMETRIC_TOML)
    ref = asymmetric_device()
    assert cfg.device.chi == pytest.approx(ref.chi, rel=1e-15)
    assert cfg.device.kappa_g == pytest.approx(ref.kappa_g, rel=1e-15)
    assert cfg.device.kappa_e == pytest.approx(ref.kappa_e, rel=1e-15)
    assert cfg.device.eta == 0.1294
    assert cfg.drive.level_kind == "gamma_m"
    assert cfg.drive.level_value == pytest.approx(mhz(0.5))
    (tls,) = cfg.bath.components
    assert tls.frequency == pytest.approx(mhz(-6.0))
    assert tls.gamma_2 == 1.35
    assert cfg.bath.background == 0.11
    assert cfg.oracle.t_sim == 3.0
    assert cfg.numerics.seed == 4
    assert cfg.sweep.level_values == (0.5, 1.0)


def test_rate_and_angular_tags_differ_by_two_pi():
    a = parse(ASYMMETRIC_TOML.replace('gamma_2 = { value = 1.35, unit = "MHz_rate" }',
                                  'gamma_2 = { value = 1.35, unit = "MHz_over_2pi" }'))
    assert a.bath.components[0].gamma_2 == pytest.approx(TWO_PI * 1.35)


def test_malformed_unit_tag_rejected():
    with pytest.raises(ConfigError) as exc:
        parse(ASYMMETRIC_TOML.replace('unit = "MHz_rate" }\n\n[[', 'unit = "GHz" }\n\n[['))
    assert any(field == "bath.background" for field, _ in exc.value.problems)


def test_untagged_frequency_rejected():
    with pytest.raises(ConfigError) as exc:
        parse(ASYMMETRIC_TOML.replace('chi = { value = -8.8, unit = "MHz_over_2pi" }', "chi = -8.8"))
    assert any(field == "device.chi" for field, _ in exc.value.problems)


def test_all_problems_reported_together():
    text = (ASYMMETRIC_TOML.replace('chi = { value = -8.8, unit = "MHz_over_2pi" }', "chi = -8.8")
            .replace("seed = 4", 'seed = "x"')
            .replace('point = "g"', 'point = "q"'))
    with pytest.raises(ConfigError) as exc:
        parse(text)
    fields = {f for f, _ in exc.value.problems}
    assert {"device.chi", "numerics.seed"} <= fields
    assert any(f.startswith("drive") for f in fields)


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError):
        parse(ASYMMETRIC_TOML + "\n[extras]\nfoo = 1\n")
    with pytest.raises(ConfigError):
        parse(ASYMMETRIC_TOML.replace("eta = 0.1294", "eta = 0.1294\nkapa = 1.0"))


def test_time_field_needs_time_unit():
    with pytest.raises(ConfigError):
        parse(ASYMMETRIC_TOML.replace('t_sim = { value = 3.0, unit = "us" }',
                                  't_sim = { value = 3.0, unit = "MHz_rate" }'))


def test_invalid_physics_reported_as_config_error():
    with pytest.raises(ConfigError):
        parse(ASYMMETRIC_TOML.replace('kappa_e = { value = 6.6', 'kappa_e = { value = -6.6'))
    with pytest.raises(ConfigError):
        parse(ASYMMETRIC_TOML.replace("eta = 0.1294", "eta = 1.5"))


def test_normalize_export_ingest_is_idempotent():
    cfg = parse(ASYMMETRIC_TOML)
    again = parse(dump_config(cfg.normalized))
    assert again.normalized == cfg.normalized
    assert again.device == cfg.device
    assert again.bath == cfg.bath
    assert again.drive == cfg.drive
    assert again.sweep == cfg.sweep
    assert parse(dump_config(again.normalized)).normalized == cfg.normalized


def test_manifest_config_is_loadable(tmp_path):
    cfg = parse(ASYMMETRIC_TOML)
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"config": cfg.normalized}))
    assert load_config(path).device == cfg.device


def test_load_reports_unreadable_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[device\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    not_manifest = tmp_path / "x.json"
    not_manifest.write_text("{}")
    with pytest.raises(ConfigError):
        load_config(not_manifest)


def test_bath_document_round_trip():
    cfg = parse(ASYMMETRIC_TOML)
    doc = bath_document(cfg.bath, cfg.device.qubit_frequency)
    text = ASYMMETRIC_TOML.split("[bath]")[0] + dump_config(doc)
    assert parse(text).bath == cfg.bath


@pytest.mark.parametrize(
    "value,text",
    [(None, ""), (True, "1"), (3, "3"), (0.1, "0.1"), (np.float64(1 / 3), repr(1 / 3)),
     (math.nan, "nan"), ("x", "x")],
)
def test_format_value(value, text):
    assert format_value(value) == text


def test_csv_float_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=50) * 10.0 ** rng.integers(-12, 12, size=50)
    write_csv(tmp_path / "v.csv", ["x"], [{"x": v} for v in vals])
    back = np.loadtxt(tmp_path / "v.csv", skiprows=1)
    np.testing.assert_array_equal(back, vals)


def test_trace_csv_round_trip(tmp_path):
    trace = synth_inversion_recovery(0.3, 0.6, 1.0, 1.0, 0.1, np.linspace(0, 10, 51), 0.01, 1)
    write_trace_csv(tmp_path / "t.csv", trace)
    back = read_trace_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.times, trace.times)
    np.testing.assert_array_equal(back.populations, trace.populations)


@pytest.mark.parametrize("content", ["", "t_us,P_e\n", "t,P\n1,2\n", "t_us,P_e\n0,a\n"])
def test_bad_trace_files(tmp_path, content):
    path = tmp_path / "t.csv"
    path.write_text(content)
    with pytest.raises(ConfigError):
        read_trace_csv(path)
