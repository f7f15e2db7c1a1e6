import csv
import json

import numpy as np
import pytest

from readout_t1.bath import synth_inversion_recovery
from readout_t1.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_SWEEP, main
from readout_t1.io import file_digest, write_trace_csv
from readout_t1.pointer import DriveSpec, closed_form_gamma_m, solve_pointer_states

from conftest import mhz, asymmetric_device

ASYMMETRIC_DEVICE = """
[device]
qubit_frequency = { value = 0.0, unit = "MHz_over_2pi" }
resonator_frequency = { value = 6779.6, unit = "MHz_over_2pi" }
chi = { value = -8.8, unit = "MHz_over_2pi" }
kappa_g = { value = 9.0, unit = "MHz_over_2pi" }
kappa_e = { value = 6.6, unit = "MHz_over_2pi" }
eta = 0.1294
"""

NEAR_RESONANT_BATH = """
[bath]
background = { value = 0.11, unit = "MHz_rate" }

[[bath.tls]]
detuning = { value = -6.0, unit = "MHz_over_2pi" }
coupling = { value = 0.19, unit = "MHz_over_2pi" }
gamma_2 = { value = 1.35, unit = "MHz_rate" }
"""

SYMMETRIC_CONFIG = """
[device]
qubit_frequency = { value = 0.0, unit = "MHz_over_2pi" }
resonator_frequency = { value = 6779.6, unit = "MHz_over_2pi" }
chi = { value = -5.0, unit = "MHz_over_2pi" }
kappa = { value = 5.0, unit = "MHz_over_2pi" }

[bath]
[[bath.tls]]
detuning = { value = 10.0, unit = "MHz_over_2pi" }
coupling = { value = 0.5, unit = "MHz_over_2pi" }
gamma_2 = { value = 0.5, unit = "MHz_over_2pi" }

[[bath.tls]]
detuning = { value = -10.0, unit = "MHz_over_2pi" }
coupling = { value = 0.5, unit = "MHz_over_2pi" }
gamma_2 = { value = 0.5, unit = "MHz_over_2pi" }
"""


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(tmp_path, command, text, *extra, out="out"):
    cfg = write_config(tmp_path, text)
    code = main([command, "--config", str(cfg), "--out-dir", str(tmp_path / out), *extra])
    return code, tmp_path / out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_pointer_zero_drive_gives_zero_fields(tmp_path):
    text = ASYMMETRIC_DEVICE + '[drive]\npoint = "g"\namplitude = { value = 0.0, unit = "MHz_over_2pi" }\n'
    code, out = run(tmp_path, "pointer", text)
    assert code == EXIT_OK
    rows = {r["quantity"]: r for r in read_rows(out / "pointer.csv")}
    for q in ("alpha_g", "alpha_e", "delta_alpha", "A", "Gamma_m", "d_r"):
        assert float(rows[q]["real"]) == 0.0 and float(rows[q]["imag"]) == 0.0
    assert (out / "pointer_manifest.json").exists()


def test_pointer_leveled_to_half_megahertz(tmp_path):
    text = ASYMMETRIC_DEVICE + '[drive]\npoint = "g"\ngamma_m = { value = 0.5, unit = "MHz_over_2pi" }\n'
    code, out = run(tmp_path, "pointer", text)
    assert code == EXIT_OK
    rows = {r["quantity"]: r for r in read_rows(out / "pointer.csv")}
    assert float(rows["Gamma_m"]["value_over_2pi_MHz"]) == pytest.approx(0.5, rel=1e-9)
    dev = asymmetric_device()
    drive = DriveSpec.for_device(dev, dev.canonical_drive_frequency("g"), float(rows["d_r"]["real"]))
    sol = solve_pointer_states(dev, drive)
    assert complex(float(rows["alpha_e"]["real"]), float(rows["alpha_e"]["imag"])) == pytest.approx(sol.alpha_e)
    assert closed_form_gamma_m(sol) == pytest.approx(mhz(0.5), rel=1e-9)


def test_malformed_unit_exits_2(tmp_path, capsys):
    text = ASYMMETRIC_DEVICE.replace('unit = "MHz_over_2pi" }\nkappa_g', 'unit = "Mhz" }\nkappa_g')
    code, _ = run(tmp_path, "pointer", text + '[drive]\npoint = "g"\ndelta_alpha = 1.0\n')
    assert code == EXIT_CONFIG
    assert "device.chi" in capsys.readouterr().err


def test_missing_section_exits_2(tmp_path):
    code, _ = run(tmp_path, "pointer", ASYMMETRIC_DEVICE)
    assert code == EXIT_CONFIG


def test_three_drive_spectra(tmp_path):
    text = SYMMETRIC_CONFIG + (
        '[drive]\npoint = "g"\ndelta_alpha = 1.0\n'
        '[spectrum]\noffsets = { start = -40.0, stop = 20.0, num = 1201, unit = "MHz_over_2pi" }\n'
    )
    code, out = run(tmp_path, "spectrum", text)
    assert code == EXIT_OK
    spectra = {p: read_rows(out / f"spectrum_{p}.csv") for p in ("g", "mid", "e")}
    for rows in spectra.values():
        pole = np.array([float(r["S_pole_us"]) for r in rows])
        fft = np.array([float(r["S_fft_us"]) for r in rows])
        assert np.linalg.norm(fft - pole) < 1e-3 * np.linalg.norm(pole)
    s = np.array([float(r["S_pole_us"]) for r in spectra["g"]])
    interior = (s[1:-1] > s[:-2]) & (s[1:-1] > s[2:])
    assert interior.sum() == 1


def test_zero_drive_spectrum_flagged_degenerate(tmp_path):
    text = SYMMETRIC_CONFIG + (
        '[drive]\npoint = "mid"\ndelta_alpha = 0.0\n'
        '[spectrum]\npoints = ["mid"]\noffsets = { values = [-1.0, 0.0, 1.0], unit = "MHz_over_2pi" }\n'
    )
    code, out = run(tmp_path, "spectrum", text)
    assert code == EXIT_OK
    rows = read_rows(out / "spectrum_mid.csv")
    assert all(r["degenerate"] == "1" for r in rows)
    assert all(float(r["S_pole_us"]) == 0.0 and r["S_fft_us"] == "" for r in rows)


def test_grid_outside_support_is_zero(tmp_path):
    text = SYMMETRIC_CONFIG + (
        '[drive]\npoint = "g"\ndelta_alpha = 1.0\n'
        '[spectrum]\npoints = ["g"]\noffsets = { values = [-5000.0, 5000.0], unit = "MHz_over_2pi" }\n'
    )
    code, out = run(tmp_path, "spectrum", text)
    assert code == EXIT_OK
    for r in read_rows(out / "spectrum_g.csv"):
        assert float(r["S_fft_us"]) == 0.0
        assert float(r["S_pole_us"]) < 1e-6


def test_single_point_sweep_gives_single_row(tmp_path):
    text = SYMMETRIC_CONFIG + '[sweep]\npoints = ["g"]\ndelta_alpha = [1.0]\n'
    code, out = run(tmp_path, "sweep", text)
    assert code == EXIT_OK
    (row,) = read_rows(out / "sweep.csv")
    assert float(row["Gamma_eg_per_us"]) > 0
    assert row["method"] == "closed-form" and row["errors"] == ""


def test_rate_command(tmp_path):
    text = SYMMETRIC_CONFIG + '[drive]\npoint = "e"\ndelta_alpha = 1.0\n'
    code, out = run(tmp_path, "rate", text, "--rate-method", "quadrature")
    assert code == EXIT_OK
    (row,) = read_rows(out / "rate.csv")
    assert row["method"] == "quadrature"
    assert float(row["err_est"]) < 1e-6 * float(row["Gamma_eg_per_us"])


@pytest.mark.slow
def test_sweep_with_oracle_comparison(tmp_path):
    text = SYMMETRIC_CONFIG + '[sweep]\npoints = ["g", "mid", "e"]\ndelta_alpha = [0.5, 1.0]\n'
    code, out = run(tmp_path, "sweep", text, "--method", "both", "--jobs", "3")
    assert code == EXIT_OK
    rows = read_rows(out / "sweep.csv")
    assert len(rows) == 6
    dev = np.array([float(r["rel_deviation"]) for r in rows])
    print("relative deviations:", np.round(dev, 4))
    assert np.all(dev <= 0.15)


def test_near_resonant_sweep_t1_grows_with_snr_rate(tmp_path):
    text = ASYMMETRIC_DEVICE + NEAR_RESONANT_BATH + (
        '[sweep]\npoints = ["e"]\nsnr_rate = { values = [20.0, 30.0, 40.0], unit = "MHz_rate" }\n'
    )
    code, out = run(tmp_path, "sweep", text)
    assert code == EXIT_OK
    t1 = [float(r["T1_us"]) for r in read_rows(out / "sweep.csv")]
    assert t1[0] < t1[1] < t1[2]


def test_sweep_with_every_point_failing_exits_4(tmp_path):
    text = SYMMETRIC_CONFIG + '[sweep]\npoints = ["g", "e"]\ndelta_alpha = [1.0]\n[oracle]\nn_fock = 2\n'
    code, out = run(tmp_path, "sweep", text, "--method", "oracle")
    assert code == EXIT_SWEEP
    assert all(r["errors"] for r in read_rows(out / "sweep.csv"))


def test_partial_sweep_failure_is_recorded(tmp_path):
    text = SYMMETRIC_CONFIG + '[sweep]\npoints = ["g", "e"]\namplitude = { values = [0.0, 1.0], unit = "MHz_over_2pi" }\n'
    bad = text.replace("[bath]\n", "[bath]\nbackground = { value = 0.0, unit = \"MHz_rate\" }\n")
    code, out = run(tmp_path, "sweep", bad)
    assert code == EXIT_OK
    assert len(read_rows(out / "sweep.csv")) == 4


def fit_tls(tmp_path, trace, *extra):
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    out = tmp_path / "fit"
    return main(["fit-tls", "--trace", str(path), "--tls-detuning", "-16.3",
                 "--out-dir", str(out), *extra]), out


def test_fit_tls_noisy_recovery(tmp_path):
    g, g2 = mhz(0.20), 0.85
    trace = synth_inversion_recovery(0.35, 0.6, g, g2, 0.15, np.linspace(0, 20, 201), 0.01, 5)
    code, out = fit_tls(tmp_path, trace)
    assert code == EXIT_OK
    report = json.loads((out / "fit_report.json").read_text())
    assert report["g_tls"] == pytest.approx(g, rel=0.05)
    assert report["gamma_2"] == pytest.approx(g2, rel=0.05)
    bath_cfg = ASYMMETRIC_DEVICE + (out / "bath.toml").read_text() + '[drive]\npoint = "e"\ndelta_alpha = 1.0\n'
    assert run(tmp_path, "rate", bath_cfg, out="rate")[0] == EXIT_OK


def test_fit_tls_noise_free(tmp_path):
    g, g2 = mhz(0.19), 1.35
    trace = synth_inversion_recovery(0.35, 0.6, g, g2, 0.11, np.linspace(0, 20, 201))
    code, out = fit_tls(tmp_path, trace)
    report = json.loads((out / "fit_report.json").read_text())
    assert report["g_tls"] == pytest.approx(g, rel=1e-6)
    assert report["gamma_2"] == pytest.approx(g2, rel=1e-6)


def test_fit_tls_empty_csv_exits_2(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert main(["fit-tls", "--trace", str(path), "--tls-detuning", "-6",
                 "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG


def test_fit_tls_too_short_exits_3(tmp_path):
    trace = synth_inversion_recovery(0.35, 0.6, 1.0, 1.0, 0.1, np.linspace(0, 20, 8))
    assert fit_tls(tmp_path, trace)[0] == EXIT_NUMERIC


def test_level_snr_rate(tmp_path):
    text = ASYMMETRIC_DEVICE + '[sweep]\npoints = ["g", "mid", "e"]\ndelta_alpha = [1.0]\n'
    code, out = run(tmp_path, "level", text, "--snr-rate", "1")
    assert code == EXIT_OK
    rows = read_rows(out / "level.csv")
    for r in rows:
        assert float(r["Gamma_m_target_per_us"]) == pytest.approx(1 / (4 * 0.1294), rel=1e-12)
        assert float(r["Gamma_m_target_per_us"]) == pytest.approx(1.932, abs=5e-4)
        assert float(r["Gamma_m_per_us"]) == pytest.approx(1 / (4 * 0.1294), rel=1e-9)
    g, mid, e = rows
    assert "vanishes" in e["note"]
    assert float(e["stark_drive_term_over_2pi_MHz"]) == pytest.approx(0.0, abs=1e-12)
    assert g["note"] == "" and float(g["stark_drive_term_over_2pi_MHz"]) != 0.0


def test_level_rejects_zero_rate(tmp_path):
    code, _ = run(tmp_path, "level", ASYMMETRIC_DEVICE, "--snr-rate", "0")
    assert code == EXIT_CONFIG


def test_oracle_command(tmp_path):
    text = SYMMETRIC_CONFIG + '[drive]\npoint = "g"\ndelta_alpha = 1.0\n'
    code, out = run(tmp_path, "oracle", text)
    assert code == EXIT_OK
    report = json.loads((out / "oracle_rate.json").read_text())
    assert report["rel_deviation"] < 0.15
    assert report["trace_residual"] < 1e-8
    assert len(read_rows(out / "oracle_trace.csv")) == 400


def test_override_validation(tmp_path):
    text = SYMMETRIC_CONFIG + '[sweep]\npoints = ["g"]\ndelta_alpha = [1.0]\n'
    assert run(tmp_path, "sweep", text, "--tol", "1e-2")[0] == EXIT_CONFIG
    assert run(tmp_path, "sweep", text, "--jobs", "0")[0] == EXIT_CONFIG


def test_sweep_is_deterministic_and_reproducible_from_manifest(tmp_path):
    cfg = "configs/near_resonant_sweep.toml"
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["sweep", "--config", cfg, "--out-dir", str(out)]) == EXIT_OK
    assert (outs[0] / "sweep.csv").read_bytes() == (outs[1] / "sweep.csv").read_bytes()
    manifest = json.loads((outs[0] / "sweep_manifest.json").read_text())
    (entry,) = manifest["outputs"]
    assert entry["sha256"] == file_digest(outs[0] / "sweep.csv")
    rerun = tmp_path / "c"
    assert main(["sweep", "--config", str(outs[0] / "sweep_manifest.json"),
                 "--out-dir", str(rerun), "--jobs", "4"]) == EXIT_OK
    assert json.loads((rerun / "sweep_manifest.json").read_text())["outputs"] == manifest["outputs"]
