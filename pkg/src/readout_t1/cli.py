"""Command-line interface.

Every command reads a TOML config (or a previous run manifest), writes
plot-ready CSV files into ``--out-dir`` and a ``<command>_manifest.json``
listing the normalized config and a sha256 digest per output.

Exit codes: 0 success, 2 config/validation error, 3 numerical or fit
failure, 4 every sweep point failed.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from .bath import BathSpectrum, bath_from_fit, fit_inversion_recovery
from .config import DRIVE_POINTS, METHODS, RATE_METHODS, DriveChoice, RunConfig, load_config
from .errors import ConfigError, FitError, LevelingError, ReadoutT1Error, SimulationError
from .io import (
    bath_document,
    build_manifest,
    read_trace_csv,
    write_csv,
    write_json,
    write_toml,
)
from .oracle import SimConfig, convergence_check, evolve, extract_rate, horizon_for_rate
from .pointer import (
    DriveSpec,
    amplitude_for_gamma_m,
    amplitude_for_separation,
    level_drive_amplitude,
    solve_pointer_states,
)
from .rate import (
    FIXED_AMPLITUDE,
    FIXED_GAMMA_M,
    FIXED_SEPARATION,
    decay_rate,
    lorentzian_model_rate,
    rate_point,
)
from .spectrum import evaluate, fft_grid, pole_decomposition, spectrum_via_fft, stark_shift
from .units import to_mhz

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SWEEP = 0, 2, 3, 4

SWEEP_COLUMNS = [
    "omega_d_over_2pi_MHz",
    "snr_rate_MHz_or_delta_alpha",
    "d_r_over_2pi_MHz",
    "Gamma_m_per_us",
    "Gamma_eg_per_us",
    "T1_us",
    "method",
    "err_est",
    "level_kind",
    "Gamma_oracle_per_us",
    "rel_deviation",
    "Gamma_lorentzian_model_per_us",
    "errors",
]


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _leveling(device, kind, value):
    """Map a config level to ``rate_point`` leveling and value."""
    if kind == "snr_rate":
        return FIXED_GAMMA_M, value / (4 * device.eta)
    if kind == "gamma_m":
        return FIXED_GAMMA_M, value
    if kind == "delta_alpha":
        return FIXED_SEPARATION, value
    return FIXED_AMPLITUDE, value


def resolve_amplitude(device, drive_frequency, kind, value):
    drive = DriveSpec.for_device(device, drive_frequency, 1.0)
    if kind == "amplitude":
        return value
    if kind == "delta_alpha":
        return amplitude_for_separation(device, drive, value)
    if kind == "gamma_m":
        return amplitude_for_gamma_m(device, drive, value)
    return level_drive_amplitude(device, drive_frequency, value)


def _drive_label(choice, i):
    return choice.point if choice.point is not None else f"d{i}"


def _oracle_config(device, drive, bath, settings, gamma_estimate):
    tls = bath.components if bath is not None else ()
    decay = bath.background if (bath is not None and settings.background_as_qubit_decay) else 0.0
    kappa_g = solve_pointer_states(device, drive).kappa_g
    t_sim = settings.t_sim
    if t_sim is None:
        t_sim = horizon_for_rate(gamma_estimate, kappa_g, settings.target_loss)
    return SimConfig(
        device=device, drive=drive, t_sim=t_sim, tls=tls, n_fock=settings.n_fock,
        fock_margin=settings.fock_margin, step_safety=settings.step_safety,
        n_samples=settings.n_samples, qubit_decay=decay,
    )


def _sweep_point(args):
    """One sweep grid point; module-level so it can run in a worker process."""
    index, device, bath, freq, kind, value, numerics, oracle_settings = args
    leveling, level_value = _leveling(device, kind, value)
    pt = rate_point(device, bath, freq, leveling, level_value, numerics.rate_method,
                    numerics.tol, numerics.truncation, index=index)
    row = {
        "omega_d_over_2pi_MHz": to_mhz(freq),
        "snr_rate_MHz_or_delta_alpha": value,
        "level_kind": kind,
        "d_r_over_2pi_MHz": None if pt.amplitude is None else to_mhz(pt.amplitude),
        "Gamma_m_per_us": pt.gamma_m,
        "errors": pt.error,
    }
    if not pt.ok:
        return row, False
    drive = DriveSpec.for_device(device, freq, pt.amplitude)
    row["Gamma_lorentzian_model_per_us"] = lorentzian_model_rate(device, drive, bath).gamma
    gamma = pt.prediction.gamma
    if numerics.method in ("analytic", "both"):
        row.update({
            "Gamma_eg_per_us": gamma,
            "T1_us": pt.prediction.T1,
            "method": pt.prediction.method,
            "err_est": pt.prediction.error,
        })
    if numerics.method in ("oracle", "both"):
        try:
            cfg = _oracle_config(device, drive, bath, oracle_settings, gamma)
            fit = extract_rate(evolve(cfg, seed=numerics.seed))
        except (ReadoutT1Error, ValueError) as exc:
            row["errors"] = f"oracle: {type(exc).__name__}: {exc}"
            return row, numerics.method == "both"
        row["Gamma_oracle_per_us"] = fit.gamma
        if numerics.method == "oracle":
            row.update({
                "Gamma_eg_per_us": fit.gamma,
                "T1_us": 1 / fit.gamma if fit.gamma > 0 else math.inf,
                "method": "oracle",
                "err_est": fit.residual_norm,
            })
        else:
            row["rel_deviation"] = abs(fit.gamma - gamma) / gamma
    return row, True


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_pointer(cfg, out_dir, args):
    cfg.require("device", "drive")
    dev = cfg.device
    freq = cfg.drive.resolve_frequency(dev)
    amp = resolve_amplitude(dev, freq, cfg.drive.level_kind, cfg.drive.level_value)
    sol = solve_pointer_states(dev, DriveSpec.for_device(dev, freq, amp))
    rows = []
    for name, z in (("alpha_g", sol.alpha_g), ("alpha_e", sol.alpha_e),
                    ("delta_alpha", sol.delta_alpha), ("A", sol.A)):
        rows.append({"quantity": name, "real": z.real, "imag": z.imag, "unit": "1"})
    for name, v, unit in (("d_r", amp, "rad/us"), ("omega_d", freq, "rad/us"),
                          ("Gamma_m", sol.gamma_m, "1/us"), ("B", sol.shift, "rad/us")):
        rows.append({"quantity": name, "real": v, "imag": 0.0, "unit": unit,
                     "value_over_2pi_MHz": to_mhz(v)})
    cols = ["quantity", "real", "imag", "unit", "value_over_2pi_MHz"]
    for r in rows:
        extra = f"  ({r['value_over_2pi_MHz']:.6g} MHz/2pi)" if "value_over_2pi_MHz" in r else ""
        print(f"{r['quantity']:>12s} = {r['real']:.10g}{r['imag']:+.10g}j [{r['unit']}]{extra}")
    return [("pointer.csv", write_csv(out_dir / "pointer.csv", cols, rows))]


def _fine_fft(sol, omega_q, eps, max_n=1 << 22):
    """FFT spectrum with bins at most Gamma_m/16 apart, so that linear
    interpolation onto the requested grid stays well below 1e-3."""
    T, N = fft_grid(sol, omega_q, eps)
    bins = 2 * math.pi / T
    k = 1 << max(0, math.ceil(math.log2(16 * bins / sol.gamma_m)))
    k = min(k, max(1, max_n // N))
    return spectrum_via_fft(sol, omega_q, T=k * T, N=k * N, eps=eps)


def cmd_spectrum(cfg, out_dir, args):
    cfg.require("device", "drive", "spectrum")
    dev = cfg.device
    offsets = np.array(cfg.spectrum.offsets)
    omega = dev.qubit_frequency + offsets
    outputs = []
    for i, choice in enumerate(cfg.spectrum.drives):
        freq = choice.resolve_frequency(dev)
        amp = resolve_amplitude(dev, freq, cfg.drive.level_kind, cfg.drive.level_value)
        sol = solve_pointer_states(dev, DriveSpec.for_device(dev, freq, amp))
        spec = pole_decomposition(sol, dev.qubit_frequency, cfg.numerics.truncation)
        if spec.degenerate:
            pole = np.zeros_like(omega)
            fft = np.full_like(omega, np.nan)
        else:
            pole = np.asarray(evaluate(spec, omega))
            sampled = _fine_fft(sol, dev.qubit_frequency, cfg.numerics.truncation)
            fft = np.interp(omega, sampled.omega, sampled.values, left=0.0, right=0.0)
        rows = [
            {"omega_over_2pi_MHz": to_mhz(w), "offset_over_2pi_MHz": to_mhz(o),
             "S_pole_us": p, "S_fft_us": None if np.isnan(f) else f,
             "degenerate": spec.degenerate}
            for w, o, p, f in zip(omega, offsets, pole, fft)
        ]
        name = f"spectrum_{_drive_label(choice, i)}.csv"
        cols = ["omega_over_2pi_MHz", "offset_over_2pi_MHz", "S_pole_us", "S_fft_us", "degenerate"]
        outputs.append((name, write_csv(out_dir / name, cols, rows)))
        note = " (zero width: delta line at the qubit frequency)" if spec.degenerate else ""
        print(f"{name}: {len(spec.weights)} poles, Gamma_m={sol.gamma_m:.6g}/us{note}")
    return outputs


def _sweep_items(cfg, drives, kind, values):
    items = []
    for choice in drives:
        freq = choice.resolve_frequency(cfg.device)
        for v in values:
            items.append((len(items), cfg.device, cfg.bath, freq, kind, v, cfg.numerics, cfg.oracle))
    return items


def _run_sweep(cfg, out_dir, name, items, jobs):
    results = _map(_sweep_point, items, jobs)
    rows = [r for r, _ in results]
    n_ok = sum(ok for _, ok in results)
    digest = write_csv(out_dir / name, SWEEP_COLUMNS, rows)
    for r in rows:
        if r.get("errors"):
            print(f"warning: {r['omega_d_over_2pi_MHz']:.6g} MHz, "
                  f"{r['level_kind']}={r['snr_rate_MHz_or_delta_alpha']}: {r['errors']}",
                  file=sys.stderr)
    return [(name, digest)], n_ok, len(rows)


def cmd_rate(cfg, out_dir, args):
    cfg.require("device", "drive", "bath")
    items = _sweep_items(cfg, [cfg.drive], cfg.drive.level_kind, [cfg.drive.level_value])
    outputs, n_ok, _ = _run_sweep(cfg, out_dir, "rate.csv", items, 1)
    if not n_ok:
        raise CommandError(EXIT_NUMERIC, "rate computation failed")
    return outputs


def cmd_sweep(cfg, out_dir, args):
    cfg.require("device", "bath", "sweep")
    sw = cfg.sweep
    items = _sweep_items(cfg, sw.drives, sw.level_kind, sw.level_values)
    outputs, n_ok, n = _run_sweep(cfg, out_dir, "sweep.csv", items, args.jobs)
    print(f"sweep.csv: {n_ok}/{n} points succeeded")
    if n_ok == 0:
        raise CommandError(EXIT_SWEEP, "every sweep point failed")
    return outputs


def cmd_oracle(cfg, out_dir, args):
    cfg.require("device", "drive")
    dev = cfg.device
    bath = cfg.bath if cfg.bath is not None else BathSpectrum()
    freq = cfg.drive.resolve_frequency(dev)
    amp = resolve_amplitude(dev, freq, cfg.drive.level_kind, cfg.drive.level_value)
    drive = DriveSpec.for_device(dev, freq, amp)
    sol = solve_pointer_states(dev, drive)
    analytic = decay_rate(sol, dev.qubit_frequency, bath, cfg.numerics.rate_method,
                          cfg.numerics.tol, cfg.numerics.truncation)
    settings = cfg.oracle
    if settings.t_sim is None and analytic.gamma <= 0:
        raise CommandError(EXIT_CONFIG, "oracle.t_sim is required when the predicted rate is zero")
    sim = _oracle_config(dev, drive, bath, settings, analytic.gamma)
    trace = evolve(sim, seed=cfg.numerics.seed)
    rows = [
        {"t_us": t, "P_e": p, "n_photon": n, "top_fock_occ": f}
        for t, p, n, f in zip(trace.t, trace.P_e, trace.n_photon, trace.top_fock_occ)
    ]
    outputs = [("oracle_trace.csv",
                write_csv(out_dir / "oracle_trace.csv", ["t_us", "P_e", "n_photon", "top_fock_occ"], rows))]
    fit = extract_rate(trace)
    report = {
        "Gamma_oracle_per_us": fit.gamma,
        "Gamma_analytic_per_us": analytic.gamma,
        "rel_deviation": abs(fit.gamma - analytic.gamma) / analytic.gamma if analytic.gamma else None,
        "fit_model": fit.model,
        "fit_offset": fit.offset,
        "fit_window_start_us": fit.window_start,
        "t_sim_us": sim.t_sim,
        "n_fock": trace.n_fock,
        "dt_us": trace.dt,
        "trace_residual": trace.trace_residual,
        "hermiticity_residual": trace.hermiticity_residual,
        "min_eigenvalue": trace.min_eigenvalue,
        "max_top_fock_occupation": float(trace.top_fock_occ.max()),
    }
    if settings.certify or args.certify:
        conv = convergence_check(sim)
        report["convergence"] = {
            "step_change": conv.step_change, "fock_change": conv.fock_change,
            "converged": conv.converged,
        }
    outputs.append(("oracle_rate.json", write_json(out_dir / "oracle_rate.json", report)))
    print(f"Gamma oracle {fit.gamma:.6g}/us, analytic {analytic.gamma:.6g}/us")
    return outputs


def cmd_fit_tls(cfg, out_dir, args):
    if args.trace is None:
        raise ConfigError([("--trace", "a trace CSV is required")])
    trace = read_trace_csv(args.trace)
    detuning = cfg.fit.tls_detuning
    if args.tls_detuning is not None:
        detuning = 2 * math.pi * args.tls_detuning
    if detuning is None:
        raise ConfigError([("fit.tls_detuning", "TLS detuning is required (config or --tls-detuning)")])
    fit = fit_inversion_recovery(trace)
    background = cfg.fit.background if cfg.fit.background is not None else fit.gamma_1
    qubit = cfg.device.qubit_frequency if cfg.device is not None else 0.0
    try:
        bath = bath_from_fit(fit, qubit + detuning, background)
    except ValueError as exc:
        raise FitError(str(exc)) from exc
    report = fit.as_dict()
    report["background_per_us"] = background
    report["tls_detuning_over_2pi_MHz"] = to_mhz(detuning)
    outputs = [
        ("fit_report.json", write_json(out_dir / "fit_report.json", report)),
        ("bath.toml", write_toml(out_dir / "bath.toml", bath_document(bath, qubit))),
    ]
    print(f"g_tls/2pi = {to_mhz(fit.g_tls):.6g} MHz, gamma_2 = {fit.gamma_2:.6g}/us, "
          f"gamma_1 = {fit.gamma_1:.6g}/us" + ("" if fit.identifiable else "  [unidentifiable]"))
    return outputs


def cmd_level(cfg, out_dir, args):
    cfg.require("device")
    dev = cfg.device
    target = cfg.level_snr_rate
    if args.snr_rate is not None:
        target = args.snr_rate
    if target is None and cfg.drive is not None and cfg.drive.level_kind == "snr_rate":
        target = cfg.drive.level_value
    if target is None:
        raise ConfigError([("level.snr_rate", "target SNR rate is required (config or --snr-rate)")])
    if not target > 0:
        raise ConfigError([("level.snr_rate", f"target SNR rate must be positive, got {target}")])
    if cfg.sweep is not None:
        drives = cfg.sweep.drives
    elif cfg.drive is not None:
        drives = (cfg.drive,)
    else:
        drives = tuple(DriveChoice(point=p) for p in DRIVE_POINTS)
    rows = []
    n_ok = 0
    for choice in drives:
        freq = choice.resolve_frequency(dev)
        row = {"omega_d_over_2pi_MHz": to_mhz(freq), "snr_rate_MHz": target,
               "Gamma_m_target_per_us": target / (4 * dev.eta)}
        try:
            amp = level_drive_amplitude(dev, freq, target)
        except LevelingError as exc:
            row["errors"] = str(exc)
            rows.append(row)
            continue
        sol = solve_pointer_states(dev, DriveSpec.for_device(dev, freq, amp))
        d = sol.drive
        photon_term = abs(sol.alpha_e) ** 2 * dev.chi
        drive_term = 2 * d.amplitude * (d.u - d.v) * sol.alpha_e.real
        note = ""
        if abs(drive_term) <= 1e-12 * max(abs(photon_term), 1e-300):
            note = "drive term vanishes (Re alpha_e = 0)" if d.u != d.v else "drive term absent (delta_p = 0)"
        row.update({
            "d_r_over_2pi_MHz": to_mhz(amp),
            "Gamma_m_per_us": sol.gamma_m,
            "stark_shift_over_2pi_MHz": to_mhz(stark_shift(sol)),
            "stark_photon_term_over_2pi_MHz": to_mhz(photon_term),
            "stark_drive_term_over_2pi_MHz": to_mhz(drive_term),
            "note": note,
        })
        rows.append(row)
        n_ok += 1
    cols = ["omega_d_over_2pi_MHz", "snr_rate_MHz", "Gamma_m_target_per_us", "d_r_over_2pi_MHz",
            "Gamma_m_per_us", "stark_shift_over_2pi_MHz", "stark_photon_term_over_2pi_MHz",
            "stark_drive_term_over_2pi_MHz", "note", "errors"]
    digest = write_csv(out_dir / "level.csv", cols, rows)
    for r in rows:
        if "d_r_over_2pi_MHz" in r:
            print(f"omega_d/2pi={r['omega_d_over_2pi_MHz']:.6g} MHz: d_r/2pi={r['d_r_over_2pi_MHz']:.6g} MHz, "
                  f"Stark/2pi={r['stark_shift_over_2pi_MHz']:.6g} MHz {r['note']}")
    if n_ok == 0:
        raise CommandError(EXIT_NUMERIC, "leveling failed at every drive frequency")
    return [("level.csv", digest)]


COMMANDS = {
    "pointer": (cmd_pointer, "steady-state pointer fields, Gamma_m, B and A"),
    "spectrum": (cmd_spectrum, "qubit emission spectra (pole sum and FFT)"),
    "rate": (cmd_rate, "decay rate at one drive setting"),
    "sweep": (cmd_sweep, "decay-rate map over drive frequency and level"),
    "oracle": (cmd_oracle, "master-equation simulation and rate extraction"),
    "fit-tls": (cmd_fit_tls, "fit an inversion-recovery trace and export a bath"),
    "level": (cmd_level, "drive amplitude for a target SNR rate, with Stark shifts"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config or JSON run manifest")
    common.add_argument("--out-dir", type=Path, default=Path("readout_t1_out"))
    common.add_argument("--seed", type=int, help="seed for every random choice (overrides config)")
    common.add_argument("--method", choices=METHODS, help="analytic, oracle or both")
    common.add_argument("--rate-method", choices=RATE_METHODS, help="analytic overlap evaluation")
    common.add_argument("--tol", type=float, help="relative quadrature tolerance")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")

    parser = argparse.ArgumentParser(prog="readout-t1", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "fit-tls":
            p.add_argument("--trace", type=Path, help="CSV with t_us, P_e columns")
            p.add_argument("--tls-detuning", type=float, help="TLS detuning, MHz/2pi")
        if name == "level":
            p.add_argument("--snr-rate", type=float, help="target SNR rate in MHz (1/us)")
        if name == "oracle":
            p.add_argument("--certify", action="store_true",
                           help="repeat with half step and five more Fock levels")
    return parser


def _apply_overrides(cfg, args):
    num = cfg.numerics
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.method is not None:
        changes["method"] = args.method
    if args.rate_method is not None:
        changes["rate_method"] = args.rate_method
    if args.tol is not None:
        if not 1e-12 <= args.tol <= 1e-4:
            raise ConfigError([("--tol", "must lie in [1e-12, 1e-4]")])
        changes["tol"] = args.tol
    if args.jobs < 1:
        raise ConfigError([("--jobs", "must be >= 1")])
    cfg.numerics = replace(num, **changes)
    cfg.normalized = dict(cfg.normalized)
    norm_num = dict(cfg.normalized.get("numerics", {}))
    norm_num.update(changes)
    if norm_num:
        cfg.normalized["numerics"] = norm_num
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    fn, _ = COMMANDS[args.command]
    start = time.perf_counter()
    try:
        cfg = load_config(args.config) if args.config is not None else RunConfig()
        cfg = _apply_overrides(cfg, args)
        out_dir = args.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = fn(cfg, out_dir, args)
    except ConfigError as exc:
        for field_, msg in exc.problems:
            print(f"config error: {field_ + ': ' if field_ else ''}{msg}", file=sys.stderr)
        return EXIT_CONFIG
    except LevelingError as exc:
        print(f"leveling error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FitError, SimulationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        for k, v in getattr(exc, "diagnostics", {}).items():
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_NUMERIC
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    elapsed = time.perf_counter() - start
    settings = {
        "truncation": cfg.numerics.truncation,
        "tol": cfg.numerics.tol,
        "method": cfg.numerics.method,
        "rate_method": cfg.numerics.rate_method,
        "seed": cfg.numerics.seed,
        "jobs": args.jobs,
    }
    manifest = build_manifest(args.command, cfg.normalized, settings, outputs, {args.command: elapsed})
    write_json(out_dir / f"{args.command.replace('-', '_')}_manifest.json", manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
