"""Run configuration: TOML ingestion, validation and normalized export.

Dimensionful fields are inline tables ``{value = ..., unit = "..."}`` (or
``{values = [...], unit = "..."}`` for grids) with ``unit`` one of
``MHz_over_2pi``, ``MHz_rate`` or ``us``.  Untagged frequencies and rates
are rejected.  The normalized form stores every tagged value in internal
units under ``MHz_rate`` (no 2 pi factor) or ``us``, so re-reading it
reproduces the same floats bit for bit.
"""

from dataclasses import dataclass, field
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .bath import BathSpectrum, TLSSpec
from .errors import ConfigError
from .pointer import DeviceParams
from .units import MHZ_OVER_2PI, MHZ_RATE, US, UNIT_TAGS, to_internal

FREQ_UNITS = (MHZ_OVER_2PI, MHZ_RATE)
TIME_UNITS = (US,)
DRIVE_POINTS = ("g", "mid", "e")
LEVEL_KINDS = ("amplitude", "delta_alpha", "gamma_m", "snr_rate")
METHODS = ("analytic", "oracle", "both")
RATE_METHODS = ("closed-form", "quadrature")


class _Reader:
    """Collects every problem before raising, so users see them all at once."""

    def __init__(self):
        self.problems = []

    def fail(self, path, msg):
        self.problems.append((path, msg))

    def tagged(self, table, key, path, units=FREQ_UNITS, required=False, grid=False):
        """Read a unit-tagged scalar (or grid) and return ``(internal, normalized)``."""
        where = f"{path}.{key}"
        if key not in table:
            if required:
                self.fail(where, "missing required field")
            return None, None
        raw = table[key]
        if not isinstance(raw, dict):
            self.fail(where, f"untagged value {raw!r}; write {{value = ..., unit = \"{units[0]}\"}}")
            return None, None
        unit = raw.get("unit")
        if unit is None:
            self.fail(where, "missing unit tag")
            return None, None
        if unit not in UNIT_TAGS:
            self.fail(where, f"unknown unit tag {unit!r}; expected one of {', '.join(UNIT_TAGS)}")
            return None, None
        if unit not in units:
            self.fail(where, f"unit {unit!r} not allowed here; expected one of {', '.join(units)}")
            return None, None
        norm_unit = US if unit == US else MHZ_RATE
        if grid:
            values = self._grid(raw, where)
            if values is None:
                return None, None
            out = [float(to_internal(v, unit)) for v in values]
            return out, {"values": out, "unit": norm_unit}
        value = raw.get("value")
        extra = set(raw) - {"value", "unit"}
        if extra:
            self.fail(where, f"unexpected keys {sorted(extra)}")
        if not _is_number(value):
            self.fail(where, f"value must be a finite number, got {value!r}")
            return None, None
        out = float(to_internal(value, unit))
        return out, {"value": out, "unit": norm_unit}

    def _grid(self, raw, where):
        if "values" in raw:
            vals = raw["values"]
            if not isinstance(vals, list) or not vals or not all(_is_number(v) for v in vals):
                self.fail(where, "values must be a non-empty list of finite numbers")
                return None
            return [float(v) for v in vals]
        keys = {"start", "stop", "num"}
        if keys <= set(raw):
            if not (_is_number(raw["start"]) and _is_number(raw["stop"])):
                self.fail(where, "start/stop must be finite numbers")
                return None
            if not isinstance(raw["num"], int) or raw["num"] < 1:
                self.fail(where, "num must be a positive integer")
                return None
            return np.linspace(raw["start"], raw["stop"], raw["num"]).tolist()
        self.fail(where, "grid needs 'values' or 'start', 'stop', 'num'")
        return None

    def plain(self, table, key, path, kind=float, default=None, check=None, msg=""):
        where = f"{path}.{key}"
        if key not in table:
            return default
        value = table[key]
        if isinstance(value, dict):
            self.fail(where, "dimensionless field must be a plain value, not a unit table")
            return default
        if kind is float:
            ok = _is_number(value)
            value = float(value) if ok else value
        elif kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif kind is bool:
            ok = isinstance(value, bool)
        else:
            ok = isinstance(value, kind)
        if not ok:
            self.fail(where, f"expected {kind.__name__}, got {value!r}")
            return default
        if check is not None and not check(value):
            self.fail(where, msg or f"invalid value {value!r}")
            return default
        return value


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


@dataclass(frozen=True)
class DriveChoice:
    """Drive frequency (absolute, rad/us) or a canonical point, plus its level."""

    frequency: Optional[float] = None
    point: Optional[str] = None
    level_kind: Optional[str] = None
    level_value: Optional[float] = None

    def resolve_frequency(self, device):
        if self.point is not None:
            return device.canonical_drive_frequency(self.point)
        return self.frequency


@dataclass(frozen=True)
class SweepGrid:
    drives: tuple  # DriveChoice without level
    level_kind: str
    level_values: tuple


@dataclass(frozen=True)
class SpectrumGrid:
    offsets: tuple  # omega - omega_q, rad/us
    drives: tuple


@dataclass(frozen=True)
class OracleSettings:
    t_sim: Optional[float] = None
    n_fock: Optional[int] = None
    fock_margin: int = 2
    step_safety: float = 0.35
    n_samples: int = 400
    target_loss: float = 0.25
    background_as_qubit_decay: bool = True
    certify: bool = False


@dataclass(frozen=True)
class Numerics:
    truncation: float = 1e-10
    tol: float = 1e-8
    method: str = "analytic"
    rate_method: str = "closed-form"
    seed: int = 0


@dataclass(frozen=True)
class FitSettings:
    tls_detuning: Optional[float] = None
    background: Optional[float] = None


@dataclass
class RunConfig:
    device: Optional[DeviceParams] = None
    drive: Optional[DriveChoice] = None
    bath: Optional[BathSpectrum] = None
    sweep: Optional[SweepGrid] = None
    spectrum: Optional[SpectrumGrid] = None
    oracle: OracleSettings = field(default_factory=OracleSettings)
    numerics: Numerics = field(default_factory=Numerics)
    fit: FitSettings = field(default_factory=FitSettings)
    level_snr_rate: Optional[float] = None
    normalized: dict = field(default_factory=dict)

    def require(self, *sections):
        missing = [s for s in sections if getattr(self, s) is None]
        if missing:
            raise ConfigError([(s, "section required for this command") for s in missing])


def _section(doc, name, reader):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        reader.fail(name, "must be a table")
        return {}
    return sec


def _unknown_keys(table, allowed, path, reader):
    for key in sorted(set(table) - set(allowed)):
        reader.fail(f"{path}.{key}", "unknown field")


def _read_device(doc, r, norm):
    sec = _section(doc, "device", r)
    if not sec:
        return None
    _unknown_keys(
        sec,
        {"qubit_frequency", "resonator_frequency", "chi", "kappa", "delta_p", "kappa_g",
         "kappa_e", "eta", "purcell_frequency", "purcell_coupling"},
        "device", r,
    )
    out = {}
    vals = {}
    n_before = len(r.problems)
    for key in ("qubit_frequency", "resonator_frequency", "chi"):
        vals[key], out[key] = r.tagged(sec, key, "device", required=True)
    for key in ("purcell_frequency", "purcell_coupling"):
        vals[key], out[key] = r.tagged(sec, key, "device")
    has_kappa = "kappa" in sec
    has_split = "kappa_g" in sec or "kappa_e" in sec
    if has_kappa and has_split:
        r.fail("device", "give either kappa (+ delta_p) or kappa_g and kappa_e, not both")
    elif has_split:
        for key in ("kappa_g", "kappa_e"):
            vals[key], out[key] = r.tagged(sec, key, "device", required=True)
        if "delta_p" in sec:
            r.fail("device.delta_p", "delta_p is implied by kappa_g and kappa_e")
    else:
        vals["kappa"], out["kappa"] = r.tagged(sec, "kappa", "device", required=True)
        vals["delta_p"] = r.plain(sec, "delta_p", "device", default=0.0)
        out["delta_p"] = vals["delta_p"]
    vals["eta"] = r.plain(sec, "eta", "device", default=1.0,
                          check=lambda v: 0 < v <= 1, msg="eta must lie in (0, 1]")
    out["eta"] = vals["eta"]
    norm["device"] = {k: v for k, v in out.items() if v is not None}
    if len(r.problems) > n_before:
        return None
    extra = {k: vals[k] for k in ("purcell_frequency", "purcell_coupling") if vals.get(k) is not None}
    try:
        if has_split:
            return DeviceParams.from_linewidths(
                vals["qubit_frequency"], vals["resonator_frequency"], vals["chi"],
                vals["kappa_g"], vals["kappa_e"], eta=vals["eta"], **extra,
            )
        return DeviceParams(
            vals["qubit_frequency"], vals["resonator_frequency"], vals["chi"],
            vals["kappa"], vals["delta_p"], vals["eta"], **extra,
        )
    except ValueError as exc:
        r.fail("device", str(exc))
        return None


def _read_drive_location(sec, path, r, out):
    keys = [k for k in ("point", "frequency", "detuning") if k in sec]
    if len(keys) > 1:
        r.fail(path, "give only one of point, frequency, detuning")
        return None
    if not keys:
        r.fail(path, "missing drive location (point, frequency or detuning)")
        return None
    key = keys[0]
    if key == "point":
        point = r.plain(sec, "point", path, kind=str, check=lambda v: v in DRIVE_POINTS,
                        msg=f"point must be one of {DRIVE_POINTS}")
        out["point"] = point
        return ("point", point)
    value, out[key] = r.tagged(sec, key, path, required=True)
    return (key, value)


def _read_level(sec, path, r, out, required=True):
    keys = [k for k in LEVEL_KINDS if k in sec]
    if len(keys) > 1:
        r.fail(path, f"give only one of {', '.join(LEVEL_KINDS)}")
        return None, None
    if not keys:
        if required:
            r.fail(path, f"missing drive level ({', '.join(LEVEL_KINDS)})")
        return None, None
    kind = keys[0]
    if kind == "delta_alpha":
        v = r.plain(sec, kind, path, check=lambda x: x >= 0, msg="delta_alpha must be >= 0")
        out[kind] = v
    else:
        v, out[kind] = r.tagged(sec, kind, path, required=True)
        if v is not None and v < 0:
            r.fail(f"{path}.{kind}", "must be >= 0")
    return kind, v


def _location_to_choice(loc, device):
    if loc is None:
        return None
    kind, value = loc
    if kind == "point":
        return DriveChoice(point=value)
    if kind == "frequency":
        return DriveChoice(frequency=value)
    if device is None:
        return None
    return DriveChoice(frequency=device.resonator_frequency + value)


def _read_drive(doc, r, norm, device):
    sec = _section(doc, "drive", r)
    if not sec:
        return None
    _unknown_keys(sec, {"point", "frequency", "detuning", *LEVEL_KINDS}, "drive", r)
    out = {}
    loc = _read_drive_location(sec, "drive", r, out)
    kind, value = _read_level(sec, "drive", r, out)
    norm["drive"] = out
    if loc is not None and loc[0] == "detuning" and device is None:
        r.fail("drive.detuning", "detuning needs a [device] section")
    choice = _location_to_choice(loc, device)
    if choice is None or kind is None:
        return None
    return DriveChoice(choice.frequency, choice.point, kind, value)


def _read_bath(doc, r, norm, device):
    sec = _section(doc, "bath", r)
    if not sec:
        return None
    _unknown_keys(sec, {"background", "tls"}, "bath", r)
    out = {}
    background, bg_norm = r.tagged(sec, "background", "bath")
    if bg_norm is not None:
        out["background"] = bg_norm
    if background is not None and background < 0:
        r.fail("bath.background", "must be >= 0")
    comps = []
    tls_list = sec.get("tls", [])
    if not isinstance(tls_list, list):
        r.fail("bath.tls", "must be an array of tables")
        tls_list = []
    out_tls = []
    for i, t in enumerate(tls_list):
        path = f"bath.tls[{i}]"
        if not isinstance(t, dict):
            r.fail(path, "must be a table")
            continue
        _unknown_keys(t, {"frequency", "detuning", "coupling", "gamma_2", "gamma_1", "gamma_phi"}, path, r)
        o = {}
        n_before = len(r.problems)
        if ("frequency" in t) == ("detuning" in t):
            r.fail(path, "give exactly one of frequency, detuning")
        freq = det = None
        if "frequency" in t:
            freq, o["frequency"] = r.tagged(t, "frequency", path)
        if "detuning" in t:
            det, o["detuning"] = r.tagged(t, "detuning", path)
        g, o["coupling"] = r.tagged(t, "coupling", path, required=True)
        g2, o["gamma_2"] = r.tagged(t, "gamma_2", path, required=True)
        g1 = gp = None
        if "gamma_1" in t or "gamma_phi" in t:
            g1, o["gamma_1"] = r.tagged(t, "gamma_1", path, required=True)
            gp, o["gamma_phi"] = r.tagged(t, "gamma_phi", path, required=True)
        out_tls.append({k: v for k, v in o.items() if v is not None})
        if len(r.problems) > n_before:
            continue
        if det is not None:
            if device is None:
                r.fail(f"{path}.detuning", "detuning needs a [device] section")
                continue
            freq = device.qubit_frequency + det
        try:
            comps.append(TLSSpec(freq, g, g2, g1, gp))
        except ValueError as exc:
            r.fail(path, str(exc))
    if out_tls:
        out["tls"] = out_tls
    norm["bath"] = out
    try:
        return BathSpectrum(tuple(comps), background or 0.0)
    except ValueError as exc:
        r.fail("bath", str(exc))
        return None


def _read_drive_grid(sec, path, r, out, device):
    keys = [k for k in ("points", "frequencies", "detunings") if k in sec]
    if len(keys) != 1:
        r.fail(path, "give exactly one of points, frequencies, detunings")
        return None
    key = keys[0]
    if key == "points":
        pts = sec["points"]
        if not isinstance(pts, list) or not pts or any(p not in DRIVE_POINTS for p in pts):
            r.fail(f"{path}.points", f"must be a non-empty list drawn from {DRIVE_POINTS}")
            return None
        out["points"] = list(pts)
        return tuple(DriveChoice(point=p) for p in pts)
    values, out[key] = r.tagged(sec, key, path, grid=True)
    if values is None:
        return None
    if key == "frequencies":
        return tuple(DriveChoice(frequency=v) for v in values)
    if device is None:
        r.fail(f"{path}.detunings", "detunings need a [device] section")
        return None
    return tuple(DriveChoice(frequency=device.resonator_frequency + v) for v in values)


def _read_sweep(doc, r, norm, device):
    sec = _section(doc, "sweep", r)
    if not sec:
        return None
    _unknown_keys(sec, {"points", "frequencies", "detunings", *LEVEL_KINDS}, "sweep", r)
    out = {}
    drives = _read_drive_grid(sec, "sweep", r, out, device)
    kinds = [k for k in LEVEL_KINDS if k in sec]
    if len(kinds) != 1:
        r.fail("sweep", f"give exactly one level grid among {', '.join(LEVEL_KINDS)}")
        norm["sweep"] = out
        return None
    kind = kinds[0]
    if kind == "delta_alpha":
        vals = sec[kind]
        if isinstance(vals, dict):
            r.fail("sweep.delta_alpha", "dimensionless grid must be a plain list")
            vals = None
        elif not isinstance(vals, list) or not vals or not all(_is_number(v) and v >= 0 for v in vals):
            r.fail("sweep.delta_alpha", "must be a non-empty list of numbers >= 0")
            vals = None
        else:
            vals = [float(v) for v in vals]
            out[kind] = vals
    else:
        vals, out[kind] = r.tagged(sec, kind, "sweep", grid=True)
        if vals is not None and any(v < 0 for v in vals):
            r.fail(f"sweep.{kind}", "values must be >= 0")
    norm["sweep"] = out
    if drives is None or vals is None:
        return None
    return SweepGrid(drives, kind, tuple(vals))


def _read_spectrum(doc, r, norm, device):
    sec = _section(doc, "spectrum", r)
    if not sec:
        return None
    _unknown_keys(sec, {"offsets", "points", "frequencies", "detunings"}, "spectrum", r)
    out = {}
    offsets, out["offsets"] = r.tagged(sec, "offsets", "spectrum", grid=True, required=True)
    drives = None
    if any(k in sec for k in ("points", "frequencies", "detunings")):
        drives = _read_drive_grid(sec, "spectrum", r, out, device)
    else:
        drives = tuple(DriveChoice(point=p) for p in DRIVE_POINTS)
    norm["spectrum"] = {k: v for k, v in out.items() if v is not None}
    if offsets is None or drives is None:
        return None
    return SpectrumGrid(tuple(offsets), drives)


def _read_oracle(doc, r, norm):
    sec = _section(doc, "oracle", r)
    _unknown_keys(
        sec,
        {"t_sim", "n_fock", "fock_margin", "step_safety", "n_samples", "target_loss",
         "background_as_qubit_decay", "certify"},
        "oracle", r,
    )
    out = {}
    t_sim, t_norm = r.tagged(sec, "t_sim", "oracle", units=TIME_UNITS)
    if t_norm is not None:
        out["t_sim"] = t_norm
    d = OracleSettings()
    kw = {
        "t_sim": t_sim,
        "n_fock": r.plain(sec, "n_fock", "oracle", kind=int, check=lambda v: v >= 2),
        "fock_margin": r.plain(sec, "fock_margin", "oracle", kind=int, default=d.fock_margin,
                               check=lambda v: v >= 0),
        "step_safety": r.plain(sec, "step_safety", "oracle", default=d.step_safety,
                               check=lambda v: 0 < v <= 1),
        "n_samples": r.plain(sec, "n_samples", "oracle", kind=int, default=d.n_samples,
                             check=lambda v: v >= 20),
        "target_loss": r.plain(sec, "target_loss", "oracle", default=d.target_loss,
                               check=lambda v: 0.02 < v < 1),
        "background_as_qubit_decay": r.plain(sec, "background_as_qubit_decay", "oracle", kind=bool,
                                             default=d.background_as_qubit_decay),
        "certify": r.plain(sec, "certify", "oracle", kind=bool, default=d.certify),
    }
    for k, v in kw.items():
        if k != "t_sim" and v is not None and k in sec:
            out[k] = v
    norm["oracle"] = out
    return OracleSettings(**kw)


def _read_numerics(doc, r, norm):
    sec = _section(doc, "numerics", r)
    _unknown_keys(sec, {"truncation", "tol", "method", "rate_method", "seed"}, "numerics", r)
    d = Numerics()
    kw = {
        "truncation": r.plain(sec, "truncation", "numerics", default=d.truncation,
                              check=lambda v: 0 < v <= 1e-6, msg="must lie in (0, 1e-6]"),
        "tol": r.plain(sec, "tol", "numerics", default=d.tol,
                       check=lambda v: 1e-12 <= v <= 1e-4, msg="must lie in [1e-12, 1e-4]"),
        "method": r.plain(sec, "method", "numerics", kind=str, default=d.method,
                          check=lambda v: v in METHODS, msg=f"must be one of {METHODS}"),
        "rate_method": r.plain(sec, "rate_method", "numerics", kind=str, default=d.rate_method,
                               check=lambda v: v in RATE_METHODS, msg=f"must be one of {RATE_METHODS}"),
        "seed": r.plain(sec, "seed", "numerics", kind=int, default=d.seed),
    }
    norm["numerics"] = {k: v for k, v in kw.items() if k in sec}
    return Numerics(**kw)


def _read_fit(doc, r, norm):
    sec = _section(doc, "fit", r)
    _unknown_keys(sec, {"tls_detuning", "background"}, "fit", r)
    out = {}
    det, det_n = r.tagged(sec, "tls_detuning", "fit")
    bg, bg_n = r.tagged(sec, "background", "fit")
    if det_n:
        out["tls_detuning"] = det_n
    if bg_n:
        out["background"] = bg_n
    norm["fit"] = out
    return FitSettings(det, bg)


def _read_level_section(doc, r, norm):
    sec = _section(doc, "level", r)
    _unknown_keys(sec, {"snr_rate"}, "level", r)
    value, v_norm = r.tagged(sec, "snr_rate", "level")
    if v_norm:
        norm["level"] = {"snr_rate": v_norm}
    return value


def parse_config(doc):
    """Validate a config mapping and build a :class:`RunConfig`.

    Raises :class:`ConfigError` listing every offending field.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a table")
    r = _Reader()
    known = {"device", "drive", "bath", "sweep", "spectrum", "oracle", "numerics", "fit", "level"}
    _unknown_keys(doc, known, "", r)
    r.problems = [(p.lstrip("."), m) for p, m in r.problems]
    norm = {}
    device = _read_device(doc, r, norm)
    cfg = RunConfig(
        device=device,
        drive=_read_drive(doc, r, norm, device),
        bath=_read_bath(doc, r, norm, device),
        sweep=_read_sweep(doc, r, norm, device),
        spectrum=_read_spectrum(doc, r, norm, device),
        oracle=_read_oracle(doc, r, norm),
        numerics=_read_numerics(doc, r, norm),
        fit=_read_fit(doc, r, norm),
        level_snr_rate=_read_level_section(doc, r, norm),
    )
    if r.problems:
        raise ConfigError(r.problems)
    cfg.normalized = {k: v for k, v in norm.items() if v}
    return cfg


def load_config(path):
    """Read a TOML config, or the ``config`` entry of a JSON run manifest."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError([("", f"cannot read {path}: {exc.strerror}")]) from exc
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"{path}: invalid JSON ({exc})")]) from exc
        if not isinstance(doc, dict) or "config" not in doc:
            raise ConfigError([("", f"{path}: not a run manifest (no 'config' entry)")])
        doc = doc["config"]
    else:
        try:
            doc = tomllib.loads(text.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError([("", f"{path}: invalid TOML ({exc})")]) from exc
    return parse_config(doc)


def dump_config(normalized):
    """TOML text of a normalized config; reading it back is idempotent."""
    return tomli_w.dumps(normalized)
