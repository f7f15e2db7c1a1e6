"""CSV tables, trace files, bath export and run manifests."""

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__
from .bath import DecayTrace
from .errors import ConfigError


def format_value(v):
    """Locale-free text for one CSV cell; floats use shortest round-trip repr."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path, columns, rows):
    """Write a headed CSV with ``\\n`` line endings; returns the sha256 digest."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    data = buf.getvalue().encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_trace_csv(path):
    """Read ``t_us, P_e`` columns into a :class:`DecayTrace`.

    Raises :class:`ConfigError` for missing, empty or malformed files.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([("trace", f"cannot read {path}: {exc.strerror}")]) from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ConfigError([("trace", f"{path} is empty")])
    missing = {"t_us", "P_e"} - set(reader.fieldnames)
    if missing:
        raise ConfigError([("trace", f"{path} lacks columns {sorted(missing)}")])
    t, p = [], []
    for i, row in enumerate(reader, start=2):
        try:
            t.append(float(row["t_us"]))
            p.append(float(row["P_e"]))
        except (TypeError, ValueError):
            raise ConfigError([("trace", f"{path}:{i}: non-numeric entry")]) from None
    if not t:
        raise ConfigError([("trace", f"{path} has no data rows")])
    try:
        return DecayTrace(np.array(t), np.array(p))
    except ValueError as exc:
        raise ConfigError([("trace", f"{path}: {exc}")]) from exc


def write_trace_csv(path, trace):
    rows = [{"t_us": t, "P_e": p} for t, p in zip(trace.times, trace.populations)]
    return write_csv(path, ["t_us", "P_e"], rows)


def bath_document(bath, qubit_frequency=None):
    """Normalized config ``[bath]`` table for ``bath``.

    TLS positions are written as detunings when the qubit frequency is
    known, so the file can be dropped into any config for the same device.
    """
    tls = []
    for c in bath.components:
        entry = {}
        if qubit_frequency is None:
            entry["frequency"] = {"value": c.frequency, "unit": "MHz_rate"}
        else:
            entry["detuning"] = {"value": c.frequency - qubit_frequency, "unit": "MHz_rate"}
        entry["coupling"] = {"value": c.coupling, "unit": "MHz_rate"}
        entry["gamma_2"] = {"value": c.gamma_2, "unit": "MHz_rate"}
        if c.gamma_1 is not None:
            entry["gamma_1"] = {"value": c.gamma_1, "unit": "MHz_rate"}
            entry["gamma_phi"] = {"value": c.gamma_phi, "unit": "MHz_rate"}
        tls.append(entry)
    doc = {"background": {"value": bath.background, "unit": "MHz_rate"}}
    if tls:
        doc["tls"] = tls
    return {"bath": doc}


def write_toml(path, doc):
    data = tomli_w.dumps(doc).encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def write_json(path, doc):
    data = (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def build_manifest(command, config, settings, outputs, timing):
    """Run manifest: the normalized config is enough to repeat the run."""
    return {
        "tool": "readout-t1",
        "version": __version__,
        "command": command,
        "config": config,
        "settings": settings,
        "outputs": [{"path": name, "sha256": digest} for name, digest in outputs],
        "timing_s": timing,
    }
