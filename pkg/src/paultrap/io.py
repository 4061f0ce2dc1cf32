"""Geometry files and CSV exports.

Geometry files are JSON documents::

    {
      "format_version": 1,
      "units": {"length": "um", "voltage": "V"},
      "name": "four-wire",
      "species": "24Mg+",                                   (optional)
      "drive": {"amplitude": 103.2, "frequency_mhz": 87.0}, (optional)
      "beam": [0.7071, 0.0, 0.7071],                        (optional)
      "control_offset": 0.0,                                (optional, volts)
      "electrodes": [
        {"label": "rf1", "role": "rf", "x": [-40, 0], "z": "infinite",
         "bias": "driven", "rf_phase": 0.0},
        {"label": "dc1", "role": "control", "x": [60, 140], "z": [-50, 50], "bias": 1.5}
      ]
    }

``x`` edges may be ``"-inf"``/``"inf"`` for semi-infinite strips. ``bias`` is
``"driven"`` (relative weight 1) or a number: a dc voltage for control
electrodes, a relative rf amplitude weight for rf electrodes. ``rf_phase`` is
in degrees. Errors name the file and the line of the offending electrode.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .core import IonSpecies, ValidationError, species as lookup_species
from .surface_fields import CONTROL, RF, PlanarGeometry, RectPatch, Strip

__all__ = [
    "FORMAT_VERSION",
    "GeometryFile",
    "GeometryParseError",
    "load_geometry",
    "loads_geometry",
    "dump_geometry",
    "bundled_geometry",
    "BUNDLED",
    "write_csv",
    "atomic_write_text",
]

FORMAT_VERSION = 1
# divisors from file units to SI (division by an exact power of ten rounds correctly)
LENGTH_UNITS = {"m": 1.0, "mm": 1e3, "um": 1e6, "nm": 1e9}
VOLTAGE_UNITS = {"V": 1.0, "mV": 1e3}
BUNDLED = ("four_wire", "five_wire", "segmented_five_wire")


class GeometryParseError(ValidationError):
    def __init__(self, msg, source="<string>", line=None):
        where = f"{source}:{line}" if line is not None else str(source)
        super().__init__(f"{where}: {msg}")
        self.source = source
        self.line = line


@dataclass
class GeometryFile:
    geometry: PlanarGeometry
    static_biases: np.ndarray
    species: IonSpecies | None = None
    amplitude: float | None = None
    omega_rf: float | None = None
    beam: np.ndarray | None = None
    control_offset: float = 0.0
    extra: dict = field(default_factory=dict)


def _line_of(text, pos):
    return text.count("\n", 0, pos) + 1


def _electrode_lines(text):
    """Line number of each entry of the top-level ``electrodes`` array."""
    dec = json.JSONDecoder()
    key = text.find('"electrodes"')
    if key < 0:
        return []
    pos = text.find("[", key)
    lines = []
    pos += 1
    while pos < len(text):
        while pos < len(text) and text[pos] in " \t\r\n,":
            pos += 1
        if pos >= len(text) or text[pos] == "]":
            break
        lines.append(_line_of(text, pos))
        try:
            _, pos = dec.raw_decode(text, pos)
        except json.JSONDecodeError:
            break
    return lines


def _edge(v, what, src, line):
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s in ("-inf", "-infinity"):
            return -math.inf
        raise GeometryParseError(f"{what}: cannot read {v!r} as a coordinate", src, line)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise GeometryParseError(f"{what}: expected a number, got {v!r}", src, line)
    return float(v)


def _pair(v, what, src, line):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise GeometryParseError(f"{what} must be a two-element list", src, line)
    return _edge(v[0], what, src, line), _edge(v[1], what, src, line)


def loads_geometry(text: str, source="<string>") -> GeometryFile:
    if not text.strip():
        raise GeometryParseError("empty geometry file", source, 1)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryParseError(exc.msg, source, exc.lineno) from None
    if not isinstance(doc, dict):
        raise GeometryParseError("top level must be an object", source, 1)
    ver = doc.get("format_version")
    if ver != FORMAT_VERSION:
        raise GeometryParseError(f"unsupported format_version {ver!r} (expected {FORMAT_VERSION})",
                                 source, 1)
    units = doc.get("units", {})
    try:
        lscale = LENGTH_UNITS[units.get("length", "um")]
        vscale = VOLTAGE_UNITS[units.get("voltage", "V")]
    except KeyError as exc:
        raise GeometryParseError(f"unknown unit {exc.args[0]!r}", source, 1) from None
    els = doc.get("electrodes")
    if not isinstance(els, list) or not els:
        raise GeometryParseError("geometry needs a non-empty 'electrodes' list", source, 1)
    lines = _electrode_lines(text)
    strips, patches, s_bias, p_bias = [], [], [], []
    for i, e in enumerate(els):
        line = lines[i] if i < len(lines) else None
        if not isinstance(e, dict):
            raise GeometryParseError(f"electrode {i} must be an object", source, line)
        label = str(e.get("label", f"e{i}"))
        role = e.get("role", CONTROL)
        if role not in (RF, CONTROL):
            raise GeometryParseError(f"electrode {label!r}: role must be 'rf' or 'control'",
                                     source, line)
        if "x" not in e:
            raise GeometryParseError(f"electrode {label!r}: missing 'x'", source, line)
        x1, x2 = _pair(e["x"], f"electrode {label!r} x", source, line)
        z = e.get("z", "infinite")
        bias = e.get("bias", "driven" if role == RF else 0.0)
        if bias == "driven":
            if role != RF:
                raise GeometryParseError(f"electrode {label!r}: only rf electrodes are 'driven'",
                                         source, line)
            weight, dc = 1.0, 0.0
        elif isinstance(bias, (int, float)) and not isinstance(bias, bool):
            weight, dc = (float(bias), 0.0) if role == RF else (1.0, float(bias) / vscale)
        else:
            raise GeometryParseError(f"electrode {label!r}: bias must be a number or 'driven'",
                                     source, line)
        phase = e.get("rf_phase", 0.0)
        if not isinstance(phase, (int, float)) or isinstance(phase, bool):
            raise GeometryParseError(f"electrode {label!r}: rf_phase must be a number", source, line)
        phase = math.radians(float(phase)) % (2 * math.pi)
        try:
            if z == "infinite":
                strips.append(Strip(x1 / lscale, x2 / lscale, weight, role, phase, label))
                s_bias.append(dc)
            else:
                z1, z2 = _pair(z, f"electrode {label!r} z", source, line)
                patches.append(RectPatch(x1 / lscale, x2 / lscale, z1 / lscale, z2 / lscale,
                                         weight, role, phase, label))
                p_bias.append(dc)
        except ValidationError as exc:
            raise GeometryParseError(f"electrode {label!r}: {exc}", source, line) from None
    try:
        geom = PlanarGeometry(tuple(strips), tuple(patches), str(doc.get("name", "")))
    except ValidationError as exc:
        raise GeometryParseError(str(exc), source) from None

    sp = None
    if "species" in doc:
        try:
            sp = lookup_species(doc["species"])
        except (KeyError, ValidationError) as exc:
            raise GeometryParseError(f"species: {exc}", source) from None
    amp = omega = None
    drive = doc.get("drive")
    if drive is not None:
        try:
            amp = float(drive["amplitude"]) / vscale
            omega = 2 * math.pi * float(drive["frequency_mhz"]) * 1e6
        except (KeyError, TypeError, ValueError):
            raise GeometryParseError("drive needs numeric 'amplitude' and 'frequency_mhz'",
                                     source) from None
    beam = None
    if "beam" in doc:
        beam = np.asarray(doc["beam"], dtype=float)
        if beam.shape != (3,) or not np.linalg.norm(beam) > 0:
            raise GeometryParseError("beam must be a non-zero 3-vector", source)
        beam = beam / np.linalg.norm(beam)
    known = {"format_version", "units", "name", "species", "drive", "beam", "control_offset",
             "electrodes"}
    return GeometryFile(geom, np.array(s_bias + p_bias), sp, amp, omega, beam,
                        float(doc.get("control_offset", 0.0)) / vscale,
                        {k: v for k, v in doc.items() if k not in known})


def load_geometry(path) -> GeometryFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GeometryParseError(f"cannot read file: {exc.strerror}", str(path)) from None
    return loads_geometry(text, str(path))


def bundled_geometry(name: str) -> GeometryFile:
    """One of the geometry files shipped with the package (see :data:`BUNDLED`)."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled geometry {name!r}; choose from {BUNDLED}")
    text = resources.files("paultrap").joinpath("data", f"{name}.json").read_text()
    return loads_geometry(text, f"<bundled {name}>")


def _num(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(f"{v:.12g}")


def dump_geometry(gf: GeometryFile, unit="um") -> str:
    """Serialise to the JSON format read by :func:`loads_geometry`."""
    s = 1.0 / LENGTH_UNITS[unit]
    els = []
    for e, dc in zip(gf.geometry.electrodes, gf.static_biases):
        d = {"label": gf.geometry.labels[len(els)], "role": e.role,
             "x": [_num(e.x_extent[0] / s), _num(e.x_extent[1] / s)]}
        d["z"] = "infinite" if isinstance(e, Strip) else [_num(e.z1 / s), _num(e.z2 / s)]
        if e.role == RF:
            d["bias"] = "driven" if e.bias == 1.0 else e.bias
        else:
            d["bias"] = float(dc)
        if e.rf_phase:
            d["rf_phase"] = math.degrees(e.rf_phase)
        els.append(d)
    doc = {"format_version": FORMAT_VERSION, "units": {"length": unit, "voltage": "V"},
           "name": gf.geometry.name}
    if gf.species is not None:
        doc["species"] = gf.species.name
    if gf.amplitude is not None:
        doc["drive"] = {"amplitude": gf.amplitude, "frequency_mhz": gf.omega_rf / (2e6 * math.pi)}
    if gf.beam is not None:
        doc["beam"] = [float(b) for b in gf.beam]
    if gf.control_offset:
        doc["control_offset"] = gf.control_offset
    doc.update(gf.extra)
    doc["electrodes"] = els
    return json.dumps(doc, indent=2) + "\n"


# --- CSV ------------------------------------------------------------------------


def atomic_write_text(path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def csv_text(header, rows, comments=(), timestamp=False) -> str:
    buf = _io.StringIO()
    from . import __version__
    buf.write(f"# paultrap {__version__}\n")
    if timestamp:
        buf.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows, comments=(), timestamp=False):
    """CSV with a ``#`` provenance header; byte-identical output unless ``timestamp``."""
    text = csv_text(header, rows, comments, timestamp)
    if path is None or str(path) == "-":
        return text
    atomic_write_text(path, text)
    return text


def read_csv(path):
    """Header and float rows of a CSV written by :func:`write_csv` (comments skipped)."""
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    return header, np.array(rows)
