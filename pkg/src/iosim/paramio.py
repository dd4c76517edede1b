"""Reading and writing circuit parameter files and scatter sweeps.

Parameter files are YAML with a ``units`` header; values are converted to SI
on load and written back in the header's units.  Two layouts are accepted:
a single parameter set at the top level, or ``samples`` holding one set per
incidence angle (``theta_deg``/``phi_deg`` keys).
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np
import yaml

from .circuit import (
    AngleParamTable,
    CircuitParams,
    CouplingTable,
    PinDiodeModel,
)
from .errors import ConfigError

UNIT_SCALES = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "inductance": {"H": 1.0, "mH": 1e-3, "uH": 1e-6, "nH": 1e-9, "pH": 1e-12},
    "capacitance": {"F": 1.0, "uF": 1e-6, "nF": 1e-9, "pF": 1e-12, "fF": 1e-15},
    "resistance": {"ohm": 1.0, "kohm": 1e3},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3},
    "admittance": {"S": 1.0, "mS": 1e-3},
}
DEFAULT_UNITS = {
    "frequency": "GHz",
    "inductance": "nH",
    "capacitance": "pF",
    "resistance": "ohm",
    "length": "cm",
    "admittance": "S",
}
_KIND = {
    "r1": "resistance", "r2": "resistance", "r3": "resistance",
    "l1": "inductance", "l2": "inductance", "l3": "inductance",
    "c1": "capacitance", "c2": "capacitance", "c3": "capacitance",
    "d1": "length", "d2": "length",
}
_DIODE_KIND = {
    "r_on": "resistance", "l_on": "inductance", "l_off": "inductance",
    "c_off": "capacitance", "r_off": "resistance",
}
PARAM_KEYS = set(_KIND) | {"ys1", "ys2", "diode"}
SCATTER_COLUMNS = ("freq_hz", "state", "theta_deg", "phi_deg", "re_gr", "im_gr", "re_gt", "im_gt")


def _scales(units, path):
    if not isinstance(units, dict):
        raise ConfigError("missing or malformed 'units' header", path)
    unknown = set(units) - set(UNIT_SCALES)
    if unknown:
        raise ConfigError(f"unknown unit kinds {sorted(unknown)}", f"{path}.units")
    out = {}
    for kind, table in UNIT_SCALES.items():
        name = units.get(kind, next(k for k, v in table.items() if v == 1.0))
        if name not in table:
            raise ConfigError(f"unknown {kind} unit {name!r}", f"{path}.units.{kind}")
        out[kind] = table[name]
    return out


def _num(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    return float(value)


def _table(entries, sc, path):
    if not isinstance(entries, list) or not entries:
        raise ConfigError("expected a non-empty list of {f, re, im}", path)
    freqs, vals = [], []
    for i, e in enumerate(entries):
        p = f"{path}[{i}]"
        if not isinstance(e, dict) or set(e) != {"f", "re", "im"}:
            raise ConfigError("entries need exactly the keys f, re, im", p)
        freqs.append(_num(e["f"], p + ".f") * sc["frequency"])
        vals.append(complex(_num(e["re"], p + ".re"), _num(e["im"], p + ".im")) * sc["admittance"])
    return CouplingTable(tuple(freqs), tuple(vals))


def params_from_dict(data, units, path="params", diode=None) -> CircuitParams:
    sc = _scales(units, "units")
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path)
    unknown = set(data) - PARAM_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", path)
    needed = set(_KIND) | {"ys1", "ys2"}
    if diode is None:
        needed.add("diode")
    missing = needed - set(data)
    if missing:
        raise ConfigError(f"missing keys {sorted(missing)}", path)
    kw = {k: _num(data[k], f"{path}.{k}") * sc[kind] for k, kind in _KIND.items()}
    kw["ys1"] = _table(data["ys1"], sc, f"{path}.ys1")
    kw["ys2"] = _table(data["ys2"], sc, f"{path}.ys2")
    if "diode" in data:
        diode = diode_from_dict(data["diode"], units, f"{path}.diode")
    return CircuitParams(diode=diode, **kw)


def diode_from_dict(data, units, path="diode") -> PinDiodeModel:
    sc = _scales(units, "units")
    if not isinstance(data, dict) or set(data) != set(_DIODE_KIND):
        raise ConfigError(f"diode needs exactly the keys {sorted(_DIODE_KIND)}", path)
    return PinDiodeModel(**{k: _num(data[k], f"{path}.{k}") * sc[kind] for k, kind in _DIODE_KIND.items()})


def diode_to_dict(d: PinDiodeModel, units=DEFAULT_UNITS):
    sc = _scales(units, "units")
    return {k: float(getattr(d, k) / sc[kind]) for k, kind in _DIODE_KIND.items()}


def params_to_dict(p: CircuitParams, units=DEFAULT_UNITS, with_diode=True):
    sc = _scales(units, "units")
    out = {k: float(getattr(p, k) / sc[kind]) for k, kind in _KIND.items()}
    for name in ("ys1", "ys2"):
        t = getattr(p, name)
        out[name] = [
            {"f": float(f / sc["frequency"]), "re": float(v.real / sc["admittance"]),
             "im": float(v.imag / sc["admittance"])}
            for f, v in zip(t.freqs, t.values)
        ]
    if with_diode:
        out["diode"] = diode_to_dict(p.diode, units)
    return out


def table_from_dict(data, path="params") -> AngleParamTable:
    """Parse either a single parameter set or a ``samples`` list into an angle table."""
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path)
    units = data.get("units")
    body = {k: v for k, v in data.items() if k != "units"}
    if "samples" not in body:
        return AngleParamTable.single(params_from_dict(body, units, path))
    extra = set(body) - {"samples", "diode"}
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", path)
    diode = diode_from_dict(body["diode"], units, f"{path}.diode") if "diode" in body else None
    samples = {}
    if not isinstance(body["samples"], list) or not body["samples"]:
        raise ConfigError("samples must be a non-empty list", f"{path}.samples")
    for i, s in enumerate(body["samples"]):
        p = f"{path}.samples[{i}]"
        if not isinstance(s, dict) or not {"theta_deg", "phi_deg"} <= set(s):
            raise ConfigError("sample needs theta_deg and phi_deg", p)
        rest = {k: v for k, v in s.items() if k not in ("theta_deg", "phi_deg")}
        key = (math.radians(_num(s["theta_deg"], p + ".theta_deg")), math.radians(_num(s["phi_deg"], p + ".phi_deg")))
        samples[key] = params_from_dict(rest, units, p, diode=diode)
    return AngleParamTable(samples)


def table_to_dict(table: AngleParamTable, units=DEFAULT_UNITS):
    if len(table.samples) == 1:
        return {"units": dict(units), **params_to_dict(table.normal, units)}
    samples = []
    for (theta, phi), p in sorted(table.samples.items()):
        samples.append({"theta_deg": float(np.degrees(theta)), "phi_deg": float(np.degrees(phi)),
                        **params_to_dict(p, units, with_diode=False)})
    return {"units": dict(units), "diode": diode_to_dict(table.normal.diode, units), "samples": samples}


def load_table(path) -> AngleParamTable:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read parameter file: {exc}", str(path)) from None
    return table_from_dict(data, str(path))


def save_table(table: AngleParamTable, path, units=DEFAULT_UNITS):
    Path(path).write_text(yaml.safe_dump(table_to_dict(table, units), sort_keys=False))


def write_scatter_csv(rows, path_or_buffer):
    own = isinstance(path_or_buffer, (str, Path))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[0]), r[1], *(fmt(x) for x in r[2:])])
    finally:
        if own:
            fh.close()


def read_scatter_csv(path):
    """Parse a scatter CSV; errors carry the offending line number."""
    text = Path(path).read_text() if not isinstance(path, io.StringIO) else path.getvalue()
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != SCATTER_COLUMNS:
        raise ConfigError(f"line 1: expected header {','.join(SCATTER_COLUMNS)}", str(path))
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        try:
            if len(rec) != len(SCATTER_COLUMNS):
                raise ValueError(f"expected {len(SCATTER_COLUMNS)} fields, got {len(rec)}")
            vals = [float(x) for x in rec[2:]]
            rows.append((float(rec[0]), rec[1].strip(), *vals))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}", str(path)) from None
    return rows


def fmt(x):
    """Shortest round-trip float text, locale independent."""
    return repr(float(x))
