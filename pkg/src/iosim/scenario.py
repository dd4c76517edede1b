"""Scenario files: one YAML document drives every subcommand.

Every key is either consumed or rejected; errors carry the dotted path of
the offending field.  Lengths in the file are metres unless the key says
otherwise (``*_cm``), frequencies GHz, powers dBm/mW as named.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .array import Antenna, ArrayLayout, GroupConfiguration, Sweep
from .channel import LinkBudget, dbm_to_w
from .circuit import PAPER_STATES, ElementState, FrequencyGrid, ModelConstants
from .defaults import F_CENTER, default_table
from .errors import ConfigError
from .paramio import load_table

SECTIONS = {
    "name", "description", "seed", "constants", "geometry", "angle_table", "states", "frame", "layout",
    "grouping", "tx", "rx", "budget", "problem", "sweeps", "outputs", "fit", "pattern", "optimize", "testbed",
}


def _check(d, path, required=(), optional=()):
    if not isinstance(d, dict):
        raise ConfigError("expected a mapping", path)
    allowed = set(required) | set(optional)
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", path)
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"missing keys {sorted(missing)}", path)
    return d


def _num(d, key, path, default=None, positive=False, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError("missing value", f"{path}.{key}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", f"{path}.{key}")
    if integer and int(v) != v:
        raise ConfigError("expected an integer", f"{path}.{key}")
    if positive and not v > 0:
        raise ConfigError("must be positive", f"{path}.{key}")
    return int(v) if integer else float(v)


def _vec(v, path, n=3):
    if not isinstance(v, (list, tuple)) or len(v) != n or any(
            isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ConfigError(f"expected a list of {n} numbers", path)
    return tuple(float(x) for x in v)


def _bool(d, key, path, default):
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError("expected true or false", f"{path}.{key}")
    return v


def _str(d, key, path, default, choices=None):
    v = d.get(key, default)
    if not isinstance(v, str):
        raise ConfigError("expected a string", f"{path}.{key}")
    if choices and v not in choices:
        raise ConfigError(f"must be one of {list(choices)}", f"{path}.{key}")
    return v


@dataclass
class Scenario:
    raw: dict
    base_dir: Path
    seed: int = 0
    name: str = "scenario"
    constants: ModelConstants = field(default_factory=ModelConstants)
    states: tuple = PAPER_STATES
    azimuth_offset_deg: float = 0.0
    _table: object = None

    # -- loading -----------------------------------------------------------
    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read scenario: {exc}", str(path)) from None
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}", str(path)) from None
        return cls.from_dict(raw if raw is not None else {}, path.parent, text)

    @classmethod
    def from_dict(cls, raw, base_dir=Path("."), text=None):
        _check(raw, "scenario", optional=SECTIONS)
        sc = cls(raw=raw, base_dir=Path(base_dir))
        sc.text = text if text is not None else yaml.safe_dump(raw, sort_keys=True)
        sc.seed = _num(raw, "seed", "scenario", 0, integer=True)
        if sc.seed < 0:
            raise ConfigError("seed must be non-negative", "seed")
        sc.name = _str(raw, "name", "scenario", "scenario")
        if "description" in raw:
            _str(raw, "description", "scenario", "")
        c = _check(raw.get("constants", {}), "constants", optional=("z0", "c0"))
        sc.constants = ModelConstants(_num(c, "z0", "constants", 377.0, True),
                                      _num(c, "c0", "constants", 299_792_458.0, True))
        if "states" in raw:
            st = raw["states"]
            if not isinstance(st, list) or len(st) != 2 or not all(isinstance(x, str) for x in st):
                raise ConfigError("states must list exactly two state names (state 0 first)", "states")
            sc.states = tuple(ElementState.parse(x) for x in st)
        fr = _check(raw.get("frame", {}), "frame", optional=("azimuth_offset_deg",))
        sc.azimuth_offset_deg = _num(fr, "azimuth_offset_deg", "frame", 0.0)
        # validate every section eagerly so errors surface before computation
        sc.geometry()
        sc.table()
        if "layout" in raw:
            sc.layout()
            if "grouping" in raw:
                sc.grouping()
        elif "grouping" in raw:
            raise ConfigError("grouping requires a layout", "grouping")
        sc.antennas("tx")
        sc.antennas("rx")
        sc.budget()
        sc.problem_options()
        sc.frequency_grid()
        sc.incidence_angles()
        sc.pattern_sweep()
        sc.outputs()
        for sec, keys in SUBCOMMAND_KEYS.items():
            if sec in raw:
                _check(raw[sec], sec, optional=keys)
        return sc

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    # -- sections ----------------------------------------------------------
    def geometry(self):
        from .circuit import SAMPLE_GEOMETRY, ElementGeometry

        g = self.raw.get("geometry")
        if g is None:
            return SAMPLE_GEOMETRY
        keys = ("w_e_cm", "l_e_cm", "w_p_cm", "l_p_cm", "g_cm", "w_f_cm", "layer_separation_cm", "thickness_cm")
        _check(g, "geometry", required=keys)
        return ElementGeometry(*(_num(g, k, "geometry", positive=True) * 1e-2 for k in keys))

    def table(self):
        if self._table is not None:
            return self._table
        a = _check(self.raw.get("angle_table", {}), "angle_table", optional=("source",))
        src = a.get("source", "default")
        if not isinstance(src, str):
            raise ConfigError("expected 'default', 'normal' or a file path", "angle_table.source")
        if src == "default":
            t = default_table()
        elif src == "normal":
            t = default_table().normal_only()
        else:
            t = load_table(self.resolve(src))
        self._table = t
        return t

    def layout(self) -> ArrayLayout:
        if "layout" not in self.raw:
            raise ConfigError("missing section", "layout")
        d = _check(self.raw["layout"], "layout", required=("rows", "cols"),
                   optional=("col_pitch_cm", "row_pitch_cm", "center", "u", "v", "active"))
        geo = self.geometry()
        rows = _num(d, "rows", "layout", integer=True, positive=True)
        cols = _num(d, "cols", "layout", integer=True, positive=True)
        cp = _num(d, "col_pitch_cm", "layout", geo.w_e * 100, True) * 1e-2
        rp = _num(d, "row_pitch_cm", "layout", geo.l_e * 100, True) * 1e-2
        center = _vec(d.get("center", [0, 0, 0]), "layout.center")
        u = _vec(d.get("u", [0, 0, 1]), "layout.u")
        v = _vec(d.get("v", [1, 0, 0]), "layout.v")
        lay = ArrayLayout(rows, cols, cp, rp, center, u, v)
        if "active" in d:
            lay = lay.with_active(self._mask(lay, d["active"], "layout.active"))
        return lay

    def _mask(self, lay, spec, path):
        """``active`` is a list of blocks ``{row0, rows, col0, cols}`` (union)."""
        if not isinstance(spec, list) or not spec:
            raise ConfigError("expected a non-empty list of blocks", path)
        mask = np.zeros(lay.size, bool)
        for i, b in enumerate(spec):
            p = f"{path}[{i}]"
            _check(b, p, required=("row0", "rows", "col0", "cols"))
            r0, nr, c0, nc = (_num(b, k, p, integer=True) for k in ("row0", "rows", "col0", "cols"))
            if r0 < 0 or c0 < 0 or nr < 1 or nc < 1 or r0 + nr > lay.rows or c0 + nc > lay.cols:
                raise ConfigError("block outside the layout", p)
            mask |= lay.subarray_mask(r0, nr, c0, nc)
        return mask

    def grouping(self, layout=None) -> GroupConfiguration:
        layout = layout or self.layout()
        d = _check(self.raw.get("grouping", {"mode": "rows"}), "grouping",
                   optional=("mode", "block_rows", "block_cols", "groups"))
        mode = _str(d, "mode", "grouping", "rows", ("rows", "blocks", "explicit"))
        if mode == "rows":
            g = GroupConfiguration.by_rows(layout)
        elif mode == "blocks":
            g = GroupConfiguration.by_blocks(layout, _num(d, "block_rows", "grouping", integer=True, positive=True),
                                             _num(d, "block_cols", "grouping", integer=True, positive=True))
        else:
            groups = d.get("groups")
            if not isinstance(groups, list) or len(groups) != layout.size:
                raise ConfigError("explicit groups need one entry per element (-1 = undriven)", "grouping.groups")
            if any(isinstance(x, bool) or not isinstance(x, int) for x in groups):
                raise ConfigError("group indices must be integers", "grouping.groups")
            M = max(groups) + 1
            g = GroupConfiguration(tuple(groups), (0,) * M)
        g = GroupConfiguration(g.group_of, g.s, self.states)
        g.check_layout(layout)
        return g

    def antennas(self, kind):
        items = self.raw.get(kind, [])
        if not isinstance(items, list):
            raise ConfigError("expected a list of antennas", kind)
        out = []
        default_gain = 12.5 if kind == "tx" else 3.0
        center = np.asarray(self.layout().center) if "layout" in self.raw else np.zeros(3)
        for i, a in enumerate(items):
            p = f"{kind}[{i}]"
            _check(a, p, optional=("position", "azimuth_deg", "distance", "height", "gain_dbi"))
            gain = _num(a, "gain_dbi", p, default_gain)
            if "position" in a:
                if {"azimuth_deg", "distance", "height"} & set(a):
                    raise ConfigError("give either position or azimuth/distance/height", p)
                pos = _vec(a["position"], f"{p}.position")
            else:
                az = _num(a, "azimuth_deg", p)
                dist = _num(a, "distance", p, positive=True)
                pos = tuple(self.lab_point(az, dist, _num(a, "height", p, 0.0), center))
            out.append(Antenna(pos, gain))
        return out

    def lab_point(self, azimuth_deg, distance, height=0.0, center=None):
        """Point at a lab azimuth (0-360 convention of the scenario frame) around ``center``."""
        c = np.zeros(3) if center is None else np.asarray(center)
        phi = math.radians(azimuth_deg - self.azimuth_offset_deg)
        return c + np.array([distance * math.cos(phi), distance * math.sin(phi), height])

    def budget(self, **overrides) -> LinkBudget:
        d = _check(self.raw.get("budget", {}), "budget", optional=(
            "freq_ghz", "tx_gain_dbi", "rx_gain_dbi", "lna_gain_db", "rf_gain", "noise_dbm", "pathloss_exponent",
            "p_max_mw", "interference", "direct_path", "direct_attenuation_db"))
        p = "budget"
        rf = d.get("rf_gain")
        if rf is not None:
            if isinstance(rf, (int, float)) and not isinstance(rf, bool):
                rf = complex(rf)
            else:
                rf = _vec(rf, "budget.rf_gain", 2)
                rf = complex(*rf)
        kw = dict(
            freq=_num(d, "freq_ghz", p, F_CENTER / 1e9, True) * 1e9,
            tx_gain_dbi=_num(d, "tx_gain_dbi", p, 12.5),
            rx_gain_dbi=_num(d, "rx_gain_dbi", p, 3.0),
            lna_gain_db=_num(d, "lna_gain_db", p, 15.07),
            rf_gain=rf,
            noise_power_w=dbm_to_w(_num(d, "noise_dbm", p, -96.0)),
            pathloss_exponent=_num(d, "pathloss_exponent", p, 2.0, True),
            p_max_w=_num(d, "p_max_mw", p, 200.0, True) * 1e-3,
            interference=_str(d, "interference", p, "paper", ("paper", "physical")),
            direct_path=_bool(d, "direct_path", p, False),
            direct_attenuation_db=_num(d, "direct_attenuation_db", p, 0.0),
        )
        kw.update(overrides)
        return LinkBudget(**kw)

    def problem_options(self):
        d = _check(self.raw.get("problem", {}), "problem", optional=(
            "objective", "gamma0_db", "solver", "max_iter", "anneal_steps", "anneal_t0", "anneal_cooling"))
        p = "problem"
        out = {
            "objective": _str(d, "objective", p, "min-rate", ("min-rate", "sum-rate")),
            "gamma0": 10 ** (_num(d, "gamma0_db", p, 6.0) / 10),
            "solver": _str(d, "solver", p, "exhaustive", ("exhaustive", "alternating", "annealing")),
            "max_iter": _num(d, "max_iter", p, 100, True, True),
            "anneal_steps": _num(d, "anneal_steps", p, 400, True, True),
            "anneal_cooling": _num(d, "anneal_cooling", p, 0.98, True),
        }
        if "anneal_t0" in d:
            out["anneal_t0"] = _num(d, "anneal_t0", p)
            if out["anneal_t0"] < 0:
                raise ConfigError("must be non-negative", "problem.anneal_t0")
        return out

    def _sweeps(self):
        return _check(self.raw.get("sweeps", {}), "sweeps", optional=("frequency", "incidence_deg", "pattern"))

    def frequency_grid(self):
        s = self._sweeps()
        if "frequency" not in s:
            return None
        f = s["frequency"]
        p = "sweeps.frequency"
        if isinstance(f, list):
            if not f:
                raise ConfigError("frequency list is empty", p)
            pts = [_num({"f": x}, "f", p, positive=True) * 1e9 for x in f]
        else:
            _check(f, p, required=("start_ghz", "stop_ghz", "points"))
            a, b = _num(f, "start_ghz", p, positive=True), _num(f, "stop_ghz", p, positive=True)
            n = _num(f, "points", p, integer=True, positive=True)
            if n < 1 or b < a:
                raise ConfigError("need start <= stop and at least one point", p)
            pts = list(np.linspace(a, b, n) * 1e9) if n > 1 else [a * 1e9]
        center = F_CENTER if pts[0] <= F_CENTER <= pts[-1] else pts[0]
        return FrequencyGrid(tuple(pts), center)

    def incidence_angles(self):
        from .circuit import IncidenceAngle

        s = self._sweeps()
        if "incidence_deg" not in s:
            return None
        ang = s["incidence_deg"]
        if not isinstance(ang, list) or not ang:
            raise ConfigError("expected a non-empty list of angles", "sweeps.incidence_deg")
        out = []
        for i, a in enumerate(ang):
            try:
                out.append(IncidenceAngle(math.radians(_num({"a": a}, "a", f"sweeps.incidence_deg[{i}]"))))
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(str(exc), f"sweeps.incidence_deg[{i}]") from None
        return out

    def pattern_sweep(self):
        s = self._sweeps()
        if "pattern" not in s:
            return None, None
        d = _check(s["pattern"], "sweeps.pattern", optional=("start_deg", "stop_deg", "step_deg", "observation_m"))
        p = "sweeps.pattern"
        sw = Sweep.horizontal(_num(d, "start_deg", p, 0.0), _num(d, "stop_deg", p, 360.0),
                              _num(d, "step_deg", p, 1.0, True), self.azimuth_offset_deg)
        obs = d.get("observation_m")
        if obs is not None:
            obs = _num(d, "observation_m", p, positive=True)
        return sw, obs

    def outputs(self):
        d = _check(self.raw.get("outputs", {}), "outputs", optional=("records",))
        return {"records": _bool(d, "records", "outputs", False)}

    def section(self, name):
        return self.raw.get(name, {})


SUBCOMMAND_KEYS = {
    "fit": ("targets", "synthesize", "init", "perturb", "bounds", "budget", "starts", "spread", "tol",
            "generalize_points"),
    "pattern": ("targets_deg", "compare_normal_only"),
    "optimize": ("baseline", "size_sweep"),
    "testbed": ("U", "snr_db", "noise_runs", "closed_loop", "closed_loop_U", "amplitude", "phase_offset_deg"),
}
