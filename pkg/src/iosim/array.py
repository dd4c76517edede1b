"""Array geometry, grouping, reference patterns and beam metrics.

Coordinates are global Cartesian metres.  Directions use the usual
spherical convention: ``theta`` from +z, ``phi`` from +x in the xy-plane.
The default horizontal cut is ``theta = pi/2``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    DEFAULT_CONSTANTS,
    PAPER_STATES,
    AngleParamTable,
    IncidenceAngle,
    element_response,
)
from .errors import ConfigError, GeometryError, PatternError, ShapeError

IN_PLANE_TOL = 1e-12


class OpenIntervalError(PatternError):
    """Half-power level never crossed inside the sweep."""


@dataclass(frozen=True)
class ArrayLayout:
    """Rectangular grid of elements.

    Element ``(r, c)`` has flat index ``r * cols + c`` and sits at
    ``center + (c - (cols-1)/2) * col_pitch * u + (r - (rows-1)/2) * row_pitch * v``.
    The surface normal is ``u x v``.
    """

    rows: int
    cols: int
    col_pitch: float
    row_pitch: float
    center: tuple = (0.0, 0.0, 0.0)
    u: tuple = (0.0, 0.0, 1.0)
    v: tuple = (1.0, 0.0, 0.0)
    active: tuple | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("layout needs at least one row and one column")
        if not (self.col_pitch > 0 and self.row_pitch > 0):
            raise ConfigError("element pitch must be positive")
        u = np.asarray(self.u, float)
        v = np.asarray(self.v, float)
        if abs(np.linalg.norm(u) - 1) > 1e-9 or abs(np.linalg.norm(v) - 1) > 1e-9 or abs(u @ v) > 1e-9:
            raise ConfigError("layout axes u and v must be orthonormal")
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        if self.active is not None:
            act = tuple(bool(a) for a in self.active)
            if len(act) != self.size:
                raise ConfigError("active mask length must equal rows*cols")
            object.__setattr__(self, "active", act)

    @property
    def size(self):
        return self.rows * self.cols

    @property
    def normal(self):
        return np.cross(self.u, self.v)

    @property
    def positions(self):
        r, c = np.divmod(np.arange(self.size), self.cols)
        off_c = (c - (self.cols - 1) / 2) * self.col_pitch
        off_r = (r - (self.rows - 1) / 2) * self.row_pitch
        return np.asarray(self.center) + off_c[:, None] * np.asarray(self.u) + off_r[:, None] * np.asarray(self.v)

    @property
    def active_mask(self):
        if self.active is None:
            return np.ones(self.size, bool)
        return np.asarray(self.active)

    @property
    def aperture(self):
        """Largest dimension (diagonal) of the active elements' bounding box."""
        p = self.positions[self.active_mask]
        uu = p @ np.asarray(self.u)
        vv = p @ np.asarray(self.v)
        du = np.ptp(uu) + self.col_pitch
        dv = np.ptp(vv) + self.row_pitch
        return math.hypot(du, dv)

    def with_active(self, mask):
        return ArrayLayout(self.rows, self.cols, self.col_pitch, self.row_pitch, self.center, self.u, self.v,
                           tuple(bool(m) for m in mask))

    def subarray_mask(self, row0, nrows, col0, ncols):
        r, c = np.divmod(np.arange(self.size), self.cols)
        return (r >= row0) & (r < row0 + nrows) & (c >= col0) & (c < col0 + ncols)


@dataclass(frozen=True)
class GroupConfiguration:
    """Element-to-group map and one state index per group.

    ``group_of[i]`` is the group of element ``i`` (``-1`` for elements not
    driven, e.g. behind the absorber).  ``s[m]`` indexes ``state_set``.
    """

    group_of: tuple
    s: tuple
    state_set: tuple = PAPER_STATES

    def __post_init__(self):
        g = tuple(int(x) for x in self.group_of)
        s = tuple(int(x) for x in self.s)
        object.__setattr__(self, "group_of", g)
        object.__setattr__(self, "s", s)
        M = len(s)
        used = {x for x in g if x >= 0}
        if any(x >= M or x < -1 for x in g):
            raise ConfigError(f"group index outside 0..{M - 1}")
        missing = set(range(M)) - used
        if missing:
            raise ConfigError(f"empty groups {sorted(missing)}")
        if any(not 0 <= x < len(self.state_set) for x in s):
            raise ConfigError("group state outside the state set")

    @property
    def M(self):
        return len(self.s)

    def with_states(self, s):
        return GroupConfiguration(self.group_of, tuple(s), self.state_set)

    def element_states(self):
        """State index per element, -1 where undriven."""
        g = np.asarray(self.group_of)
        out = np.full(g.shape, -1)
        out[g >= 0] = np.asarray(self.s)[g[g >= 0]]
        return out

    def check_layout(self, layout: ArrayLayout):
        if len(self.group_of) != layout.size:
            raise ConfigError("group map length must equal the number of elements")
        g = np.asarray(self.group_of)
        if np.any(g[layout.active_mask] < 0):
            raise ConfigError("every active element must belong to a group")

    @classmethod
    def by_rows(cls, layout: ArrayLayout, s=None):
        """One group per grid row (inactive rows dropped, groups renumbered)."""
        r = np.arange(layout.size) // layout.cols
        return cls._from_labels(layout, r, s)

    @classmethod
    def by_blocks(cls, layout: ArrayLayout, block_rows, block_cols, s=None):
        if layout.rows % block_rows or layout.cols % block_cols:
            raise ConfigError("blocks must tile the layout")
        r, c = np.divmod(np.arange(layout.size), layout.cols)
        labels = (r // block_rows) * (layout.cols // block_cols) + c // block_cols
        return cls._from_labels(layout, labels, s)

    @classmethod
    def _from_labels(cls, layout, labels, s):
        act = layout.active_mask
        uniq = sorted(set(labels[act].tolist()))
        remap = {u: i for i, u in enumerate(uniq)}
        g = tuple(remap[l] if a else -1 for l, a in zip(labels.tolist(), act))
        s = tuple(s) if s is not None else (0,) * len(uniq)
        return cls(g, s)


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float

    def __post_init__(self):
        if not 0 <= self.theta <= math.pi:
            raise GeometryError("direction theta outside [0, pi]")
        object.__setattr__(self, "phi", float(self.phi) % (2 * math.pi))

    @property
    def unit(self):
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


def unit_vectors(theta, phi):
    theta = np.asarray(theta, float)
    phi = np.asarray(phi, float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(phi)], axis=-1)


@dataclass(frozen=True)
class Sweep:
    """Ordered observation directions with a scalar sweep coordinate in degrees."""

    coords: tuple
    theta: tuple
    phi: tuple
    periodic: bool = False

    def __post_init__(self):
        c = np.asarray(self.coords, float)
        if len(c) < 8:
            raise ConfigError("a sweep needs at least 8 samples")
        if np.any(np.diff(c) <= 0):
            raise ConfigError("sweep coordinates must be strictly increasing")
        if not len(self.theta) == len(self.phi) == len(c):
            raise ShapeError("sweep arrays must have equal length")

    @classmethod
    def horizontal(cls, start=0.0, stop=360.0, step=1.0, offset_deg=0.0):
        """Horizontal cut; coordinate ``a`` maps to global ``phi = a - offset_deg``.

        A sweep spanning exactly 360 degrees (``stop`` excluded) is periodic.
        """
        n = int(round((stop - start) / step))
        a = start + step * np.arange(n)
        periodic = abs(n * step - 360.0) < 1e-9
        if not periodic and a[-1] + step <= stop + 1e-9:
            a = np.append(a, stop)
        phi = np.radians(a - offset_deg)
        return cls(tuple(a), tuple(np.full(len(a), math.pi / 2)), tuple(phi), periodic)

    def __len__(self):
        return len(self.coords)

    @property
    def units(self):
        return unit_vectors(self.theta, self.phi)

    def directions(self):
        return [Direction(t, p) for t, p in zip(self.theta, self.phi)]

    def index_of(self, coord, tol=1e-9):
        c = np.asarray(self.coords)
        if self.periodic:
            d = (c - coord + 180.0) % 360.0 - 180.0
        else:
            d = c - coord
        i = int(np.argmin(np.abs(d)))
        step = np.min(np.diff(c))
        if abs(d[i]) > step / 2 + tol:
            raise GeometryError(f"target {coord} deg outside the sweep")
        return i


@dataclass(frozen=True)
class BeamPattern:
    sweep: Sweep
    values: np.ndarray = field(compare=False)
    kind: str = "power"
    normalization: str = "none"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (len(self.sweep),):
            raise ShapeError("pattern values must match the sweep length")
        if self.kind == "power" and np.any(v < 0):
            raise PatternError("power pattern has negative samples")
        object.__setattr__(self, "values", v)

    @property
    def coords(self):
        return np.asarray(self.sweep.coords)

    def normalized(self):
        m = np.max(np.abs(self.values))
        if m == 0:
            raise PatternError("cannot normalize an all-zero pattern")
        return BeamPattern(self.sweep, self.values / m, self.kind, "peak")

    def power(self):
        if self.kind == "power":
            return self
        return BeamPattern(self.sweep, np.abs(self.values) ** 2, "power", self.normalization)


@dataclass(frozen=True)
class Antenna:
    position: tuple
    gain_dbi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        if len(self.position) != 3:
            raise ConfigError("antenna position must have three coordinates")

    @property
    def gain(self):
        return 10 ** (self.gain_dbi / 10)


def _incidence_arrays(layout: ArrayLayout, tx_position, points=None):
    p = layout.positions if points is None else points
    d = np.asarray(tx_position, float) - p
    dist = np.linalg.norm(d, axis=-1)
    if np.any(dist == 0):
        raise GeometryError("transmitter coincides with an element")
    n = layout.normal
    dn = d @ n
    if np.any(np.abs(dn) <= IN_PLANE_TOL * dist):
        raise GeometryError("transmitter lies on the surface plane")
    theta = np.arccos(np.clip(np.abs(dn) / dist, 0.0, 1.0))
    du = d @ np.asarray(layout.u)
    dv = d @ np.asarray(layout.v)
    inplane = np.hypot(du, dv)
    phi = np.where(inplane <= IN_PLANE_TOL * dist, 0.0, np.arctan2(dv, du) % (2 * math.pi))
    return theta, phi


def local_incidence(layout: ArrayLayout, tx_position, element: int) -> IncidenceAngle:
    """Incidence angle at ``element`` in its own frame (polar from the normal, azimuth from ``u``)."""
    if not 0 <= element < layout.size:
        raise ConfigError("element index out of range")
    theta, phi = _incidence_arrays(layout, tx_position, layout.positions[element:element + 1])
    return IncidenceAngle(float(theta[0]), float(phi[0]))


def element_gammas(layout: ArrayLayout, table: AngleParamTable, tx_position, freq, state_set=PAPER_STATES,
                   angle_aware=True, shared_angle=False, constants=DEFAULT_CONSTANTS):
    """Per-element (Gamma_r, Gamma_t) for every state: array of shape ``(N_S, N, 2)``.

    ``angle_aware=False`` evaluates every element at normal incidence.
    ``shared_angle=True`` uses the incidence angle at the array center for all.
    """
    n_el = layout.size
    out = np.zeros((len(state_set), n_el, 2), complex)
    if angle_aware:
        if shared_angle:
            th, ph = _incidence_arrays(layout, tx_position, np.asarray(layout.center)[None, :])
            th, ph = np.full(n_el, th[0]), np.full(n_el, ph[0])
        else:
            th, ph = _incidence_arrays(layout, tx_position)
    else:
        th, ph = np.zeros(n_el), np.zeros(n_el)
    cache = {}
    for i in range(n_el):
        key = (th[i], ph[i])
        if key not in cache:
            angle = IncidenceAngle(float(th[i]), float(ph[i]))
            cache[key] = [element_response(table, s, angle, freq, constants) for s in state_set]
        for k, r in enumerate(cache[key]):
            out[k, i, 0] = r.gamma_r
            out[k, i, 1] = r.gamma_t
    return out


def _side_index(layout, tx_position, obs_dirs):
    """0 (reflection) where the observation is on the transmitter side, else 1."""
    n = layout.normal
    tx_side = np.sign((np.asarray(tx_position) - np.asarray(layout.center)) @ n)
    dots = obs_dirs @ n
    # in-plane directions count as the transmitter side
    return np.where(dots * tx_side >= 0, 0, 1)


def reference_pattern(layout: ArrayLayout, config: GroupConfiguration, table: AngleParamTable, tx: Antenna,
                      sweep: Sweep, freq, obs_distance=None, angle_aware=True, gammas=None,
                      constants=DEFAULT_CONSTANTS) -> BeamPattern:
    """Complex field scattered toward each sweep direction by the driven elements.

    The incident amplitude at element ``e`` is
    ``sqrt(G_t) * lambda / (4 pi d_e) * exp(-j beta d_e)`` (exact spherical
    wave).  With ``obs_distance=None`` the observation is in the far field,
    phase ``exp(+j beta r.(p_e - c))``; otherwise the observation point sits
    at that distance from the array center and exact distances are used,
    normalized so the far-field limit is recovered.
    """
    config.check_layout(layout)
    lam = constants.c0 / freq
    beta = 2 * math.pi / lam
    p = layout.positions
    c = np.asarray(layout.center)
    d_tx = np.linalg.norm(np.asarray(tx.position) - p, axis=1)
    a_inc = math.sqrt(tx.gain) * lam / (4 * math.pi * d_tx) * np.exp(-1j * beta * d_tx)
    if gammas is None:
        gammas = element_gammas(layout, table, tx.position, freq, config.state_set, angle_aware, constants=constants)
    est = config.element_states()
    drive = (est >= 0) & layout.active_mask
    idx = np.where(drive)[0]
    dirs = sweep.units
    side = _side_index(layout, tx.position, dirs)
    g = gammas[est[idx], idx, :]  # (n_drive, 2)
    coef = a_inc[idx][:, None] * g  # (n_drive, 2)
    rel = p[idx] - c
    if obs_distance is None:
        phase = np.exp(1j * beta * (dirs @ rel.T))  # (n_dir, n_drive)
    else:
        obs = c + obs_distance * dirs
        d_obs = np.linalg.norm(obs[:, None, :] - p[idx][None, :, :], axis=2)
        phase = (obs_distance / d_obs) * np.exp(-1j * beta * (d_obs - obs_distance))
    vals = np.where(side == 0, phase @ coef[:, 0], phase @ coef[:, 1])
    return BeamPattern(sweep, vals, kind="field")


def beam_pattern(refs, v_column) -> BeamPattern:
    """``F(dir) = |sum_k E_k(dir) v_k|^2``."""
    refs = list(refs)
    v = np.asarray(v_column, complex).ravel()
    if len(refs) != len(v):
        raise ShapeError("one reference pattern per transmit antenna is required")
    sw = refs[0].sweep
    for r in refs[1:]:
        if r.sweep != sw:
            raise ShapeError("reference patterns must share one sweep")
    field_ = sum(r.values * vk for r, vk in zip(refs, v))
    if np.isscalar(field_):
        field_ = np.zeros(len(sw), complex)
    return BeamPattern(sw, np.abs(field_) ** 2, "power")


def beam_direction(p: BeamPattern):
    """Sweep coordinate of the maximum; the first maximum wins ties."""
    v = p.power().values
    if not np.any(v > 0):
        raise PatternError("beam direction undefined for an all-zero pattern")
    return float(p.coords[int(np.argmax(v))])


def _step(i, d, n, periodic):
    j = i + d
    if periodic:
        return j % n
    return j if 0 <= j < n else None


# relative level below which two pattern samples count as equal (flat regions)
FLAT_RTOL = 1e-9


def main_lobe_bounds(p: BeamPattern):
    """Indices of the first local minima bracketing the main lobe (inclusive).

    Flat stretches (equal within ``FLAT_RTOL`` of the peak) are walked through.
    """
    v = p.power().values
    n = len(v)
    i = int(np.argmax(v))
    per = p.sweep.periodic
    tol = FLAT_RTOL * v[i]
    bounds = []
    left = n - 1  # both walks share n - 1 steps so they never overlap
    for d in (1, -1):
        j = i
        steps = 0
        while steps < left:
            k = _step(j, d, n, per)
            if k is None or not v[k] <= v[j] + tol:
                break
            j = k
            steps += 1
        left -= steps
        bounds.append(j)
    hi, lo = bounds
    if per and left == 0:
        return 0, n - 1
    return lo, hi


def _lobe_indices(lo, hi, n, periodic):
    if periodic and hi < lo:
        return np.r_[lo:n, 0:hi + 1]
    return np.arange(lo, hi + 1)


def hpbw(p: BeamPattern):
    """Width in degrees of the contiguous region around the peak with power >= peak/2."""
    v = p.power().values
    x = p.coords
    n = len(v)
    if not np.any(v > 0):
        raise PatternError("HPBW undefined for an all-zero pattern")
    i = int(np.argmax(v))
    half = v[i] / 2
    per = p.sweep.periodic
    span = 360.0
    edges = []
    for d in (-1, 1):
        j = i
        travelled = 0.0
        while True:
            k = _step(j, d, n, per)
            if k is None or travelled >= span:
                raise OpenIntervalError("half-power level not crossed inside the sweep")
            dx = abs(x[k] - x[j]) if not per else ((x[k] - x[j]) * d) % span
            if v[k] < half:
                frac = (v[j] - half) / (v[j] - v[k])
                edges.append(travelled + frac * dx)
                break
            travelled += dx
            j = k
    return float(edges[0] + edges[1])


def sll(p: BeamPattern):
    """Largest sidelobe relative to the main lobe in dB, or ``None`` without sidelobes."""
    v = p.power().values
    n = len(v)
    if not np.any(v > 0):
        raise PatternError("SLL undefined for an all-zero pattern")
    lo, hi = main_lobe_bounds(p)
    tol = FLAT_RTOL * v.max()
    inside = np.zeros(n, bool)
    inside[_lobe_indices(lo, hi, n, p.sweep.periodic)] = True
    best = None
    for k in range(n):
        if inside[k]:
            continue
        a = _step(k, -1, n, p.sweep.periodic)
        b = _step(k, 1, n, p.sweep.periodic)
        if a is None or b is None:
            continue
        if v[k] > v[a] + tol and v[k] >= v[b] - tol and v[k] > 0:
            best = v[k] if best is None else max(best, v[k])
    if best is None:
        return None
    return float(10 * np.log10(best / v.max()))


def _trapezoid_weights(x, periodic):
    x = np.asarray(x, float)
    n = len(x)
    if periodic:
        nxt = np.roll(x, -1)
        prv = np.roll(x, 1)
        return (((nxt - prv) % 360.0)) / 2
    w = np.empty(n)
    w[1:-1] = (x[2:] - x[:-2]) / 2
    w[0] = (x[1] - x[0]) / 2
    w[-1] = (x[-1] - x[-2]) / 2
    return w


def scattering_efficiency(p: BeamPattern):
    """Fraction of trapezoid-weighted power between the nulls bracketing the main lobe."""
    v = p.power().values
    w = _trapezoid_weights(p.coords, p.sweep.periodic)
    total = np.sum(w * v)
    if not total > 0:
        raise PatternError("efficiency undefined for zero total power")
    lo, hi = main_lobe_bounds(p)
    idx = _lobe_indices(lo, hi, len(v), p.sweep.periodic)
    return float(min(np.sum(w[idx] * v[idx]) / total, 1.0))


@dataclass
class PatternMetrics:
    beam_direction: float
    hpbw: float | None
    sll: float | None
    efficiency: float

    @classmethod
    def of(cls, p: BeamPattern):
        try:
            width = hpbw(p)
        except OpenIntervalError:
            width = None
        return cls(beam_direction(p), width, sll(p), scattering_efficiency(p))

    def to_dict(self):
        return {
            "beam_direction_deg": self.beam_direction,
            "hpbw_deg": self.hpbw,
            "sll_db": self.sll if self.sll is not None else "no-sidelobe",
            "efficiency": self.efficiency,
        }


def write_pattern_csv(patterns: dict, fh):
    """Columns ``angle_deg`` then one column per pattern (complex ones split in re/im)."""
    names = list(patterns)
    sw = patterns[names[0]].sweep
    cols = ["angle_deg"]
    for n in names:
        if np.iscomplexobj(patterns[n].values):
            cols += [f"re_{n}", f"im_{n}"]
        else:
            cols.append(n)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for i, a in enumerate(sw.coords):
        row = [repr(float(a))]
        for n in names:
            val = patterns[n].values[i]
            if np.iscomplexobj(patterns[n].values):
                row += [repr(float(val.real)), repr(float(val.imag))]
            else:
                row.append(repr(float(val)))
        w.writerow(row)


def pattern_json(p: BeamPattern):
    """Polar-plot-ready dictionary (power in dB relative to the peak)."""
    v = p.power().values
    peak = v.max() if v.max() > 0 else 1.0
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(v / peak)
    return {
        "angle_deg": [float(a) for a in p.coords],
        "power": [float(x) for x in v],
        "power_db": [float(x) if np.isfinite(x) else None for x in db],
    }


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True)
