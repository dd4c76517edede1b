"""Two-port equivalent circuit of a single IOS element.

Each element is four metallic layers (upper patch, upper feedline, lower
feedline, lower patch) modelled as shunt admittances, coupled by series
admittances ``ys1`` (patch to feedline, both sides) and ``ys2`` (feedline to
feedline).  The ABCD matrix of the chain gives the reflection and
transmission coefficients seen from two reference planes at ``d1``/``d2``.

All quantities are SI.  Functions accept scalar or array angular frequency
and broadcast elementwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DegenerateCircuitError, DomainError, ExtrapolationError

C0 = 299_792_458.0
Z0_FREE_SPACE = 377.0

# Magnitudes beyond this are treated as a short (admittance) or an open (impedance).
GUARD = 1e12


@dataclass(frozen=True)
class ModelConstants:
    z0: float = Z0_FREE_SPACE
    c0: float = C0

    def __post_init__(self):
        if not (self.z0 > 0 and self.c0 > 0):
            raise ConfigError("z0 and c0 must be positive")

    def wavelength(self, freq):
        return self.c0 / np.asarray(freq, dtype=float)

    def wavenumber(self, freq):
        return 2 * np.pi * np.asarray(freq, dtype=float) / self.c0


DEFAULT_CONSTANTS = ModelConstants()


@dataclass(frozen=True)
class FrequencyGrid:
    points: tuple
    center: float

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ConfigError("frequency grid is empty")
        if any(p <= 0 for p in pts):
            raise ConfigError("frequencies must be positive")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigError("frequency grid must be strictly increasing")
        if not pts[0] <= self.center <= pts[-1]:
            raise ConfigError("center frequency outside the grid")

    @classmethod
    def linspace(cls, start, stop, num, center=None):
        pts = np.linspace(start, stop, num)
        return cls(tuple(pts), center if center is not None else 0.5 * (start + stop))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.points, dtype=dtype)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class IncidenceAngle:
    """Local angle of incidence: polar ``theta`` from the surface normal, azimuth ``phi``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta < math.pi / 2:
            raise DomainError(f"incidence theta={self.theta!r} outside [0, pi/2)")
        object.__setattr__(self, "phi", float(self.phi) % (2 * math.pi))


NORMAL_INCIDENCE = IncidenceAngle(0.0, 0.0)


@dataclass(frozen=True)
class ElementGeometry:
    w_e: float
    l_e: float
    w_p: float
    l_p: float
    g: float
    w_f: float
    layer_separation: float
    thickness: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"{f.name} must be positive", f"geometry.{f.name}")
        if not (self.w_p < self.w_e and self.l_p < self.l_e):
            raise ConfigError("patch must be smaller than the element", "geometry")


# 3.6 GHz sample element.  The patch/ground gap is not given directly; it is
# what remains of the element length once the patch and the 0.02 cm ground
# strips are accounted for.
SAMPLE_GEOMETRY = ElementGeometry(
    w_e=2.87e-2,
    l_e=1.42e-2,
    w_p=1.6e-2,
    l_p=1.0e-2,
    g=0.19e-2,
    w_f=0.04e-2,
    layer_separation=0.3e-2,
    thickness=0.71e-2,
)


@dataclass(frozen=True)
class PinDiodeModel:
    """PIN diode: series R-L when ON, series L feeding a parallel R||C when OFF.

    ``l_on``/``l_off`` may be zero and ``r_off`` may be ``inf`` (ideal limits).
    """

    r_on: float
    l_on: float
    l_off: float
    c_off: float
    r_off: float

    def __post_init__(self):
        if self.r_on < 0 or self.l_on < 0 or self.l_off < 0:
            raise ConfigError("diode r_on, l_on, l_off must be non-negative", "diode")
        if not (self.c_off > 0 and self.r_off > 0):
            raise ConfigError("diode c_off and r_off must be positive", "diode")

    def admittance(self, on, omega):
        return pin_admittance(self, on, omega)


def _check_omega(omega):
    w = np.asarray(omega, dtype=float)
    if np.any(~(w > 0)):
        raise DomainError("angular frequency must be positive")
    return w


def _inv(x, what):
    x = np.asarray(x)
    if np.any(np.abs(x) < 1.0 / GUARD):
        raise DegenerateCircuitError(f"{what} is degenerate (|{what}| < {1.0 / GUARD:g})")
    return 1.0 / x


def pin_admittance(model: PinDiodeModel, on, omega):
    w = _check_omega(omega)
    if on:
        return _inv(model.r_on + 1j * w * model.l_on, "diode ON impedance")
    shunt = 1j * w * model.c_off + (0.0 if math.isinf(model.r_off) else 1.0 / model.r_off)
    return _inv(1j * w * model.l_off + _inv(shunt, "diode OFF admittance"), "diode OFF impedance")


@dataclass(frozen=True)
class ElementState:
    """ON/OFF flags for the diodes on the upper and lower patch."""

    upper: tuple
    lower: tuple

    def __post_init__(self):
        object.__setattr__(self, "upper", tuple(bool(x) for x in self.upper))
        object.__setattr__(self, "lower", tuple(bool(x) for x in self.lower))

    @classmethod
    def parse(cls, text):
        """``"ON,OFF"`` -> one diode per layer; ``"ON ON,OFF OFF"`` for more."""
        try:
            up, lo = text.split(",")
            conv = {"ON": True, "OFF": False}
            return cls(tuple(conv[t] for t in up.split()), tuple(conv[t] for t in lo.split()))
        except (ValueError, KeyError):
            raise ConfigError(f"cannot parse element state {text!r}") from None

    @property
    def name(self):
        word = lambda flags: " ".join("ON" if f else "OFF" for f in flags)  # noqa: E731
        return f"{word(self.upper)},{word(self.lower)}"

    def __str__(self):
        return self.name


STATE_OFF = ElementState((False,), (False,))
STATE_ON = ElementState((True,), (True,))
# index 0 is the reference state of the grouped channel decomposition
PAPER_STATES = (STATE_OFF, STATE_ON)


@dataclass(frozen=True)
class CouplingTable:
    """Complex admittance sampled versus frequency, linear in re/im between knots."""

    freqs: tuple
    values: tuple

    def __post_init__(self):
        f = tuple(float(x) for x in self.freqs)
        v = tuple(complex(x) for x in self.values)
        if not f or len(f) != len(v):
            raise ConfigError("coupling table needs matching, non-empty freqs and values")
        if any(b <= a for a, b in zip(f, f[1:])):
            raise ConfigError("coupling table frequencies must be strictly increasing")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value, freqs):
        return cls(tuple(freqs), (complex(value),) * len(freqs))

    def covers(self, freq, rtol=1e-9):
        f = np.asarray(freq, dtype=float)
        lo, hi = self.freqs[0], self.freqs[-1]
        return bool(np.all((f >= lo * (1 - rtol)) & (f <= hi * (1 + rtol))))

    def __call__(self, freq):
        if not self.covers(freq):
            raise ExtrapolationError(
                f"frequency outside coupling table [{self.freqs[0]:g}, {self.freqs[-1]:g}] Hz"
            )
        f = np.asarray(freq, dtype=float)
        if len(self.freqs) == 1:
            return np.full(f.shape, self.values[0]) if f.ndim else self.values[0]
        v = np.asarray(self.values)
        out = np.interp(f, self.freqs, v.real) + 1j * np.interp(f, self.freqs, v.imag)
        return out if f.ndim else complex(out)

    def scaled(self, factor):
        return CouplingTable(self.freqs, tuple(factor * v for v in self.values))


SCALAR_FIELDS = ("r1", "r2", "r3", "l1", "l2", "l3", "c1", "c2", "c3")


@dataclass(frozen=True)
class CircuitParams:
    """Equivalent-circuit parameters of one element at one incidence angle."""

    r1: float
    r2: float
    r3: float
    l1: float
    l2: float
    l3: float
    c1: float
    c2: float
    c3: float
    ys1: CouplingTable
    ys2: CouplingTable
    d1: float
    d2: float
    diode: PinDiodeModel = field(compare=True)

    def __post_init__(self):
        for name in ("r1", "r2", "r3"):
            if not getattr(self, name) >= 0:
                raise ConfigError("resistances must be non-negative", name)
        for name in ("l1", "l2", "l3", "c1", "c2", "c3"):
            if not getattr(self, name) > 0:
                raise ConfigError("inductances and capacitances must be positive", name)
        if not (self.d1 >= 0 and self.d2 >= 0):
            raise ConfigError("reference-plane distances must be non-negative", "d1/d2")

    def replace(self, **changes):
        return replace(self, **changes)

    def scalars(self):
        return {name: getattr(self, name) for name in SCALAR_FIELDS}


@dataclass(frozen=True)
class AbcdMatrix:
    a: complex
    b: complex
    c: complex
    d: complex

    def det(self):
        return self.a * self.d - self.b * self.c

    def __matmul__(self, other):
        return AbcdMatrix(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def to_array(self):
        return np.array([[self.a, self.b], [self.c, self.d]])

    @staticmethod
    def shunt(y):
        return AbcdMatrix(1.0, 0.0, y, 1.0)

    @staticmethod
    def series(z):
        return AbcdMatrix(1.0, z, 0.0, 1.0)


@dataclass(frozen=True)
class ScatterResponse:
    gamma_r: complex
    gamma_t: complex

    @property
    def power(self):
        return np.abs(self.gamma_r) ** 2 + np.abs(self.gamma_t) ** 2


def _patch_admittance(p: CircuitParams, diodes, w):
    ypin = sum(pin_admittance(p.diode, on, w) for on in diodes)
    inner = _inv(ypin + 1j * w * p.c1, "patch/diode admittance")
    branch = p.r1 + 1j * w * p.l1 + _inv(1j * w * p.c2, "C2 admittance") + inner
    return _inv(branch, "patch impedance") + _inv(p.r2 + 1j * w * p.l2, "ground impedance")


def layer_admittances(params: CircuitParams, state: ElementState, omega):
    """Shunt admittances (upper patch, upper feedline, lower feedline, lower patch)."""
    w = _check_omega(omega)
    y_um = _patch_admittance(params, state.upper, w)
    feed = params.r3 + 1j * w * params.l3 + _inv(1j * w * params.c3, "C3 admittance")
    y_f = _inv(feed, "feedline impedance")
    if state.lower == state.upper:
        y_lm = y_um
    else:
        y_lm = _patch_admittance(params, state.lower, w)
    for y, what in ((y_um, "upper patch"), (y_f, "feedline"), (y_lm, "lower patch")):
        if np.any(np.abs(y) > GUARD):
            raise DegenerateCircuitError(f"{what} admittance is a short (>{GUARD:g} S)")
    return y_um, y_f, y_f, y_lm


def abcd_cascade(y_um, y_uf, y_lf, y_lm, ys1, ys2) -> AbcdMatrix:
    """Shunt / series / shunt / series / shunt / series / shunt chain.

    Series branches carry impedance ``1/ys``; ``ys = inf`` is a direct connection.
    """
    for y, what in ((y_um, "y_um"), (y_uf, "y_uf"), (y_lf, "y_lf"), (y_lm, "y_lm")):
        if np.any(np.abs(y) > GUARD):
            raise DegenerateCircuitError(f"shunt {what} exceeds {GUARD:g} S")
    z1 = _inv(ys1, "ys1")
    z2 = _inv(ys2, "ys2")
    if np.any(np.abs(z1) > GUARD) or np.any(np.abs(z2) > GUARD):
        raise DegenerateCircuitError("series branch is an open circuit")
    m = AbcdMatrix.shunt(y_um)
    for factor in (
        AbcdMatrix.series(z1),
        AbcdMatrix.shunt(y_uf),
        AbcdMatrix.series(z2),
        AbcdMatrix.shunt(y_lf),
        AbcdMatrix.series(z1),
        AbcdMatrix.shunt(y_lm),
    ):
        m = m @ factor
    return m


def scatter_coefficients(m: AbcdMatrix, z0, beta, d1, d2) -> ScatterResponse:
    if not z0 > 0:
        raise DomainError("z0 must be positive")
    left = m.a + m.b / z0
    right = z0 * (m.c + m.d / z0)
    den = left + right
    if np.any(np.abs(den) < 1e-15):
        raise DegenerateCircuitError("(A+B/Z0) + Z0(C+D/Z0) vanishes")
    gamma_r = (left - right) / den * np.exp(-2j * beta * d1)
    gamma_t = 2.0 / den * np.exp(-1j * beta * (d1 + d2))
    return ScatterResponse(gamma_r, gamma_t)


def evaluate(params: CircuitParams, state: ElementState, freq, constants=DEFAULT_CONSTANTS):
    """Full pipeline for one parameter set; ``freq`` may be an array."""
    f = np.asarray(freq, dtype=float)
    w = 2 * np.pi * f
    ys1 = params.ys1(f)
    ys2 = params.ys2(f)
    m = abcd_cascade(*layer_admittances(params, state, w), ys1, ys2)
    return scatter_coefficients(m, constants.z0, constants.wavenumber(f), params.d1, params.d2)


def _blend(a: CircuitParams, b: CircuitParams, t: float) -> CircuitParams:
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    scal = {k: (1 - t) * getattr(a, k) + t * getattr(b, k) for k in SCALAR_FIELDS}
    ys = {}
    for k in ("ys1", "ys2"):
        ta, tb = getattr(a, k), getattr(b, k)
        if ta.freqs == tb.freqs:
            knots = ta.freqs
            va, vb = np.asarray(ta.values), np.asarray(tb.values)
        else:
            knots = tuple(sorted(set(ta.freqs) | set(tb.freqs)))
            va = np.asarray(ta(np.asarray(knots)))
            vb = np.asarray(tb(np.asarray(knots)))
        ys[k] = CouplingTable(knots, tuple((1 - t) * va + t * vb))
    return replace(a, **scal, **ys)


class AngleParamTable:
    """Circuit parameters sampled on a (theta, phi) grid, bilinearly interpolated.

    A table with a single phi column is azimuthally symmetric; with several
    columns phi wraps around with period 2*pi.  Theta never extrapolates.
    """

    def __init__(self, samples: Mapping[tuple, CircuitParams]):
        if not samples:
            raise ConfigError("angle table is empty")
        norm = {}
        for (theta, phi), p in samples.items():
            key = (float(theta), float(phi) % (2 * math.pi))
            norm[key] = p
        self.thetas = tuple(sorted({k[0] for k in norm}))
        self.phis = tuple(sorted({k[1] for k in norm}))
        if len(norm) != len(self.thetas) * len(self.phis):
            raise ConfigError("angle table samples must form a full theta x phi grid")
        if (0.0, 0.0) not in norm:
            raise ConfigError("angle table must contain the normal-incidence sample (0, 0)")
        first = next(iter(norm.values()))
        for p in norm.values():
            if p.diode != first.diode or (p.d1, p.d2) != (first.d1, first.d2):
                raise ConfigError("diode model and d1/d2 must be the same for every angle")
        self.samples = norm

    @classmethod
    def single(cls, params: CircuitParams):
        return cls({(0.0, 0.0): params})

    @property
    def normal(self) -> CircuitParams:
        return self.samples[(0.0, 0.0)]

    def normal_only(self):
        return AngleParamTable.single(self.normal)

    def _theta_bracket(self, theta):
        ts = self.thetas
        tol = 1e-12
        if theta < ts[0] - tol or theta > ts[-1] + tol:
            raise ExtrapolationError(
                f"theta={math.degrees(theta):.4f} deg outside table range "
                f"[{math.degrees(ts[0]):.4f}, {math.degrees(ts[-1]):.4f}] deg"
            )
        i = int(np.searchsorted(ts, theta, side="right")) - 1
        i = min(max(i, 0), len(ts) - 1)
        if i == len(ts) - 1 or abs(theta - ts[i]) <= tol:
            return i, i, 0.0
        return i, i + 1, (theta - ts[i]) / (ts[i + 1] - ts[i])

    def _phi_bracket(self, phi):
        ps = self.phis
        if len(ps) == 1:
            return 0, 0, 0.0
        phi = phi % (2 * math.pi)
        j = int(np.searchsorted(ps, phi, side="right")) - 1
        if j < 0:
            # below the first column: wrap from the last one
            lo, hi = ps[-1] - 2 * math.pi, ps[0]
            return len(ps) - 1, 0, (phi - lo) / (hi - lo)
        if phi == ps[j]:
            return j, j, 0.0
        hi = ps[j + 1] if j + 1 < len(ps) else ps[0] + 2 * math.pi
        return j, (j + 1) % len(ps), (phi - ps[j]) / (hi - ps[j])

    def interpolate(self, angle: IncidenceAngle) -> CircuitParams:
        return interpolate_params(self, angle)

    def response(self, state, angle, freq, constants=DEFAULT_CONSTANTS):
        return element_response(self, state, angle, freq, constants)


def interpolate_params(table: AngleParamTable, angle: IncidenceAngle) -> CircuitParams:
    if not table.samples:
        raise ConfigError("angle table is empty")
    i0, i1, u = table._theta_bracket(angle.theta)
    j0, j1, v = table._phi_bracket(angle.phi)
    t, p = table.thetas, table.phis
    row0 = _blend(table.samples[(t[i0], p[j0])], table.samples[(t[i0], p[j1])], v)
    row1 = _blend(table.samples[(t[i1], p[j0])], table.samples[(t[i1], p[j1])], v)
    return _blend(row0, row1, u)


def element_response(table: AngleParamTable, state: ElementState, angle: IncidenceAngle, freq,
                     constants=DEFAULT_CONSTANTS) -> ScatterResponse:
    return evaluate(interpolate_params(table, angle), state, freq, constants)


def sweep_rows(table: AngleParamTable, states: Sequence[ElementState], freqs, angles=(NORMAL_INCIDENCE,),
               constants=DEFAULT_CONSTANTS):
    """Rows ``(freq_hz, state, theta_deg, phi_deg, re_gr, im_gr, re_gt, im_gt)`` for a scatter sweep."""
    rows = []
    f = np.asarray(freqs, dtype=float)
    for state in states:
        for angle in angles:
            r = element_response(table, state, angle, f, constants)
            gr = np.atleast_1d(r.gamma_r)
            gt = np.atleast_1d(r.gamma_t)
            for k, fk in enumerate(np.atleast_1d(f)):
                rows.append((float(fk), state.name, math.degrees(angle.theta), math.degrees(angle.phi),
                             float(gr[k].real), float(gr[k].imag), float(gt[k].real), float(gt[k].imag)))
    return rows
