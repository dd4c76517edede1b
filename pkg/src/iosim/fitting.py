"""Least-squares fitting of element circuit parameters to target spectra.

The nine R/L/C values are searched in log10 space, the coupling admittances
``ys1``/``ys2`` as piecewise-linear tables with one knot per target
frequency.  The diode model, ``d1`` and ``d2`` stay fixed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .circuit import (
    DEFAULT_CONSTANTS,
    SCALAR_FIELDS,
    CircuitParams,
    CouplingTable,
    ElementState,
    STATE_OFF,
    STATE_ON,
    evaluate,
)
from .errors import ConfigError, IosimError

RIDGE = 1e-6
LOG_FLOOR = 1e-15


@dataclass(frozen=True)
class FitPoint:
    state: ElementState
    freq: float
    gamma_r: complex
    gamma_t: complex
    weight: float = 1.0


@dataclass(frozen=True)
class FitTarget:
    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        states = {p.state for p in pts}
        if len(states) < 2:
            raise ConfigError("fit target needs at least 2 states")
        for s in states:
            if len({p.freq for p in pts if p.state == s}) < 5:
                raise ConfigError(f"fit target needs at least 5 frequencies for state {s}")
        for p in pts:
            if not (math.isfinite(p.weight) and p.weight >= 0):
                raise ConfigError("fit weights must be finite and non-negative")

    @classmethod
    def from_params(cls, params, freqs, states=(STATE_OFF, STATE_ON), constants=DEFAULT_CONSTANTS):
        pts = []
        f = np.asarray(freqs, dtype=float)
        for s in states:
            r = evaluate(params, s, f, constants)
            for k, fk in enumerate(f):
                pts.append(FitPoint(s, float(fk), complex(r.gamma_r[k]), complex(r.gamma_t[k])))
        return cls(tuple(pts))

    @classmethod
    def from_rows(cls, rows):
        """Build from scatter-CSV rows; only normal-incidence rows are allowed."""
        pts = []
        for r in rows:
            freq, state, theta, phi, grr, gri, gtr, gti = r
            if theta != 0.0:
                raise ConfigError("fit targets must be at normal incidence (theta_deg = 0)")
            pts.append(FitPoint(ElementState.parse(state), freq, complex(grr, gri), complex(gtr, gti)))
        return cls(tuple(pts))

    @property
    def freqs(self):
        return tuple(sorted({p.freq for p in self.points}))

    def weights(self):
        return np.array([p.weight for p in self.points])


@dataclass
class FitResult:
    params: CircuitParams
    residual: float
    iterations: int
    converged: bool
    initial_residual: float = float("nan")
    point_errors: list = field(default_factory=list)

    def report(self):
        return {
            "residual": self.residual,
            "initial_residual": self.initial_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "per_point_errors": self.point_errors,
        }


def _errors(params, target, constants):
    """Complex model-minus-target errors for every point, grouped by state."""
    er = np.empty(len(target.points), complex)
    et = np.empty(len(target.points), complex)
    by_state = {}
    for i, p in enumerate(target.points):
        by_state.setdefault(p.state, []).append(i)
    for s, idx in by_state.items():
        f = np.array([target.points[i].freq for i in idx])
        r = evaluate(params, s, f, constants)
        for n, i in enumerate(idx):
            er[i] = r.gamma_r[n] - target.points[i].gamma_r
            et[i] = r.gamma_t[n] - target.points[i].gamma_t
    return er, et


def residual(params: CircuitParams, target: FitTarget, constants=DEFAULT_CONSTANTS) -> float:
    """Weighted RMS of the complex error over both coefficients."""
    w = target.weights()
    if not w.sum() > 0:
        raise ConfigError("all fit weights are zero")
    er, et = _errors(params, target, constants)
    return float(np.sqrt(np.sum(w * (np.abs(er) ** 2 + np.abs(et) ** 2)) / (2 * w.sum())))


class _Budget(IosimError):
    pass


class _Codec:
    """Maps CircuitParams to and from the flat search vector."""

    def __init__(self, init: CircuitParams, freqs, bounds):
        self.init = init
        self.freqs = tuple(freqs)
        self.n = len(self.freqs)
        lo, hi = [], []
        bounds = dict(bounds or {})
        unknown = set(bounds) - set(SCALAR_FIELDS) - {"ys1", "ys2"}
        if unknown:
            raise ConfigError(f"unknown bound fields {sorted(unknown)}", "bounds")
        for k in SCALAR_FIELDS:
            v = getattr(init, k)
            b = bounds.get(k, (v / 100 if v > 0 else 0.0, max(v, LOG_FLOOR) * 100))
            a, c = float(b[0]), float(b[1])
            if not a <= c or c <= 0:
                raise ConfigError(f"infeasible bounds {b!r}", f"bounds.{k}")
            if not a <= v <= c:
                raise ConfigError(f"initial value {v!r} outside bounds {b!r}", f"bounds.{k}")
            lo.append(math.log10(max(a, LOG_FLOOR)))
            hi.append(math.log10(max(c, LOG_FLOOR)))
        for k in ("ys1", "ys2"):
            (ra, rb), (ia, ib) = bounds.get(k, ((0.0, math.inf), (-math.inf, math.inf)))
            if not (ra <= rb and ia <= ib):
                raise ConfigError("infeasible coupling bounds", f"bounds.{k}")
            vals = np.asarray(getattr(init, k)(np.asarray(self.freqs)))
            if np.any(vals.real < ra) or np.any(vals.real > rb) or np.any(vals.imag < ia) or np.any(vals.imag > ib):
                raise ConfigError("initial coupling table outside bounds", f"bounds.{k}")
            lo += [ra] * self.n + [ia] * self.n
            hi += [rb] * self.n + [ib] * self.n
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        # a zero-width box pins the value; least_squares needs lo < hi
        self.free = self.lo < self.hi

    def encode(self, p: CircuitParams):
        x = [math.log10(max(getattr(p, k), LOG_FLOOR)) for k in SCALAR_FIELDS]
        for k in ("ys1", "ys2"):
            v = np.asarray(getattr(p, k)(np.asarray(self.freqs)))
            x += list(v.real) + list(v.imag)
        return np.array(x, dtype=float)

    def decode(self, x):
        kw = {k: 10.0 ** x[i] for i, k in enumerate(SCALAR_FIELDS)}
        o = len(SCALAR_FIELDS)
        for k in ("ys1", "ys2"):
            re = x[o:o + self.n]
            im = x[o + self.n:o + 2 * self.n]
            kw[k] = CouplingTable(self.freqs, tuple(re + 1j * im))
            o += 2 * self.n
        return self.init.replace(**kw)

    def knots(self, x):
        o = len(SCALAR_FIELDS)
        out = []
        for _ in range(2):
            out.append(x[o:o + self.n] + 1j * x[o + self.n:o + 2 * self.n])
            o += 2 * self.n
        return out


def fit_params(target: FitTarget, init: CircuitParams, bounds=None, budget=2000, seed=0,
               starts=4, tol=1e-3, constants=DEFAULT_CONSTANTS, spread=2.0) -> FitResult:
    """Fit ``init`` to ``target``.

    Parameters
    ----------
    bounds : dict, optional
        ``{field: (lo, hi)}`` in SI for the R/L/C fields and
        ``{"ys1": ((re_lo, re_hi), (im_lo, im_hi))}`` for coupling knots.
        Defaults to two decades either side of ``init`` and Re(ys) >= 0.
    budget : int
        Maximum number of model evaluations over all starts.
    starts : int
        Number of starts; the first is ``init``, the rest are seeded
        log-uniform perturbations by a factor in ``[1/spread, spread]`` per field.
    tol : float
        Residual below which the fit counts as converged; the search stops
        early once the residual drops under ``1e-3 * tol``.
    """
    if not spread >= 1:
        raise ConfigError("start spread must be >= 1")
    if budget < 0:
        raise ConfigError("budget must be non-negative")
    w = target.weights()
    if not w.sum() > 0:
        raise ConfigError("all fit weights are zero")
    codec = _Codec(init, target.freqs, bounds)
    sw = np.sqrt(w / (2 * w.sum()))
    x_init = codec.encode(init)
    r0 = residual(init, target, constants)
    errs0 = _point_errors(init, target, constants)
    best = {"x": x_init, "r": r0}
    used = [0]
    if budget == 0:
        return FitResult(init, r0, 0, False, r0, errs0)

    scale = [max(np.mean(np.abs(k)), 1e-12) for k in codec.knots(x_init)]

    def stage_fun(xf, xfull, free):
        x = xfull.copy()
        x[free] = xf
        return fun(x)

    def fun(x):
        if used[0] >= budget:
            raise _Budget()
        used[0] += 1
        try:
            p = codec.decode(x)
            er, et = _errors(p, target, constants)
        except (IosimError, FloatingPointError):
            return np.full(4 * len(w) + 2 * 2 * (codec.n - 1), 1e3)
        res = np.sqrt(np.sum(w * (np.abs(er) ** 2 + np.abs(et) ** 2)) / (2 * w.sum()))
        if res < best["r"] or (res == best["r"] and tuple(x) < tuple(best["x"])):
            best["x"], best["r"] = x, res
        if best["r"] <= tol * 1e-3:
            raise _Budget()
        ridge = []
        for kv, s in zip(codec.knots(x), scale):
            d = np.diff(kv) / s
            ridge += [math.sqrt(RIDGE) * d.real, math.sqrt(RIDGE) * d.imag]
        return np.concatenate([sw * er.real, sw * er.imag, sw * et.real, sw * et.imag, *ridge])

    ns = len(SCALAR_FIELDS)
    rng = np.random.default_rng(seed)
    x_starts = [x_init]
    for _ in range(max(starts, 1) - 1):
        x = x_init.copy()
        x[:ns] += np.log10(spread) * rng.uniform(-1, 1, ns)
        o = ns
        for _k in range(2):
            fac = spread ** rng.uniform(-1, 1)
            x[o:o + 2 * codec.n] *= fac
            o += 2 * codec.n
        x_starts.append(np.clip(x, codec.lo, codec.hi))

    sparsity = _jac_sparsity(codec, target)[:, codec.free]
    for x0 in x_starts:
        if used[0] >= budget or best["r"] <= tol * 1e-3:
            break
        # stage 0 line-scans each R/L/C value, stage 1 moves only R/L/C with
        # the couplings held, stage 2 frees everything
        try:
            x = _line_scan(fun, x0, codec, ns)
        except _Budget:
            break
        for free in (codec.free & (np.arange(len(x)) < ns), codec.free):
            lo, hi = codec.lo[free], codec.hi[free]
            try:
                sol = least_squares(stage_fun, np.clip(x[free], lo, hi), args=(x, free), bounds=(lo, hi),
                                    method="trf", jac_sparsity=sparsity[:, free[codec.free]], x_scale="jac",
                                    max_nfev=budget, xtol=1e-12, ftol=1e-12, gtol=1e-12)
            except _Budget:
                break
            x = x.copy()
            x[free] = sol.x
    params = codec.decode(best["x"]) if best["x"] is not x_init else init
    r = residual(params, target, constants)
    if r > r0:  # keep the monotone guarantee against ridge trade-offs
        params, r = init, r0
    return FitResult(params, r, used[0], bool(r <= tol), r0,
                     _point_errors(params, target, constants))


SCAN_SPAN = math.log10(2.2)
SCAN_POINTS = 401


def _line_scan(fun, x, codec, ns, passes=3):
    """Coordinate search over each free R/L/C value on a fixed log grid.

    Narrow resonances leave the residual flat away from the optimum, where
    gradient steps stall.  One value moved alone can still pull the
    resonance back onto the target, so a wide fine scan finds the basin.
    """
    x = x.copy()
    cur = float(np.sum(fun(x) ** 2))
    for _ in range(passes):
        moved = False
        for i in range(ns):
            if not codec.free[i]:
                continue
            grid = np.clip(x[i] + np.linspace(-SCAN_SPAN, SCAN_SPAN, SCAN_POINTS), codec.lo[i], codec.hi[i])
            for g in grid:
                y = x.copy()
                y[i] = g
                val = float(np.sum(fun(y) ** 2))
                if val < cur:
                    cur, x, moved = val, y, True
        if not moved:
            break
    return x


def _jac_sparsity(codec, target):
    """Each residual depends on all R/L/C values but only on the knots at its own frequency."""
    ns, n = len(SCALAR_FIELDS), codec.n
    npts = len(target.points)
    kidx = {f: i for i, f in enumerate(codec.freqs)}
    rows = 4 * npts + 4 * (n - 1)
    S = np.zeros((rows, ns + 4 * n), bool)
    S[:4 * npts, :ns] = True
    for i, p in enumerate(target.points):
        k = kidx[p.freq]
        for blk in range(4):
            S[[i, npts + i, 2 * npts + i, 3 * npts + i], ns + blk * n + k] = True
    for blk in range(4):
        for k in range(n - 1):
            S[4 * npts + blk * (n - 1) + k, ns + blk * n + k:ns + blk * n + k + 2] = True
    return S


def _point_errors(params, target, constants):
    er, et = _errors(params, target, constants)
    return [
        {"freq_hz": p.freq, "state": p.state.name, "err_gr": float(abs(a)), "err_gt": float(abs(b))}
        for p, a, b in zip(target.points, er, et)
    ]


def coupling_from_point(value, fc, freqs):
    """Extend a coupling admittance known at ``fc`` over ``freqs``.

    The real part is held constant; the susceptance follows an inductor
    (``~1/f``) when negative and a capacitor (``~f``) otherwise.
    """
    f = np.asarray(freqs, dtype=float)
    g, b = value.real, value.imag
    susc = b * fc / f if b < 0 else b * f / fc
    return CouplingTable(tuple(f), tuple(g + 1j * susc))


def _wrap_deg(a):
    return (a + 180.0) % 360.0 - 180.0


def state_contrast(params, fc, constants=DEFAULT_CONSTANTS):
    """OFF-state energy and ON-vs-OFF phase differences (degrees) at ``fc``."""
    on = evaluate(params, STATE_ON, fc, constants)
    off = evaluate(params, STATE_OFF, fc, constants)
    energy = abs(off.gamma_r) ** 2 + abs(off.gamma_t) ** 2
    dt = _wrap_deg(np.degrees(np.angle(on.gamma_t / off.gamma_t)))
    dr = _wrap_deg(np.degrees(np.angle(on.gamma_r / off.gamma_r)))
    return float(energy), float(dt), float(dr)


def calibrate_coupling(params: CircuitParams, fc, energy_off, dphase_t, dphase_r, start,
                       constants=DEFAULT_CONSTANTS):
    """Solve for ``ys1``/``ys2`` at ``fc`` so the element hits three scalar targets.

    Targets are the OFF-state energy and the signed ON-minus-OFF phase
    differences of the transmission and reflection coefficients.  The other
    parameters stay fixed.  Returns ``(ys1, ys2, info)``.
    """
    t_unit = np.exp(1j * np.radians(dphase_t))
    r_unit = np.exp(1j * np.radians(dphase_r))

    def build(x):
        return params.replace(ys1=CouplingTable((fc,), (x[0] * 1e-3 - 1j * x[1],)),
                              ys2=CouplingTable((fc,), (x[2] * 1e-1 - 1j * x[3] * 1e2,)))

    def fun(x):
        p = build(x)
        on = evaluate(p, STATE_ON, fc, constants)
        off = evaluate(p, STATE_OFF, fc, constants)
        e = abs(off.gamma_r) ** 2 + abs(off.gamma_t) ** 2
        ut = on.gamma_t / off.gamma_t
        ur = on.gamma_r / off.gamma_r
        ut, ur = ut / abs(ut) - t_unit, ur / abs(ur) - r_unit
        return np.array([10 * (e - energy_off), ut.real, ut.imag, ur.real, ur.imag])

    y1, y2 = start
    x0 = np.maximum([y1.real * 1e3, -y1.imag, y2.real * 1e1, -y2.imag * 1e-2], 0.0)
    sol = least_squares(fun, x0, bounds=(np.zeros(4), np.full(4, np.inf)), x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    p = build(sol.x)
    return p.ys1.values[0], p.ys2.values[0], {"cost": float(sol.cost), "nfev": int(sol.nfev)}
