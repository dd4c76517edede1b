"""Reference parameter set of the 3.6 GHz sample element.

The nine R/L/C values are the published ones.  The diode component values
are configuration defaults chosen so that, together with calibrated
coupling admittances, the element reproduces the published state contrast
at the center frequency.  The coupling tables are not transcribed; they are
regenerated by :func:`build_normal_params` and shipped as package data.

Run ``python3 -m iosim.defaults`` to rewrite the shipped data files.
"""
from __future__ import annotations

import math
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .circuit import C0, AngleParamTable, CircuitParams, CouplingTable, PinDiodeModel
from .fitting import calibrate_coupling, coupling_from_point

F_CENTER = 3.6e9
LAMBDA_C = C0 / F_CENTER

# Table values as published: resistances in ohm, inductances in nH, capacitances in pF.
TABLE_RLC = {
    "r1": 10 ** -3.18,
    "r2": 10 ** -3.78,
    "r3": 10 ** -7.07,
    "l1": 10 ** -3.17 * 1e-9,
    "l2": 0.40e-9,
    "l3": 10 ** -2.04 * 1e-9,
    "c1": 8.03e-12,
    "c2": 962.24e-12,
    "c3": 209.45e-12,
}
REF_PLANE = 0.84 * LAMBDA_C

DEFAULT_DIODE = PinDiodeModel(r_on=0.26, l_on=0.665e-9, l_off=0.65e-9, c_off=0.32e-12, r_off=5.2e3)

# Published state contrast at the center frequency.
ENERGY_OFF = 0.55
DPHASE_T = 180.0
DPHASE_R = 130.0
# The ON-minus-OFF reflection phase is taken as -130 deg (the +130 branch has
# no passive solution near the analytic start below).
DPHASE_R_SIGNED = -DPHASE_R

# Coupling tables span 3.0-4.2 GHz in 50 MHz steps.
COUPLING_FREQS = tuple(float(f) for f in np.arange(3000, 4201, 50) * 1e6)

# Angle samples of the default angle table (degrees).
ANGLE_SAMPLES_DEG = (0, 10, 20, 30, 40, 50, 60, 70, 80, 85)

DATA_NORMAL = "element_normal.yaml"
DATA_ANGLES = "element_angles.yaml"


def analytic_coupling_start(rlc=TABLE_RLC, fc=F_CENTER, z0=377.0):
    """Closed-form starting point for the coupling calibration.

    ``ys2`` cancels the two feedline shunts (series impedance ``-2/Y_f``),
    which leaves an almost lossless inner section; ``ys1`` then puts the
    outer patches a small susceptance away from the matched condition.
    """
    w = 2 * math.pi * fc
    yf = 1 / (rlc["r3"] + 1j * w * rlc["l3"] + 1 / (1j * w * rlc["c3"]))
    z2 = -2 / yf
    z1 = (z2 + 1j * 0.061 * z0) / 2
    return 1 / z1, 1 / z2


def _base_params(diode=DEFAULT_DIODE, freqs=COUPLING_FREQS):
    zero = CouplingTable.constant(1.0, freqs)
    return CircuitParams(**TABLE_RLC, ys1=zero, ys2=zero, d1=REF_PLANE, d2=REF_PLANE, diode=diode)


def build_normal_params(diode=DEFAULT_DIODE, freqs=COUPLING_FREQS) -> CircuitParams:
    """Calibrate ``ys1``/``ys2`` at the center frequency and extend them over ``freqs``."""
    base = _base_params(diode, (F_CENTER,))
    y1, y2, _ = calibrate_coupling(base, F_CENTER, ENERGY_OFF, DPHASE_T, DPHASE_R_SIGNED,
                                   analytic_coupling_start())
    return base.replace(ys1=coupling_from_point(y1, F_CENTER, freqs),
                        ys2=coupling_from_point(y2, F_CENTER, freqs))


def project_params(p: CircuitParams, theta) -> CircuitParams:
    """Oblique-incidence sample by TE impedance projection.

    Every network admittance is scaled by ``1/cos(theta)`` (series R and L
    shrink by ``cos``, capacitors grow by ``1/cos``), which is the same as
    seeing the normal-incidence network from a ``Z0/cos(theta)`` line.  The
    diode model is left unchanged.
    """
    c = math.cos(theta)
    kw = {k: getattr(p, k) * c for k in ("r1", "r2", "r3", "l1", "l2", "l3")}
    kw.update({k: getattr(p, k) / c for k in ("c1", "c2", "c3")})
    kw["ys1"] = p.ys1.scaled(1 / c)
    kw["ys2"] = p.ys2.scaled(1 / c)
    return p.replace(**kw)


def build_angle_table(normal: CircuitParams, angles_deg=ANGLE_SAMPLES_DEG) -> AngleParamTable:
    return AngleParamTable({(math.radians(a), 0.0): project_params(normal, math.radians(a)) for a in angles_deg})


def _data_path(name):
    return resources.files("iosim") / "data" / name


@lru_cache(maxsize=None)
def default_table() -> AngleParamTable:
    from .paramio import load_table

    with resources.as_file(_data_path(DATA_ANGLES)) as p:
        return load_table(p)


@lru_cache(maxsize=None)
def default_params() -> CircuitParams:
    from .paramio import load_table

    with resources.as_file(_data_path(DATA_NORMAL)) as p:
        return load_table(p).normal


def write_data(directory=None):
    from .paramio import save_table

    directory = Path(directory) if directory else Path(__file__).parent / "data"
    directory.mkdir(parents=True, exist_ok=True)
    normal = build_normal_params()
    save_table(AngleParamTable.single(normal), directory / DATA_NORMAL)
    save_table(build_angle_table(normal), directory / DATA_ANGLES)
    return directory


if __name__ == "__main__":
    print(write_data())
