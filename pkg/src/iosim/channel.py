"""IOS-cascaded channels, grouped affine decomposition and SINR/rate.

Channel matrices are indexed ``h[k, j]`` (transmit antenna ``k``, UE ``j``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .array import Antenna, ArrayLayout, GroupConfiguration, element_gammas
from .circuit import DEFAULT_CONSTANTS, PAPER_STATES, AngleParamTable
from .errors import ConfigError, GeometryError, ShapeError

INTERFERENCE_MODES = ("paper", "physical")


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, float) / 10)


def dbm_to_w(dbm):
    return 10.0 ** ((dbm - 30.0) / 10)


@dataclass(frozen=True)
class LinkBudget:
    """Link parameters.

    ``rf_gain`` is the complex amplitude gain ``C_j`` per UE (a scalar is
    broadcast); it defaults to the LNA gain only, because the receive antenna
    gain already enters the cascaded channel.
    """

    freq: float = 3.6e9
    tx_gain_dbi: float = 12.5
    rx_gain_dbi: float = 3.0
    lna_gain_db: float = 15.07
    rf_gain: tuple | complex | None = None
    noise_power_w: float = dbm_to_w(-96.0)
    pathloss_exponent: float = 2.0
    p_max_w: float = 0.2
    interference: str = "paper"
    direct_path: bool = False
    direct_attenuation_db: float = 0.0

    def __post_init__(self):
        if not self.noise_power_w > 0:
            raise ConfigError("noise variance must be positive", "budget.noise_dbm")
        if not self.p_max_w > 0:
            raise ConfigError("per-antenna power cap must be positive", "budget.p_max_w")
        if not self.freq > 0:
            raise ConfigError("carrier frequency must be positive", "budget.freq")
        if not self.pathloss_exponent > 0:
            raise ConfigError("pathloss exponent must be positive", "budget.pathloss_exponent")
        if self.interference not in INTERFERENCE_MODES:
            raise ConfigError(f"interference must be one of {INTERFERENCE_MODES}", "budget.interference")

    def c(self, J):
        if self.rf_gain is None:
            return np.full(J, 10 ** (self.lna_gain_db / 20), complex)
        g = np.broadcast_to(np.asarray(self.rf_gain, complex), (J,))
        return g.copy()

    def with_noise(self, noise_power_w):
        from dataclasses import replace

        return replace(self, noise_power_w=noise_power_w)


def _element_terms(layout: ArrayLayout, table: AngleParamTable, budget: LinkBudget, tx: Antenna, rx: Antenna,
                   state_set=PAPER_STATES, angle_aware=True, far_field_fast=False, gammas=None,
                   constants=DEFAULT_CONSTANTS):
    """Per-element contribution for every state: complex array ``(N_S, N)``."""
    lam = constants.c0 / budget.freq
    beta = 2 * math.pi / lam
    p = layout.positions
    n = layout.normal
    d_tx_vec = np.asarray(tx.position) - p
    d_rx_vec = np.asarray(rx.position) - p
    d_tx = np.linalg.norm(d_tx_vec, axis=1)
    d_rx = np.linalg.norm(d_rx_vec, axis=1)
    rx_dn = d_rx_vec @ n
    if np.any(np.abs(rx_dn) <= 1e-12 * d_rx):
        raise GeometryError("receiver lies on the surface plane")
    same_side = np.sign(rx_dn) == np.sign(d_tx_vec @ n)
    if gammas is None:
        shared = False
        if far_field_fast:
            dist = np.linalg.norm(np.asarray(tx.position) - np.asarray(layout.center))
            shared = dist > 2 * layout.aperture ** 2 / lam
        gammas = element_gammas(layout, table, tx.position, budget.freq, state_set, angle_aware, shared,
                                constants)
    gam = np.where(same_side[None, :], gammas[:, :, 0], gammas[:, :, 1])
    ne = budget.pathloss_exponent / 2
    amp = (lam / (4 * math.pi)) ** 2 * d_tx ** (-ne) * d_rx ** (-ne) * math.sqrt(tx.gain * rx.gain)
    terms = gam * (amp * np.exp(-1j * beta * (d_tx + d_rx)))[None, :]
    terms[:, ~layout.active_mask] = 0.0
    return terms


def direct_channel(budget: LinkBudget, tx: Antenna, rx: Antenna, constants=DEFAULT_CONSTANTS):
    if not budget.direct_path:
        return 0j
    lam = constants.c0 / budget.freq
    d = float(np.linalg.norm(np.asarray(tx.position) - np.asarray(rx.position)))
    if d == 0:
        raise GeometryError("transmitter and receiver coincide")
    att = 10 ** (-budget.direct_attenuation_db / 20)
    amp = math.sqrt(tx.gain * rx.gain) * lam / (4 * math.pi) * d ** (-budget.pathloss_exponent / 2)
    return att * amp * np.exp(-2j * math.pi * d / lam)


def cascaded_channel(layout: ArrayLayout, config: GroupConfiguration, table: AngleParamTable, budget: LinkBudget,
                     tx: Antenna, rx: Antenna, angle_aware=True, far_field_fast=False, include_direct=True,
                     constants=DEFAULT_CONSTANTS):
    """Complex gain from ``tx`` to ``rx`` through every driven element (plus the optional direct path)."""
    config.check_layout(layout)
    terms = _element_terms(layout, table, budget, tx, rx, config.state_set, angle_aware, far_field_fast,
                           constants=constants)
    est = config.element_states()
    idx = np.where(est >= 0)[0]
    h = complex(np.sum(terms[est[idx], idx]))
    if include_direct:
        h += direct_channel(budget, tx, rx, constants)
    return h


@dataclass
class ChannelSet:
    """Grouped channel ``h = base + sum_m s_m deltas[m]``."""

    base: np.ndarray
    deltas: np.ndarray
    c: np.ndarray = None
    noise_power_w: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.base = np.asarray(self.base, complex)
        self.deltas = np.asarray(self.deltas, complex)
        if self.base.ndim != 2:
            raise ShapeError("base must be K_t x J")
        if self.deltas.ndim != 3 or self.deltas.shape[1:] != self.base.shape:
            raise ShapeError("deltas must be M x K_t x J")
        if self.c is None:
            self.c = np.ones(self.base.shape[1], complex)
        self.c = np.asarray(self.c, complex)
        if self.c.shape != (self.base.shape[1],):
            raise ShapeError("one RF gain per UE is required")
        if not (np.all(np.isfinite(self.base)) and np.all(np.isfinite(self.deltas))):
            raise ConfigError("channel set has non-finite entries")
        if not self.noise_power_w > 0:
            raise ConfigError("noise variance must be positive")

    @property
    def M(self):
        return self.deltas.shape[0]

    @property
    def K(self):
        return self.base.shape[0]

    @property
    def J(self):
        return self.base.shape[1]

    def to_json(self):
        pair = lambda a: [[float(z.real), float(z.imag)] for z in np.ravel(a)]  # noqa: E731
        return {
            "shape": {"M": self.M, "K": self.K, "J": self.J},
            "base": pair(self.base),
            "deltas": pair(self.deltas),
            "c": pair(self.c),
            "noise_power_w": self.noise_power_w,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d):
        try:
            M, K, J = d["shape"]["M"], d["shape"]["K"], d["shape"]["J"]
            un = lambda a, shp: np.array([complex(r, i) for r, i in a]).reshape(shp)  # noqa: E731
            return cls(un(d["base"], (K, J)), un(d["deltas"], (M, K, J)), un(d["c"], (J,)),
                       float(d["noise_power_w"]), d.get("meta", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed channel set: {exc}") from None

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)


def group_deltas(layout: ArrayLayout, grouping: GroupConfiguration, table: AngleParamTable, budget: LinkBudget,
                 txs, rxs, angle_aware=True, far_field_fast=False, constants=DEFAULT_CONSTANTS) -> ChannelSet:
    """Base channel with every group in state 0, and one difference per group switched to state 1."""
    grouping.check_layout(layout)
    M = grouping.M
    if M < 1:
        raise ConfigError("at least one group is required")
    K, J = len(txs), len(rxs)
    g = np.asarray(grouping.group_of)
    configs = [np.zeros(M, int)] + [np.eye(M, dtype=int)[m] for m in range(M)]
    H = np.zeros((M + 1, K, J), complex)
    for k, tx in enumerate(txs):
        gammas = None
        if not far_field_fast:
            gammas = element_gammas(layout, table, tx.position, budget.freq, grouping.state_set, angle_aware,
                                    constants=constants)
        for j, rx in enumerate(rxs):
            terms = _element_terms(layout, table, budget, tx, rx, grouping.state_set, angle_aware,
                                   far_field_fast, gammas, constants)
            direct = direct_channel(budget, tx, rx, constants)
            idx = np.where(g >= 0)[0]
            for n, s in enumerate(configs):
                H[n, k, j] = np.sum(terms[s[g[idx]], idx]) + direct
    base = H[0]
    deltas = H[1:] - base[None]
    return ChannelSet(base, deltas, budget.c(J), budget.noise_power_w,
                      {"interference": budget.interference, "freq": budget.freq})


def assemble_channel(cs: ChannelSet, s):
    s = np.asarray(s)
    if s.shape != (cs.M,):
        raise ShapeError(f"state vector must have length {cs.M}")
    return cs.base + np.tensordot(s.astype(float), cs.deltas, axes=1)


@dataclass
class RateReport:
    sinr: np.ndarray
    rate: np.ndarray
    objective: float
    objective_kind: str = "min-rate"

    def to_json(self):
        return {
            "sinr": [float(x) for x in self.sinr],
            "sinr_db": [float(10 * np.log10(x)) if x > 0 else None for x in self.sinr],
            "rate": [float(x) for x in self.rate],
            "objective": float(self.objective),
            "objective_kind": self.objective_kind,
        }


def effective_gains(v, h):
    """``A[j, j'] = sum_k V[k, j'] h[k, j]`` (UE j receiving precoder column j')."""
    return np.einsum("...kj,...kl->...jl", h, v)


def sinr(v, h, c, noise_power_w, interference="paper"):
    """Per-UE SINR; works on stacked leading dimensions."""
    v = np.asarray(v, complex)
    h = np.asarray(h, complex)
    if v.shape[-2:] != h.shape[-2:]:
        raise ShapeError("V and h must both be K_t x J")
    if not noise_power_w > 0:
        raise ConfigError("noise variance must be positive")
    c = np.asarray(c, complex)
    if interference == "physical":
        a = np.abs(effective_gains(v, h)) ** 2  # a[j, j']
        desired = np.diagonal(a, axis1=-2, axis2=-1)
        interf = a.sum(axis=-1) - desired
    elif interference == "paper":
        # interferer j' contributes |C_j sum_k V[k,j'] h[k,j']|^2
        own = np.abs(np.sum(v * h, axis=-2)) ** 2  # per column j'
        desired = own
        interf = own.sum(axis=-1, keepdims=True) - own
    else:
        raise ConfigError(f"unknown interference mode {interference!r}")
    g = np.abs(c) ** 2
    return g * desired / (noise_power_w + g * interf)


def sinr_and_rate(v, h, budget_or_c, noise_power_w=None, interference=None, objective="min-rate") -> RateReport:
    """SINR and ``log2(1 + SINR)`` per UE.

    ``budget_or_c`` is a :class:`LinkBudget` or an array of RF gains (then
    ``noise_power_w`` is required).
    """
    if isinstance(budget_or_c, LinkBudget):
        c = budget_or_c.c(np.asarray(h).shape[1])
        noise = budget_or_c.noise_power_w if noise_power_w is None else noise_power_w
        mode = interference or budget_or_c.interference
    else:
        c = budget_or_c
        noise = noise_power_w
        mode = interference or "paper"
    if noise is None or not noise > 0:
        raise ConfigError("noise variance must be positive")
    g = sinr(v, h, c, noise, mode)
    r = np.log2(1 + g)
    return RateReport(g, r, objective_value(r, objective), objective)


def objective_value(rates, kind="min-rate"):
    if kind == "min-rate":
        return float(np.min(rates))
    if kind == "sum-rate":
        return float(np.sum(rates))
    raise ConfigError(f"unknown objective {kind!r}")
