"""Joint digital precoder / IOS group-state optimization.

Given a grouped channel, every candidate state vector ``s`` gets its own
precoder (zero-forcing or matched filter, whichever scores better) scaled
so the strongest antenna transmits exactly ``P_T``; solvers differ only in
how they search over ``s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, RateReport, assemble_channel, objective_value, sinr
from .errors import CapabilityError, ConfigError

EXHAUSTIVE_LIMIT_BITS = 30
PENALTY = 100.0
COND_LIMIT = 1e12


@dataclass
class ProblemSpec:
    channels: ChannelSet
    p_max_w: float = 0.2
    gamma0: float = 10 ** 0.6
    objective: str = "min-rate"
    interference: str = "paper"
    n_states: int = 2
    solver: str = "exhaustive"
    seed: int = 0
    max_iter: int = 100
    anneal_steps: int = 400
    anneal_t0: float | None = None
    anneal_cooling: float = 0.99

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ConfigError("SINR threshold must be positive", "problem.gamma0_db")
        if not self.p_max_w > 0:
            raise ConfigError("per-antenna power cap must be positive", "problem.p_max_w")
        if self.objective not in ("min-rate", "sum-rate"):
            raise ConfigError("objective must be min-rate or sum-rate", "problem.objective")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {sorted(SOLVERS)}", "problem.solver")
        if self.n_states != 2:
            raise ConfigError("only binary group states are supported", "problem.n_states")

    @property
    def M(self):
        return self.channels.M


@dataclass
class Solution:
    s: tuple
    v: np.ndarray
    report: RateReport
    feasible: bool
    violations: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    fallback: bool = False

    @property
    def objective(self):
        return self.report.objective

    def to_json(self):
        return {
            "s": [int(x) for x in self.s],
            "v": [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(self.v)],
            "rates": [float(r) for r in self.report.rate],
            "sinr": [float(g) for g in self.report.sinr],
            "objective": float(self.report.objective),
            "objective_kind": self.report.objective_kind,
            "feasible": bool(self.feasible),
            "violations": [list(v) for v in self.violations],
            "trace": [float(t) for t in self.trace],
            "zf_fallback": bool(self.fallback),
        }


def digital_beamformer(h, p_max_w, mode="zf"):
    """Precoder ``V`` (``K_t x J``) for channel ``h`` (``K_t x J``).

    Zero-forcing ``V = G^H (G G^H)^-1`` with ``G = h^T``; when ``G`` is
    rank-deficient, matched filtering ``V = G^H`` is used instead.  Either
    way every column is scaled by one common factor so that the largest
    per-antenna power equals ``p_max_w``.  Returns ``(V, fallback)``.
    Stacked inputs ``(..., K_t, J)`` are supported.
    """
    h = np.asarray(h, complex)
    K, J = h.shape[-2:]
    if mode == "zf" and J > K:
        raise CapabilityError(f"zero-forcing needs J <= K_t (got J={J}, K_t={K})")
    g = np.swapaxes(h, -1, -2)  # (..., J, K)
    gh = np.conj(np.swapaxes(g, -1, -2))  # (..., K, J)
    gram = g @ gh
    fallback = np.zeros(h.shape[:-2], bool)
    if mode == "zf":
        cond = np.linalg.cond(gram)
        fallback = ~(cond < COND_LIMIT)
        safe = np.where(fallback[..., None, None], np.eye(J), gram)
        v = np.where(fallback[..., None, None], gh, gh @ np.linalg.inv(safe))
    elif mode == "mf":
        v = gh
        fallback = np.ones(h.shape[:-2], bool)
    else:
        raise ConfigError(f"unknown beamformer mode {mode!r}")
    power = np.sum(np.abs(v) ** 2, axis=-1)  # (..., K)
    peak = power.max(axis=-1)
    scale = np.sqrt(p_max_w / np.where(peak > 0, peak, 1.0))
    v = v * scale[..., None, None]
    if v.ndim == 2:
        return v, bool(fallback)
    return v, fallback


def _evaluate(spec: ProblemSpec, S):
    """Objective, SINR, penalized score and precoders for a batch of state vectors.

    Each configuration gets the better (by penalized score) of the
    zero-forcing and matched-filter precoders.
    """
    cs = spec.channels
    S = np.atleast_2d(np.asarray(S, float))
    H = cs.base[None] + np.einsum("nm,mkj->nkj", S, cs.deltas)
    best = None
    for mode in ("zf", "mf"):
        if mode == "zf" and H.shape[2] > H.shape[1]:
            continue
        V, fb = digital_beamformer(H, spec.p_max_w, mode)
        g = sinr(V, H, cs.c, cs.noise_power_w, spec.interference)
        rates = np.log2(1 + g)
        obj = rates.min(axis=1) if spec.objective == "min-rate" else rates.sum(axis=1)
        shortfall = np.maximum(0.0, (spec.gamma0 - g) / spec.gamma0).sum(axis=1)
        score = obj - PENALTY * shortfall
        cur = [obj, g, score, shortfall, V, fb]
        if best is None:
            best = cur
        else:
            take = score > best[2]
            for n in range(len(cur)):
                shape = (-1,) + (1,) * (np.ndim(cur[n]) - 1)
                best[n] = np.where(take.reshape(shape), cur[n], best[n])
    return tuple(best)


def _solution(spec, s, trace=None):

    obj, g, score, short, V, fb = _evaluate(spec, [s])
    rates = np.log2(1 + g[0])
    rep = RateReport(g[0], rates, float(obj[0]), spec.objective)
    sol = Solution(tuple(int(x) for x in s), V[0], rep, False, [], list(trace or []), bool(fb[0]))
    sol.violations = feasibility_check(sol, spec)
    sol.feasible = not sol.violations
    return sol


def all_configs(M, start=0, stop=None):
    """Rows of ``{0,1}^M`` in lexicographic order (first group is the most significant bit)."""
    stop = 2 ** M if stop is None else stop
    n = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(M - 1, -1, -1, dtype=np.int64)
    return ((n[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def exhaustive_ios(spec: ProblemSpec, chunk=1 << 14) -> Solution:
    """Global optimum over all ``2^M`` group configurations.

    Feasible configurations win; among them the best objective, ties going
    to the lexicographically smallest ``s``.  Without any feasible one the
    best penalized score is returned with ``feasible=False``.
    """
    M = spec.M
    if M * math.log2(spec.n_states) > EXHAUSTIVE_LIMIT_BITS:
        raise CapabilityError(
            f"exhaustive search over 2^{M} configurations exceeds the 2^{EXHAUSTIVE_LIMIT_BITS} bound; "
            "use --solver alternating or annealing"
        )
    best_feas = (-np.inf, None)
    best_any = (-np.inf, None)
    total = 2 ** M
    for start in range(0, total, chunk):
        S = all_configs(M, start, min(total, start + chunk))
        obj, g, score, short, _, _ = _evaluate(spec, S)
        feas = short == 0
        if np.any(feas):
            i = int(np.argmax(np.where(feas, obj, -np.inf)))
            if obj[i] > best_feas[0]:
                best_feas = (obj[i], S[i])
        i = int(np.argmax(score))
        if score[i] > best_any[0]:
            best_any = (score[i], S[i])
    s = best_feas[1] if best_feas[1] is not None else best_any[1]
    return _solution(spec, s)


def _score(spec, s):
    return float(_evaluate(spec, [s])[2][0])


def _greedy(spec, s, trace):
    """Steepest single-group flips until no strict improvement."""
    s = np.array(s, int)
    cur = _score(spec, s)
    for _ in range(spec.max_iter):
        cands = np.repeat(s[None], spec.M, axis=0)
        cands[np.arange(spec.M), np.arange(spec.M)] ^= 1
        scores = _evaluate(spec, cands)[2]
        m = int(np.argmax(scores))
        if not scores[m] > cur:
            break
        s, cur = cands[m], float(scores[m])
        trace.append(cur)
    return s, cur


def alternating_opt(spec: ProblemSpec, init=None) -> Solution:
    """Alternate zero-forcing precoding with greedy group flips.

    Each flip candidate is scored with its own precoder update, so the
    recorded (penalized) objective never decreases.
    """
    s = np.zeros(spec.M, int) if init is None else np.array(init, int)
    trace = [_score(spec, s)]
    s, _ = _greedy(spec, s, trace)
    return _solution(spec, s, trace)


def annealing_opt(spec: ProblemSpec, init=None) -> Solution:
    """Simulated annealing over group states with geometric cooling.

    The best configuration seen is kept and polished by greedy flips at the
    end.  ``anneal_t0 = 0`` accepts improving moves only.
    """
    rng = np.random.default_rng(spec.seed)
    s = np.zeros(spec.M, int) if init is None else np.array(init, int)
    cur = _score(spec, s)
    best_s, best = s.copy(), cur
    t = spec.anneal_t0
    if t is None:
        t = max(abs(cur), 1.0) * 0.5
    trace = [cur]
    for _ in range(spec.anneal_steps):
        m = int(rng.integers(spec.M))
        cand = s.copy()
        cand[m] ^= 1
        val = _score(spec, cand)
        delta = val - cur
        u = rng.random()
        if delta > 0 or (t > 0 and u < math.exp(delta / t)):
            s, cur = cand, val
            if cur > best or (cur == best and tuple(s) < tuple(best_s)):
                best_s, best = s.copy(), cur
        t *= spec.anneal_cooling
        trace.append(best)
    best_s, best = _greedy(spec, best_s, trace)
    return _solution(spec, best_s, trace)


SOLVERS = {"exhaustive": exhaustive_ios, "alternating": alternating_opt, "annealing": annealing_opt}


def solve(spec: ProblemSpec) -> Solution:
    return SOLVERS[spec.solver](spec)


def feasibility_check(sol: Solution, spec: ProblemSpec):
    """List of ``(constraint, index, margin)`` for every violated constraint.

    Margins are positive amounts of violation: ``gamma0 - gamma_j`` for the
    SINR constraint and ``[V V^H]_kk - P_T`` for the power constraint.
    """
    out = []
    cs = spec.channels
    h = assemble_channel(cs, np.asarray(sol.s)) if len(sol.s) == cs.M else None
    if h is not None:
        g = sinr(sol.v, h, cs.c, cs.noise_power_w, spec.interference)
        for j, gj in enumerate(g):
            if not gj >= spec.gamma0:
                out.append(("sinr", j, float(spec.gamma0 - gj)))
    else:
        out.append(("states", -1, float(abs(len(sol.s) - cs.M))))
    power = np.sum(np.abs(np.asarray(sol.v)) ** 2, axis=1)
    for k, pk in enumerate(power):
        if pk > spec.p_max_w * (1 + 1e-9):
            out.append(("power", k, float(pk - spec.p_max_w)))
    for m, sm in enumerate(sol.s):
        if sm not in range(spec.n_states):
            out.append(("states", m, float(sm)))
    return out


def random_configs(M, n, rng):
    return rng.integers(0, 2, size=(n, M))


def config_objective(spec: ProblemSpec, s):
    """Objective (unpenalized) of one configuration with its ZF precoder."""
    return float(_evaluate(spec, [s])[0][0])


def matched_baseline(spec: ProblemSpec):
    """All-zeros configuration with the matched-filter precoder."""
    cs = spec.channels
    v, _ = digital_beamformer(cs.base, spec.p_max_w, mode="mf")
    g = sinr(v, cs.base, cs.c, cs.noise_power_w, spec.interference)
    return objective_value(np.log2(1 + g), spec.objective)


__all__ = [
    "ProblemSpec", "Solution", "digital_beamformer", "exhaustive_ios", "alternating_opt", "annealing_opt",
    "feasibility_check", "solve", "all_configs", "config_objective", "matched_baseline",
]
