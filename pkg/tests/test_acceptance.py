"""Acceptance criteria, one test per criterion.

Every test records a PASS/FAIL line (printed in the terminal summary) and
then asserts, so a red criterion shows up as a failing test.
"""
import cmath
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from iosim.array import Antenna, ArrayLayout, GroupConfiguration, Sweep, hpbw, reference_pattern
from iosim.channel import LinkBudget, assemble_channel, cascaded_channel, group_deltas
from iosim.circuit import (
    STATE_OFF,
    STATE_ON,
    AbcdMatrix,
    AngleParamTable,
    CouplingTable,
    CircuitParams,
    DegenerateCircuitError,
    ElementState,
    PinDiodeModel,
    abcd_cascade,
    layer_admittances,
    scatter_coefficients,
)
from iosim.cli import main
from iosim.defaults import F_CENTER, LAMBDA_C, default_params, default_table
from iosim.fitting import state_contrast
from iosim.optimize import ProblemSpec, alternating_opt, annealing_opt, exhaustive_ios
from iosim.testbed import Controller, closed_loop_pattern, estimate_channel, estimate_noise, rms_relative_error

from conftest import ACCEPTANCE_LINES, GRID, random_channels, random_geometric_channels

SCEN = Path(__file__).resolve().parents[1] / "scenarios"


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def _cli(tmp_path, sub, name, out):
    rc = main([sub, "--scenario", str(SCEN / f"{name}.yaml"), "--out", str(tmp_path / out)])
    assert rc == 0, f"{sub} {name} exited with {rc}"
    return tmp_path / out


def _wrap(a):
    return (a + 180.0) % 360.0 - 180.0


# 1 ---------------------------------------------------------------------------

def test_c01_off_state_energy():
    t0 = time.perf_counter()
    default_params.cache_clear()
    energy, _, _ = state_contrast(default_params(), F_CENTER)
    dt = time.perf_counter() - t0
    ok = abs(energy - 0.55) <= 0.05 and dt < 1.0
    record(1, ok, f"|Gr|^2+|Gt|^2 (OFF,OFF) at 3.6 GHz = {energy:.4f} (0.55 +- 0.05), {dt:.3f} s")


# 2 ---------------------------------------------------------------------------

def test_c02_phase_contrast():
    t0 = time.perf_counter()
    _, d_t, d_r = state_contrast(default_params(), F_CENTER)
    dt = time.perf_counter() - t0
    et = abs(abs(_wrap(d_t)) - 180.0)
    er = abs(abs(_wrap(d_r)) - 130.0)
    ok = et <= 15 and er <= 15 and dt < 1.0
    record(2, ok, f"dphase_t = {_wrap(d_t):.2f} deg (|.| 180 +- 15), dphase_r = {_wrap(d_r):.2f} deg "
                  f"(|.| 130 +- 15), {dt:.3f} s")


# 3 ---------------------------------------------------------------------------

def _random_passive(rng):
    f = lambda: 10 ** rng.uniform(-3, 3)  # noqa: E731
    rlc = dict(r1=6.6e-4 * f(), r2=1.7e-4 * f(), r3=8.5e-8 * f(), l1=6.8e-13 * f(), l2=4e-10 * f(),
               l3=9.1e-12 * f(), c1=8e-12 * f(), c2=9.6e-10 * f(), c3=2.1e-10 * f())
    ys = [complex(rng.uniform(0, 100), rng.choice([-1, 1]) * 10 ** rng.uniform(-3, 3)) for _ in range(2)]
    diode = PinDiodeModel(r_on=rng.uniform(0, 10), l_on=rng.uniform(0, 2e-9), l_off=rng.uniform(0, 2e-9),
                          c_off=10 ** rng.uniform(-14, -11), r_off=10 ** rng.uniform(0, 6))
    d = rng.uniform(0, 0.2)
    return CircuitParams(**rlc, ys1=CouplingTable.constant(ys[0], GRID), ys2=CouplingTable.constant(ys[1], GRID),
                         d1=d, d2=d, diode=diode)


def test_c03_passivity_suite():
    rng = np.random.default_rng(2024)
    states = (STATE_OFF, STATE_ON, ElementState.parse("ON,OFF"))
    f = np.asarray(GRID)
    beta = 2 * np.pi * f / 299_792_458.0
    worst_p, worst_det, worst_abs, n_abs, skipped = -np.inf, 0.0, 0.0, 0, 0
    t0 = time.perf_counter()
    for n in range(10_000):
        p = _random_passive(rng)
        try:
            y = layer_admittances(p, states[n % 3], 2 * np.pi * f)
            m = abcd_cascade(*y, p.ys1(f), p.ys2(f))
            r = scatter_coefficients(m, 377.0, beta, p.d1, p.d2)
        except DegenerateCircuitError:
            skipped += 1
            continue
        worst_p = max(worst_p, float(np.max(r.power)))
        err = np.abs(m.det() - 1)
        # ad - bc loses digits in proportion to the size of its two products
        scale = np.maximum(1.0, np.abs(m.a * m.d) + np.abs(m.b * m.c))
        worst_det = max(worst_det, float(np.max(err / scale)))
        worst_abs = max(worst_abs, float(np.max(err)))
        n_abs += int(np.all(err <= 1e-9))
    dt = time.perf_counter() - t0
    ok = worst_p <= 1 + 1e-9 and worst_det <= 1e-9 and dt < 30 and skipped < 100
    record(3, ok, f"10^4 sets x {len(f)} freqs: max |Gr|^2+|Gt|^2 = {worst_p:.12f}, max relative |det-1| = "
                  f"{worst_det:.1e}; absolute |det-1| <= 1e-9 on {n_abs} sets (worst {worst_abs:.1e} "
                  f"where |ad|+|bc| is large); degenerate skipped {skipped}, {dt:.1f} s")


# 4 ---------------------------------------------------------------------------

def test_c04_matched_element():
    rng = np.random.default_rng(4)
    z0 = 377.0
    worst_r, worst_t = 0.0, 0.0
    for _ in range(1000):
        a, b, c = (complex(*rng.normal(size=2)) * s for s in (1.0, 100.0, 0.01))
        d = a + b / z0 - z0 * c
        beta, d1, d2 = rng.uniform(10, 100), rng.uniform(0, 0.1), rng.uniform(0, 0.1)
        for m in (AbcdMatrix(a, b, c, d),):
            r = scatter_coefficients(m, z0, beta, d1, d2)
            want = cmath.exp(-1j * beta * (d1 + d2)) / (m.a + m.b / z0)
            worst_r = max(worst_r, abs(r.gamma_r))
            worst_t = max(worst_t, abs(r.gamma_t - want))
        # physical cascade: series Z then the shunt that matches it
        z = complex(rng.uniform(1, 500), rng.uniform(-500, 500))
        m = AbcdMatrix.series(z) @ AbcdMatrix.shunt(z / (z0 * (z0 - z)))
        r = scatter_coefficients(m, z0, beta, d1, d2)
        want = cmath.exp(-1j * beta * (d1 + d2)) / (m.a + m.b / z0)
        worst_r = max(worst_r, abs(r.gamma_r))
        worst_t = max(worst_t, abs(r.gamma_t - want))
    ok = worst_r <= 1e-9 and worst_t <= 1e-9
    record(4, ok, f"2000 matched cases: max |Gr| = {worst_r:.1e}, max |Gt - closed form| = {worst_t:.1e}")


# 5 ---------------------------------------------------------------------------

def test_c05_linearity_oracle():
    table = default_table()
    b = LinkBudget(direct_path=True, direct_attenuation_db=20.0)
    tx = [Antenna((-0.5, 0.9, 0.1), 12.5), Antenna((-0.9, 0.5, 0.1), 12.5)]
    rx = [Antenna((0.22, 1.17, -0.24), 3.0), Antenna((1.06, -0.49, -0.24), 3.0)]
    worst, count = 0.0, 0
    for m in range(1, 7):
        lay = ArrayLayout(m, 4, 2.87e-2, 1.42e-2)
        grp = GroupConfiguration.by_rows(lay)
        cs = group_deltas(lay, grp, table, b, tx, rx)
        for n in range(2 ** m):
            s = [(n >> (m - 1 - i)) & 1 for i in range(m)]
            h = assemble_channel(cs, s)
            cfg = grp.with_states(s)
            ref = np.array([[cascaded_channel(lay, cfg, table, b, t, r) for r in rx] for t in tx])
            worst = max(worst, float(np.max(np.abs(h - ref)) / np.max(np.abs(ref))))
            count += 1
    record(5, worst < 1e-10, f"{count} configurations, M = 1..6: max relative error {worst:.1e} (< 1e-10)")


# 6 ---------------------------------------------------------------------------

def test_c06_fit_round_trip(tmp_path):
    # start values drawn per field from x[0.5, 2] around the truth
    t0 = time.perf_counter()
    out = _cli(tmp_path, "fit", "fit_roundtrip", "fit")
    dt = time.perf_counter() - t0
    rep = json.loads((out / "fit_report.json").read_text())
    ok = rep["residual"] < 1e-3 and rep["generalization_residual"] < 1e-2 and dt < 300
    record(6, ok, f"init x[0.5,2]: residual {rep['initial_residual']:.3f} -> {rep['residual']:.2e} (< 1e-3), "
                  f"generalization {rep['generalization_residual']:.2e} (< 1e-2), {dt:.0f} s")


# 7 ---------------------------------------------------------------------------

def test_c07_hpbw(tmp_path):
    t0 = time.perf_counter()
    pitch = 0.344 * LAMBDA_C
    lay = ArrayLayout(8, 1, 2.87e-2, pitch)
    ref = reference_pattern(lay, GroupConfiguration.by_rows(lay), AngleParamTable.single(default_params()),
                            Antenna((0.0, 1e6, 0.0)), Sweep.horizontal(0.0, 180.0, 0.1), F_CENTER,
                            angle_aware=False)
    row = hpbw(ref.power())
    analytic = math.degrees(0.886 * LAMBDA_C / (8 * pitch))
    out = _cli(tmp_path, "pattern", "pattern_subarray", "pat")
    dt = time.perf_counter() - t0
    m = json.loads((out / "metrics.json").read_text())
    widths = {k: v["angle_aware"]["hpbw_deg"] for k, v in m.items()}
    ok_row = abs(row - analytic) <= 1.5
    ok_sub = all(abs(w - 10.0) <= 3.0 for w in widths.values())
    ws = ", ".join(f"{float(k):g}: {w:.1f}" for k, w in sorted(widths.items(), key=lambda kv: float(kv[0])))
    record(7, ok_row and ok_sub and dt < 10,
           f"uniform row {row:.2f} vs analytic {analytic:.2f} deg ({'ok' if ok_row else 'off'}); "
           f"8x5 subarray HPBW per target [{ws}] deg vs 10 +- 3; {dt:.1f} s")


# 8 ---------------------------------------------------------------------------

def test_c08_optimizer_oracle():
    t0 = time.perf_counter()
    n_alt = n_ann = 0
    for seed in range(100):
        cs = random_geometric_channels(seed)
        ex = exhaustive_ios(ProblemSpec(cs, interference="physical"))
        al = alternating_opt(ProblemSpec(cs, interference="physical"))
        an = annealing_opt(ProblemSpec(cs, interference="physical", seed=seed))
        n_alt += al.objective >= 0.95 * ex.objective
        n_ann += an.objective >= 0.95 * ex.objective
    dt = time.perf_counter() - t0
    # unstructured Gaussian channels, reported as a stress check only
    g_alt = g_ann = 0
    for seed in range(100):
        cs = random_channels(seed, noise=0.1)
        kw = dict(p_max_w=1.0, interference="physical")
        ex = exhaustive_ios(ProblemSpec(cs, **kw))
        g_alt += alternating_opt(ProblemSpec(cs, **kw)).objective >= 0.95 * ex.objective
        g_ann += annealing_opt(ProblemSpec(cs, seed=seed, **kw)).objective >= 0.95 * ex.objective
    ok = n_alt >= 90 and n_ann >= 95 and dt < 120
    record(8, ok, f"100 geometric M=4 instances: alternating {n_alt}/100 (>= 90), annealing {n_ann}/100 (>= 95), "
                  f"{dt:.0f} s; Gaussian stress set: alternating {g_alt}/100, annealing {g_ann}/100")


# 9 ---------------------------------------------------------------------------

def test_c09_ios_benefit_and_size(tmp_path):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in ("optimize_reflection", "optimize_refraction", "optimize_mixed"):
        sol = json.loads((_cli(tmp_path, "optimize", name, name) / "solution.json").read_text())
        with_ios, without = sol["solution"]["objective"], sol["no_ios"]["objective"]
        ok &= with_ios > without
        parts.append(f"{name.split('_')[1]} {with_ios:.2f} vs {without:.2f}")
    rows = (_cli(tmp_path, "optimize", "optimize_size_sweep", "size") / "size_sweep.csv").read_text().splitlines()
    trend = [float(r.split(",")[3]) for r in rows[1:]]
    ok &= all(b >= a for a, b in zip(trend, trend[1:]))
    dt = time.perf_counter() - t0
    record(9, ok and dt < 300, f"min-rate IOS vs no-IOS: {'; '.join(parts)}; size sweep "
                               f"{' <= '.join(f'{x:.2f}' for x in trend)}; {dt:.0f} s")


# 10 --------------------------------------------------------------------------

def test_c10_testbed_statistics(tmp_path):
    cs = random_channels(0, noise=4.0)
    ctrl = Controller(cs, seed=10, keep_records=False)
    est = np.array([estimate_noise(ctrl.noise_samples(16)[:, 0]).sigma2_hat for _ in range(1000)])
    se = est.std(ddof=1) / math.sqrt(1000)
    bias = (est.mean() - 4.0) / se
    ok_noise = abs(bias) <= 2

    geo = random_geometric_channels(0)
    p = np.mean(np.abs(geo.c[None, :] * geo.base) ** 2)
    from iosim.channel import ChannelSet

    bench = ChannelSet(geo.base, geo.deltas, geo.c, p / 100.0)
    truth = bench.c[None, :] * bench.base
    counts = np.array([100, 1000, 10_000])
    errs = []
    for U in counts:
        e = [rms_relative_error(estimate_channel(Controller(bench, seed=r, keep_records=False), U=int(U)), truth)
             for r in range(20)]
        errs.append(math.sqrt(np.mean(np.square(e))))
    slope = float(np.polyfit(np.log10(counts), np.log10(errs), 1)[0])
    ok_slope = abs(slope + 0.5) <= 0.1

    rep = json.loads((_cli(tmp_path, "testbed", "testbed", "tb") / "testbed_report.json").read_text())
    nrmse = rep["closed_loop_nrmse"]
    ok = ok_noise and ok_slope and nrmse < 0.05
    record(10, ok, f"noise bias {bias:+.2f} SE over 1000 runs (|.| <= 2); RMS error slope {slope:.3f} "
                   f"(-0.5 +- 0.1); closed-loop NRMSE {100 * nrmse:.2f}% at 20 dB (< 5%)")


# 11 --------------------------------------------------------------------------

def test_c11_angle_effect(tmp_path):
    m = json.loads((_cli(tmp_path, "pattern", "pattern_angle_effect", "ang") / "metrics.json").read_text())
    diffs = {float(k): v["direction_difference_deg"] for k, v in m.items()}
    ok = all(d >= 1.0 for d in diffs.values())
    record(11, ok, "angle-aware vs normal-only beam direction difference per target: "
                   + ", ".join(f"{k:g}: {d:g} deg" for k, d in sorted(diffs.items())) + " (>= 1 step of 1 deg)")


# 12 --------------------------------------------------------------------------

RUNS = [("scatter", "scatter_normal"), ("scatter", "scatter_angles"), ("fit", "fit_roundtrip"),
        ("pattern", "pattern_subarray"), ("pattern", "pattern_angle_effect"), ("optimize", "optimize_mixed"),
        ("optimize", "optimize_size_sweep"), ("testbed", "testbed")]


def test_c12_determinism(tmp_path):
    bad, files = [], 0
    for sub, name in RUNS:
        a = _cli(tmp_path, sub, name, f"{name}_a")
        b = _cli(tmp_path, sub, name, f"{name}_b")
        fa = {f.name: f.read_bytes() for f in sorted(a.iterdir()) if f.name != "manifest.json"}
        fb = {f.name: f.read_bytes() for f in sorted(b.iterdir()) if f.name != "manifest.json"}
        files += len(fa)
        ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
        if fa != fb or not fa or ma["scenario_sha256"] != mb["scenario_sha256"]:
            bad.append(name)
    record(12, not bad, f"{len(RUNS)} scenarios over all subcommands, {files} numeric files compared; "
                        f"mismatches: {bad or 'none'}")
