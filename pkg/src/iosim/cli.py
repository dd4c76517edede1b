"""Command line front end: ``iosim <subcommand> --scenario FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 geometry/sweep error,
4 capability error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .array import (
    Antenna,
    PatternMetrics,
    beam_pattern,
    pattern_json,
    reference_pattern,
    write_pattern_csv,
)
from .channel import ChannelSet, assemble_channel, direct_channel, group_deltas, sinr
from .circuit import NORMAL_INCIDENCE, SCALAR_FIELDS, AngleParamTable, sweep_rows
from .errors import (
    CapabilityError,
    ConfigError,
    ExtrapolationError,
    GeometryError,
    IosimError,
    PatternError,
)
from .fitting import FitTarget, fit_params, residual, state_contrast
from .optimize import ProblemSpec, solve
from .paramio import (
    DEFAULT_UNITS,
    UNIT_SCALES,
    fmt,
    load_table,
    read_scatter_csv,
    save_table,
    write_scatter_csv,
)
from .scenario import Scenario, _num
from .testbed import (
    Controller,
    closed_loop_pattern,
    estimate_channel,
    estimate_noise,
    probe_group_deltas,
    rms_relative_error,
    write_records,
)

log = logging.getLogger("iosim")

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_CAPABILITY = 0, 2, 3, 4


def exit_code(exc):
    if isinstance(exc, CapabilityError):
        return EXIT_CAPABILITY
    if isinstance(exc, (GeometryError, ExtrapolationError, PatternError)):
        return EXIT_GEOMETRY
    return EXIT_CONFIG


class Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, out, scenario, seed, command, threads):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.scenario = scenario
        self.seed = seed
        self.command = command
        self.threads = threads
        self.files = []
        self.t0 = time.perf_counter()

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def write_json(self, name, obj):
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def manifest(self):
        m = {
            "command": self.command,
            "scenario": self.scenario.name,
            "scenario_sha256": self.scenario.digest,
            "tool_version": __version__,
            "seed": self.seed,
            "threads": self.threads,
            "outputs": sorted(self.files),
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }
        (self.out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


# -- scatter ---------------------------------------------------------------

def cmd_scatter(sc: Scenario, run: Run, args):
    grid = sc.frequency_grid()
    if grid is None:
        raise ConfigError("missing frequency sweep", "sweeps.frequency")
    angles = sc.incidence_angles() or [NORMAL_INCIDENCE]
    table = sc.table()
    rows = sweep_rows(table, sc.states, grid.points, angles, sc.constants)
    with open(run.path("scatter.csv"), "w", newline="") as fh:
        write_scatter_csv(rows, fh)
    with open(run.path("scatter_polar.csv"), "w") as fh:
        fh.write("freq_hz,state,theta_deg,phi_deg,mag_gr,phase_gr_deg,mag_gt,phase_gt_deg,energy\n")
        for f, st, th, ph, grr, gri, gtr, gti in rows:
            gr, gt = complex(grr, gri), complex(gtr, gti)
            vals = [f, th, ph, abs(gr), math.degrees(np.angle(gr)), abs(gt), math.degrees(np.angle(gt)),
                    abs(gr) ** 2 + abs(gt) ** 2]
            fh.write(",".join([fmt(vals[0]), f'"{st}"'] + [fmt(x) for x in vals[1:]]) + "\n")
    summary = {"rows": len(rows)}
    if grid.points[0] <= grid.center <= grid.points[-1]:
        energy, dt, dr = state_contrast(table.normal, grid.center, sc.constants)
        summary.update({"center_hz": grid.center, "energy_state0": energy, "dphase_t_deg": dt, "dphase_r_deg": dr})
    run.write_json("scatter_summary.json", summary)
    return summary


# -- fit -------------------------------------------------------------------

def _fit_bounds(d, path):
    if not isinstance(d, dict):
        raise ConfigError("expected a mapping", path)
    kinds = {"r": "resistance", "l": "inductance", "c": "capacitance"}
    out = {}
    for k, v in d.items():
        p = f"{path}.{k}"
        if k in SCALAR_FIELDS:
            if not isinstance(v, list) or len(v) != 2:
                raise ConfigError("expected [lo, hi]", p)
            sc = UNIT_SCALES[kinds[k[0]]][DEFAULT_UNITS[kinds[k[0]]]]
            out[k] = (float(v[0]) * sc, float(v[1]) * sc)
        elif k in ("ys1", "ys2"):
            if not isinstance(v, dict) or set(v) - {"re", "im"}:
                raise ConfigError("expected {re: [lo, hi], im: [lo, hi]}", p)
            re = tuple(float(x) for x in v.get("re", [0.0, math.inf]))
            im = tuple(float(x) for x in v.get("im", [-math.inf, math.inf]))
            out[k] = (re, im)
        else:
            raise ConfigError("unknown bound field", p)
    return out


def _perturb(params, factor, rng):
    kw = {k: getattr(params, k) * factor ** rng.uniform(-1, 1) for k in SCALAR_FIELDS}
    return params.replace(**kw)


def cmd_fit(sc: Scenario, run: Run, args):
    d = sc.section("fit")
    p = "fit"
    truth = sc.table().normal
    gen = None
    if "targets" in d:
        rows = read_scatter_csv(sc.resolve(d["targets"]))
        target = FitTarget.from_rows(rows)
    elif "synthesize" in d:
        s = d["synthesize"]
        if not isinstance(s, dict) or set(s) != {"start_ghz", "stop_ghz", "points"}:
            raise ConfigError("expected {start_ghz, stop_ghz, points}", f"{p}.synthesize")
        sp = f"{p}.synthesize"
        freqs = np.linspace(_num(s, "start_ghz", sp, positive=True), _num(s, "stop_ghz", sp, positive=True),
                            _num(s, "points", sp, positive=True, integer=True)) * 1e9
        target = FitTarget.from_params(truth, freqs, sc.states, sc.constants)
        n_gen = _num(d, "generalize_points", p, int(1.5 * len(freqs)), positive=True, integer=True)
        gen = np.linspace(freqs[0], freqs[-1], n_gen)
    else:
        raise ConfigError("give either targets (CSV path) or synthesize", p)
    init_src = d.get("init", "default")
    init = truth if init_src == "default" else load_table(sc.resolve(init_src)).normal
    if "perturb" in d:
        init = _perturb(init, float(d["perturb"]), np.random.default_rng(run.seed))
    bounds = _fit_bounds(d.get("bounds", {}), f"{p}.bounds")
    budget = d.get("budget", 2000)
    if isinstance(budget, bool) or not isinstance(budget, int) or budget < 0:
        raise ConfigError("budget must be a non-negative integer", f"{p}.budget")
    res = fit_params(target, init, bounds, budget, run.seed, int(d.get("starts", 4)), float(d.get("tol", 1e-3)),
                     sc.constants, float(d.get("spread", 2.0)))
    save_table(AngleParamTable.single(res.params), run.path("fitted_params.yaml"))
    report = res.report()
    if gen is not None:
        gt = FitTarget.from_params(truth, gen, sc.states, sc.constants)
        report["generalization_residual"] = residual(res.params, gt, sc.constants)
    run.write_json("fit_report.json", report)
    return report


# -- pattern ---------------------------------------------------------------

def _problem(sc, cs, args, **kw):
    opts = sc.problem_options()
    if args.solver:
        opts["solver"] = args.solver
    budget = sc.budget()
    opts.update(kw)
    return ProblemSpec(cs, p_max_w=budget.p_max_w, interference=budget.interference, seed=args.seed_value, **opts)


def _steer(sc, args, layout, grouping, txs, rx, angle_aware):
    cs = group_deltas(layout, grouping, sc.table(), sc.budget(), txs, [rx], angle_aware, constants=sc.constants)
    return solve(_problem(sc, cs, args))


def cmd_pattern(sc: Scenario, run: Run, args):
    layout = sc.layout()
    grouping = sc.grouping(layout)
    txs = sc.antennas("tx")
    if not txs:
        raise ConfigError("at least one transmitter is required", "tx")
    sweep, obs = sc.pattern_sweep()
    if sweep is None:
        raise ConfigError("missing pattern sweep", "sweeps.pattern")
    d = sc.section("pattern")
    targets = d.get("targets_deg", [])
    if not isinstance(targets, list) or not targets:
        raise ConfigError("expected a non-empty list", "pattern.targets_deg")
    compare = bool(d.get("compare_normal_only", False))
    budget = sc.budget()
    table = sc.table()
    rx_dist = obs if obs is not None else 10.0
    metrics = {}
    for tgt in targets:
        tgt = float(tgt)
        sweep.index_of(tgt)
        rx = Antenna(tuple(sc.lab_point(tgt, rx_dist, 0.0, layout.center)), budget.rx_gain_dbi)
        entry = {}
        for label, aware in (("angle_aware", True), ("normal_only", False)):
            if label == "normal_only" and not compare:
                continue
            sol = _steer(sc, args, layout, grouping, txs, rx, aware)
            cfg = grouping.with_states(sol.s)
            refs = [reference_pattern(layout, cfg, table, tx, sweep, budget.freq, obs, True,
                                      constants=sc.constants) for tx in txs]
            F = beam_pattern(refs, sol.v[:, 0])
            m = PatternMetrics.of(F)
            entry[label] = {"s": list(sol.s), **m.to_dict(), "target_error_deg": _angdiff(m.beam_direction, tgt)}
            tag = f"{fmt(tgt)}" + ("" if aware else "_normal_only")
            pats = {f"E{k + 1}": r for k, r in enumerate(refs)}
            pats["F"] = F
            with open(run.path(f"pattern_{tag}.csv"), "w", newline="") as fh:
                write_pattern_csv(pats, fh)
            run.write_json(f"pattern_{tag}.json", pattern_json(F))
        if compare:
            a, b = entry["angle_aware"]["beam_direction_deg"], entry["normal_only"]["beam_direction_deg"]
            entry["direction_difference_deg"] = abs(_angdiff(a, b))
            log.info("target %s: angle-aware beam %s deg, normal-only beam %s deg", tgt, a, b)
        metrics[fmt(tgt)] = entry
    run.write_json("metrics.json", metrics)
    return metrics


def _angdiff(a, b):
    return float((a - b + 180.0) % 360.0 - 180.0)


# -- optimize --------------------------------------------------------------

def _channels(sc, layout, grouping):
    txs, rxs = sc.antennas("tx"), sc.antennas("rx")
    if not txs or not rxs:
        raise ConfigError("transmitters and receivers are required", "tx/rx")
    return group_deltas(layout, grouping, sc.table(), sc.budget(), txs, rxs, constants=sc.constants)


def _no_ios(sc, args):
    """Surface covered by absorber: only the direct path remains."""
    txs, rxs = sc.antennas("tx"), sc.antennas("rx")
    b = sc.budget()
    h = np.array([[direct_channel(b, tx, rx, sc.constants) for rx in rxs] for tx in txs])
    cs = ChannelSet(h, np.zeros((1,) + h.shape), b.c(len(rxs)), b.noise_power_w)
    return solve(_problem(sc, cs, args, solver="exhaustive"))


def cmd_optimize(sc: Scenario, run: Run, args):
    layout = sc.layout()
    grouping = sc.grouping(layout)
    cs = _channels(sc, layout, grouping)
    sol = solve(_problem(sc, cs, args))
    out = {"solution": sol.to_json(), "M": cs.M}
    d = sc.section("optimize")
    if d.get("baseline", False):
        base = _no_ios(sc, args)
        out["no_ios"] = base.to_json()
    run.write_json("solution.json", out)
    run.write_json("channels.json", cs.to_json())
    with open(run.path("rates.csv"), "w") as fh:
        fh.write("ue,sinr_db,rate\n")
        for j, (g, r) in enumerate(zip(sol.report.sinr, sol.report.rate)):
            fh.write(f"{j},{fmt(10 * np.log10(g)) if g > 0 else 'nan'},{fmt(r)}\n")
    sizes = d.get("size_sweep")
    if sizes is not None:
        if not isinstance(sizes, list) or not sizes:
            raise ConfigError("expected a non-empty list", "optimize.size_sweep")
        rows = []
        for i, item in enumerate(sizes):
            p = f"optimize.size_sweep[{i}]"
            if not isinstance(item, dict) or set(item) != {"label", "active"}:
                raise ConfigError("expected {label, active}", p)
            lay = layout.with_active(sc._mask(layout, item["active"], f"{p}.active"))
            grp = sc.grouping(lay)
            s = solve(_problem(sc, _channels(sc, lay, grp), args))
            rows.append((str(item["label"]), int(lay.active_mask.sum()), grp.M, s.objective, s.feasible))
        with open(run.path("size_sweep.csv"), "w") as fh:
            fh.write("label,elements,groups,objective,feasible\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]},{r[2]},{fmt(r[3])},{str(r[4]).lower()}\n")
        out["size_sweep"] = [{"label": r[0], "elements": r[1], "objective": r[3]} for r in rows]
    return out


# -- testbed ---------------------------------------------------------------

def cmd_testbed(sc: Scenario, run: Run, args):
    d = sc.section("testbed")
    U = d.get("U", 1000)
    if isinstance(U, bool) or not isinstance(U, int) or U < 2:
        raise ConfigError("U must be an integer >= 2", "testbed.U")
    layout = sc.layout()
    grouping = sc.grouping(layout)
    cs = _channels(sc, layout, grouping)
    budget = sc.budget()
    amp = float(d.get("amplitude", math.sqrt(budget.p_max_w)))
    ch = cs.c[None, :] * cs.base
    if "snr_db" in d:
        snr = float(d["snr_db"])
        sigma2 = 0.0 if math.isinf(snr) else float(np.mean(np.abs(ch * amp) ** 2)) / 10 ** (snr / 10)
    else:
        sigma2 = cs.noise_power_w
    offs = d.get("phase_offset_deg")
    offs = None if offs is None else np.radians(np.broadcast_to(np.asarray(offs, float), (cs.J,)))
    ctrl = Controller(cs, run.seed, budget.interference, None if offs is None else tuple(offs), sigma2,
                      keep_records=sc.outputs()["records"])
    est = estimate_channel(ctrl, None, U, amp)
    noise = estimate_noise(ctrl.noise_samples(U))
    measured = probe_group_deltas(ctrl, cs.M, U, amp, noise_U=U)
    bench = ChannelSet(cs.base, cs.deltas, cs.c, max(sigma2, 1e-300))
    prob_true = _problem(sc, bench, args)
    sol_true = solve(prob_true)
    sol_meas = solve(_problem(sc, measured, args))
    h_true = assemble_channel(cs, np.asarray(sol_meas.s))
    g = sinr(sol_meas.v, h_true, cs.c, max(sigma2, 1e-300), budget.interference)
    rate_meas = float(np.min(np.log2(1 + g)) if prob_true.objective == "min-rate" else np.sum(np.log2(1 + g)))
    rep = {
        "U": U,
        "noise_power_w": sigma2,
        "noise_estimate_w": noise.sigma2_hat,
        "channel_rms_rel_error": rms_relative_error(est, ch),
        "exact_recovery": bool(np.array_equal(est, ch)) or rms_relative_error(est, ch) < 1e-12,
        "delta_rms_rel_error": rms_relative_error(measured.deltas, cs.deltas),
        "objective_ground_truth": sol_true.objective,
        "objective_from_measurement": rate_meas,
        "s_ground_truth": list(sol_true.s),
        "s_from_measurement": list(sol_meas.s),
    }
    runs = d.get("noise_runs")
    if runs is not None:
        if isinstance(runs, bool) or not isinstance(runs, int) or runs < 2:
            raise ConfigError("noise_runs must be an integer >= 2", "testbed.noise_runs")
        est_n = np.array([estimate_noise(ctrl.noise_samples(U)).sigma2_hat for _ in range(runs)])
        se = est_n.std(ddof=1) / math.sqrt(runs)
        rep["noise_runs"] = {"runs": runs, "mean_w": float(est_n.mean()), "std_error_w": float(se),
                             "bias_in_std_errors": float((est_n.mean() - sigma2) / se) if se > 0 else 0.0}
    if d.get("closed_loop", False):
        sweep, obs = sc.pattern_sweep()
        if sweep is None:
            raise ConfigError("closed loop needs a pattern sweep", "sweeps.pattern")
        cfg = grouping.with_states(sol_true.s)
        refs = [reference_pattern(layout, cfg, sc.table(), tx, sweep, budget.freq, obs, constants=sc.constants)
                for tx in sc.antennas("tx")]
        rng = np.random.default_rng(run.seed + 1)
        _, _, nrmse = closed_loop_pattern(refs, sol_true.v[:, 0], float(d.get("snr_db", 20.0)),
                                          int(d.get("closed_loop_U", 64)), rng)
        rep["closed_loop_nrmse"] = nrmse
    run.write_json("testbed_report.json", rep)
    with open(run.path("channel_estimates.csv"), "w") as fh:
        fh.write("k,j,re_est,im_est,re_true,im_true\n")
        for k in range(cs.K):
            for j in range(cs.J):
                e, t = est[k, j], ch[k, j]
                fh.write(f"{k},{j},{fmt(e.real)},{fmt(e.imag)},{fmt(t.real)},{fmt(t.imag)}\n")
    if sc.outputs()["records"]:
        write_records(ctrl.records, run.path("records.csv"))
    return rep


COMMANDS = {
    "scatter": cmd_scatter,
    "fit": cmd_fit,
    "pattern": cmd_pattern,
    "optimize": cmd_optimize,
    "testbed": cmd_testbed,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="iosim", description="IOS circuit model, beam synthesis and optimization.")
    ap.add_argument("--version", action="version", version=f"iosim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="scenario YAML file")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--solver", choices=("exhaustive", "alternating", "annealing"), default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (falls back to IOS_SIM_THREADS); recorded in the manifest")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = args.threads
        if threads is None and os.environ.get("IOS_SIM_THREADS"):
            try:
                threads = int(os.environ["IOS_SIM_THREADS"])
            except ValueError:
                raise ConfigError("IOS_SIM_THREADS must be an integer") from None
        if threads is not None and threads < 1:
            raise ConfigError("thread count must be positive", "--threads")
        sc = Scenario.load(args.scenario)
        seed = sc.seed if args.seed is None else args.seed
        if seed < 0:
            raise ConfigError("seed must be non-negative", "--seed")
        args.seed_value = seed
        run = Run(args.out, sc, seed, args.command, threads or 1)
        COMMANDS[args.command](sc, run, args)
        run.manifest()
    except IosimError as exc:
        print(f"iosim: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
