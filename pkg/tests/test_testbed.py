import numpy as np
import pytest
from numpy.testing import assert_allclose

from iosim.array import Antenna, ArrayLayout, GroupConfiguration, Sweep, reference_pattern
from iosim.channel import ChannelSet, sinr_and_rate
from iosim.defaults import F_CENTER, default_table
from iosim.errors import ConfigError
from iosim.optimize import ProblemSpec, exhaustive_ios
from iosim.testbed import (
    Controller,
    closed_loop_pattern,
    estimate_channel,
    estimate_noise,
    probe_group_deltas,
    read_records,
    received_signal,
    rms_relative_error,
    samples_of,
    write_records,
)

from conftest import random_channels, random_geometric_channels


def _with_snr(cs, snr_db):
    """Copy of ``cs`` whose noise sits ``snr_db`` below the mean |C h|^2 of the base channel."""
    p = np.mean(np.abs(cs.c[None, :] * cs.base) ** 2)
    return ChannelSet(cs.base, cs.deltas, cs.c, p / 10 ** (snr_db / 10))


# -- sample synthesis --------------------------------------------------------

@pytest.mark.parametrize("mode", ["paper", "physical"])
def test_noiseless_one_hot_collapses(mode):
    cs = random_channels(0, noise=1.0)
    v = np.zeros((2, 2))
    v[1, 0] = 1.0
    y = received_signal(cs, (0, 1, 0, 0), v, np.array([1.0, 0.0]), np.random.default_rng(0), 3, mode,
                        noise_power_w=0.0)
    h = cs.base + cs.deltas[1]
    assert_allclose(y[:, 0], cs.c[0] * h[1, 0])


def test_zero_precoder_is_pure_noise():
    cs = random_channels(0, noise=2.0)
    y = received_signal(cs, (0,) * 4, np.zeros((2, 2)), np.ones(2), np.random.default_rng(1), 20000)
    assert abs(y.mean()) < 0.05
    assert np.mean(np.abs(y) ** 2) == pytest.approx(2.0, rel=0.03)


def test_sample_stream_deterministic():
    cs = random_channels(0)
    a = Controller(cs, seed=9).measure((0,) * 4, np.eye(2), np.ones(2), 50)
    b = Controller(cs, seed=9).measure((0,) * 4, np.eye(2), np.ones(2), 50)
    assert np.array_equal(a, b)


def test_bad_pilots():
    cs = random_channels(0)
    with pytest.raises(ConfigError):
        received_signal(cs, (0,) * 4, np.eye(2), np.array([np.inf, 1.0]), np.random.default_rng(0))


# -- channel estimation ------------------------------------------------------

def test_noiseless_single_sample_exact():
    cs = random_geometric_channels(0)
    ctrl = Controller(cs, noise_power_w=0.0)
    est = estimate_channel(ctrl, U=1)
    assert_allclose(est, cs.c[None, :] * cs.base, rtol=1e-12)


def test_high_count_estimate_error():
    cs = _with_snr(random_geometric_channels(1), 20.0)
    est = estimate_channel(Controller(cs, seed=2, keep_records=False), U=10_000)
    assert rms_relative_error(est, cs.c[None, :] * cs.base) < 0.02


def test_estimate_tracks_rf_gain():
    cs = random_geometric_channels(0)
    double = ChannelSet(cs.base, cs.deltas, 2 * cs.c, cs.noise_power_w)
    a = estimate_channel(Controller(cs, noise_power_w=0.0), U=1)
    b = estimate_channel(Controller(double, noise_power_w=0.0), U=1)
    assert_allclose(b, 2 * a, rtol=1e-12)


def test_phase_offset_rotates_estimate():
    cs = random_geometric_channels(0)
    est = estimate_channel(Controller(cs, noise_power_w=0.0, phase_offset=(0.5, -1.0)), U=1)
    assert_allclose(est, cs.c * np.exp(1j * np.array([0.5, -1.0])) * cs.base, rtol=1e-12)


def test_zero_amplitude_schedule():
    with pytest.raises(ConfigError):
        estimate_channel(Controller(random_channels(0)), U=1, amplitude=0.0)


def test_rms_error_slope():
    cs = _with_snr(random_geometric_channels(3), 20.0)
    truth = cs.c[None, :] * cs.base
    counts = np.array([100, 1000, 10_000])
    errs = []
    for U in counts:
        e = [rms_relative_error(estimate_channel(Controller(cs, seed=r, keep_records=False), U=int(U)), truth)
             for r in range(20)]
        errs.append(np.sqrt(np.mean(np.square(e))))
    slope = np.polyfit(np.log10(counts), np.log10(errs), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


# -- noise estimation --------------------------------------------------------

def test_noise_hand_values():
    assert estimate_noise([1.0, 3.0]).sigma2_hat == pytest.approx(2.0)
    assert estimate_noise([2.5] * 7).sigma2_hat == 0.0
    with pytest.raises(ConfigError):
        estimate_noise([1.0])


def test_noise_concentration():
    rng = np.random.default_rng(5)
    y = np.sqrt(2.0) * (rng.standard_normal(100_000) + 1j * rng.standard_normal(100_000))
    assert estimate_noise(y).sigma2_hat == pytest.approx(4.0, rel=0.03)


def test_noise_unbiased():
    cs = random_channels(0, noise=4.0)
    ctrl = Controller(cs, seed=11, keep_records=False)
    est = np.array([estimate_noise(ctrl.noise_samples(8)[:, 0]).sigma2_hat for _ in range(1000)])
    se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() - 4.0) <= 2 * se


# -- group probing -----------------------------------------------------------

def test_probe_noiseless_matches_analytic():
    cs = random_geometric_channels(2)
    cs = ChannelSet(cs.base, cs.deltas[:3], cs.c, cs.noise_power_w)
    got = probe_group_deltas(Controller(cs, noise_power_w=0.0), U=1, noise_U=2)
    scale = np.max(np.abs(cs.base))
    assert np.max(np.abs(got.base - cs.base)) <= 1e-12 * scale
    assert np.max(np.abs(got.deltas - cs.deltas)) <= 1e-12 * scale


def test_probe_identical_groups():
    cs = random_channels(0, noise=1e-4)
    flat = ChannelSet(cs.base, np.zeros_like(cs.deltas), cs.c, cs.noise_power_w)
    got = probe_group_deltas(Controller(flat, seed=1), U=1000)
    floor = 4 * np.sqrt(2 * flat.noise_power_w / 1000)
    assert np.max(np.abs(got.deltas)) < floor


def test_rate_from_measured_set():
    cs = _with_snr(random_geometric_channels(4), 20.0)
    spec = ProblemSpec(cs, interference="physical")
    sol = exhaustive_ios(spec)
    measured = probe_group_deltas(Controller(cs, seed=6, keep_records=False), U=10_000)
    sol_m = exhaustive_ios(ProblemSpec(ChannelSet(measured.base, measured.deltas, cs.c, cs.noise_power_w),
                                       interference="physical"))
    from iosim.channel import assemble_channel

    h = assemble_channel(cs, np.asarray(sol_m.s))
    r = sinr_and_rate(sol_m.v, h, cs.c, cs.noise_power_w, "physical")
    assert np.max(np.abs(r.rate - sol.report.rate)) < 0.1


# -- closed loop ------------------------------------------------------------

def test_closed_loop_nrmse():
    lay = ArrayLayout(8, 5, 2.87e-2, 1.42e-2)
    grp = GroupConfiguration.by_rows(lay, (0, 1, 1, 0, 1, 0, 0, 1))
    sw = Sweep.horizontal(0, 360, 1.0)
    refs = [reference_pattern(lay, grp, default_table(), Antenna(p), sw, F_CENTER)
            for p in ((-0.35, 0.35, 0.05), (-0.35, 0.35, -0.05))]
    _, _, nrmse = closed_loop_pattern(refs, [1.0, 1j], snr_db=20.0, rng=np.random.default_rng(0))
    assert nrmse < 0.05


# -- record files -----------------------------------------------------------

def test_records_round_trip(tmp_path):
    cs = random_channels(0, noise=3.0)
    ctrl = Controller(cs, seed=4)
    y = ctrl.noise_samples(50)
    write_records(ctrl.records, tmp_path / "r.csv")
    back = read_records(tmp_path / "r.csv")
    assert back == ctrl.records
    s = samples_of(back, 0, 1)
    assert np.array_equal(s, y[:, 1])
    assert estimate_noise(s).sigma2_hat == estimate_noise(y[:, 1]).sigma2_hat


def test_records_bad_line(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("run_id,ue,s,v_id,re_y,im_y\n0,0,00,0,1.0,2.0\n0,x,00,0,1.0,2.0\n")
    with pytest.raises(ConfigError, match="line 3"):
        read_records(p)
