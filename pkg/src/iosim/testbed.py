"""Virtual measurement bench.

A :class:`Controller` plays the role of the host computer: it sets group
states, precoders and pilots on a ground-truth channel set and collects
noisy baseband samples.  The estimators only ever see those samples.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .array import BeamPattern, beam_pattern
from .channel import ChannelSet, assemble_channel
from .errors import ConfigError

PILOT = 1.0


@dataclass(frozen=True)
class NoiseEstimate:
    sigma2_hat: float
    U: int


def received_signal(cs: ChannelSet, s, v, x, rng, U=1, interference="paper", noise_power_w=None,
                    phase_offset=None):
    """``U`` samples of the baseband signal at every UE, shape ``(U, J)``.

    UE ``j`` receives its own stream through ``h[:, j]``.  The stream of UE
    ``j'`` reaches it through ``h[:, j']`` (``interference="paper"``) or
    through its own channel ``h[:, j]`` (``"physical"``).  Noise is circular
    complex Gaussian with total variance ``noise_power_w``.
    """
    h = assemble_channel(cs, np.asarray(s))
    v = np.asarray(v, complex)
    x = np.asarray(x, complex)
    K, J = h.shape
    if v.shape != (K, J) or x.shape != (J,):
        raise ConfigError("precoder must be K_t x J and pilots length J")
    if not np.all(np.isfinite(x)):
        raise ConfigError("pilot symbols must be finite")
    c = cs.c.copy()
    if phase_offset is not None:
        c = c * np.exp(1j * np.asarray(phase_offset, float))
    own = np.sum(v * h, axis=0)  # stream j' through h[:, j']
    if interference == "paper":
        total = np.sum(own * x)
        clean = c * (own * x + (total - own * x))
    elif interference == "physical":
        a = h.T @ v  # a[j, j'] = sum_k h[k,j] V[k,j']
        clean = c * (a @ x)
    else:
        raise ConfigError(f"unknown interference mode {interference!r}")
    sigma2 = cs.noise_power_w if noise_power_w is None else noise_power_w
    n = np.sqrt(sigma2 / 2) * (rng.standard_normal((U, J)) + 1j * rng.standard_normal((U, J)))
    return clean[None, :] + n


def estimate_noise(samples) -> NoiseEstimate:
    """Unbiased variance ``sum |y - mean|^2 / (U - 1)`` (sum of component variances for complex data)."""
    y = np.asarray(samples)
    U = y.shape[0] if y.ndim else 0
    if U < 2:
        raise ConfigError("noise estimation needs at least 2 samples")
    d = y - y.mean(axis=0)
    return NoiseEstimate(float(np.sum(np.abs(d) ** 2, axis=0).sum() / (U - 1) / max(1, np.prod(y.shape[1:]))), U)


@dataclass
class Controller:
    """Ground truth plus a seeded noise source, with a sample log."""

    truth: ChannelSet
    seed: int = 0
    interference: str = "paper"
    phase_offset: tuple | None = None
    noise_power_w: float | None = None
    keep_records: bool = True
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._run = 0
        self._snapshots = {}

    def measure(self, s, v, x, U):
        if U < 1:
            raise ConfigError("sample count must be at least 1")
        y = received_signal(self.truth, s, v, x, self.rng, U, self.interference, self.noise_power_w,
                            self.phase_offset)
        key = np.asarray(v, complex).tobytes()
        vid = self._snapshots.setdefault(key, len(self._snapshots))
        tag = "".join(str(int(b)) for b in s)
        if not self.keep_records:
            self._run += 1
            return y
        for u in range(U):
            for j in range(y.shape[1]):
                self.records.append((self._run, j, tag, vid, float(y[u, j].real), float(y[u, j].imag)))
        self._run += 1
        return y

    def noise_samples(self, U):
        cs = self.truth
        return self.measure(np.zeros(cs.M, int), np.zeros((cs.K, cs.J)), np.zeros(cs.J), U)


def estimate_channel(ctrl: Controller, s=None, U=1000, amplitude=1.0):
    """Estimate ``C_j h[k, j]`` for every (k, j) by precoder zeroing.

    For each pair only ``V[k, j]`` is non-zero, UE ``j`` sends the all-ones
    pilot and the other pilots are zero; the sample mean divided by
    ``V[k, j]`` is the estimate.
    """
    cs = ctrl.truth
    s = np.zeros(cs.M, int) if s is None else np.asarray(s)
    if amplitude == 0:
        raise ConfigError("zeroing schedule needs a non-zero V[k, j]")
    est = np.zeros((cs.K, cs.J), complex)
    for k in range(cs.K):
        for j in range(cs.J):
            v = np.zeros((cs.K, cs.J), complex)
            v[k, j] = amplitude
            x = np.zeros(cs.J)
            x[j] = PILOT
            y = ctrl.measure(s, v, x, U)
            est[k, j] = y[:, j].mean() / v[k, j]
    return est


def probe_group_deltas(ctrl: Controller, M=None, U=1000, amplitude=1.0, noise_U=1000) -> ChannelSet:
    """Measure the base configuration and every one-hot configuration, then subtract.

    Estimates are divided by the nominal RF gains so the result is in
    channel units, like the analytic set.
    """
    cs = ctrl.truth
    M = cs.M if M is None else M
    base = estimate_channel(ctrl, np.zeros(M, int), U, amplitude)
    deltas = np.zeros((M, cs.K, cs.J), complex)
    for m in range(M):
        e = np.zeros(M, int)
        e[m] = 1
        deltas[m] = estimate_channel(ctrl, e, U, amplitude) - base
    noise = estimate_noise(ctrl.noise_samples(noise_U)).sigma2_hat if noise_U >= 2 else cs.noise_power_w
    c = cs.c
    return ChannelSet(base / c[None, :], deltas / c[None, None, :], c, max(noise, 1e-300),
                      {"measured": True})


def closed_loop_pattern(refs, v_column, snr_db=20.0, U=64, rng=None, c=1.0, amplitude=1.0):
    """Estimate reference patterns from noisy samples and predict the beam.

    Each reference-pattern sample is treated as the channel to a receiver
    in that direction and estimated by precoder zeroing.  The noise variance
    puts the strongest single-antenna sample at ``snr_db``.  Returns
    ``(predicted, direct, nrmse)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    refs = list(refs)
    E = np.array([r.values for r in refs])  # (K, n_dir)
    peak = np.max(np.abs(c * amplitude * E)) ** 2
    sigma2 = peak / 10 ** (snr_db / 10)
    noise = np.sqrt(sigma2 / 2) * (rng.standard_normal((U,) + E.shape) + 1j * rng.standard_normal((U,) + E.shape))
    y = c * amplitude * E[None] + noise
    E_hat = y.mean(axis=0) / (c * amplitude)
    est_refs = [BeamPattern(r.sweep, e, "field") for r, e in zip(refs, E_hat)]
    pred = beam_pattern(est_refs, v_column)
    direct = beam_pattern(refs, v_column)
    nrmse = float(np.linalg.norm(pred.values - direct.values) / np.linalg.norm(direct.values))
    return pred, direct, nrmse


RECORD_COLUMNS = ("run_id", "ue", "s", "v_id", "re_y", "im_y")


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for run, j, s, vid, re, im in records:
            w.writerow([run, j, s, vid, repr(re), repr(im)])


def read_records(path):
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != RECORD_COLUMNS:
            raise ConfigError("line 1: unexpected record header", str(path))
        for n, rec in enumerate(r, start=2):
            try:
                out.append((int(rec[0]), int(rec[1]), rec[2], int(rec[3]), float(rec[4]), float(rec[5])))
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"line {n}: {exc}", str(path)) from None
    return out


def samples_of(records, run_id, ue):
    """Complex samples of one run and UE from a record list."""
    return np.array([complex(re, im) for r, j, _, _, re, im in records if r == run_id and j == ue])


def rms_relative_error(est, truth):
    est = np.asarray(est)
    truth = np.asarray(truth)
    return float(math.sqrt(np.mean(np.abs(est - truth) ** 2) / np.mean(np.abs(truth) ** 2)))
