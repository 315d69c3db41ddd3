"""End-to-end Monte-Carlo simulation of the sensing, quantization, and
transmission pipeline.

Used as an independent oracle: empirical transition matrices, level moments,
and estimator MSEs from simulated trials are compared against the analytical
modules.  Randomness comes from counter-based Philox streams keyed per
(seed, sensor), so results are reproducible and independent of evaluation
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2_contingency

from .channel import bit_error, decision_threshold
from .errors import DomainError, UnsupportedConfigError
from .estimator import lmmse_estimate, quasi_blue_estimate
from .model import Coherent, NoncoherentEnvelope, NoncoherentStats, snr
from .quantizer import quantize
from .channel import transition_matrix

__all__ = [
    "EmpiricalReport",
    "IndependenceReport",
    "simulate",
    "empirical_conditional_independence",
]


@dataclass(frozen=True)
class EmpiricalReport:
    """Aggregates of one simulation run; standard errors are sample standard
    deviations divided by sqrt(n_trials)."""

    n_trials: int
    transition_counts: list          # per sensor, (M, M) counts [received, sent]
    transitions: list                # per sensor, column-normalized where observed
    mean: np.ndarray                 # E{received level values}, (K,)
    mean_se: np.ndarray
    second: np.ndarray               # E{m m'}, (K, K)
    second_se: np.ndarray
    cross: np.ndarray                # E{theta m'}, (q, K)
    cross_se: np.ndarray
    mse: np.ndarray                  # estimator error outer-product mean, (q, q)
    mse_se: np.ndarray
    tr_mse: float
    tr_mse_se: float
    bit_error_rate: np.ndarray       # (K,)
    bit_ones_freq: np.ndarray        # transmitted-bit "1" frequency, (K,)
    sent_indices: np.ndarray | None = None
    received_indices: np.ndarray | None = None
    thetas: np.ndarray | None = None
    estimates: np.ndarray | None = None


def _stream(seed, lane):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(lane)]))


def _transmit(sensor, spec, power, bits_sent, rng, fidelity, shared_noise):
    """Simulate one sensor's channel; returns received bits (n, L)."""
    n, L = bits_sent.shape
    ch = sensor.channel
    if fidelity == "flip-level":
        profile = bit_error(sensor, power)
        u = shared_noise if shared_noise is not None else rng.random((n, L))
        p_flip = np.where(bits_sent == 0, profile.eps_0to1, profile.eps_1to0)
        return np.where(u < p_flip, 1 - bits_sent, bits_sent)
    if fidelity != "physical-layer":
        raise DomainError(f"unknown fidelity {fidelity!r}")

    if shared_noise is not None:
        w = shared_noise
    else:
        w = (rng.normal(0.0, sensor.sigma_w, (n, L))
             + 1j * rng.normal(0.0, sensor.sigma_w, (n, L)))
    if isinstance(ch, Coherent):
        amp = np.sqrt(power / sensor.bits)
        symbols = amp * (2.0 * bits_sent - 1.0)
        # the FC derotates by the known phase, so take it as zero
        y = symbols * ch.h_mag + w
        return (y.real > 0.0).astype(np.int8)
    amp = np.sqrt(2.0 * power / sensor.bits)
    if isinstance(ch, NoncoherentEnvelope):
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, 1))
        h = ch.h_mag * np.exp(1j * phase)
        y = bits_sent * amp * h + w
        zeta = decision_threshold(sensor, power)
        return (np.abs(y) / sensor.sigma_w > zeta).astype(np.int8)
    # statistics-only receiver; the analytical transition model multiplies
    # per-bit flip probabilities, which corresponds to an independent channel
    # draw per symbol, so the simulation draws per symbol as well
    h = (rng.normal(0.0, ch.sigma_h, (n, L))
         + 1j * rng.normal(0.0, ch.sigma_h, (n, L)))
    y = bits_sent * amp * h + w
    zeta = decision_threshold(sensor, power)
    return (np.square(np.abs(y)) > zeta).astype(np.int8)


def simulate(net, quantizers, powers, n_trials, seed=0, fidelity="physical-layer",
             shared_channel_noise=False, estimator_kind="lmmse", keep_trials=False):
    """Run n_trials of the full pipeline and aggregate empirical statistics.

    fidelity chooses between the physical channel simulation (noise draws
    plus threshold tests) and direct bit flips at the analytical error
    rates.  shared_channel_noise deliberately reuses one noise realization
    across sensors, violating the conditional-independence structure; it
    exists to validate the power of the independence test.
    """
    if n_trials < 1:
        raise DomainError("n_trials must be at least 1")
    powers = np.asarray(powers, dtype=float)
    K = net.n_sensors
    q = net.dim

    rng_theta = _stream(seed, 0)
    thetas = net.prior.mean + rng_theta.standard_normal((n_trials, q)) @ \
        np.linalg.cholesky(net.prior.cov).T

    if shared_channel_noise:
        bits = net.sensors[0].bits
        if any(s.bits != bits for s in net.sensors):
            raise UnsupportedConfigError("shared channel noise needs equal bit widths")
        rng_shared = _stream(seed, 10_000)
        if fidelity == "flip-level":
            shared = rng_shared.random((n_trials, bits))
        else:
            sw = net.sensors[0].sigma_w
            shared = (rng_shared.normal(0.0, sw, (n_trials, bits))
                      + 1j * rng_shared.normal(0.0, sw, (n_trials, bits)))
    else:
        shared = None

    sent = np.empty((n_trials, K), dtype=np.int64)
    recv = np.empty((n_trials, K), dtype=np.int64)
    counts = []
    ber = np.empty(K)
    ones = np.empty(K)
    for k, (sensor, spec) in enumerate(zip(net.sensors, quantizers)):
        rng = _stream(seed, k + 1)
        x = thetas @ sensor.gain + rng.normal(0.0, sensor.sigma_n, n_trials)
        centered = x - float(sensor.gain @ net.prior.mean)
        l_idx = quantize(spec, centered)
        sent[:, k] = l_idx
        book = spec.codebook
        bits_sent = book[l_idx - 1].astype(np.int8)
        bits_recv = _transmit(sensor, spec, float(powers[k]), bits_sent, rng,
                              fidelity, shared)
        ber[k] = float(np.mean(bits_recv != bits_sent))
        ones[k] = float(np.mean(bits_sent))
        weights_msb = 1 << np.arange(spec.bits - 1, -1, -1)
        t_idx = bits_recv @ weights_msb + 1
        recv[:, k] = t_idx
        m = spec.n_levels
        c = np.zeros((m, m), dtype=np.int64)
        np.add.at(c, (t_idx - 1, l_idx - 1), 1)
        counts.append(c)

    transitions = []
    for c in counts:
        col = c.sum(axis=0, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            transitions.append(np.where(col > 0, c / col, np.nan))

    values = np.stack([quantizers[k].levels[recv[:, k] - 1] for k in range(K)], axis=1)
    centered_thetas = thetas - net.prior.mean

    mean = values.mean(axis=0)
    mean_se = values.std(axis=0, ddof=1) / np.sqrt(n_trials) if n_trials > 1 else \
        np.full(K, np.nan)
    prod = values[:, :, None] * values[:, None, :]
    second = prod.mean(axis=0)
    second_se = prod.std(axis=0, ddof=1) / np.sqrt(n_trials) if n_trials > 1 else \
        np.full((K, K), np.nan)
    crossp = centered_thetas[:, :, None] * values[:, None, :]
    cross = crossp.mean(axis=0)
    cross_se = crossp.std(axis=0, ddof=1) / np.sqrt(n_trials) if n_trials > 1 else \
        np.full((q, K), np.nan)

    alphas = [transition_matrix(bit_error(s, float(p)), spec)
              for s, spec, p in zip(net.sensors, quantizers, powers)]
    if estimator_kind == "lmmse":
        estimates = lmmse_estimate(net, quantizers, alphas, recv)
    elif estimator_kind == "quasi-blue":
        estimates = quasi_blue_estimate(net, quantizers, powers, recv)
    else:
        raise DomainError(f"unknown estimator {estimator_kind!r}")

    err = thetas - estimates
    outer = err[:, :, None] * err[:, None, :]
    mse = outer.mean(axis=0)
    mse_se = outer.std(axis=0, ddof=1) / np.sqrt(n_trials) if n_trials > 1 else \
        np.full((q, q), np.nan)
    sq = np.sum(np.square(err), axis=1)
    tr_mse = float(sq.mean())
    tr_mse_se = float(sq.std(ddof=1) / np.sqrt(n_trials)) if n_trials > 1 else float("nan")

    return EmpiricalReport(
        n_trials=n_trials,
        transition_counts=counts,
        transitions=transitions,
        mean=mean, mean_se=mean_se,
        second=second, second_se=second_se,
        cross=cross, cross_se=cross_se,
        mse=mse, mse_se=mse_se,
        tr_mse=tr_mse, tr_mse_se=tr_mse_se,
        bit_error_rate=ber,
        bit_ones_freq=ones,
        sent_indices=sent if keep_trials else None,
        received_indices=recv if keep_trials else None,
        thetas=thetas if keep_trials else None,
        estimates=estimates if keep_trials else None,
    )


@dataclass(frozen=True)
class IndependenceReport:
    passed: bool
    inconclusive: bool
    p_values: np.ndarray
    statistics: np.ndarray
    n_bins: int


def empirical_conditional_independence(net, quantizers, powers, n_trials, seed=0,
                                       fidelity="flip-level", bins_per_dim=3,
                                       alpha=1e-4, shared_channel_noise=False):
    """Chi-square test that the two received level indices are independent
    given the parameter, binned over the parameter space.

    Rejection in any bin at the Bonferroni-corrected level fails the test.
    Bins whose contingency tables are too sparse are flagged inconclusive
    and skipped.
    """
    if net.n_sensors != 2:
        raise UnsupportedConfigError("the independence test is defined for two sensors")
    report = simulate(net, quantizers, powers, n_trials, seed=seed, fidelity=fidelity,
                      shared_channel_noise=shared_channel_noise, keep_trials=True)
    thetas = report.thetas
    recv = report.received_indices

    # quantile bins per coordinate
    q = net.dim
    bin_ids = np.zeros(n_trials, dtype=np.int64)
    for d in range(q):
        edges = np.quantile(thetas[:, d], np.linspace(0, 1, bins_per_dim + 1)[1:-1])
        bin_ids = bin_ids * bins_per_dim + np.searchsorted(edges, thetas[:, d])
    n_bins = bins_per_dim ** q

    p_values = []
    stats = []
    inconclusive = False
    for b in range(n_bins):
        sel = bin_ids == b
        if np.sum(sel) < 25:
            inconclusive = True
            continue
        m1 = quantizers[0].n_levels
        m2 = quantizers[1].n_levels
        table = np.zeros((m1, m2), dtype=np.int64)
        np.add.at(table, (recv[sel, 0] - 1, recv[sel, 1] - 1), 1)
        table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
        if table.shape[0] < 2 or table.shape[1] < 2:
            inconclusive = True
            continue
        res = chi2_contingency(table, correction=False)
        if np.min(res.expected_freq) < 1.0:
            inconclusive = True
            continue
        p_values.append(res.pvalue)
        stats.append(res.statistic)
    if not p_values:
        return IndependenceReport(passed=False, inconclusive=True,
                                  p_values=np.array([]), statistics=np.array([]),
                                  n_bins=n_bins)
    p_values = np.asarray(p_values)
    passed = bool(np.all(p_values >= alpha / len(p_values)))
    return IndependenceReport(passed=passed, inconclusive=inconclusive,
                              p_values=p_values, statistics=np.asarray(stats),
                              n_bins=n_bins)
