"""Bayesian and classical Fisher information for the quantized network.

The information added by sensor k enters through a scalar score
G_k(theta) = sum_t (sum_l alpha[t,l] bdot_l)^2 / (sum_l alpha[t,l] b_l),
where b_l is the probability that the centered observation falls in
quantizer cell l and bdot_l its (unnormalized) derivative along the
projected parameter.  G_k depends on theta only through s = a_k . theta, so
its prior expectation reduces to a one-dimensional Gauss-Hermite sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .channel import bit_error, transition_matrices_at_snr, transition_matrix
from .errors import DomainError
from .model import Coherent, NoncoherentEnvelope, NoncoherentStats, sigma_h_equivalent, snr
from .numerics import GaussQuadRule, as_spd, gauss_hermite_rule

__all__ = [
    "FisherReport",
    "beta",
    "beta_dot",
    "cell_probabilities",
    "cell_probability_slopes",
    "sensor_score",
    "expected_score",
    "bayesian_fim",
    "classical_fim",
    "mi_lower_bound",
]


def cell_probabilities(spec, sigma_n, s):
    """P(cell l | projected parameter s) for every cell, vectorized over s.

    Each cell is integrated from the tail that keeps both endpoints small,
    so far-tail cells retain their true magnitude instead of cancelling to
    zero against the opposite tail.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    z = (spec.boundaries[None, :] - s[:, None]) / sigma_n
    upper = ndtr(-z)                   # Q(z), exact at infinite edges
    lower = ndtr(z)
    from_upper = upper[:, :-1] - upper[:, 1:]
    from_lower = lower[:, 1:] - lower[:, :-1]
    return np.where(z[:, 1:] <= 0.0, from_lower, from_upper)


def cell_probability_slopes(spec, sigma_n, s):
    """Difference of boundary Gaussians driving d beta / d s, vectorized."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    z = (spec.boundaries[None, :] - s[:, None]) / sigma_n
    e = np.zeros_like(z)
    finite = np.isfinite(z)
    e[finite] = np.exp(-0.5 * np.square(z[finite]))
    return e[:, :-1] - e[:, 1:]


def beta(spec, sensor, theta, level_index):
    """Probability that sensor's observation lands in the given cell."""
    s = float(sensor.gain @ np.asarray(theta, dtype=float))
    return float(cell_probabilities(spec, sensor.sigma_n, s)[0, level_index - 1])


def beta_dot(spec, sensor, theta, level_index):
    """Boundary-Gaussian difference for the given cell (the derivative of
    beta up to the a_ki / sqrt(2 pi) sigma_n factor)."""
    s = float(sensor.gain @ np.asarray(theta, dtype=float))
    return float(cell_probability_slopes(spec, sensor.sigma_n, s)[0, level_index - 1])


_DEN_FLOOR = 1e-300


def _scores(alpha, betas, slopes):
    """G values for stacked cell probabilities; alpha may be (M, M) or
    (n_alpha, M, M) for a batch of channels."""
    if alpha is None:                      # error-free channel
        num2 = np.square(slopes)
        den = betas
        terms = np.where(den > _DEN_FLOOR, num2 / np.where(den > _DEN_FLOOR, den, 1.0), 0.0)
        return np.sum(terms, axis=-1)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 2:
        num = slopes @ alpha.T             # (n_s, M_t)
        den = betas @ alpha.T
        terms = np.where(den > _DEN_FLOOR, np.square(num) / np.where(den > _DEN_FLOOR, den, 1.0), 0.0)
        return np.sum(terms, axis=-1)
    num = np.einsum("ctl,sl->cts", alpha, slopes)
    den = np.einsum("ctl,sl->cts", alpha, betas)
    terms = np.where(den > _DEN_FLOOR, np.square(num) / np.where(den > _DEN_FLOOR, den, 1.0), 0.0)
    return np.sum(terms, axis=1)           # (n_alpha, n_s)


def sensor_score(alpha, spec, sensor, theta):
    """G_k(theta) for one sensor; alpha=None means the error-free channel."""
    s = float(sensor.gain @ np.asarray(theta, dtype=float))
    b = cell_probabilities(spec, sensor.sigma_n, s)
    d = cell_probability_slopes(spec, sensor.sigma_n, s)
    return float(_scores(alpha, b, d)[0])


@lru_cache(maxsize=16)
def _gh(n):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=8)
def _laguerre(n):
    from scipy.special import roots_laguerre

    t, w = roots_laguerre(n)
    return t, w / np.sum(w)


def _receiver_kind(channel):
    if isinstance(channel, Coherent):
        return "coherent"
    if isinstance(channel, NoncoherentEnvelope):
        return "envelope"
    if isinstance(channel, NoncoherentStats):
        return "stats"
    raise DomainError(f"unknown channel {channel!r}")


def expected_score(sensor, spec, prior, power, nodes=48,
                   envelope_averaged=False, envelope_nodes=200):
    """E{G_k} over the prior, optionally also averaged over a Rayleigh
    envelope with the sensor's mean channel power.

    The projected parameter s = a_k . theta is N(0, a_k' C a_k) after
    centering, so a single Gauss-Hermite axis suffices.
    """
    if power < 0:
        raise DomainError("power must be nonnegative")
    var = float(sensor.gain @ prior.cov @ sensor.gain)
    x, w = _gh(nodes)
    s = np.sqrt(max(var, 0.0)) * x if var > 0 else np.zeros(1)
    if var <= 0:
        w = np.ones(1)
    b = cell_probabilities(spec, sensor.sigma_n, s)
    d = cell_probability_slopes(spec, sensor.sigma_n, s)
    kind = _receiver_kind(sensor.channel)
    if not envelope_averaged or kind == "stats":
        alpha = transition_matrix(bit_error(sensor, power), spec)
        return float(w @ _scores(alpha, b, d))
    t, tw = _laguerre(envelope_nodes)
    sigh = sigma_h_equivalent(sensor.channel)
    gbar = power * sigh**2 / (sensor.bits * sensor.sigma_w**2)
    alphas = transition_matrices_at_snr(kind, t * gbar, sensor.bits)
    g = _scores(alphas, b, d)              # (n_envelope, n_s)
    return float(tw @ g @ w)


@dataclass(frozen=True)
class FisherReport:
    """Bayesian information matrix with its two baselines.

    fim_centralized assumes unquantized observations reach the fusion
    center; fim_error_free assumes perfect communication of the quantized
    levels.  The Loewner ordering fim <= fim_error_free <= fim_centralized
    always holds.
    """

    fim: np.ndarray
    fim_centralized: np.ndarray
    fim_error_free: np.ndarray
    expected_scores: np.ndarray

    @property
    def trace(self):
        return float(np.trace(self.fim))

    @property
    def log2_det(self):
        sign, logdet = np.linalg.slogdet(self.fim)
        if sign <= 0:
            raise DomainError("information matrix must be positive definite")
        return float(logdet / np.log(2.0))


def _expected_ideal_score(sensor, spec, prior, nodes):
    var = float(sensor.gain @ prior.cov @ sensor.gain)
    x, w = _gh(nodes)
    s = np.sqrt(max(var, 0.0)) * x if var > 0 else np.zeros(1)
    if var <= 0:
        w = np.ones(1)
    b = cell_probabilities(spec, sensor.sigma_n, s)
    d = cell_probability_slopes(spec, sensor.sigma_n, s)
    return float(w @ _scores(None, b, d))


def bayesian_fim(net, quantizers, powers, nodes=48, envelope_averaged=False,
                 envelope_nodes=200, rule=None):
    """Bayesian information matrix of the network at the given powers.

    With `rule` (a GaussQuadRule over the full parameter space) the score
    expectations are computed by tensor quadrature instead of the projected
    one-dimensional reduction; the two agree and the reduction is faster.
    """
    powers = np.asarray(powers, dtype=float)
    if powers.shape != (net.n_sensors,):
        raise DomainError("one power per sensor is required")
    if np.any(powers < 0):
        raise DomainError("powers must be nonnegative")
    prior = net.prior
    prior_info = np.linalg.inv(prior.cov)
    q = net.dim

    scores = np.empty(net.n_sensors)
    ideal_scores = np.empty(net.n_sensors)
    fim = prior_info.copy()
    ideal = prior_info.copy()
    centralized = prior_info.copy()
    for k, (sensor, spec) in enumerate(zip(net.sensors, quantizers)):
        if rule is not None:
            alpha = transition_matrix(bit_error(sensor, float(powers[k])), spec)
            pts = rule.nodes @ np.linalg.cholesky(prior.cov).T
            s = pts @ sensor.gain
            b = cell_probabilities(spec, sensor.sigma_n, s)
            d = cell_probability_slopes(spec, sensor.sigma_n, s)
            scores[k] = float(rule.weights @ _scores(alpha, b, d))
            ideal_scores[k] = float(rule.weights @ _scores(None, b, d))
        else:
            scores[k] = expected_score(sensor, spec, prior, float(powers[k]), nodes=nodes,
                                       envelope_averaged=envelope_averaged,
                                       envelope_nodes=envelope_nodes)
            ideal_scores[k] = _expected_ideal_score(sensor, spec, prior, nodes)
        outer = np.outer(sensor.gain, sensor.gain) / sensor.sigma_n**2
        fim += outer * scores[k] / (2.0 * np.pi)
        ideal += outer * ideal_scores[k] / (2.0 * np.pi)
        centralized += outer
    return FisherReport(
        fim=as_spd(fim),
        fim_centralized=as_spd(centralized),
        fim_error_free=as_spd(ideal),
        expected_scores=scores,
    )


def classical_fim(net, quantizers, powers, theta):
    """Fisher information treating the parameter as deterministic at theta.

    Positive semidefinite with rank at most min(q, K); vanishes when every
    channel is information-free.
    """
    powers = np.asarray(powers, dtype=float)
    theta = np.asarray(theta, dtype=float)
    out = np.zeros((net.dim, net.dim))
    for k, (sensor, spec) in enumerate(zip(net.sensors, quantizers)):
        alpha = transition_matrix(bit_error(sensor, float(powers[k])), spec)
        g = sensor_score(alpha, spec, sensor, theta)
        out += np.outer(sensor.gain, sensor.gain) * g / (2.0 * np.pi * sensor.sigma_n**2)
    return 0.5 * (out + out.T)


def mi_lower_bound(report, prior):
    """Lower bound, in bits, on the mutual information between the parameter
    and any Bayesian estimate built from the received levels."""
    sign_c, logdet_c = np.linalg.slogdet(prior.cov)
    if sign_c <= 0:
        raise DomainError("prior covariance must be positive definite")
    return 0.5 * (logdet_c / np.log(2.0) + report.log2_det)
