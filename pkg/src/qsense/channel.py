"""Bit-error probabilities and level-transition matrices for the three
receiver types.

The coherent BPSK receiver sees a binary symmetric channel; both noncoherent
OOK receivers see a binary asymmetric channel whose flip probabilities come
from envelope or power threshold tests.  A transition matrix collects the
per-level confusion probabilities and is always column-stochastic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnsupportedConfigError
from .model import Coherent, NoncoherentEnvelope, NoncoherentStats, snr
from .numerics import gaussian_q, marcum_q
from .quantizer import _natural_binary_codebook

__all__ = [
    "BitErrorProfile",
    "bit_error",
    "coherent_flip",
    "envelope_flips",
    "stats_flips",
    "transition_matrix",
    "decision_threshold",
]


@dataclass(frozen=True)
class BitErrorProfile:
    """Flip probabilities of one sensor's binary channel.

    eps_0to1 is the probability a transmitted 0 arrives as 1; eps_1to0 the
    reverse.  Coherent reception yields the symmetric case.
    """

    eps_0to1: float
    eps_1to0: float
    threshold: float | None = None

    @property
    def symmetric(self):
        return self.eps_0to1 == self.eps_1to0


def coherent_flip(gamma):
    """BSC crossover probability of coherent BPSK at per-symbol SNR gamma."""
    return gaussian_q(np.sqrt(2.0 * np.asarray(gamma, dtype=float)))


def envelope_flips(gamma):
    """(eps_0to1, eps_1to0) of the known-envelope OOK receiver.

    The normalized envelope is compared against zeta = sqrt(2 + gamma); the
    miss probability involves the Marcum Q-function at noncentrality
    2 sqrt(gamma).
    """
    gamma = np.asarray(gamma, dtype=float)
    zeta = np.sqrt(2.0 + gamma)
    e1 = np.exp(-0.5 * zeta**2)
    e2 = 1.0 - marcum_q(2.0 * np.sqrt(gamma), zeta)
    return e1, e2


def stats_flips(gbar):
    """(eps_0to1, eps_1to0) of the statistics-only OOK receiver.

    Closed forms in the average SNR gbar; the gbar -> 0 limits (1/e, 1 - 1/e)
    are taken analytically since the expressions are 0/0 there.
    """
    gbar = np.asarray(gbar, dtype=float)
    t = np.log1p(2.0 * gbar)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gbar > 0, t / (2.0 * np.where(gbar > 0, gbar, 1.0)), 1.0)
    e1 = np.exp(-(t + ratio))
    e2 = 1.0 - np.exp(-ratio)
    return e1, e2


def bit_error(sensor, p):
    """Bit-error profile of a sensor transmitting at power p."""
    if p < 0:
        raise DomainError("transmit power must be nonnegative")
    ch = sensor.channel
    g = snr(sensor, p)
    if isinstance(ch, Coherent):
        eps = float(coherent_flip(g))
        return BitErrorProfile(eps, eps)
    if isinstance(ch, NoncoherentEnvelope):
        e1, e2 = envelope_flips(g)
        return BitErrorProfile(float(e1), float(e2), threshold=float(np.sqrt(2.0 + g)))
    e1, e2 = stats_flips(g)
    return BitErrorProfile(float(e1), float(e2),
                           threshold=float(decision_threshold(sensor, p)))


def decision_threshold(sensor, p):
    """Detection threshold of the noncoherent receivers.

    Known envelope: zeta = sqrt(2 + gamma) on the normalized envelope.
    Known statistics: zeta = 2 sigma_w^2 (1 + 1/(2 gbar)) ln(1 + 2 gbar) on
    the received power, with the gbar -> 0 limit 2 sigma_w^2.
    """
    ch = sensor.channel
    if isinstance(ch, Coherent):
        raise UnsupportedConfigError("coherent reception uses no envelope threshold")
    g = snr(sensor, p)
    if isinstance(ch, NoncoherentEnvelope):
        return float(np.sqrt(2.0 + g))
    if g == 0.0:
        return 2.0 * sensor.sigma_w**2
    t = np.log1p(2.0 * g)
    return float(2.0 * sensor.sigma_w**2 * (t + t / (2.0 * g)))


def transition_matrix(profile, spec):
    """M x M matrix alpha with alpha[t, l] = p(level t received | level l sent).

    Columns sum to one.  The symmetric channel depends on (t, l) only through
    the Hamming distance of the codewords; the asymmetric channel multiplies
    per-bit flip factors.
    """
    book = spec.codebook.astype(np.int64)           # (M, L)
    sent = book[None, :, :]                          # l axis
    recv = book[:, None, :]                          # t axis
    e1 = profile.eps_0to1
    e2 = profile.eps_1to0
    if profile.symmetric:
        ne = np.sum(sent != recv, axis=2)
        eps = e1
        alpha = (eps ** ne) * ((1.0 - eps) ** (spec.bits - ne))
    else:
        factors = np.where(
            sent == 0,
            np.where(recv == 0, 1.0 - e1, e1),
            np.where(recv == 0, e2, 1.0 - e2),
        )
        alpha = np.prod(factors, axis=2)
    return alpha


def transition_matrices_at_snr(kind, gammas, bits):
    """Stacked transition matrices for an array of SNR values.

    kind is one of "coherent", "envelope", "stats"; returns an array of shape
    (n, M, M) matching the flattened gammas.
    """
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    if kind == "coherent":
        eps = coherent_flip(gammas)
        e1 = e2 = eps
    elif kind == "envelope":
        e1, e2 = envelope_flips(gammas)
    elif kind == "stats":
        e1, e2 = stats_flips(gammas)
    else:
        raise DomainError(f"unknown receiver kind {kind!r}")
    e1 = np.atleast_1d(e1)[:, None, None]
    e2 = np.atleast_1d(e2)[:, None, None]
    book = _natural_binary_codebook(bits).astype(np.int64)
    sent = book[None, None, :, :]
    recv = book[None, :, None, :]
    factors = np.where(
        sent == 0,
        np.where(recv == 0, 1.0 - e1[..., None], e1[..., None]),
        np.where(recv == 0, e2[..., None], 1.0 - e2[..., None]),
    )
    return np.prod(factors, axis=3)
