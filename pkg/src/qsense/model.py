"""Declarative network description: prior, sensors, channels, power budget.

Also hosts the random-deployment scenario generator that draws sensor
positions in a square field and derives observation gains from an isotropic
intensity attenuation model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .errors import DomainError
from .numerics import as_spd

__all__ = [
    "GaussianPrior",
    "Coherent",
    "NoncoherentEnvelope",
    "NoncoherentStats",
    "SensorSpec",
    "NetworkModel",
    "ChannelQuality",
    "snr",
    "channel_quality",
    "attenuation_gains",
    "random_deployment",
]


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian prior on the unknown vector.

    cov is the centered covariance; a nonzero mean is handled by subtracting
    each sensor's projected mean before quantization and adding it back at
    the fusion center, so all second-order analytics run on cov alone.
    """

    cov: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self):
        cov = as_spd(self.cov)
        object.__setattr__(self, "cov", cov)
        q = cov.shape[0]
        mean = np.zeros(q) if self.mean is None else np.asarray(self.mean, dtype=float)
        if mean.shape != (q,):
            raise DomainError(f"prior mean must have shape ({q},)")
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self):
        return self.cov.shape[0]


@dataclass(frozen=True)
class Coherent:
    """Phase-coherent reception of BPSK symbols; h_mag is the channel envelope."""

    h_mag: float

    def __post_init__(self):
        if self.h_mag < 0:
            raise DomainError("channel envelope must be nonnegative")


@dataclass(frozen=True)
class NoncoherentEnvelope:
    """Noncoherent OOK reception with the channel envelope known at the FC."""

    h_mag: float

    def __post_init__(self):
        if self.h_mag < 0:
            raise DomainError("channel envelope must be nonnegative")


@dataclass(frozen=True)
class NoncoherentStats:
    """Noncoherent OOK reception with only the channel statistics known.

    The complex channel is circularly symmetric Gaussian with per-component
    standard deviation sigma_h.
    """

    sigma_h: float

    def __post_init__(self):
        if self.sigma_h <= 0:
            raise DomainError("sigma_h must be positive")


Channel = Union[Coherent, NoncoherentEnvelope, NoncoherentStats]


@dataclass(frozen=True)
class SensorSpec:
    """One sensor: observation gains, noise level, quantizer width, channel."""

    gain: np.ndarray          # observation gain vector a_k
    sigma_n: float            # observation-noise standard deviation
    bits: int                 # quantizer bit width L, M = 2**L levels
    channel: Channel
    sigma_w: float            # per-dimension channel-noise standard deviation

    def __post_init__(self):
        object.__setattr__(self, "gain", np.asarray(self.gain, dtype=float))
        if self.sigma_n <= 0 or self.sigma_w <= 0:
            raise DomainError("noise standard deviations must be positive")
        if self.bits < 1:
            raise DomainError("bit width must be at least 1")

    @property
    def levels(self):
        return 2 ** self.bits


@dataclass(frozen=True)
class NetworkModel:
    prior: GaussianPrior
    sensors: tuple
    p_tot: float

    def __post_init__(self):
        sensors = tuple(self.sensors)
        if not sensors:
            raise DomainError("a network needs at least one sensor")
        q = self.prior.dim
        for s in sensors:
            if s.gain.shape != (q,):
                raise DomainError("every sensor gain must match the prior dimension")
        if self.p_tot <= 0:
            raise DomainError("total power budget must be positive")
        object.__setattr__(self, "sensors", sensors)

    @property
    def dim(self):
        return self.prior.dim

    @property
    def n_sensors(self):
        return len(self.sensors)

    def gain_matrix(self):
        """Columns are the sensor gain vectors (q x K)."""
        return np.stack([s.gain for s in self.sensors], axis=1)

    def with_channels(self, channels):
        sensors = tuple(replace(s, channel=c) for s, c in zip(self.sensors, channels))
        return replace(self, sensors=sensors)


@dataclass(frozen=True)
class ChannelQuality:
    """Power-normalized channel figures: delta for a known envelope,
    delta_bar for known statistics only."""

    delta: float | None
    delta_bar: float | None


def channel_quality(sensor):
    ch = sensor.channel
    if isinstance(ch, NoncoherentStats):
        return ChannelQuality(delta=None, delta_bar=ch.sigma_h**2 / sensor.sigma_w**2)
    return ChannelQuality(delta=ch.h_mag**2 / (2.0 * sensor.sigma_w**2), delta_bar=None)


def sigma_h_equivalent(channel):
    """Rayleigh scale with the same mean channel power as `channel`."""
    if isinstance(channel, NoncoherentStats):
        return channel.sigma_h
    return channel.h_mag / np.sqrt(2.0)


def snr(sensor, p):
    """Per-symbol channel SNR at transmit power p.

    Known-envelope channels give gamma = p |h|^2 / (2 L sigma_w^2); the
    statistics-only channel gives the average gamma_bar = p sigma_h^2 /
    (L sigma_w^2).  Linear in p.
    """
    if p < 0:
        raise DomainError("transmit power must be nonnegative")
    ch = sensor.channel
    if isinstance(ch, NoncoherentStats):
        return p * ch.sigma_h**2 / (sensor.bits * sensor.sigma_w**2)
    return p * ch.h_mag**2 / (2.0 * sensor.bits * sensor.sigma_w**2)


def attenuation_gains(positions, source_positions, reference_distances=None, decay_exponent=2.0):
    """Observation gains from the isotropic attenuation model.

    Component i of sensor k's gain is (d0_i / d_ki)**n where d_ki is the
    distance from sensor k to source i and d0_i defaults to the source's
    distance from the origin.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    sources = np.atleast_2d(np.asarray(source_positions, dtype=float))
    if reference_distances is None:
        reference_distances = np.linalg.norm(sources, axis=1)
    d0 = np.asarray(reference_distances, dtype=float)
    if np.any(d0 <= 0):
        raise DomainError("sources must sit at positive distance from the origin")
    d = np.linalg.norm(positions[:, None, :] - sources[None, :, :], axis=2)
    if np.any(d <= 0):
        raise DomainError("a sensor coincides with a source")
    return (d0[None, :] / d) ** decay_exponent


def random_deployment(field_half_width, n_sensors, source_positions, decay_exponent=2.0,
                      seed=0, max_retries=100):
    """Draw sensor positions uniformly in the square [-w, w]^2 and return the
    attenuation-model gain vectors, one per sensor.

    Deterministic for a fixed seed.  Positions that collide with a source are
    resampled a bounded number of times.
    """
    if field_half_width <= 0:
        raise DomainError("field_half_width must be positive")
    sources = np.atleast_2d(np.asarray(source_positions, dtype=float))
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-field_half_width, field_half_width, size=(n_sensors, sources.shape[1]))
    for _ in range(max_retries):
        d = np.linalg.norm(pos[:, None, :] - sources[None, :, :], axis=2)
        bad = np.any(d < 1e-9, axis=1)
        if not np.any(bad):
            break
        pos[bad] = rng.uniform(-field_half_width, field_half_width,
                               size=(int(np.sum(bad)), sources.shape[1]))
    else:
        raise DomainError("could not place sensors away from the sources")
    gains = attenuation_gains(pos, sources, decay_exponent=decay_exponent)
    return [gains[k] for k in range(n_sensors)]
