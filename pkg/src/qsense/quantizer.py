"""Symmetric mid-rise scalar quantizers and their natural binary codebooks.

Two designs are provided for a zero-mean Gaussian input: a uniform grid
spanning +/- 3 sigma, and the Lloyd-Max fixed point of the centroid/midpoint
iteration.  Edge boundaries are infinite so cell probabilities always sum to
one; interior symmetry is enforced by construction and re-asserted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConvergenceError, DomainError
from .numerics import gaussian_q

__all__ = [
    "QuantizerSpec",
    "observation_std",
    "uniform_quantizer",
    "uniform_quantizer_from_sigma",
    "lloyd_max_quantizer",
    "quantize",
    "encode",
    "hamming",
    "quantizer_distortion",
]


def _natural_binary_codebook(bits):
    m = 2 ** bits
    idx = np.arange(m, dtype=np.uint32)[:, None]
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint32)[None, :]
    return ((idx >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True)
class QuantizerSpec:
    """Boundaries, levels, and codebook of one symmetric mid-rise quantizer.

    boundaries has M+1 entries with infinite edges; levels has M entries.
    Level indices are 1-based throughout the public API, and the codeword of
    level l is the natural binary expansion of l-1, MSB first.
    """

    bits: int
    boundaries: np.ndarray
    levels: np.ndarray
    kind: str = "uniform"
    sigma: float = 1.0       # design input standard deviation
    tau: float = 0.0         # half-width of the designed level span
    step: float | None = None  # uniform grid step, None for Lloyd-Max

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        v = np.asarray(self.levels, dtype=float)
        m = 2 ** self.bits
        if v.shape != (m,) or b.shape != (m + 1,):
            raise DomainError("boundary/level lengths do not match the bit width")
        if not (np.isneginf(b[0]) and np.isposinf(b[-1])):
            raise DomainError("edge boundaries must be infinite")
        if np.any(np.diff(b) <= 0):
            raise DomainError("boundaries must be strictly increasing")
        if np.max(np.abs(b[1:-1] + b[-2:0:-1])) > 1e-9 * max(1.0, self.tau):
            raise DomainError("boundaries must be symmetric about zero")
        if np.max(np.abs(v + v[::-1])) > 1e-9 * max(1.0, self.tau):
            raise DomainError("levels must be symmetric about zero")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "levels", v)

    @property
    def n_levels(self):
        return 2 ** self.bits

    @property
    def codebook(self):
        return _natural_binary_codebook(self.bits)


def observation_std(sensor, prior):
    """Marginal standard deviation of a sensor's (centered) observation."""
    a = sensor.gain
    return float(np.sqrt(sensor.sigma_n**2 + a @ prior.cov @ a))


def uniform_quantizer_from_sigma(sigma, bits):
    """Uniform mid-rise design for a zero-mean Gaussian of std sigma.

    The grid step is Delta = 2 tau / (M - 1) with tau = 3 sigma, placing the
    outermost levels at +/- tau.
    """
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    m = 2 ** bits
    tau = 3.0 * sigma
    step = 2.0 * tau / (m - 1) if m > 1 else 2.0 * tau
    lev = (2.0 * np.arange(1, m + 1) - 1 - m) * step / 2.0
    bounds = np.empty(m + 1)
    bounds[0] = -np.inf
    bounds[-1] = np.inf
    bounds[1:-1] = (2.0 * np.arange(2, m + 1) - 2 - m) * step / 2.0
    return QuantizerSpec(bits=bits, boundaries=bounds, levels=lev,
                         kind="uniform", sigma=float(sigma), tau=tau, step=step)


def uniform_quantizer(sensor, prior):
    return uniform_quantizer_from_sigma(observation_std(sensor, prior), sensor.bits)


def _gaussian_centroids(bounds, sigma):
    """Conditional means of N(0, sigma^2) on each cell."""
    z = bounds / sigma
    pdf = np.exp(-0.5 * np.square(np.where(np.isfinite(z), z, 0.0)))
    pdf[~np.isfinite(z)] = 0.0
    pdf /= np.sqrt(2.0 * np.pi)
    cdf = ndtr(z)
    num = sigma * (pdf[:-1] - pdf[1:])
    den = cdf[1:] - cdf[:-1]
    return num / den


def lloyd_max_quantizer(sigma, bits, tol=1e-12, max_iter=500):
    """Lloyd-Max design for a zero-mean Gaussian of std sigma.

    Alternates conditional centroids and midpoint boundaries from the uniform
    design, symmetrizing the levels each pass so the symmetric mid-rise
    structure survives floating-point drift.  Raises ConvergenceError with
    the last iterate attached when max_iter passes do not reach tol.
    """
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    m = 2 ** bits
    spec = uniform_quantizer_from_sigma(sigma, bits)
    levels = spec.levels.copy()
    bounds = spec.boundaries.copy()
    for _ in range(max_iter):
        bounds[1:-1] = 0.5 * (levels[:-1] + levels[1:])
        new_levels = _gaussian_centroids(bounds, sigma)
        new_levels = 0.5 * (new_levels - new_levels[::-1])
        delta = float(np.max(np.abs(new_levels - levels)))
        levels = new_levels
        if delta < tol:
            bounds[1:-1] = 0.5 * (levels[:-1] + levels[1:])
            return QuantizerSpec(bits=bits, boundaries=bounds, levels=levels,
                                 kind="lloyd-max", sigma=float(sigma),
                                 tau=float(levels[-1]), step=None)
    last = QuantizerSpec(bits=bits, boundaries=bounds, levels=levels,
                         kind="lloyd-max", sigma=float(sigma),
                         tau=float(levels[-1]), step=None)
    raise ConvergenceError(f"Lloyd-Max did not reach tol={tol} in {max_iter} passes", last=last)


def quantize(spec, x):
    """Map x to its 1-based level index, cells being lower-open intervals
    (u_l, u_{l+1}]."""
    idx = np.searchsorted(spec.boundaries, x, side="left")
    if np.ndim(x) == 0:
        return int(idx)
    return idx.astype(np.int64)


def encode(spec, level_index):
    """Codeword of a 1-based level index as a bit string, MSB first."""
    m = spec.n_levels
    if not 1 <= level_index <= m:
        raise DomainError(f"level index must lie in 1..{m}")
    return "".join(str(b) for b in spec.codebook[level_index - 1])


def hamming(spec, t, l):
    """Hamming distance between the codewords of two 1-based level indices."""
    m = spec.n_levels
    if not (1 <= t <= m and 1 <= l <= m):
        raise DomainError(f"level indices must lie in 1..{m}")
    return int(bin((t - 1) ^ (l - 1)).count("1"))


def quantizer_distortion(spec, sigma):
    """Mean squared quantization error for a zero-mean Gaussian input.

    Closed-form per-cell integrals of (x - m_l)^2 against the density.
    """
    z = spec.boundaries / sigma
    pdf = np.exp(-0.5 * np.square(np.where(np.isfinite(z), z, 0.0)))
    pdf[~np.isfinite(z)] = 0.0
    pdf /= np.sqrt(2.0 * np.pi)
    cdf = ndtr(z)
    zpdf = np.where(np.isfinite(z), z * pdf, 0.0)
    mass = cdf[1:] - cdf[:-1]
    first = pdf[:-1] - pdf[1:]
    second = mass + zpdf[:-1] - zpdf[1:]
    mu = spec.levels / sigma
    per_cell = second - 2.0 * mu * first + np.square(mu) * mass
    return float(sigma**2 * np.sum(per_cell))
