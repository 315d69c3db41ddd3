"""Linear fusion-center estimators and their mean-square-error matrices.

The LMMSE estimator needs three families of closed-form Gaussian integrals
over quantizer cells: the cross moment between the parameter and a cell
indicator, the cell mass, and the joint mass of a cell pair under the
correlated pair of projected observations.  A quasi-BLUE variant covers the
coherent/uniform-quantizer case with a variance upper bound in place of the
exact second moments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import bit_error, transition_matrices_at_snr, transition_matrix
from .errors import DivergenceError, DomainError, UnsupportedConfigError
from .fim import _laguerre
from .model import Coherent, NoncoherentStats, sigma_h_equivalent
from .numerics import as_spd, bivariate_q, gaussian_q
from .quantizer import observation_std

__all__ = [
    "MomentSet",
    "MseReport",
    "closed_form_integrals",
    "cell_mass",
    "cross_moment_integrals",
    "pair_cell_mass",
    "moment_set",
    "lmmse_estimate",
    "lmmse_mse",
    "centralized_mse",
    "quasi_blue_mse",
    "quasi_blue_estimate",
    "mse_trace",
]


def pair_correlation(net, i, j):
    a_i = net.sensors[i].gain
    a_j = net.sensors[j].gain
    cov = net.prior.cov
    s_i = observation_std(net.sensors[i], net.prior)
    s_j = observation_std(net.sensors[j], net.prior)
    rho = float(a_i @ cov @ a_j) / (s_i * s_j)
    if not abs(rho) < 1.0:
        raise DomainError("projected observations are perfectly correlated")
    return rho


def cell_mass(net, quantizers, k):
    """Marginal probability of each cell of sensor k (telescoping tails)."""
    sigma = observation_std(net.sensors[k], net.prior)
    tails = gaussian_q(quantizers[k].boundaries / sigma)
    return tails[:-1] - tails[1:]


def cross_moment_integrals(net, quantizers, k):
    """E{theta 1{cell l}} for sensor k, one column per cell (q x M)."""
    sensor = net.sensors[k]
    sigma = observation_std(sensor, net.prior)
    u = quantizers[k].boundaries
    e = np.zeros_like(u)
    finite = np.isfinite(u)
    e[finite] = np.exp(-0.5 * np.square(u[finite] / sigma))
    diffs = e[:-1] - e[1:]
    coeff = (net.prior.cov @ sensor.gain) / (np.sqrt(2.0 * np.pi) * sigma)
    return np.outer(coeff, diffs)


def pair_cell_mass(net, quantizers, i, j):
    """Joint probability of cell pairs of sensors i and j (M_i x M_j)."""
    if i == j:
        raise DomainError("pair_cell_mass needs two distinct sensors")
    rho = pair_correlation(net, i, j)
    s_i = observation_std(net.sensors[i], net.prior)
    s_j = observation_std(net.sensors[j], net.prior)
    zi = quantizers[i].boundaries / s_i
    zj = quantizers[j].boundaries / s_j
    grid = np.empty((zi.size, zj.size))
    for a, x in enumerate(zi):
        for b, y in enumerate(zj):
            grid[a, b] = bivariate_q(x, y, rho)
    return grid[:-1, :-1] - grid[:-1, 1:] - grid[1:, :-1] + grid[1:, 1:]


def closed_form_integrals(net, quantizers, i, j, l1, l2):
    """(cross-moment vector, cell mass, pair mass) for 1-based cells l1 of
    sensor i and l2 of sensor j."""
    vec = cross_moment_integrals(net, quantizers, i)[:, l1 - 1]
    mass = float(cell_mass(net, quantizers, i)[l1 - 1])
    pair = float(pair_cell_mass(net, quantizers, i, j)[l1 - 1, l2 - 1])
    return vec, mass, pair


@dataclass(frozen=True)
class MomentSet:
    """Second-order description of the received levels.

    cross is E{theta m^T} (q x K); mean and second are the first and second
    moments of the received level vector; cov is its covariance.
    """

    cross: np.ndarray
    mean: np.ndarray
    second: np.ndarray
    cov: np.ndarray


def _post_channel_level_moments(spec, alpha):
    """First and second moments of the received level given the sent cell."""
    if alpha is None:
        return spec.levels.copy(), np.square(spec.levels)
    v = alpha.T @ spec.levels
    w2 = alpha.T @ np.square(spec.levels)
    return v, w2


def moment_set(net, quantizers, alphas):
    """Analytical moments of the received levels; alphas is one transition
    matrix per sensor (None meaning error-free)."""
    K = net.n_sensors
    q = net.dim
    mean = np.empty(K)
    cross = np.empty((q, K))
    second = np.empty((K, K))
    vs = []
    for k in range(K):
        v, w2 = _post_channel_level_moments(quantizers[k], alphas[k])
        vs.append(v)
        mass = cell_mass(net, quantizers, k)
        mean[k] = v @ mass
        second[k, k] = w2 @ mass
        cross[:, k] = cross_moment_integrals(net, quantizers, k) @ v
    for i in range(K):
        for j in range(i + 1, K):
            pm = pair_cell_mass(net, quantizers, i, j)
            second[i, j] = second[j, i] = vs[i] @ pm @ vs[j]
    cov = second - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    return MomentSet(cross=cross, mean=mean, second=second, cov=cov)


@dataclass(frozen=True)
class MseReport:
    """LMMSE error matrices: the operating point and its two baselines
    (unquantized centralized data and error-free channels)."""

    mse: np.ndarray
    mse_centralized: np.ndarray
    mse_error_free: np.ndarray

    @property
    def trace(self):
        return float(np.trace(self.mse))


def _solve_cov(cov, rhs):
    try:
        return np.linalg.solve(cov, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("level covariance is singular; using a pseudo-inverse",
                      RuntimeWarning, stacklevel=3)
        return np.linalg.pinv(cov) @ rhs


def _schur_mse(prior_cov, moments):
    gain = _solve_cov(moments.cov, moments.cross.T)    # (K, q)
    mse = prior_cov - moments.cross @ gain
    return 0.5 * (mse + mse.T)


def lmmse_mse(net, quantizers, alphas):
    """MSE matrix of the LMMSE estimator plus its two baselines."""
    moments = moment_set(net, quantizers, alphas)
    ideal = moment_set(net, quantizers, [None] * net.n_sensors)
    return MseReport(
        mse=_schur_mse(net.prior.cov, moments),
        mse_centralized=centralized_mse(net),
        mse_error_free=_schur_mse(net.prior.cov, ideal),
    )


def lmmse_estimate(net, quantizers, alphas, level_indices):
    """LMMSE estimate from 1-based received level indices, shape (..., K).

    A nonzero prior mean is handled by estimating the centered parameter and
    adding the mean back.
    """
    idx = np.asarray(level_indices)
    if idx.shape[-1] != net.n_sensors:
        raise DomainError("last axis must carry one level index per sensor")
    moments = moment_set(net, quantizers, alphas)
    values = np.stack(
        [quantizers[k].levels[idx[..., k] - 1] for k in range(net.n_sensors)], axis=-1
    )
    centered = values - moments.mean
    gain = _solve_cov(moments.cov, moments.cross.T)    # (K, q)
    return net.prior.mean + centered @ gain


def centralized_mse(net):
    """LMMSE error matrix when raw observations reach the fusion center."""
    gains = net.gain_matrix()                          # (q, K)
    cov = net.prior.cov
    obs_cov = gains.T @ cov @ gains + np.diag([s.sigma_n**2 for s in net.sensors])
    cross = cov @ gains
    mse = cov - cross @ np.linalg.solve(obs_cov, cross.T)
    return 0.5 * (mse + mse.T)


def _qblue_weights(net, quantizers, powers):
    denom_mse = np.empty(net.n_sensors)
    denom_est = np.empty(net.n_sensors)
    for k, (sensor, spec) in enumerate(zip(net.sensors, quantizers)):
        if not isinstance(sensor.channel, Coherent):
            raise UnsupportedConfigError("quasi-BLUE requires coherent reception")
        if spec.kind != "uniform" or spec.step is None:
            raise UnsupportedConfigError("quasi-BLUE requires the uniform quantizer")
        eps = bit_error(sensor, float(powers[k])).eps_0to1
        if eps >= 0.5:
            raise DivergenceError("quasi-BLUE diverges as the flip probability reaches 1/2")
        m = spec.n_levels
        chi = 4.0 * spec.tau**2 * (m + 1) / (3.0 * (m - 1))
        base = sensor.sigma_n**2 + spec.step**2 / 12.0
        denom_mse[k] = chi * eps / (1.0 - 2.0 * eps) ** 2 + base
        denom_est[k] = chi * eps / (1.0 - 2.0 * eps) + (1.0 - 2.0 * eps) * base
    return denom_mse, denom_est


def quasi_blue_mse(net, quantizers, powers):
    """MSE matrix of the quasi-BLUE (variance upper bound in place of the
    exact level variances); diverges as any flip probability reaches 1/2."""
    denom_mse, _ = _qblue_weights(net, quantizers, powers)
    info = np.zeros((net.dim, net.dim))
    for k, sensor in enumerate(net.sensors):
        info += np.outer(sensor.gain, sensor.gain) / denom_mse[k]
    return np.linalg.inv(as_spd(info))


def quasi_blue_estimate(net, quantizers, powers, level_indices):
    """Quasi-BLUE estimate from 1-based received level indices."""
    denom_mse, denom_est = _qblue_weights(net, quantizers, powers)
    idx = np.asarray(level_indices)
    values = np.stack(
        [quantizers[k].levels[idx[..., k] - 1] for k in range(net.n_sensors)], axis=-1
    )
    info = np.zeros((net.dim, net.dim))
    for k, sensor in enumerate(net.sensors):
        info += np.outer(sensor.gain, sensor.gain) / denom_mse[k]
    weights = np.stack([net.sensors[k].gain / denom_est[k]
                        for k in range(net.n_sensors)], axis=1)   # (q, K)
    rhs = values @ weights.T                                       # (..., q)
    return net.prior.mean + rhs @ np.linalg.inv(as_spd(info)).T


def _sensor_alpha_batch(sensor, spec, power, envelope_averaged, envelope_nodes):
    """Transition matrices and weights for one sensor's envelope average.

    Returns (alphas (n, M, M), weights (n,)); n is 1 unless the sensor has a
    known-envelope channel and averaging is requested.
    """
    if isinstance(sensor.channel, NoncoherentStats) or not envelope_averaged:
        return transition_matrix(bit_error(sensor, power), spec)[None, :, :], np.ones(1)
    t, tw = _laguerre(envelope_nodes)
    sigh = sigma_h_equivalent(sensor.channel)
    gbar = power * sigh**2 / (sensor.bits * sensor.sigma_w**2)
    kind = "coherent" if isinstance(sensor.channel, Coherent) else "envelope"
    return transition_matrices_at_snr(kind, t * gbar, sensor.bits), tw


def mse_trace(net, quantizers, powers, envelope_averaged=False, envelope_nodes=200,
              max_grid=2_000_000):
    """tr of the LMMSE error matrix at the given powers.

    With envelope_averaged=True, sensors with known-envelope channels are
    averaged over a Rayleigh envelope of matching mean power (the fusion
    center re-derives its weights for each realization); statistics-only
    sensors need no averaging.  The average is a tensor Gauss-Laguerre sum,
    so its cost grows geometrically with the number of averaged sensors.
    """
    powers = np.asarray(powers, dtype=float)
    K = net.n_sensors
    q = net.dim
    batches = []
    weights = []
    for k in range(K):
        alphas, w = _sensor_alpha_batch(net.sensors[k], quantizers[k], float(powers[k]),
                                        envelope_averaged, envelope_nodes)
        batches.append(alphas)
        weights.append(w)
    sizes = [len(w) for w in weights]
    total = int(np.prod(sizes))
    if total > max_grid:
        raise DomainError(f"envelope grid of {total} points is too large; "
                          "reduce envelope_nodes")

    means = []
    variances = []
    crosses = []
    vs = []
    for k in range(K):
        levels = quantizers[k].levels
        v = np.einsum("ctl,t->cl", batches[k], levels)             # (n_k, M)
        w2 = np.einsum("ctl,t->cl", batches[k], np.square(levels))
        mass = cell_mass(net, quantizers, k)
        mean_k = v @ mass
        second_k = w2 @ mass
        means.append(mean_k)
        variances.append(second_k - np.square(mean_k))
        crosses.append(cross_moment_integrals(net, quantizers, k) @ v.T)  # (q, n_k)
        vs.append(v)

    pair_cov = {}
    for i in range(K):
        for j in range(i + 1, K):
            pm = pair_cell_mass(net, quantizers, i, j)
            joint = vs[i] @ pm @ vs[j].T                           # (n_i, n_j)
            pair_cov[(i, j)] = joint - np.outer(means[i], means[j])

    grids = np.meshgrid(*[np.arange(n) for n in sizes], indexing="ij")
    flat = [g.ravel() for g in grids]
    cov = np.empty((total, K, K))
    rhs = np.empty((total, K, q))
    for i in range(K):
        cov[:, i, i] = variances[i][flat[i]]
        rhs[:, i, :] = crosses[i][:, flat[i]].T
        for j in range(i + 1, K):
            c = pair_cov[(i, j)][flat[i], flat[j]]
            cov[:, i, j] = c
            cov[:, j, i] = c
    try:
        sol = np.linalg.solve(cov, rhs)                            # (total, K, q)
    except np.linalg.LinAlgError:
        sol = np.stack([_solve_cov(cov[n], rhs[n]) for n in range(total)])
    explained = np.einsum("nkq,nkq->n", rhs, sol)
    traces = float(np.trace(net.prior.cov)) - explained

    w_total = np.ones(total)
    for k in range(K):
        w_total *= weights[k][flat[k]]
    return float(w_total @ traces)
