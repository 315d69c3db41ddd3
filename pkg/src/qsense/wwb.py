"""Weiss-Weinstein bound: test points, candidate bounds, Loewner supremum.

A candidate bound W(R) = R G^{-1} R' is generated by a set of test points R
through the log Bhattacharyya-type overlap mu(r) of the joint density and
its parameter-shifted copy.  The supremum over candidates under the Loewner
partial order is realized as the minimum-volume origin-centered ellipsoid
enclosing every candidate ellipsoid, computed by a multiplicative-weights
iteration on sampled boundary points with exact post-hoc containment
certificates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .channel import bit_error, transition_matrix
from .errors import CandidateRejectedError, ConvergenceError, DomainError
from .fim import cell_probabilities
from .numerics import gauss_hermite_rule, spd_cholesky

__all__ = [
    "TestPointSet",
    "WwbCandidate",
    "mu",
    "MuEvaluator",
    "wwb_candidate",
    "wwb_supremum",
    "default_test_points",
    "weiss_weinstein_bound",
]

DEFAULT_SCALES = (0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class TestPointSet:
    """Columns of points are the test offsets; must be linearly independent."""

    points: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.points, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise DomainError("test points must form a square matrix (one column each)")
        if np.linalg.matrix_rank(r) < r.shape[0]:
            raise DomainError("test point columns must be linearly independent")
        object.__setattr__(self, "points", r)


@dataclass(frozen=True)
class WwbCandidate:
    test_points: TestPointSet
    overlap_matrix: np.ndarray     # G
    bound: np.ndarray              # W = R G^{-1} R'


class MuEvaluator:
    """Evaluates mu(r) = log integral of the square-root product of the joint
    density at theta and theta + r.

    The Gaussian prior factor is integrated analytically by recentering the
    quadrature at -r/2, leaving the product over sensors of the per-sensor
    Bhattacharyya sums of received-level distributions.
    """

    def __init__(self, net, quantizers, powers, rule=None, nodes=24):
        self.net = net
        self.quantizers = quantizers
        q = net.dim
        self.rule = rule if rule is not None else gauss_hermite_rule(q, nodes)
        if self.rule.dim != q:
            raise DomainError("quadrature rule dimension must match the prior")
        self.chol = spd_cholesky(net.prior.cov)
        self.prior_inv = np.linalg.inv(net.prior.cov)
        powers = np.asarray(powers, dtype=float)
        self.alphas = [
            transition_matrix(bit_error(s, float(p)), spec)
            for s, spec, p in zip(net.sensors, quantizers, powers)
        ]
        self._base_points = self.rule.nodes @ self.chol.T

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.net.dim,):
            raise DomainError("test offset has the wrong dimension")
        if not np.any(r):
            return 0.0
        theta = self._base_points - 0.5 * r
        log_terms = np.zeros(theta.shape[0])
        for sensor, spec, alpha in zip(self.net.sensors, self.quantizers, self.alphas):
            s0 = theta @ sensor.gain
            shift = float(sensor.gain @ r)
            b0 = cell_probabilities(spec, sensor.sigma_n, s0)
            b1 = cell_probabilities(spec, sensor.sigma_n, s0 + shift)
            p0 = b0 @ alpha.T
            p1 = b1 @ alpha.T
            overlap = np.sum(np.sqrt(np.clip(p0, 0.0, None) * np.clip(p1, 0.0, None)), axis=1)
            with np.errstate(divide="ignore"):
                log_terms += np.log(overlap)
        prior_part = -0.125 * float(r @ self.prior_inv @ r)
        return prior_part + float(logsumexp(log_terms, b=self.rule.weights))


def mu(r, net, quantizers, powers, rule=None, nodes=24):
    """mu(r) <= 0 with equality at r = 0; see MuEvaluator."""
    return MuEvaluator(net, quantizers, powers, rule=rule, nodes=nodes)(r)


def _overlap_matrix(points, mu_of):
    """G from pairwise overlap exponents, evaluated stably in log space.

    [G]_ij = 2 (e^{mu(ri-rj)} - e^{mu(ri+rj)}) / (e^{mu(ri)} e^{mu(rj)});
    the diagonal reduces to 2 (1 - e^{mu(2 ri)}) e^{-2 mu(ri)}.
    """
    q = points.shape[1]
    mu_single = np.array([mu_of(points[:, i]) for i in range(q)])
    g = np.empty((q, q))
    for i in range(q):
        for j in range(i, q):
            md = mu_of(points[:, i] - points[:, j]) if i != j else 0.0
            ms = mu_of(points[:, i] + points[:, j])
            with np.errstate(over="ignore"):
                val = 2.0 * np.exp(md - mu_single[i] - mu_single[j]) * (-np.expm1(ms - md))
            g[i, j] = g[j, i] = val
    return g


def wwb_candidate(test_points, net, quantizers, powers, rule=None, nodes=24,
                  mu_evaluator=None):
    """Candidate bound W = R G^{-1} R' for one test point set.

    Raises CandidateRejectedError when G is not symmetric positive definite
    (the caller is expected to try other test points).
    """
    if isinstance(test_points, np.ndarray):
        test_points = TestPointSet(test_points)
    ev = mu_evaluator if mu_evaluator is not None else MuEvaluator(
        net, quantizers, powers, rule=rule, nodes=nodes)
    r = test_points.points
    g = _overlap_matrix(r, ev)
    if not np.all(np.isfinite(g)):
        raise CandidateRejectedError("overlap matrix is not finite")
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise CandidateRejectedError("overlap matrix is not positive definite") from exc
    bound = r @ np.linalg.solve(g, r.T)
    bound = 0.5 * (bound + bound.T)
    return WwbCandidate(test_points=test_points, overlap_matrix=g, bound=bound)


def _unit_directions(q, count):
    """Deterministic unit vectors covering half the sphere; the centered
    problem only sees the outer products, so antipodes are redundant."""
    if q == 1:
        return np.array([[1.0]])
    if q == 2:
        ang = np.linspace(0.0, np.pi, count, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rng = np.random.default_rng(1234567)
    v = rng.standard_normal((count, q))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def _sqrt_spd(m):
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def _frank_wolfe_mvee(z, u, tol, max_iter):
    """Multiplicative-weights sweep for the centered ellipsoid; returns the
    weights and the duality gap reached."""
    n, q = z.shape
    gap = np.inf
    for _ in range(max_iter):
        m = (z * u[:, None]).T @ z
        minv = np.linalg.inv(m)
        g = np.einsum("ij,jk,ik->i", z, minv, z)
        j_add = int(np.argmax(g))
        gap_add = g[j_add] / q - 1.0
        support = u > 1e-14
        g_sup = np.where(support, g, np.inf)
        j_away = int(np.argmin(g_sup))
        gap_away = 1.0 - g[j_away] / q
        gap = max(gap_add, gap_away)
        if gap <= tol:
            break
        if gap_add >= gap_away:
            j = j_add
            gj = g[j]
            step = (gj - q) / (q * (gj - 1.0))
        else:
            j = j_away
            gj = g[j]
            # the 1-d optimum is negative only for gj > 1; otherwise the best
            # feasible move zeroes the weight outright
            step = (gj - q) / (q * (gj - 1.0)) if gj > 1.0 else -np.inf
            step = max(step, -u[j] / (1.0 - u[j]))
        u *= 1.0 - step
        u[j] += step
    return u, gap


def _triu_indices(q):
    return [(a, b) for a in range(q) for b in range(a, q)]


def _vec_to_sym(x, q, idx):
    e = np.zeros((q, q))
    for v, (a, b) in zip(x, idx):
        e[a, b] = v
        e[b, a] = v
    return e


def _logdet_and_derivs(x, q, idx):
    """-logdet E(x) with analytic gradient and Hessian in the packed
    upper-triangle coordinates; None when E leaves the cone."""
    e = _vec_to_sym(x, q, idx)
    try:
        chol = np.linalg.cholesky(e)
    except np.linalg.LinAlgError:
        return None
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    inv = np.linalg.inv(e)
    m = len(idx)
    grad = np.array([-inv[a, b] * (1.0 if a == b else 2.0) for a, b in idx])
    hess = np.empty((m, m))
    for col, (c, d) in enumerate(idx):
        delta = np.zeros((q, q))
        delta[c, d] = 1.0
        delta[d, c] = 1.0
        dinv = inv @ delta @ inv
        hess[:, col] = [dinv[a, b] * (1.0 if a == b else 2.0) for a, b in idx]
    return -logdet, grad, hess


def _polish_mvee(z, e0, tol):
    """Interior-point solve of: minimize -logdet(E) s.t. z_i' E z_i <= 1.

    The constraints are linear in the packed entries of E, so a short
    log-barrier path with damped Newton steps reaches the optimum to the
    requested leverage gap.  Returns E or None when the solve stalls.
    """
    n, q = z.shape
    idx = _triu_indices(q)
    nvar = len(idx)
    rows = np.empty((n, nvar))
    for col, (a, b) in enumerate(idx):
        rows[:, col] = z[:, a] * z[:, b] * (1.0 if a == b else 2.0)

    x = np.array([e0[a, b] for a, b in idx])
    max_lev = float(np.max(rows @ x))
    if max_lev > 1.0 - 1e-6:
        x = x * (1.0 - 1e-6) / max_lev
    slack = 1.0 - rows @ x
    if np.any(slack <= 0.0) or _logdet_and_derivs(x, q, idx) is None:
        return None

    t = float(n)
    t_final = n / (q * max(tol, 1e-12))
    while True:
        for _ in range(60):
            fgh = _logdet_and_derivs(x, q, idx)
            if fgh is None:
                return None
            f0, g0, h0 = fgh
            slack = 1.0 - rows @ x
            grad = t * g0 + rows.T @ (1.0 / slack)
            hess = t * h0 + (rows / np.square(slack)[:, None]).T @ rows
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                return None
            decrement = float(-grad @ step)
            if decrement <= 1e-24 * t:
                break
            scale = 1.0
            barrier0 = t * f0 - float(np.sum(np.log(slack)))
            for _ in range(60):
                x_new = x + scale * step
                s_new = 1.0 - rows @ x_new
                if np.all(s_new > 0.0):
                    fgh_new = _logdet_and_derivs(x_new, q, idx)
                    if fgh_new is not None:
                        barrier_new = t * fgh_new[0] - float(np.sum(np.log(s_new)))
                        if barrier_new <= barrier0 - 1e-4 * scale * decrement:
                            break
                scale *= 0.5
            else:
                break
            x = x_new
            if decrement < 1e-18 * max(t, 1.0):
                break
        if t >= t_final:
            break
        t = min(t * 20.0, t_final)
    return _vec_to_sym(x, q, idx)


def _centered_mvee(points, tol=1e-9, max_iter=200_000):
    """Minimum-volume origin-centered ellipsoid {z : z' A^{-1} z <= 1}
    containing the points.

    A Khachiyan-style multiplicative-weights phase produces a feasible
    near-optimal start; the log-barrier polish then drives the leverage gap
    below tol.  The result is inflated by any residual leverage excess so
    every input point is certified inside.
    """
    z = np.asarray(points, dtype=float)
    n, q = z.shape
    scale = float(np.median(np.linalg.norm(z, axis=1)))
    if scale <= 0:
        raise DomainError("ellipsoid points are degenerate")
    z = z / scale
    u, gap = _frank_wolfe_mvee(z, np.full(n, 1.0 / n), max(tol, 1e-3), 5_000)
    m = (z * u[:, None]).T @ z
    a_fw = q * (1.0 + max(gap, 0.0)) * m

    if gap > tol:
        e = _polish_mvee(z, np.linalg.inv(a_fw), tol)
        if e is not None:
            lev = np.einsum("ij,jk,ik->i", z, e, z)
            a = np.linalg.inv(e) * max(1.0, float(np.max(lev)))
            return scale**2 * 0.5 * (a + a.T)
        u, gap = _frank_wolfe_mvee(z, u, tol, max_iter)
        m = (z * u[:, None]).T @ z
        if gap > tol:
            raise ConvergenceError("ellipsoid iteration did not converge",
                                   last=scale**2 * q * m)
        a_fw = q * (1.0 + max(gap, 0.0)) * m
    return scale**2 * 0.5 * (a_fw + a_fw.T)


def _max_stretch(w, sup_inv):
    """max over the boundary of ellipsoid(w) of z' sup_inv z."""
    half = _sqrt_spd(w)
    vals, vecs = np.linalg.eigh(half @ sup_inv @ half)
    return float(vals[-1]), half @ vecs[:, -1]


def _drop_dominated(bounds):
    """Remove every ellipsoid contained in another candidate; dominated
    members cannot move the enclosing ellipsoid but badly slow the
    multiplicative-weights iteration with near-duplicate support points."""
    keep = []
    for i, w in enumerate(bounds):
        dominated = False
        for j, other in enumerate(bounds):
            if i == j:
                continue
            stretch, _ = _max_stretch(w, np.linalg.inv(other))
            if stretch <= 1.0 + 1e-12 and (j < i or _max_stretch(other, np.linalg.inv(w))[0] > 1.0 + 1e-12):
                dominated = True
                break
        if not dominated:
            keep.append(w)
    return keep if keep else [bounds[0]]


def wwb_supremum(candidates, boundary_per_dim=64, tol=1e-9, max_rounds=50):
    """Loewner supremum of candidate bounds via the enclosing ellipsoid.

    Samples symmetric boundary points of every candidate ellipsoid, solves
    the origin-centered minimum-volume enclosing ellipsoid of the cloud, and
    then certifies containment of each full candidate ellipsoid through the
    top generalized eigenvalue, adding the most-protruding boundary point
    and re-solving until every certificate passes.
    """
    cands = list(candidates)
    if not cands:
        raise DomainError("at least one candidate bound is required")
    bounds = [c.bound if isinstance(c, WwbCandidate) else np.asarray(c, dtype=float)
              for c in cands]
    q = bounds[0].shape[0]
    bounds = _drop_dominated(bounds)
    dirs = _unit_directions(q, boundary_per_dim * q)
    cloud = [(_sqrt_spd(w) @ dirs.T).T for w in bounds]
    points = np.concatenate(cloud, axis=0)
    if len(bounds) > 1:
        # boundary samples strictly inside another candidate can never touch
        # the enclosing ellipsoid; dropping them removes the near-duplicate
        # clusters that stall the weight iteration
        inside = np.zeros(points.shape[0], dtype=bool)
        for w in bounds:
            quad = np.einsum("ij,jk,ik->i", points, np.linalg.inv(w), points)
            inside |= quad < 1.0 - 1e-9
        if not np.all(inside):
            points = points[~inside]
    for _ in range(max_rounds):
        sup = _centered_mvee(points, tol=tol)
        sup_inv = np.linalg.inv(sup)
        worst = 0.0
        extra = []
        for w in bounds:
            stretch, direction = _max_stretch(w, sup_inv)
            if stretch > 1.0 + 1e-9:
                extra.append(direction)
                extra.append(-direction)
            worst = max(worst, stretch)
        if not extra:
            return 0.5 * (sup + sup.T)
        points = np.concatenate([points, np.asarray(extra)], axis=0)
    raise ConvergenceError("containment refinement did not converge", last=sup)


def default_test_points(prior, scales=DEFAULT_SCALES):
    """Deterministic family of test point sets: prior eigen-directions and
    coordinate axes, each normalized so r' C^{-1} r equals the scale squared."""
    if np.any(np.asarray(scales) <= 0):
        raise DomainError("scales must be positive")
    cov = prior.cov
    q = cov.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    prior_inv = np.linalg.inv(cov)
    sets = []
    for s in scales:
        eig = vecs @ np.diag(s * np.sqrt(vals))
        sets.append(TestPointSet(eig))
        axis = np.diag([s / np.sqrt(prior_inv[i, i]) for i in range(q)])
        sets.append(TestPointSet(axis))
    return sets


def weiss_weinstein_bound(net, quantizers, powers, scales=None, rule=None, nodes=24):
    """Tightest-in-family bound matrix and the surviving candidates."""
    ev = MuEvaluator(net, quantizers, powers, rule=rule, nodes=nodes)
    sets = default_test_points(net.prior, scales if scales is not None else DEFAULT_SCALES)
    cands = []
    for tp in sets:
        try:
            cands.append(wwb_candidate(tp, net, quantizers, powers, mu_evaluator=ev))
        except CandidateRejectedError:
            continue
    if not cands:
        raise DomainError("every test point set was rejected")
    return wwb_supremum(cands), cands
