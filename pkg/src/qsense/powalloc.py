"""Transmit-power allocation under a total-power budget.

Four schemes: maximize the trace or the log-determinant of the Bayesian
information matrix, minimize the LMMSE error trace, and minimize the
quasi-BLUE error trace; a uniform split serves as the baseline.  The two
information schemes solve their stationarity systems by a damped Newton
iteration with an active set; sensors driven to zero power are pruned and
probed for re-admission against the multiplier.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import DomainError, SolverError
from .estimator import mse_trace, quasi_blue_mse
from .fim import expected_score
from .channel import bit_error, coherent_flip
from .model import Coherent, sigma_h_equivalent, snr

__all__ = [
    "SolverOptions",
    "PowerAllocation",
    "KktCertificate",
    "allocate_tr_fim",
    "allocate_logdet_fim",
    "allocate_mse_min",
    "allocate_qblue_min",
    "uniform_allocation",
    "gradient_tr_fim",
    "hessian_diag_tr_fim",
    "tr_fim_objective",
    "logdet_fim_objective",
    "verify_kkt",
]


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8              # Newton relative-step stopping tolerance
    max_iter: int = 100
    n_starts: int = 10
    seed: int = 0
    fd_rel_step: float = 1e-4
    gh_nodes: int = 48
    envelope_averaged: bool = False
    envelope_nodes: int = 200
    grid_points: int = 21
    residual_tol: float = 1e-7


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray
    multiplier: float
    active_set: tuple
    objective: float
    scheme: str
    iterations: int = 0
    start_index: int = 0
    converged: bool = True
    residual: float = 0.0
    flag: str = "ok"


@dataclass(frozen=True)
class KktCertificate:
    stationarity_residual: float
    budget_gap: float
    multiplier: float
    inactive_excess: float

    def ok(self, tol=1e-7):
        return (self.stationarity_residual <= tol and abs(self.budget_gap) <= 1e-9
                and self.multiplier > 0 and self.inactive_excess <= tol)


class _ScoreCurve:
    """E{G_k} of one sensor as a function of its power.

    Quadrature grids are precomputed once; values are cached per power.
    Finite-difference derivatives are one-sided at the p = 0 boundary and
    clamp to exactly zero once the difference falls below the rounding noise
    of the evaluations, which keeps saturated sensors out of the water
    filling instead of feeding it noise.
    """

    def __init__(self, sensor, spec, prior, p_scale, options):
        from .fim import _gh, _laguerre, _receiver_kind, cell_probabilities, \
            cell_probability_slopes

        self.sensor = sensor
        self.spec = spec
        self.options = options
        self.h_floor = max(options.fd_rel_step * 1e-3 * p_scale, 1e-12)
        self.kind = _receiver_kind(sensor.channel)
        var = float(sensor.gain @ prior.cov @ sensor.gain)
        x, w = _gh(options.gh_nodes)
        if var > 0:
            self._s_w = w
            s = np.sqrt(var) * x
        else:
            self._s_w = np.ones(1)
            s = np.zeros(1)
        self._b = cell_probabilities(spec, sensor.sigma_n, s)
        self._d = cell_probability_slopes(spec, sensor.sigma_n, s)
        self.averaged = options.envelope_averaged and self.kind != "stats"
        if self.averaged:
            t, tw = _laguerre(options.envelope_nodes)
            self._t = t
            self._t_w = tw
            sigh = sigma_h_equivalent(sensor.channel)
            self._gbar_per_p = sigh**2 / (sensor.bits * sensor.sigma_w**2)
        self._cache = {}

    def value(self, p):
        from .channel import transition_matrices_at_snr
        from .fim import _scores
        from .model import snr

        p = max(float(p), 0.0)
        hit = self._cache.get(p)
        if hit is not None:
            return hit
        if self.averaged:
            gammas = self._t * (p * self._gbar_per_p)
            kind = "coherent" if self.kind == "coherent" else "envelope"
            alphas = transition_matrices_at_snr(kind, gammas, self.sensor.bits)
            g = _scores(alphas, self._b, self._d)
            out = float(self._t_w @ g @ self._s_w)
        else:
            alphas = transition_matrices_at_snr(self.kind, [snr(self.sensor, p)],
                                                self.sensor.bits)
            out = float(self._s_w @ _scores(alphas[0], self._b, self._d))
        self._cache[p] = out
        return out

    def _step(self, p):
        return max(self.options.fd_rel_step * abs(p), self.h_floor)

    def _clamp(self, diff, scale, h):
        if abs(diff) <= 64.0 * np.finfo(float).eps * scale:
            return 0.0
        return diff / h

    def deriv(self, p):
        h = self._step(p)
        if p < h:
            f0, f1, f2 = self.value(p), self.value(p + h), self.value(p + 2 * h)
            return self._clamp(-3.0 * f0 + 4.0 * f1 - f2, abs(f0) + abs(f1) + abs(f2),
                               2.0 * h)
        f_up, f_dn = self.value(p + h), self.value(p - h)
        return self._clamp(f_up - f_dn, abs(f_up) + abs(f_dn), 2.0 * h)

    def deriv2(self, p):
        h = self._step(p)
        if p < h:
            f0, f1, f2 = self.value(p), self.value(p + h), self.value(p + 2 * h)
        else:
            f0, f1, f2 = self.value(p - h), self.value(p), self.value(p + h)
        return self._clamp(f2 - 2.0 * f1 + f0, abs(f0) + 2.0 * abs(f1) + abs(f2),
                           h * h)


def _curves(net, quantizers, p_tot, options):
    return [_ScoreCurve(s, spec, net.prior, p_tot, options)
            for s, spec in zip(net.sensors, quantizers)]


def _info_coeffs(net):
    return np.array([s.gain @ s.gain / (2.0 * np.pi * s.sigma_n**2) for s in net.sensors])


def tr_fim_objective(net, quantizers, powers, options=None):
    options = options or SolverOptions()
    curves = _curves(net, quantizers, float(np.sum(powers)) or 1.0, options)
    coeffs = _info_coeffs(net)
    base = float(np.trace(np.linalg.inv(net.prior.cov)))
    return base + float(sum(c * curve.value(p) for c, curve, p in
                            zip(coeffs, curves, powers)))


def _fim_matrix(net, curves, powers):
    prior_inv = np.linalg.inv(net.prior.cov)
    j = prior_inv.copy()
    for sensor, curve, p in zip(net.sensors, curves, powers):
        j += np.outer(sensor.gain, sensor.gain) * curve.value(p) / \
            (2.0 * np.pi * sensor.sigma_n**2)
    return j


def logdet_fim_objective(net, quantizers, powers, options=None):
    options = options or SolverOptions()
    curves = _curves(net, quantizers, float(np.sum(powers)) or 1.0, options)
    j = _fim_matrix(net, curves, powers)
    sign, logdet = np.linalg.slogdet(j)
    if sign <= 0:
        raise DomainError("information matrix lost positive definiteness")
    return float(logdet / np.log(2.0))


def gradient_tr_fim(net, quantizers, powers, k, options=None):
    """d tr(FIM) / d p_k by central finite differences on E{G_k}."""
    options = options or SolverOptions()
    curves = _curves(net, quantizers, float(np.sum(powers)) or 1.0, options)
    return float(_info_coeffs(net)[k] * curves[k].deriv(float(powers[k])))


def hessian_diag_tr_fim(net, quantizers, powers, k, options=None):
    options = options or SolverOptions()
    curves = _curves(net, quantizers, float(np.sum(powers)) or 1.0, options)
    return float(_info_coeffs(net)[k] * curves[k].deriv2(float(powers[k])))


def _newton_equality(grad_fn, jac_fn, p0, lam0, p_tot, options):
    """Damped Newton on [stationarity; budget] over a fixed active set.

    grad_fn(p) -> objective gradient vector; jac_fn(p) -> its Jacobian.
    Returns (p, lam, iterations, converged).
    """
    k = len(p0)
    p = np.asarray(p0, dtype=float).copy()
    lam = float(lam0)

    def residual(pv, lv):
        return np.append(grad_fn(pv) - lv, p_tot - np.sum(pv))

    f = residual(p, lam)
    for n in range(1, options.max_iter + 1):
        if not np.all(np.isfinite(f)):
            return p, lam, n, False
        if np.linalg.norm(f, ord=np.inf) <= options.residual_tol * 1e-2:
            return p, lam, n, True
        jac = np.zeros((k + 1, k + 1))
        jac[:k, :k] = jac_fn(p)
        jac[:k, k] = -1.0
        jac[k, :k] = -1.0
        # saturated objectives leave a vanishing curvature block; floor it so
        # the bordered system stays solvable
        floor = max(1e-12, 1e-6 * abs(lam)) / max(p_tot, 1.0)
        for i in range(k):
            if abs(jac[i, i]) < floor:
                jac[i, i] = -floor
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return p, lam, n, False
        scale = 1.0
        for _ in range(25):
            p_new = p + scale * step[:k]
            lam_new = lam + scale * step[k]
            f_new = residual(p_new, lam_new)
            if np.linalg.norm(f_new) <= np.linalg.norm(f) * (1.0 - 1e-4 * scale) or \
                    np.linalg.norm(f_new) < options.residual_tol * 1e-2:
                break
            scale *= 0.5
        else:
            return p, lam, n, _kkt_ok(f, k, p_tot, options)
        dz = np.linalg.norm(np.append(p_new - p, lam_new - lam))
        nz = max(np.linalg.norm(np.append(p_new, lam_new)), 1e-300)
        p, lam, f = p_new, lam_new, f_new
        if dz / nz <= options.tol or np.linalg.norm(f, ord=np.inf) < options.residual_tol * 1e-2:
            return p, lam, n, _kkt_ok(f, k, p_tot, options)
    return p, lam, options.max_iter, _kkt_ok(f, k, p_tot, options)


def _kkt_ok(f, k, p_tot, options):
    return (float(np.max(np.abs(f[:k]))) <= options.residual_tol
            and abs(float(f[k])) <= options.residual_tol * max(1.0, p_tot))


def _solve_budget_kkt(grad_full, jac_full, k_total, p_tot, start, options):
    """Active-set outer loop around the equality-constrained Newton solve.

    grad_full(p) and jac_full(p) act on full-length power vectors; inactive
    sensors are held at zero and re-admitted when their marginal value
    exceeds the multiplier.
    """
    active = [k for k in range(k_total) if start[k] > 1e-9 * p_tot]
    if not active:
        active = list(range(k_total))
    p = np.asarray(start, dtype=float).copy()
    p[p <= 1e-9 * p_tot] = 0.0
    iterations = 0
    converged = False
    lam = float(np.mean(grad_full(p)[active]))
    for _ in range(2 * k_total + 4):
        idx = np.asarray(active)

        def grad_a(pa):
            full = np.zeros(k_total)
            full[idx] = np.maximum(pa, 0.0)
            return grad_full(full)[idx]

        def jac_a(pa):
            full = np.zeros(k_total)
            full[idx] = np.maximum(pa, 0.0)
            return jac_full(full)[np.ix_(idx, idx)]

        pa, lam, iters, converged = _newton_equality(grad_a, jac_a, p[idx], lam,
                                                     p_tot, options)
        iterations += iters
        p = np.zeros(k_total)
        p[idx] = pa
        if np.any(pa < -1e-12 * p_tot):
            drop = active[int(np.argmin(pa))]
            active = [k for k in active if k != drop]
            if not active:
                raise SolverError("active set collapsed")
            p[drop] = 0.0
            p[np.asarray(active)] = np.maximum(p[np.asarray(active)], 0.0)
            s = np.sum(p[np.asarray(active)])
            p[np.asarray(active)] = p[np.asarray(active)] * (p_tot / s) if s > 0 else \
                p_tot / len(active)
            continue
        p = np.maximum(p, 0.0)
        if not converged:
            break
        inactive = [k for k in range(k_total) if k not in active]
        if inactive:
            g0 = grad_full(p)
            worst = max(inactive, key=lambda k: g0[k])
            if g0[worst] > lam + options.residual_tol:
                active.append(worst)
                active.sort()
                seed_p = min(1e-3 * p_tot, 0.5 * p_tot / len(active))
                p[worst] = seed_p
                scale = (p_tot - seed_p) / max(np.sum(p) - seed_p, 1e-300)
                for k in active:
                    if k != worst:
                        p[k] *= scale
                continue
        break
    return p, lam, iterations, converged


def _waterfill(grads, p_tot, bisections=120):
    """Budget allocation for decoupled concave objectives by bisecting the
    multiplier: each sensor receives the power at which its marginal value
    equals the multiplier, zero when it starts below it.

    grads is one decreasing marginal-value callable per sensor.  Returns
    (powers, multiplier).
    """
    from scipy.optimize import brentq

    k = len(grads)
    g0 = np.array([g(0.0) for g in grads])
    lam_hi = float(np.max(g0))
    if lam_hi <= 0.0:
        return np.full(k, p_tot / k), max(lam_hi, 0.0)

    def p_of(lam):
        out = np.zeros(k)
        for i, g in enumerate(grads):
            if g0[i] <= lam:
                continue
            hi = p_tot
            while g(hi) > lam and hi < 1e9 * p_tot:
                hi *= 4.0
            if g(hi) > lam:
                out[i] = hi
                continue
            out[i] = brentq(lambda p: g(p) - lam, 0.0, hi,
                            xtol=1e-14 * max(p_tot, 1.0), rtol=1e-13)
        return out

    def _split_remainder(p, lam):
        # marginal values hit zero before the budget is spent; spread the
        # remainder over the active sensors
        total = float(np.sum(p))
        active = p > 0
        if total < p_tot and np.any(active):
            p = p.copy()
            p[active] += (p_tot - total) / int(np.sum(active))
        elif total > 0:
            p = p * (p_tot / total)
        else:
            p = np.full(k, p_tot / k)
        return p, lam

    lam_lo = lam_hi
    prev_total = 0.0
    stagnant = 0
    for _ in range(80):
        lam_lo /= 16.0
        p_lo = p_of(lam_lo)
        total = float(np.sum(p_lo))
        if total >= p_tot:
            break
        stagnant = stagnant + 1 if total <= prev_total * (1.0 + 1e-12) else 0
        prev_total = total
        if stagnant >= 3:
            return _split_remainder(p_lo, lam_lo)
    else:
        return _split_remainder(p_of(lam_lo), lam_lo)

    for _ in range(bisections):
        if lam_hi - lam_lo <= 1e-14 * lam_hi:
            break
        lam = np.sqrt(lam_lo * lam_hi)
        if np.sum(p_of(lam)) >= p_tot:
            lam_lo = lam
        else:
            lam_hi = lam
    lam = np.sqrt(lam_lo * lam_hi)
    p = p_of(lam)
    total = float(np.sum(p))
    if total > 0:
        p *= p_tot / total
    else:
        p = np.full(k, p_tot / k)
    return p, lam


def _starts(k, p_tot, options, concave):
    if concave or options.n_starts <= 1:
        return [np.full(k, p_tot / k)]
    rng = np.random.default_rng(options.seed)
    starts = [np.full(k, p_tot / k)]
    for _ in range(options.n_starts - 1):
        starts.append(rng.dirichlet(np.ones(k)) * p_tot)
    return starts


def _slsqp_stage(objective, grad_full, k_total, p_tot, start, options):
    """Globalization pass: maximize the objective on the budget simplex.

    Returns a feasible point near a maximizer; the Newton stage then refines
    it into a certified stationary point.
    """
    bounds = [(0.0, p_tot)] * k_total
    cons = [{"type": "ineq",
             "fun": lambda p: p_tot - float(np.sum(p)),
             "jac": lambda p: -np.ones_like(p)}]
    res = optimize.minimize(lambda p: -objective(p), start,
                            jac=lambda p: -grad_full(p),
                            method="SLSQP", bounds=bounds, constraints=cons,
                            options={"maxiter": 300, "ftol": 1e-14})
    p = np.clip(res.x, 0.0, None)
    total = float(np.sum(p))
    if total <= 0:
        return np.full(k_total, p_tot / k_total)
    # the objective is nondecreasing in every power, so the budget binds
    return p * (p_tot / total)


def _run_scheme(net, quantizers, p_tot, options, scheme, grad_full, jac_full,
                objective):
    k_total = net.n_sensors
    if k_total == 1:
        p = np.array([p_tot])
        lam = float(grad_full(p)[0])
        return PowerAllocation(powers=p, multiplier=lam, active_set=(0,),
                               objective=objective(p), scheme=scheme,
                               iterations=0, converged=True,
                               residual=0.0)
    concave = all(isinstance(s.channel, Coherent) for s in net.sensors)
    best = None
    diagnostics = []
    for j, start in enumerate(_starts(k_total, p_tot, options, concave)):
        try:
            warm = _slsqp_stage(objective, grad_full, k_total, p_tot, start, options)
            p, lam, iters, converged = _solve_budget_kkt(grad_full, jac_full,
                                                         k_total, p_tot, warm, options)
        except (SolverError, np.linalg.LinAlgError) as exc:
            diagnostics.append(f"start {j}: {exc}")
            continue
        if not converged:
            diagnostics.append(f"start {j}: no convergence")
            continue
        g = grad_full(p)
        active = tuple(k for k in range(k_total) if p[k] > 0)
        res = max((abs(g[k] - lam) for k in active), default=np.inf)
        res = max(res, abs(np.sum(p) - p_tot))
        obj = objective(p)
        cand = PowerAllocation(powers=p, multiplier=lam, active_set=active,
                               objective=obj, scheme=scheme, iterations=iters,
                               start_index=j, converged=True, residual=float(res))
        if best is None or cand.objective > best.objective:
            best = cand
    if best is None:
        raise SolverError(f"{scheme}: every start failed", diagnostics=diagnostics)
    return best


def _certified_allocation(net, p, lam, grad_full, jac_full, objective, scheme,
                          p_tot, options, iterations=0):
    """Polish a warm allocation with the Newton stationarity solve and build
    the result record with its measured residual."""
    k_total = net.n_sensors
    try:
        p2, lam2, iters, converged = _solve_budget_kkt(grad_full, jac_full, k_total,
                                                       p_tot, p, options)
        if converged and np.all(np.isfinite(p2)) and np.isfinite(lam2) and \
                np.all(p2 >= 0):
            p, lam = p2, lam2
            iterations += iters
    except (SolverError, np.linalg.LinAlgError):
        pass
    p = np.maximum(p, 0.0)
    g = grad_full(p)
    active = tuple(k for k in range(k_total) if p[k] > 0)
    res = max((abs(g[k] - lam) for k in active), default=np.inf)
    res = max(res, abs(float(np.sum(p)) - p_tot))
    return PowerAllocation(powers=p, multiplier=float(lam), active_set=active,
                           objective=objective(p), scheme=scheme,
                           iterations=iterations, converged=res <= options.residual_tol,
                           residual=float(res),
                           flag="ok" if res <= options.residual_tol else "heuristic")


def allocate_tr_fim(net, quantizers, p_tot, options=None):
    """Maximize tr(FIM) subject to the total power budget.

    Coherent networks give a concave decoupled objective, solved exactly by
    multiplier bisection (water filling) and certified by a Newton polish of
    the stationarity system.  Noncoherent networks run a multi-start solve
    and keep the best stationary point.
    """
    options = options or SolverOptions()
    if p_tot <= 0:
        raise DomainError("p_tot must be positive")
    curves = _curves(net, quantizers, p_tot, options)
    coeffs = _info_coeffs(net)

    def grad_full(p):
        return np.array([c * curve.deriv(float(pk))
                         for c, curve, pk in zip(coeffs, curves, p)])

    def jac_full(p):
        return np.diag([c * curve.deriv2(float(pk))
                        for c, curve, pk in zip(coeffs, curves, p)])

    def objective(p):
        base = float(np.trace(np.linalg.inv(net.prior.cov)))
        return base + float(sum(c * curve.value(float(pk))
                                for c, curve, pk in zip(coeffs, curves, p)))

    concave = all(isinstance(s.channel, Coherent) for s in net.sensors)
    if concave and net.n_sensors > 1:
        grads = [(lambda pp, c=c, curve=curve: c * curve.deriv(float(pp)))
                 for c, curve in zip(coeffs, curves)]
        p, lam = _waterfill(grads, p_tot)
        return _certified_allocation(net, p, lam, grad_full, jac_full, objective,
                                     "tr_fim", p_tot, options)
    return _run_scheme(net, quantizers, p_tot, options, "tr_fim",
                       grad_full, jac_full, objective)


def allocate_logdet_fim(net, quantizers, p_tot, options=None):
    """Maximize log2 det(FIM) under the budget.

    The stationarity couples all sensors through the information matrix
    inverse, so the Jacobian is dense.
    """
    options = options or SolverOptions()
    if p_tot <= 0:
        raise DomainError("p_tot must be positive")
    curves = _curves(net, quantizers, p_tot, options)
    gains = net.gain_matrix()
    sig2 = np.array([s.sigma_n**2 for s in net.sensors])
    ln2 = np.log(2.0)

    def parts(p):
        j = _fim_matrix(net, curves, p)
        jinv = np.linalg.inv(j)
        qmat = gains.T @ jinv @ gains
        d1 = np.array([curve.deriv(float(pk)) for curve, pk in zip(curves, p)])
        return qmat, d1

    def grad_full(p):
        qmat, d1 = parts(p)
        return d1 * np.diag(qmat) / (2.0 * np.pi * ln2 * sig2)

    def jac_full(p):
        qmat, d1 = parts(p)
        d2 = np.array([curve.deriv2(float(pk)) for curve, pk in zip(curves, p)])
        w = d1 / (2.0 * np.pi * sig2)
        jac = -(np.square(qmat) * w[None, :]) * (d1 / (2.0 * np.pi * ln2 * sig2))[:, None]
        jac[np.diag_indices_from(jac)] += d2 * np.diag(qmat) / (2.0 * np.pi * ln2 * sig2)
        return jac

    def objective(p):
        j = _fim_matrix(net, curves, p)
        sign, logdet = np.linalg.slogdet(j)
        return float(logdet / ln2) if sign > 0 else -np.inf

    concave = all(isinstance(s.channel, Coherent) for s in net.sensors)
    if concave and net.n_sensors > 1:
        # fixed point over the slowly varying quadratic-form weights, each
        # stage an exact decoupled water filling
        p = np.full(net.n_sensors, p_tot / net.n_sensors)
        lam = 0.0
        for _ in range(30):
            qmat, _ = parts(p)
            qdiag = np.diag(qmat).copy()
            grads = [(lambda pp, k=k: curves[k].deriv(float(pp)) * qdiag[k] /
                      (2.0 * np.pi * ln2 * sig2[k]))
                     for k in range(net.n_sensors)]
            p_new, lam = _waterfill(grads, p_tot)
            if float(np.max(np.abs(p_new - p))) <= 1e-9 * p_tot:
                p = p_new
                break
            p = 0.5 * (p + p_new)
        return _certified_allocation(net, p, lam, grad_full, jac_full, objective,
                                     "logdet_fim", p_tot, options)
    return _run_scheme(net, quantizers, p_tot, options, "logdet_fim",
                       grad_full, jac_full, objective)


def _simplex_grid(k, resolution):
    for comp in itertools.combinations(range(resolution + k - 1), k - 1):
        parts = np.diff(np.concatenate(([-1], comp, [resolution + k - 1]))) - 1
        yield parts / resolution


def allocate_mse_min(net, quantizers, p_tot, options=None):
    """Minimize the LMMSE error trace by simplex grid search plus Nelder-Mead
    refinement; flagged heuristic beyond four sensors where the grid becomes
    a seeded multi-start."""
    options = options or SolverOptions()
    if p_tot <= 0:
        raise DomainError("p_tot must be positive")
    k_total = net.n_sensors

    def objective(p):
        return mse_trace(net, quantizers, np.maximum(p, 0.0),
                         envelope_averaged=options.envelope_averaged,
                         envelope_nodes=options.envelope_nodes)

    if k_total == 1:
        p = np.array([p_tot])
        return PowerAllocation(powers=p, multiplier=0.0, active_set=(0,),
                               objective=objective(p), scheme="mse_min")

    flag = "ok"
    if k_total <= 4:
        grid = [np.asarray(w) * p_tot for w in _simplex_grid(k_total, options.grid_points - 1)]
    else:
        flag = "heuristic"
        rng = np.random.default_rng(options.seed)
        grid = [np.full(k_total, p_tot / k_total)]
        grid += [rng.dirichlet(np.ones(k_total)) * p_tot for _ in range(3 * options.n_starts)]
    values = [objective(p) for p in grid]
    order = np.argsort(values)

    best_p = grid[int(order[0])]
    best_v = values[int(order[0])]
    evals = len(grid)
    for idx in order[:3]:
        x0 = grid[int(idx)][:-1]

        def fun(x):
            rest = p_tot - np.sum(x)
            if np.any(x < 0) or rest < 0:
                return best_v + 10.0 * (np.sum(np.abs(np.minimum(x, 0.0))) +
                                        abs(min(rest, 0.0))) / p_tot + 1.0
            return objective(np.append(x, rest))

        res = optimize.minimize(fun, x0, method="Nelder-Mead",
                                options={"xatol": 1e-7 * p_tot, "fatol": 1e-12,
                                         "maxfev": 400 * k_total})
        evals += res.nfev
        if res.fun < best_v:
            best_v = float(res.fun)
            best_p = np.append(np.maximum(res.x, 0.0),
                               max(p_tot - np.sum(np.maximum(res.x, 0.0)), 0.0))
    best_p = np.maximum(best_p, 0.0)
    best_p *= p_tot / np.sum(best_p)
    return PowerAllocation(powers=best_p, multiplier=0.0,
                           active_set=tuple(np.flatnonzero(best_p > 0)),
                           objective=float(best_v), scheme="mse_min",
                           iterations=evals, flag=flag)


def allocate_qblue_min(net, quantizers, p_tot, options=None):
    """Minimize the quasi-BLUE error trace (convex for coherent networks)."""
    options = options or SolverOptions()
    if p_tot <= 0:
        raise DomainError("p_tot must be positive")
    for s in net.sensors:
        if not isinstance(s.channel, Coherent):
            raise DomainError("the quasi-BLUE scheme requires coherent sensors")
    span = sum(np.outer(s.gain, s.gain) for s in net.sensors)
    if np.linalg.matrix_rank(span, tol=1e-12) < net.dim:
        raise DomainError("quasi-BLUE needs sensor gains that span the parameter space")

    def trace_obj(p):
        info = np.zeros((net.dim, net.dim))
        for k, (sensor, spec) in enumerate(zip(net.sensors, quantizers)):
            eps = bit_error(sensor, float(max(p[k], 0.0))).eps_0to1
            if eps >= 0.5 - 1e-15:
                continue
            m = spec.n_levels
            chi = 4.0 * spec.tau**2 * (m + 1) / (3.0 * (m - 1))
            c = chi * eps / (1.0 - 2.0 * eps) ** 2 + sensor.sigma_n**2 + spec.step**2 / 12.0
            info += np.outer(sensor.gain, sensor.gain) / c
        try:
            return float(np.trace(np.linalg.inv(info)))
        except np.linalg.LinAlgError:
            return np.inf

    h_floor = 1e-7 * p_tot

    def grad_full(p):
        g = np.empty(net.n_sensors)
        for k in range(net.n_sensors):
            h = max(options.fd_rel_step * abs(p[k]), h_floor)
            up = p.copy(); up[k] += h
            dn = p.copy(); dn[k] = max(dn[k] - h, 0.0)
            g[k] = -(trace_obj(up) - trace_obj(dn)) / (up[k] - dn[k])
        return g

    def jac_full(p):
        k_total = net.n_sensors
        jac = np.empty((k_total, k_total))
        g0 = grad_full(p)
        for j in range(k_total):
            h = max(options.fd_rel_step * abs(p[j]), h_floor)
            up = p.copy(); up[j] += h
            jac[:, j] = (grad_full(up) - g0) / h
        return 0.5 * (jac + jac.T)

    def sensor_weight(k, p):
        sensor = net.sensors[k]
        spec = quantizers[k]
        eps = bit_error(sensor, float(max(p, 0.0))).eps_0to1
        if eps >= 0.5 - 1e-15:
            return 0.0
        m = spec.n_levels
        chi = 4.0 * spec.tau**2 * (m + 1) / (3.0 * (m - 1))
        return 1.0 / (chi * eps / (1.0 - 2.0 * eps) ** 2
                      + sensor.sigma_n**2 + spec.step**2 / 12.0)

    def weight_slope(k, p):
        # analytic chain through the coherent flip probability; noise-free in
        # the saturated tail and finite at p = 0 by series expansion
        sensor = net.sensors[k]
        spec = quantizers[k]
        p = max(float(p), 0.0)
        gamma = snr(sensor, p)
        eps = float(coherent_flip(gamma))
        m = spec.n_levels
        chi = 4.0 * spec.tau**2 * (m + 1) / (3.0 * (m - 1))
        if eps > 0.5 - 1e-8:
            return 8.0 * snr(sensor, 1.0) / (np.pi * chi)
        x = np.sqrt(2.0 * gamma)
        deps_dp = -np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi) * snr(sensor, 1.0) / x
        base = sensor.sigma_n**2 + spec.step**2 / 12.0
        c = chi * eps / (1.0 - 2.0 * eps) ** 2 + base
        dc_deps = chi * (1.0 + 2.0 * eps) / (1.0 - 2.0 * eps) ** 3
        return max(-dc_deps * deps_dp / (c * c), 0.0)

    if net.n_sensors == 1:
        p = np.array([p_tot])
        return PowerAllocation(powers=p, multiplier=float(grad_full(p)[0]),
                               active_set=(0,), objective=trace_obj(p),
                               scheme="qblue_min")
    # convex problem: fixed point over the error-matrix weights, exact water
    # filling per stage, Newton certificate at the end
    p = np.full(net.n_sensors, p_tot / net.n_sensors)
    lam = 0.0
    for _ in range(30):
        info = np.zeros((net.dim, net.dim))
        for k, sensor in enumerate(net.sensors):
            info += np.outer(sensor.gain, sensor.gain) * sensor_weight(k, p[k])
        dmat = np.linalg.inv(info)
        m_quad = np.array([s.gain @ dmat @ dmat @ s.gain for s in net.sensors])
        grads = [(lambda pp, k=k: m_quad[k] * weight_slope(k, float(pp)))
                 for k in range(net.n_sensors)]
        p_new, lam = _waterfill(grads, p_tot)
        if float(np.max(np.abs(p_new - p))) <= 1e-9 * p_tot:
            p = p_new
            break
        p = 0.5 * (p + p_new)
    return _certified_allocation(net, p, lam, grad_full, jac_full, trace_obj,
                                 "qblue_min", p_tot, options)


def uniform_allocation(net, p_tot):
    k = net.n_sensors
    p = np.full(k, p_tot / k)
    return PowerAllocation(powers=p, multiplier=0.0, active_set=tuple(range(k)),
                           objective=np.nan, scheme="uniform")


def verify_kkt(grad_full, alloc, p_tot, tol=1e-7):
    """Certificate of the first-order conditions for a returned allocation."""
    p = alloc.powers
    g = grad_full(p)
    active = [k for k in range(len(p)) if p[k] > 0]
    inactive = [k for k in range(len(p)) if p[k] == 0]
    res = max((abs(g[k] - alloc.multiplier) for k in active), default=np.inf)
    excess = max((g[k] - alloc.multiplier for k in inactive), default=-np.inf)
    return KktCertificate(
        stationarity_residual=float(res),
        budget_gap=float(np.sum(p) - p_tot),
        multiplier=float(alloc.multiplier),
        inactive_excess=float(excess),
    )
