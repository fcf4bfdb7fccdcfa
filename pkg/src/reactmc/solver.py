"""Bound-constrained derivative-free minimization.

:func:`minimize_bounded` is a quadratic-model trust-region method in the style
of Powell's BOBYQA: ``2n + 1`` interpolation points, model Hessians updated by
the least Frobenius-norm change that interpolates the newest values, and a
lower bound ``rho`` on the trust-region radius that is reduced from
``rhobeg`` to the tolerance.  Rotational parameters are rescaled by
``rot_scale`` before entering the solver so one tolerance covers every axis.

:func:`sweep_1d` runs successive coarse 1D grid searches and is used to seed
the translational part of a subproblem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

#: 1 degree of rotation is treated like 1 mm of translation.
DEFAULT_ROT_SCALE = 180.0 / math.pi


@dataclass
class SolverConfig:
    """Settings of one bounded subproblem solve.

    Parameters
    ----------
    bounds : float or sequence of float
        Symmetric half-widths of the search box per dimension, mm for
        translations and radians for rotations.
    tol : float
        Final trust-region radius, in mm-equivalent units.
    rot_scale : float
        mm per radian used to map rotations into solver units.
    max_evals : int
        Evaluation budget (the start point counts if it is evaluated here).
    rotational : sequence of bool, optional
        Which dimensions are rotations.  Defaults to none.
    rhobeg : float, optional
        Initial trust-region radius in solver units.  Defaults to a quarter
        of the smallest box half-width, capped at 1.
    """

    bounds: object = 2.0
    tol: float = 0.01
    rot_scale: float = DEFAULT_ROT_SCALE
    max_evals: int = 200
    rotational: tuple = ()
    rhobeg: float | None = None

    def unit_scale(self, dim):
        """Per-dimension factor that maps natural units to solver units."""
        rot = np.zeros(dim, dtype=bool)
        rot[: len(self.rotational)] = np.asarray(self.rotational, dtype=bool)[:dim]
        return np.where(rot, float(self.rot_scale), 1.0)

    def half_widths(self, dim):
        b = np.broadcast_to(np.asarray(self.bounds, dtype=float), (dim,)).copy()
        return b

    def validate(self, dim):
        hw = self.half_widths(dim) * self.unit_scale(dim)
        if not self.tol > 0:
            raise ValidationError("solver tol must be positive")
        if np.any(hw <= self.tol):
            raise ValidationError("search bounds must exceed the tolerance")
        if self.max_evals < dim + 2:
            raise ValidationError(f"max_evals must be at least {dim + 2}")
        if self.rot_scale <= 0:
            raise ValidationError("rot_scale must be positive")


@dataclass
class SolveResult:
    d_hat: np.ndarray
    f_value: float
    n_evals: int
    budget_exhausted: bool = False
    f_start: float = float("nan")


class _Budget(Exception):
    pass


class _Objective:
    """Counts evaluations and keeps every point inside the box."""

    def __init__(self, f, scale, lower, upper, max_evals):
        self.f = f
        self.scale = scale
        self.lower = lower
        self.upper = upper
        self.max_evals = max_evals
        self.n_evals = 0

    def __call__(self, z):
        if self.n_evals >= self.max_evals:
            raise _Budget()
        z = np.clip(z, self.lower, self.upper)
        self.n_evals += 1
        val = float(self.f(z / self.scale))
        return val if math.isfinite(val) else math.inf


def _trust_region_step(g, H, delta, lo, hi):
    """Approximately minimize ``g.s + s.H.s/2`` over ``|s| <= delta``, ``lo <= s <= hi``.

    Exact ball solution in the eigenbasis, then bound violations are fixed
    at the bound and the remaining free variables are re-solved in the
    leftover radius.  A projected steepest-descent step is kept if better.
    Returns ``(s, crvmin)``.
    """
    n = g.size
    s = np.zeros(n)
    free = np.ones(n, dtype=bool)
    radius = delta
    crvmin = 0.0
    for _ in range(n):
        idx = np.flatnonzero(free)
        if idx.size == 0 or radius <= 0:
            break
        Hf = H[np.ix_(idx, idx)]
        gf = g[idx] + H[np.ix_(idx, ~free)] @ s[~free]
        sf, interior = _ball_step(gf, Hf, radius)
        trial = s.copy()
        trial[idx] = sf
        viol = (trial < lo - 1e-15) | (trial > hi + 1e-15)
        if not viol.any():
            s = trial
            if interior:
                crvmin = float(np.linalg.eigvalsh(Hf)[0])
            break
        # move along sf until the first bound is met, then fix that variable
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(sf > 0, (hi[idx] - s[idx]) / sf, np.inf)
            t_lo = np.where(sf < 0, (lo[idx] - s[idx]) / sf, np.inf)
        t = np.minimum(t_hi, t_lo)
        j = int(np.argmin(t))
        tau = float(np.clip(t[j], 0.0, 1.0))
        s[idx] = s[idx] + tau * sf
        s[idx[j]] = hi[idx[j]] if sf[j] > 0 else lo[idx[j]]
        free[idx[j]] = False
        radius = math.sqrt(max(delta**2 - float(s @ s), 0.0))
    s = np.clip(s, lo, hi)

    # projected-gradient fallback
    pg = -g.copy()
    pg[((pg > 0) & (hi <= 0)) | ((pg < 0) & (lo >= 0))] = 0.0
    if np.any(pg):
        gn = np.linalg.norm(pg)
        curv = pg @ H @ pg
        tmax = delta / gn
        t = tmax if curv <= 0 else min(tmax, (gn * gn) / curv)
        sc = np.clip(t * pg, lo, hi)
        if _qval(g, H, sc) < _qval(g, H, s):
            s, crvmin = sc, 0.0
    return s, crvmin


def _qval(g, H, s):
    return float(g @ s + 0.5 * s @ H @ s)


def _ball_step(g, H, delta):
    """Exact minimizer of the quadratic model in a ball (More-Sorensen)."""
    lam, Q = np.linalg.eigh(H)
    gq = Q.T @ g
    lmin = lam[0]
    if lmin > 0:
        s = -gq / lam
        if np.linalg.norm(s) <= delta:
            return Q @ s, True

    def norm_at(mu):
        return np.linalg.norm(gq / (lam + mu))

    lo = max(0.0, -lmin)
    gnorm = np.linalg.norm(g)
    # hard case: g orthogonal to the leftmost eigenvector
    with np.errstate(divide="ignore", invalid="ignore"):
        near = np.abs(lam - lmin) <= 1e-12 * max(1.0, np.abs(lam).max())
        hard = np.all(np.abs(gq[near]) <= 1e-14 * max(1.0, gnorm))
        if hard:
            rest = ~near
            sq = np.zeros_like(gq)
            sq[rest] = -gq[rest] / (lam[rest] - lmin)
            sn = np.linalg.norm(sq)
            if sn <= delta:
                sq[np.flatnonzero(near)[0]] = math.sqrt(delta**2 - sn**2)
                return Q @ sq, False
    mu_lo = lo + 1e-15 * max(1.0, abs(lo))
    mu_hi = lo + gnorm / delta + abs(lmin) + 1.0
    while norm_at(mu_hi) > delta:
        mu_hi *= 2.0
    if norm_at(mu_lo) < delta:
        mu_lo = mu_hi = lo
    for _ in range(200):
        mid = 0.5 * (mu_lo + mu_hi)
        if norm_at(mid) > delta:
            mu_lo = mid
        else:
            mu_hi = mid
        if mu_hi - mu_lo <= 1e-14 * max(1.0, mu_hi):
            break
    s = -gq / (lam + mu_hi)
    return Q @ s, False


class _Model:
    """Quadratic interpolation model with least Frobenius-norm Hessian change."""

    def __init__(self, n):
        self.n = n
        self.H = np.zeros((n, n))
        self.g = np.zeros(n)
        self.c = 0.0
        self._kkt_inv = None
        self._S = None
        self._sigma = 1.0

    def fit(self, Y, fvals, xbase):
        n = self.n
        m = Y.shape[0]
        S = Y - xbase
        sigma = max(float(np.max(np.linalg.norm(S, axis=1))), 1e-300)
        Sh = S / sigma
        Hh_old = self.H * sigma**2
        resid = fvals - 0.5 * np.einsum("ki,ij,kj->k", Sh, Hh_old, Sh)
        A = 0.5 * (Sh @ Sh.T) ** 2
        X = np.vstack([np.ones(m), Sh.T])
        K = np.zeros((m + n + 1, m + n + 1))
        K[:m, :m] = A
        K[:m, m:] = X.T
        K[m:, :m] = X
        try:
            Kinv = np.linalg.inv(K)
        except np.linalg.LinAlgError:
            Kinv = np.linalg.pinv(K)
        sol = Kinv @ np.concatenate([resid, np.zeros(n + 1)])
        lam = sol[:m]
        Hh = Hh_old + (Sh.T * lam) @ Sh
        Hh = 0.5 * (Hh + Hh.T)
        self.c = float(sol[m])
        self.g = sol[m + 1:] / sigma
        self.H = Hh / sigma**2
        self._kkt_inv = Kinv
        self._S = Sh
        self._sigma = sigma

    def lagrange(self, s):
        """Values of all Lagrange functions at displacement ``s`` from the base."""
        sh = s / self._sigma
        w = np.concatenate([0.5 * (self._S @ sh) ** 2, [1.0], sh])
        m = self._S.shape[0]
        return (self._kkt_inv @ w)[:m]

    def predict(self, s):
        return self.c + float(self.g @ s + 0.5 * s @ self.H @ s)


def _initial_points(x0, rhobeg, lower, upper):
    n = x0.size
    Y = [x0.copy()]
    for i in range(n):
        step = rhobeg if x0[i] + rhobeg <= upper[i] else -rhobeg
        second = -step
        if not (lower[i] <= x0[i] + second <= upper[i]):
            second = 2.0 * step
        for st in (step, second):
            y = x0.copy()
            y[i] += st
            Y.append(y)
    return np.array(Y)


def minimize_bounded(f, start, cfg=None, f0=None):
    """Minimize ``f`` over the symmetric box described by ``cfg``.

    Parameters
    ----------
    f : callable
        Objective of a 1D array in natural units (mm, radians).
    start : array_like
        Start point inside the box.
    cfg : SolverConfig
    f0 : float, optional
        Known objective value at ``start``.  Saves one evaluation.

    Returns
    -------
    SolveResult
        ``f_value`` is never larger than the value at ``start``.
    """
    cfg = cfg or SolverConfig()
    start = np.atleast_1d(np.asarray(start, dtype=float))
    n = start.size
    cfg.validate(n)
    scale = cfg.unit_scale(n)
    hw = cfg.half_widths(n) * scale
    lower, upper = -hw, hw
    x0 = start * scale
    if np.any(x0 < lower - 1e-12) or np.any(x0 > upper + 1e-12):
        raise ValidationError("start point lies outside the search box")
    x0 = np.clip(x0, lower, upper)
    obj = _Objective(f, scale, lower, upper, cfg.max_evals)

    if f0 is None:
        f0 = obj(x0)
    f0 = float(f0)
    if not math.isfinite(f0):
        raise ValidationError("objective is not finite at the start point")

    rhoend = float(cfg.tol)
    rhobeg = cfg.rhobeg if cfg.rhobeg is not None else min(1.0, 0.25 * float(hw.min()))
    rhobeg = float(min(max(rhobeg, rhoend), 0.5 * hw.min()))

    best = [x0.copy(), f0]
    budget_hit = False

    def result():
        z, fz = best
        return SolveResult(z / scale, fz, obj.n_evals, budget_hit, f0)

    Y = _initial_points(x0, rhobeg, lower, upper)
    fvals = np.empty(Y.shape[0])
    fvals[0] = f0
    try:
        for k in range(1, Y.shape[0]):
            fvals[k] = obj(Y[k])
            if fvals[k] < best[1]:
                best = [Y[k].copy(), fvals[k]]
    except _Budget:
        budget_hit = True
        return result()

    # points with infinite values cannot enter the model; replace by the best finite
    finite_max = np.max(fvals[np.isfinite(fvals)])
    fvals = np.where(np.isfinite(fvals), fvals, finite_max + abs(finite_max) + 1.0)

    model = _Model(n)
    rho = delta = rhobeg
    kopt = int(np.argmin(fvals))
    nf_sav = obj.n_evals
    errs = [0.0, 0.0, 0.0]
    ratio = 1.0
    dnorm = 0.0

    def reduce_rho():
        nonlocal rho, delta, nf_sav
        if rho <= rhoend:
            return False
        delta = 0.5 * rho
        r = rho / rhoend
        if r <= 16.0:
            rho = rhoend
        elif r <= 250.0:
            rho = math.sqrt(r) * rhoend
        else:
            rho = 0.1 * rho
        delta = max(delta, rho)
        nf_sav = obj.n_evals
        return True

    def far_point(short_step):
        nonlocal delta
        xopt = Y[kopt]
        dist = np.linalg.norm(Y - xopt, axis=1)
        thresh = max(2.0 * delta, 10.0 * rho)
        k = int(np.argmax(dist))
        if dist[k] <= thresh:
            return None, 0.0
        if short_step:
            delta = min(0.1 * delta, 0.5 * dist[k])
            if delta <= 1.5 * rho:
                delta = rho
        return k, max(min(0.1 * dist[k], delta), rho)

    def geometry_step(k, radius):
        """Replace point ``k`` by a nearby point where its Lagrange function is large."""
        nonlocal kopt, best
        xopt = Y[kopt]
        dirs = [np.eye(n)[i] * sgn for i in range(n) for sgn in (1.0, -1.0)]
        dk = Y[k] - xopt
        if np.linalg.norm(dk) > 0:
            u = dk / np.linalg.norm(dk)
            dirs += [u, -u]
        best_c, best_val = None, -1.0
        for d in dirs:
            cand = np.clip(xopt + radius * d, lower, upper)
            if np.linalg.norm(cand - xopt) < 1e-3 * radius:
                continue
            val = abs(model.lagrange(cand - xopt)[k])
            if val > best_val:
                best_c, best_val = cand, val
        if best_c is None:
            return
        fnew = obj(best_c)
        if not math.isfinite(fnew):
            fnew = float(np.max(fvals)) + 1.0
        Y[k] = best_c
        fvals[k] = fnew
        if fnew < fvals[kopt]:
            kopt = k
        if fnew < best[1]:
            best = [best_c.copy(), fnew]

    try:
        while True:
            xopt = Y[kopt].copy()
            model.fit(Y, fvals, xopt)
            s, crvmin = _trust_region_step(model.g, model.H, delta, lower - xopt, upper - xopt)
            dnorm = float(np.linalg.norm(s))

            if dnorm < 0.5 * rho:
                errbig = max(errs)
                model_ok = obj.n_evals > nf_sav + 2 and not (crvmin > 0 and errbig > 0.125 * rho**2 * crvmin)
                if not model_ok:
                    k, radius = far_point(short_step=True)
                    if k is not None:
                        geometry_step(k, radius)
                        continue
                if not reduce_rho():
                    break
                continue

            vquad = _qval(model.g, model.H, s)
            xnew = np.clip(xopt + s, lower, upper)
            fnew = obj(xnew)
            fopt = fvals[kopt]
            if not math.isfinite(fnew):
                delta = max(0.5 * delta, rho)
                fnew_model = float(np.max(fvals)) + 1.0
            else:
                fnew_model = fnew
            errs = [abs(vquad - (fnew_model - fopt))] + errs[:2]
            ratio = (fopt - fnew_model) / -vquad if vquad < 0 else -1.0
            if ratio <= 0.1:
                delta = min(0.5 * delta, dnorm)
            elif ratio <= 0.7:
                delta = max(0.5 * delta, dnorm)
            else:
                delta = max(0.5 * delta, 2.0 * dnorm)
            if delta <= 1.5 * rho:
                delta = rho

            # choose the interpolation point to drop
            lag = np.abs(model.lagrange(xnew - xopt))
            dist = np.linalg.norm(Y - xopt, axis=1)
            weight = np.maximum(1.0, (dist / max(0.1 * delta, rho)) ** 2)
            score = lag * weight
            if fnew_model >= fopt:
                score[kopt] = -1.0
            knew = int(np.argmax(score))
            Y[knew] = xnew
            fvals[knew] = fnew_model
            if fnew_model < fopt:
                kopt = knew
            if fnew < best[1]:
                best = [xnew.copy(), fnew]

            if fnew_model <= fopt + 0.1 * vquad:
                continue
            k, radius = far_point(short_step=False)
            if k is not None:
                xopt = Y[kopt].copy()
                model.fit(Y, fvals, xopt)
                geometry_step(k, radius)
                continue
            if ratio > 0 or max(delta, dnorm) > rho:
                continue
            if not reduce_rho():
                break
    except _Budget:
        budget_hit = True
    return result()


def sweep_1d(f, axis_order, half_range, step, start, f_start=None):
    """Successive 1D grid searches.

    For each axis in ``axis_order`` the objective is sampled on
    ``current + j * step[axis]`` for ``|j * step| <= half_range[axis]`` and the
    current point moves to the best sample before the next axis is swept.

    Parameters
    ----------
    f : callable
        Objective of a 1D array.
    axis_order : sequence of int
        Indices into the point, swept in this order.
    half_range, step : float or sequence
        Per-axis sweep half-width and grid spacing (indexed by axis).
    start : array_like
    f_start : float, optional
        Known value at ``start``.

    Returns
    -------
    point : ndarray
    value : float
    n_evals : int
    """
    x = np.array(start, dtype=float)
    dim = x.size
    half_range = np.broadcast_to(np.asarray(half_range, dtype=float), (dim,))
    step = np.broadcast_to(np.asarray(step, dtype=float), (dim,))
    if np.any(step <= 0):
        raise ValidationError("sweep steps must be positive")
    n_evals = 0
    if f_start is None:
        f_start = float(f(x))
        n_evals += 1
    fx = float(f_start)
    for axis in axis_order:
        n_side = int(math.floor(half_range[axis] / step[axis] + 1e-9))
        if n_side == 0:
            continue
        center = x[axis]
        best_x, best_f = x.copy(), fx
        for j in range(-n_side, n_side + 1):
            if j == 0:
                continue
            trial = x.copy()
            trial[axis] = center + j * step[axis]
            val = float(f(trial))
            n_evals += 1
            if val < best_f:
                best_x, best_f = trial, val
        x, fx = best_x, best_f
    return x, fx, n_evals
