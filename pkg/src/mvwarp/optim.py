"""Bound-constrained limited-memory BFGS.

Each iteration fixes the variables sitting on a bound with the gradient
pushing outwards, builds a quasi-Newton direction on the remaining (free)
variables with the two-loop recursion, and searches along it. When the full
step stays inside the box the search enforces the strong Wolfe conditions;
otherwise it backtracks along the projected path ``P(x + alpha d)``.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

__all__ = ["BoxProblem", "SolveReport", "project", "projected_gradient", "minimize"]

_C1 = 1e-4
_C2 = 0.9


@dataclass
class BoxProblem:
    """Minimize ``fun`` over ``lower <= x <= upper``.

    ``fun(x)`` returns ``(value, gradient)``.
    """

    fun: Callable[[np.ndarray], tuple]
    x0: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        d = self.x0.size
        self.lower = np.full(d, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(d, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if self.lower.shape != (d,) or self.upper.shape != (d,):
            raise ValueError("bounds must match the dimension of x0")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")

    @property
    def dimension(self):
        return self.x0.size


@dataclass
class SolveReport:
    x_final: np.ndarray
    f_final: float
    iterations: int
    function_evals: int
    converged_reason: str
    loss_trace: list = field(default_factory=list)
    projected_gradient_norm: float = np.nan


def project(x, lower, upper):
    """Clamp ``x`` componentwise into ``[lower, upper]``."""
    return np.minimum(np.maximum(x, lower), upper)


def projected_gradient(x, g, lower, upper):
    return project(x - g, lower, upper) - x


class _Counter:
    def __init__(self, fun):
        self.fun = fun
        self.nfev = 0

    def __call__(self, x):
        self.nfev += 1
        try:
            f, g = self.fun(x)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            logger.debug("objective failed at trial point: %s", exc)
            return np.inf, None
        f = float(f)
        if not np.isfinite(f):
            return np.inf, None
        g = np.asarray(g, dtype=float).ravel()
        if not np.all(np.isfinite(g)):
            return np.inf, None
        return f, g


def _two_loop(g, pairs, free):
    """Apply the L-BFGS inverse-Hessian approximation to ``g`` on ``free``."""
    q = g[free].copy()
    used = []
    for s, y in pairs:
        s_f, y_f = s[free], y[free]
        sy = s_f @ y_f
        if sy > 1e-10 * np.linalg.norm(s_f) * np.linalg.norm(y_f):
            used.append((s_f, y_f, 1.0 / sy))
    if not used:
        return None
    alphas = []
    for s_f, y_f, r in reversed(used):
        a = r * (s_f @ q)
        alphas.append(a)
        q -= a * y_f
    s_f, y_f, _ = used[-1]
    q *= (s_f @ y_f) / (y_f @ y_f)
    for (s_f, y_f, r), a in zip(used, reversed(alphas)):
        b = r * (y_f @ q)
        q += (a - b) * s_f
    return q


def _max_step(x, d, lower, upper):
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.where(d < 0, (lower - x) / d, np.where(d > 0, (upper - x) / d, np.inf))
    return float(np.min(steps, initial=np.inf))


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic through two points, safeguarded to [a, b]."""
    lo, hi = min(a, b), max(a, b)
    if a == b:
        return a
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - ga * gb
    if rad >= 0 and np.isfinite(rad):
        d2 = np.sign(b - a) * np.sqrt(rad)
        denom = gb - ga + 2 * d2
        if denom != 0:
            t = b - (b - a) * (gb + d2 - d1) / denom
            if lo + 0.1 * (hi - lo) <= t <= hi - 0.1 * (hi - lo):
                return t
    return 0.5 * (a + b)


def _wolfe_search(fun, x, f0, g0, d, alpha0, alpha_max, lower, upper, max_ls):
    """Strong Wolfe search on ``alpha in (0, alpha_max]``."""
    def phi(a):
        return fun(project(x + a * d, lower, upper))

    dg0 = g0 @ d
    a_prev, f_prev, dg_prev = 0.0, f0, dg0
    alpha = min(alpha0, alpha_max)
    best = None

    def zoom(a_lo, f_lo, dg_lo, g_lo, a_hi, f_hi, dg_hi, budget):
        for _ in range(budget):
            if np.isfinite(f_hi) and dg_hi is not None:
                a = _cubic_min(a_lo, f_lo, dg_lo, a_hi, f_hi, dg_hi)
            else:
                a = 0.5 * (a_lo + a_hi)
            fa, ga = phi(a)
            if not np.isfinite(fa) or fa > f0 + _C1 * a * dg0 or fa >= f_lo:
                a_hi, f_hi, dg_hi = a, fa, (ga @ d if ga is not None else None)
                continue
            dga = ga @ d
            if abs(dga) <= -_C2 * dg0:
                return a, fa, ga
            if dga * (a_hi - a_lo) >= 0:
                a_hi, f_hi, dg_hi = a_lo, f_lo, dg_lo
            a_lo, f_lo, dg_lo, g_lo = a, fa, dga, ga
        # fall back to the best sufficient-decrease point found, if any
        if a_lo > 0:
            return a_lo, f_lo, g_lo
        return None

    g_prev = g0
    for i in range(max_ls):
        fa, ga = phi(alpha)
        if not np.isfinite(fa) or fa > f0 + _C1 * alpha * dg0 or (i > 0 and fa >= f_prev):
            dg_a = ga @ d if ga is not None else None
            return zoom(a_prev, f_prev, dg_prev, g_prev, alpha, fa, dg_a, max_ls - i)
        dga = ga @ d
        best = (alpha, fa, ga)
        if abs(dga) <= -_C2 * dg0:
            return best
        if dga >= 0:
            return zoom(alpha, fa, dga, ga, a_prev, f_prev, dg_prev, max_ls - i)
        if alpha >= alpha_max:
            # the box stops the search; sufficient decrease is enough
            return best
        a_prev, f_prev, dg_prev, g_prev = alpha, fa, dga, ga
        alpha = min(2.0 * alpha, alpha_max)
    return best


def _projected_search(fun, x, f0, g0, d, alpha0, lower, upper, max_ls):
    alpha = alpha0
    for _ in range(max_ls):
        xt = project(x + alpha * d, lower, upper)
        decrease = g0 @ (xt - x)
        if decrease < 0:
            ft, gt = fun(xt)
            if np.isfinite(ft) and ft < f0 and ft <= f0 + _C1 * decrease:
                return xt, ft, gt
        alpha *= 0.5
    return None


def minimize(problem, memory=10, pgtol=1e-8, ftol=1e-10, max_iter=1000, max_ls=30,
             callback=None):
    """Minimize a smooth function subject to box constraints.

    Parameters
    ----------
    problem : BoxProblem
    memory : int
        Number of curvature pairs kept.
    pgtol : float
        Stop when the infinity norm of the projected gradient is below this.
    ftol : float
        Stop when ``(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1) <= ftol``.
    max_iter : int
        Maximum number of iterations.
    callback : callable, optional
        Called as ``callback(x, f)`` after every accepted iterate.

    Returns
    -------
    SolveReport
        ``converged_reason`` is one of ``"gradient-tolerance"``,
        ``"f-tolerance"``, ``"max-iter"`` or ``"line-search-failure"``.
    """
    lower, upper = problem.lower, problem.upper
    x = problem.x0.copy()
    if np.any(x < lower) or np.any(x > upper):
        raise ValueError("starting point is outside the box")
    fun = _Counter(problem.fun)
    f, g = fun(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")

    pairs = deque(maxlen=memory)
    trace = [f]
    reason = "max-iter"
    it = 0
    pg_norm = np.inf
    while it < max_iter:
        pg = projected_gradient(x, g, lower, upper)
        pg_norm = float(np.max(np.abs(pg), initial=0.0))
        if pg_norm <= pgtol:
            reason = "gradient-tolerance"
            break

        pinned = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        free = ~pinned
        d = np.zeros_like(x)
        hd = _two_loop(g, pairs, free) if pairs else None
        if hd is None:
            d[free] = -g[free]
            alpha0 = min(1.0, 1.0 / np.linalg.norm(d))
        else:
            d[free] = -hd
            alpha0 = 1.0
            if g @ d >= 0:
                pairs.clear()
                d[free] = -g[free]
                alpha0 = min(1.0, 1.0 / np.linalg.norm(d))

        alpha_max = _max_step(x, d, lower, upper)
        step = None
        if alpha_max >= alpha0 and alpha_max > 0:
            res = _wolfe_search(fun, x, f, g, d, alpha0, alpha_max, lower, upper, max_ls)
            if res is not None:
                a, f_new, g_new = res
                x_new = project(x + a * d, lower, upper)
                if f_new < f:
                    step = (x_new, f_new, g_new)
        if step is None:
            step = _projected_search(fun, x, f, g, d, alpha0, lower, upper, max_ls)
        if step is None:
            if pairs:
                logger.debug("line search failed at iteration %d, resetting memory", it)
                pairs.clear()
                it += 1
                continue
            reason = "line-search-failure"
            logger.info("line search failed at iteration %d (f=%g)", it, f)
            break

        x_new, f_new, g_new = step
        s = x_new - x
        y = g_new - g
        if s @ y > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y))
        rel = (f - f_new) / max(abs(f), abs(f_new), 1.0)
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        it += 1
        if callback is not None:
            callback(x, f)
        if rel <= ftol:
            reason = "f-tolerance"
            break

    if reason != "gradient-tolerance":
        pg_norm = float(np.max(np.abs(projected_gradient(x, g, lower, upper)), initial=0.0))
    return SolveReport(x, f, it, fun.nfev, reason, trace, pg_norm)
