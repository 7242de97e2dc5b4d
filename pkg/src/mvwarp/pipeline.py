"""End-to-end fits: the warped multi-view ICA and its baselines.

``fit(X, cfg)`` dispatches on ``cfg.method``:

``mvicad2``
    joint estimation of unmixing matrices, delays and dilations;
``mvicad_delay``
    same loss with every dilation frozen to 1;
``mvica``
    likelihood only (no penalties), delays frozen to 0 and dilations to 1;
``permica``
    per-view ICA then source matching, no joint optimization;
``groupica``
    PCA + ICA on the spatially concatenated views.

The joint baselines reuse the loss and optimizer of ``mvicad2`` rather than
the historical implementations of these methods.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .align_init import InitConfig, initialize, single_view_ica
from .objective import UnmixingSet, loss_and_gradient, total_loss
from .optim import BoxProblem, SolveReport, minimize, project
from .precondition import DEFAULT_LAMBDA2, build_scale_plan
from .warpsig import MultiViewData, Signal, WarpParams

logger = logging.getLogger(__name__)

__all__ = ["FitConfig", "FitResult", "FitError", "METHODS", "fit", "fit_mvicad2",
           "fit_mvicad_delay", "fit_mvica", "fit_permica", "fit_groupica"]

METHODS = ("mvicad2", "mvicad_delay", "mvica", "permica", "groupica")


class FitError(RuntimeError):
    """A fit stage failed; ``stage`` names it."""

    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of one fit.

    ``tau_max`` is a fraction of the epoch duration.
    """

    method: str = "mvicad2"
    tau_max: float = 0.05
    rho_max: float = 1.15
    lam: float = 1.0
    l: int = 3
    lambda2: float = DEFAULT_LAMBDA2
    sigma: float = 1.0
    use_r2: bool = True
    n_grid: int = 10
    reference_view: int = 0
    ica_max_iter: int = 1000
    ica_tol: float = 1e-8
    memory: int = 10
    pgtol: float = 1e-8
    ftol: float = 1e-10
    max_iter: int = 1000
    warm_iter: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.tau_max < 0 or self.rho_max < 1:
            raise ValueError("need tau_max >= 0 and rho_max >= 1")


@dataclass
class FitResult:
    method: str
    W: UnmixingSet
    warp: WarpParams
    aligned_sources: np.ndarray
    shared_sources: np.ndarray
    loss_trace: list
    report: SolveReport | None
    wall_time: float
    init_W: UnmixingSet | None = None
    init_warp: WarpParams | None = None
    config: FitConfig = field(default_factory=FitConfig)

    def aligned_signals(self, sample_period=1.0, n_epochs=1):
        return [Signal(y, sample_period, n_epochs) for y in self.aligned_sources]


def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except FitError:
        raise
    except Exception as exc:
        raise FitError(name, exc) from exc


def _check_data(X):
    if not isinstance(X, MultiViewData):
        X = MultiViewData(X)
    if X.n_total <= X.p:
        raise ValueError(f"need more samples than sources ({X.n_total} <= {X.p})")
    return X


def _init_config(X, cfg, tau_max, rho_max):
    return InitConfig(tau_max=tau_max, rho_max=rho_max, n_grid=cfg.n_grid,
                      reference_view=cfg.reference_view,
                      ica_max_iter=cfg.ica_max_iter, ica_tol=cfg.ica_tol,
                      seed=cfg.seed)


def _result(method, X, W, warp, trace, report, t0, cfg, init=(None, None)):
    from .objective import aligned_sources

    Y = aligned_sources(X, W, warp)
    return FitResult(method, W, warp, Y, Y.mean(axis=0), list(trace), report,
                     time.perf_counter() - t0, init[0], init[1], cfg)


def _joint_fit(X, W0, warp0, cfg, free_tau, free_rho, lam, use_r2):
    """Minimize the loss over W and the free warp parameters."""
    m, p = X.m, X.p
    nw = m * p * p
    Y0 = _stage("align", lambda: _aligned_mean(X, W0, warp0))
    plan = build_scale_plan(Signal(Y0, X.sample_period, X.n_epochs), cfg.lambda2,
                            warp0.tau_max, warp0.rho_max)
    t_lo, t_hi = plan.tau_bounds
    r_lo, r_hi = plan.rho_bounds
    parts = [W0.matrices.ravel()]
    lower = [np.full(nw, -np.inf)]
    upper = [np.full(nw, np.inf)]
    if free_tau:
        parts.append((warp0.tau * plan.tau_scale).ravel())
        lower.append(np.tile(t_lo, m))
        upper.append(np.tile(t_hi, m))
    if free_rho:
        parts.append((warp0.rho * plan.rho_scale).ravel())
        lower.append(np.full(m * p, r_lo))
        upper.append(np.full(m * p, r_hi))
    lower = np.concatenate(lower)
    upper = np.concatenate(upper)
    x0 = project(np.concatenate(parts), lower, upper)

    def unpack(x):
        W = x[:nw].reshape(m, p, p)
        k = nw
        tau, rho = warp0.tau, warp0.rho
        if free_tau:
            tau = x[k:k + m * p].reshape(m, p) / plan.tau_scale
            k += m * p
        if free_rho:
            rho = x[k:k + m * p].reshape(m, p) / plan.rho_scale
        return W, WarpParams(tau, rho, warp0.tau_max, warp0.rho_max)

    def objective(x):
        W, warp = unpack(x)
        loss, (gW, gt, gr) = loss_and_gradient(X, W, warp, cfg.sigma, lam, cfg.l, use_r2)
        grads = [gW.ravel()]
        if free_tau:
            grads.append((gt / plan.tau_scale).ravel())
        if free_rho:
            grads.append((gr / plan.rho_scale).ravel())
        return loss.total, np.concatenate(grads)

    trace = []
    if cfg.warm_iter > 0 and (free_tau or free_rho):
        # warp-only warm phase: W pinned by a zero-width box
        w_lo, w_hi = lower.copy(), upper.copy()
        w_lo[:nw] = w_hi[:nw] = x0[:nw]
        warm = minimize(BoxProblem(objective, x0, w_lo, w_hi), cfg.memory, cfg.pgtol,
                        cfg.ftol, cfg.warm_iter)
        x0 = warm.x_final
        trace.extend(warm.loss_trace)
    report = _stage("optimize", minimize, BoxProblem(objective, x0, lower, upper),
                    cfg.memory, cfg.pgtol, cfg.ftol, cfg.max_iter)
    trace.extend(report.loss_trace[1:] if trace else report.loss_trace)
    W, warp = unpack(report.x_final)
    return UnmixingSet(W), warp, trace, report


def _aligned_mean(X, W, warp):
    from .objective import aligned_sources

    return aligned_sources(X, W, warp).mean(axis=0)


def _tau_max_time(X, cfg):
    return cfg.tau_max * X.epoch_duration


def fit_mvicad2(X, cfg=FitConfig()):
    """Joint estimation of unmixing matrices, delays and dilations."""
    t0 = time.perf_counter()
    X = _check_data(X)
    tau_max = _tau_max_time(X, cfg)
    W0, warp0 = _stage("initialize", initialize, X, _init_config(X, cfg, tau_max, cfg.rho_max))
    W, warp, trace, report = _joint_fit(X, W0, warp0, cfg, tau_max > 0, cfg.rho_max > 1,
                                        cfg.lam, cfg.use_r2)
    return _result("mvicad2", X, W, warp, trace, report, t0, cfg, (W0, warp0))


def fit_mvicad_delay(X, cfg=FitConfig(method="mvicad_delay")):
    """Delay-only variant: dilations are frozen to 1."""
    t0 = time.perf_counter()
    X = _check_data(X)
    tau_max = _tau_max_time(X, cfg)
    W0, warp0 = _stage("initialize", initialize, X, _init_config(X, cfg, tau_max, 1.0))
    warp0 = WarpParams(warp0.tau, np.ones_like(warp0.rho), tau_max, cfg.rho_max)
    W, warp, trace, report = _joint_fit(X, W0, warp0, cfg, tau_max > 0, False,
                                        cfg.lam, cfg.use_r2)
    return _result("mvicad_delay", X, W, warp, trace, report, t0, cfg, (W0, warp0))


def _matched_ica(X, cfg, tau_max):
    return initialize(X, _init_config(X, cfg, 0.0, 1.0))[0], WarpParams.identity(
        X.m, X.p, tau_max, cfg.rho_max)


def fit_mvica(X, cfg=FitConfig(method="mvica")):
    """Shared-source model without warps: likelihood only, warps frozen."""
    t0 = time.perf_counter()
    X = _check_data(X)
    tau_max = _tau_max_time(X, cfg)
    W0, warp0 = _stage("initialize", _matched_ica, X, cfg, tau_max)
    W, warp, trace, report = _joint_fit(X, W0, warp0, cfg, False, False, 0.0, False)
    return _result("mvica", X, W, warp, trace, report, t0, cfg, (W0, warp0))


def fit_permica(X, cfg=FitConfig(method="permica")):
    """Per-view ICA with sources matched to the reference view by correlation."""
    t0 = time.perf_counter()
    X = _check_data(X)
    W, warp = _stage("initialize", _matched_ica, X, cfg, _tau_max_time(X, cfg))
    trace = [total_loss(X, W, warp, cfg.sigma, 0.0, cfg.l, False).total]
    return _result("permica", X, W, warp, trace, None, t0, cfg, (W, warp))


def fit_groupica(X, cfg=FitConfig(method="groupica")):
    """PCA + ICA on spatially concatenated views.

    The shared sources ``S`` come from ICA of the first ``p`` principal
    components of the stacked ``(m p) x N`` data; each view's mixing matrix
    is the least-squares fit ``X^i ~ A^i S`` and ``W^i = (A^i)^{-1}``.
    """
    t0 = time.perf_counter()
    X = _check_data(X)
    m, p, N = X.views.shape
    stacked = X.views.reshape(m * p, N)
    centered = stacked - stacked.mean(axis=1, keepdims=True)
    U, _, _ = np.linalg.svd(centered, full_matrices=False)
    reduced = U[:, :p].T @ stacked
    Wz, S = _stage("ica", single_view_ica, reduced, cfg.ica_max_iter, cfg.ica_tol, cfg.seed)

    gram = S @ S.T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise FitError("regression", f"source Gram matrix is ill-conditioned (cond={cond:.3g})")
    Ws = np.empty((m, p, p))
    for i in range(m):
        A = np.linalg.solve(gram, S @ X.views[i].T).T
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e12:
            raise FitError("regression", f"view {i} mixing estimate is ill-conditioned (cond={cond:.3g})")
        Ws[i] = np.linalg.inv(A)
    W = UnmixingSet(Ws)
    warp = WarpParams.identity(m, p, _tau_max_time(X, cfg), cfg.rho_max)
    trace = [total_loss(X, W, warp, cfg.sigma, 0.0, cfg.l, False).total]
    return _result("groupica", X, W, warp, trace, None, t0, cfg)


_FITTERS = {
    "mvicad2": fit_mvicad2,
    "mvicad_delay": fit_mvicad_delay,
    "mvica": fit_mvica,
    "permica": fit_permica,
    "groupica": fit_groupica,
}


def fit(X, cfg=FitConfig()):
    """Fit ``cfg.method`` on ``X``."""
    return _FITTERS[cfg.method](X, cfg)
