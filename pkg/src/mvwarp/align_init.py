"""Initialization: per-view ICA, warp-aware matching and source reordering.

Every view is unmixed on its own. Sources of the other views are then matched
to the sources of a reference view: for each pair the candidate source is
aligned over a grid of delays and dilations and scored by its correlation
with the reference source. The Hungarian algorithm picks the best one-to-one
matching and the winning warps become the initial delays and dilations.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .objective import UnmixingSet
from .warpsig import WarpParams, interp_cyclic, warp_indices

logger = logging.getLogger(__name__)

__all__ = [
    "InitConfig",
    "AssignmentResult",
    "ICAConvergenceWarning",
    "single_view_ica",
    "warp_grid",
    "warp_grid_score",
    "hungarian",
    "initialize",
]


class ICAConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class InitConfig:
    """Settings of the initialization.

    ``tau_max`` is in the time unit of the data.
    """

    tau_max: float
    rho_max: float
    n_grid: int = 10
    reference_view: int = 0
    ica_max_iter: int = 1000
    ica_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.n_grid < 2:
            raise ValueError("n_grid must be at least 2")


@dataclass(frozen=True)
class AssignmentResult:
    """Matching of every view to the reference view.

    ``permutations[i][j]`` is the source of view ``i`` matched to source
    ``j`` of the reference; ``signs[i][j]`` the sign that aligns it.
    """

    permutations: np.ndarray
    signs: np.ndarray
    tau: np.ndarray
    rho: np.ndarray


# ---------------------------------------------------------------------------
# single-view ICA


def _sym_decorrelation(W):
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(W.dtype).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def single_view_ica(X, max_iter=1000, tol=1e-8, seed=0):
    """Symmetric fixed-point ICA with a ``tanh`` score.

    Parameters
    ----------
    X : ndarray, shape (p, N)
    max_iter : int
    tol : float
        Stop when ``max |1 - |diag(W_new W_old^T)|| < tol``.
    seed : int
        Seed of the random orthogonal starting point.

    Returns
    -------
    W : ndarray, shape (p, p)
        Unmixing matrix (whitening included); ``W @ X`` has decorrelated
        unit-variance rows.
    S : ndarray, shape (p, N)
        ``W @ X``.
    """
    X = np.asarray(X, dtype=float)
    p, N = X.shape
    if N <= p:
        raise ValueError(f"need more samples than channels, got {N} <= {p}")
    Xc = X - X.mean(axis=1, keepdims=True)
    d, E = np.linalg.eigh(Xc @ Xc.T / N)
    if d[0] <= 1e-12 * max(d[-1], np.finfo(float).tiny):
        rank = int(np.sum(d > 1e-12 * max(d[-1], np.finfo(float).tiny)))
        raise np.linalg.LinAlgError(
            f"data are rank deficient: rank {rank} < {p} channels"
        )
    K = (E / np.sqrt(d)).T
    Z = K @ Xc

    rng = np.random.default_rng(seed)
    W = _sym_decorrelation(rng.standard_normal((p, p)))
    converged = False
    for _ in range(max_iter):
        G = np.tanh(W @ Z)
        W_new = _sym_decorrelation(G @ Z.T / N - np.diag((1 - G**2).mean(axis=1)) @ W)
        lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1))
        W = W_new
        if lim < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"ICA did not converge in {max_iter} iterations (last change {lim:.2e})",
            ICAConvergenceWarning,
            stacklevel=2,
        )
    W = W @ K
    return W, W @ X


# ---------------------------------------------------------------------------
# warp grid matching


def warp_grid(tau_max, rho_max, n_grid):
    """Candidate delays and dilations; always contains ``tau=0`` and ``rho=1``.

    Delays are evenly spaced on ``[-tau_max, tau_max]``; dilations are evenly
    spaced in log scale on ``[1/rho_max, rho_max]``.
    """
    if tau_max > 0:
        taus = np.union1d(np.linspace(-tau_max, tau_max, n_grid), [0.0])
    else:
        taus = np.zeros(1)
    if rho_max > 1:
        rhos = np.union1d(np.geomspace(1 / rho_max, rho_max, n_grid), [1.0])
    else:
        rhos = np.ones(1)
    return taus, rhos


def _grid_warps(s, taus, rhos, n_epochs, sample_period):
    """All aligned versions of ``s``, shape (len(taus) * len(rhos), N)."""
    N = s.shape[-1]
    n = N // n_epochs
    tt, rr = np.meshgrid(taus, rhos, indexing="ij")
    pos = warp_indices(tt.ravel(), rr.ravel(), n, sample_period, inverse=True)
    out = interp_cyclic(np.broadcast_to(s.reshape(n_epochs, n), (pos.shape[0], n_epochs, n)), pos)
    return out.reshape(pos.shape[0], N), tt.ravel(), rr.ravel()


def _correlations(refs, cands):
    """Pearson correlations between rows of ``refs`` (a, N) and ``cands`` (b, N)."""
    refs = refs - refs.mean(axis=-1, keepdims=True)
    cands = cands - cands.mean(axis=-1, keepdims=True)
    nr = np.linalg.norm(refs, axis=-1)
    nc = np.linalg.norm(cands, axis=-1)
    num = refs @ cands.T
    den = np.outer(nr, nc)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return corr


def warp_grid_score(s_ref, s_cand, tau_max, rho_max, n_grid=10, n_epochs=1,
                    sample_period=1.0):
    """Best alignment of ``s_cand`` onto ``s_ref`` over the warp grid.

    The cost is ``1 - |corr(s_ref, inverse_warp(s_cand, tau, rho))|``, lower
    is better. Ties keep the first grid point (delays outer, dilations inner).

    Returns
    -------
    cost, tau, rho, sign
    """
    s_ref = np.asarray(s_ref, dtype=float).ravel()
    s_cand = np.asarray(s_cand, dtype=float).ravel()
    if s_ref.shape != s_cand.shape:
        raise ValueError("signals must have the same length")
    taus, rhos = warp_grid(tau_max, rho_max, n_grid)
    warped, tt, rr = _grid_warps(s_cand, taus, rhos, n_epochs, sample_period)
    corr = _correlations(s_ref[None], warped)[0]
    best = int(np.argmin(1 - np.abs(corr)))
    sign = 1.0 if corr[best] >= 0 else -1.0
    return 1 - abs(corr[best]), tt[best], rr[best], sign


def hungarian(cost):
    """Assignment minimizing the total cost; ``perm[row] = column``."""
    cost = np.asarray(cost, dtype=float)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=int)
    perm[rows] = cols
    return perm


def _match_view(S_ref, S_view, taus, rhos, n_epochs, sample_period):
    p = S_ref.shape[0]
    C = np.empty((p, p))
    T = np.empty((p, p))
    P = np.empty((p, p))
    sgn = np.empty((p, p))
    for k in range(p):
        warped, tt, rr = _grid_warps(S_view[k], taus, rhos, n_epochs, sample_period)
        corr = _correlations(S_ref, warped)  # (p, G)
        cost = 1 - np.abs(corr)
        best = np.argmin(cost, axis=1)
        idx = np.arange(p)
        C[:, k] = cost[idx, best]
        T[:, k] = tt[best]
        P[:, k] = rr[best]
        sgn[:, k] = np.where(corr[idx, best] >= 0, 1.0, -1.0)
    perm = hungarian(C)
    idx = np.arange(p)
    return perm, sgn[idx, perm], T[idx, perm], P[idx, perm]


def initialize(X, cfg, return_assignment=False):
    """Initial unmixing matrices and warps.

    Parameters
    ----------
    X : MultiViewData
    cfg : InitConfig

    Returns
    -------
    W : UnmixingSet
    warp : WarpParams
    assignment : AssignmentResult, only if ``return_assignment``
    """
    m, p = X.m, X.p
    ref = cfg.reference_view
    if not 0 <= ref < m:
        raise ValueError(f"reference view {ref} out of range")
    Ws = np.empty((m, p, p))
    Ss = np.empty((m, p, X.n_total))
    for i in range(m):
        Ws[i], Ss[i] = single_view_ica(X.views[i], cfg.ica_max_iter, cfg.ica_tol, cfg.seed)

    taus, rhos = warp_grid(cfg.tau_max, cfg.rho_max, cfg.n_grid)
    perms = np.tile(np.arange(p), (m, 1))
    signs = np.ones((m, p))
    tau = np.zeros((m, p))
    rho = np.ones((m, p))
    for i in range(m):
        if i == ref:
            continue
        perm, sgn, t, r = _match_view(Ss[ref], Ss[i], taus, rhos, X.n_epochs, X.sample_period)
        perms[i], signs[i], tau[i], rho[i] = perm, sgn, t, r
        Ws[i] = signs[i][:, None] * Ws[i][perm]
    W = UnmixingSet(Ws)
    warp = WarpParams(tau, rho, cfg.tau_max, max(cfg.rho_max, 1.0))
    if return_assignment:
        return W, warp, AssignmentResult(perms, signs, tau, rho)
    return W, warp
