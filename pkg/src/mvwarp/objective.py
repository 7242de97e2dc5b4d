"""Approximate negative log-likelihood of warped multi-view ICA.

The loss of a parameter set ``(W, tau, rho)`` is::

    L = -sum_i log|det W^i|
        + mean_t sum_j f(Ybar_j(t))
        + 1/(2 sigma^2) mean_t sum_i ||Y^i(t) - Ybar(t)||^2
        + lambda * R1(tau, rho) + R2(Y)

where ``Y^i = inverse_warp(W^i X^i, tau^i, rho^i)`` are the aligned sources
and ``Ybar`` their average over views. Time integrals are discretized as
means over all samples of the record.

The source prior is the Laplace density ``exp(-|s|) / 2``; ``f`` is minus the
log of its convolution with a normalized Gaussian of variance ``sigma^2/m``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx

from .warpsig import MultiViewData, moving_average_cyclic, warp_indices

__all__ = [
    "UnmixingSet",
    "LossBreakdown",
    "SingularUnmixingError",
    "smoothed_logdensity",
    "smoothed_logdensity_prime",
    "approx_nll",
    "reg_r1",
    "reg_r2",
    "total_loss",
    "total_loss_gradient",
    "loss_and_gradient",
    "aligned_sources",
]

_LOG4 = np.log(4.0)


class SingularUnmixingError(np.linalg.LinAlgError):
    """Raised when an unmixing matrix has zero determinant."""

    def __init__(self, view):
        super().__init__(f"unmixing matrix of view {view} is singular")
        self.view = view


@dataclass(frozen=True)
class UnmixingSet:
    """``m`` square unmixing matrices stacked as an ``(m, p, p)`` array."""

    matrices: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.matrices, dtype=float)
        if W.ndim != 3 or W.shape[1] != W.shape[2]:
            raise ValueError(f"expected shape (m, p, p), got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("unmixing matrices contain non-finite values")
        object.__setattr__(self, "matrices", W)

    def __len__(self):
        return self.matrices.shape[0]

    def __getitem__(self, i):
        return self.matrices[i]


@dataclass(frozen=True)
class LossBreakdown:
    logdet_term: float
    density_term: float
    consensus_term: float
    r1: float = 0.0
    r2: float = 0.0
    total: float = 0.0


# ---------------------------------------------------------------------------
# smoothed log-density


def _log_terms(s, m, sigma):
    """Log of the two halves of the Laplace * Gaussian convolution (x 4)."""
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("smoothed_logdensity needs finite input")
    if m < 1 or sigma <= 0:
        raise ValueError("m must be >= 1 and sigma > 0")
    v = sigma**2 / m
    root = np.sqrt(2 * v)
    z1 = (v - s) / root
    z2 = (v + s) / root
    quad = -(s**2) / (2 * v)
    with np.errstate(divide="ignore"):
        # erfcx form where it cannot overflow, plain erfc (in (1, 2]) otherwise
        t1 = np.where(
            z1 >= 0,
            quad + np.log(erfcx(np.maximum(z1, 0))),
            v / 2 - s + np.log(erfc(np.minimum(z1, 0))),
        )
        t2 = np.where(
            z2 >= 0,
            quad + np.log(erfcx(np.maximum(z2, 0))),
            v / 2 + s + np.log(erfc(np.minimum(z2, 0))),
        )
    return t1, t2


def smoothed_logdensity(s, m, sigma=1.0):
    """``f(s) = -log((p_S * N(0, sigma^2/m))(s))`` with a Laplace prior ``p_S``.

    Vectorized over ``s``.
    """
    t1, t2 = _log_terms(s, m, sigma)
    return _LOG4 - np.logaddexp(t1, t2)


def smoothed_logdensity_prime(s, m, sigma=1.0):
    """Derivative of :func:`smoothed_logdensity`.

    The Gaussian-density parts of the derivative cancel, leaving
    ``f'(s) = tanh((t1 - t2) / 2)`` in terms of the two log-halves.
    """
    t1, t2 = _log_terms(s, m, sigma)
    return np.tanh((t1 - t2) / 2)


# ---------------------------------------------------------------------------
# helpers


def _as_arrays(X, W, warp):
    Xv = X.views if isinstance(X, MultiViewData) else np.asarray(X, dtype=float)
    Wm = W.matrices if isinstance(W, UnmixingSet) else np.asarray(W, dtype=float)
    m, p, _ = Xv.shape
    if Wm.shape != (m, p, p):
        raise ValueError(f"expected {m} unmixing matrices of size {p}, got {Wm.shape}")
    if warp.tau.shape != (m, p):
        raise ValueError(f"warp shape {warp.tau.shape} does not match (m, p) = {(m, p)}")
    return Xv, Wm


def _logdets(W):
    sign, logabs = np.linalg.slogdet(W)
    bad = np.flatnonzero(sign == 0)
    if bad.size:
        raise SingularUnmixingError(int(bad[0]))
    return logabs


def _interp_parts(S, pos):
    """Gather the bracketing samples of ``S`` (m, p, E, n) at ``pos`` (m, p, n)."""
    n = S.shape[-1]
    fl = np.floor(pos)
    frac = pos - fl
    i0 = fl.astype(np.int64) % n
    i1 = i0 + 1
    i1[i1 == n] = 0
    shape = S.shape
    lo = np.take_along_axis(S, np.broadcast_to(i0[:, :, None, :], shape), axis=-1)
    hi = np.take_along_axis(S, np.broadcast_to(i1[:, :, None, :], shape), axis=-1)
    return i0, i1, frac, lo, hi


class _Forward:
    """Aligned sources of every view plus what the backward pass needs."""

    def __init__(self, X, W, tau, rho, sample_period, n_epochs):
        m, p, N = X.shape
        self.m, self.p, self.N = m, p, N
        self.E = n_epochs
        self.n = N // n_epochs
        self.sample_period = sample_period
        self.rho = rho
        self.S = np.matmul(W, X).reshape(m, p, self.E, self.n)
        pos = warp_indices(tau, rho, self.n, sample_period, inverse=True)
        self.i0, self.i1, self.frac, lo, hi = _interp_parts(self.S, pos)
        f = self.frac[:, :, None, :]
        self.slope = hi - lo
        self.Y = np.where(f == 0.0, lo, lo + f * self.slope)
        on_node = self.frac == 0.0
        if on_node.any():
            # the loss has a kink at sample nodes: use the centered slope there
            prev = np.take_along_axis(
                self.S, np.broadcast_to(((self.i0 - 1) % self.n)[:, :, None, :], self.S.shape), axis=-1)
            self.slope = np.where(on_node[:, :, None, :], 0.5 * (hi - prev), self.slope)

    def backward(self, G_Y, X):
        """Pull ``dL/dY`` back to ``(dL/dW, dL/dtau, dL/drho)``."""
        m, p, E, n = G_Y.shape
        t = G_Y * self.slope
        g_pos = t.sum(axis=2)
        grad_tau = g_pos.sum(axis=-1) / self.sample_period
        k = np.arange(n, dtype=float)
        grad_rho = -(g_pos * k).sum(axis=-1) / self.rho**2

        # adjoint of the interpolation: scatter into the two bracketing samples
        base = (np.arange(m * p * E) * n).reshape(m, p, E, 1)
        f = self.frac[:, :, None, :]
        idx0 = base + self.i0[:, :, None, :]
        idx1 = base + self.i1[:, :, None, :]
        size = m * p * E * n
        G_S = np.bincount(
            idx0.ravel(), weights=(G_Y * (1.0 - f)).ravel(), minlength=size
        ) + np.bincount(idx1.ravel(), weights=(G_Y * f).ravel(), minlength=size)
        G_S = G_S.reshape(m, p, E * n)
        grad_W = np.matmul(G_S, np.swapaxes(X, 1, 2))
        return grad_W, grad_tau, grad_rho


def _data_meta(X):
    if isinstance(X, MultiViewData):
        return X.sample_period, X.n_epochs
    return 1.0, 1


def aligned_sources(X, W, warp):
    """Aligned sources ``Y^i``, shape (m, p, N)."""
    Xv, Wm = _as_arrays(X, W, warp)
    fw = _Forward(Xv, Wm, warp.tau, warp.rho, *_data_meta(X))
    return fw.Y.reshape(Xv.shape)


# ---------------------------------------------------------------------------
# regularizers


def _rho_denominator(rho_bar, rho_max):
    return np.where(rho_bar >= 1, rho_max - 1.0, 1.0 / rho_max - 1.0)


def reg_r1(warp):
    """Penalty on the per-source mean delay (vs 0) and mean dilation (vs 1).

    Each ratio is normalized by its bound so the result lies in ``[0, 2p]``.
    """
    tau_bar = warp.tau.mean(axis=0)
    rho_bar = warp.rho.mean(axis=0)
    val = 0.0
    if warp.tau_max > 0:
        val += np.sum((tau_bar / warp.tau_max) ** 2)
    if warp.rho_max > 1:
        val += np.sum(((rho_bar - 1.0) / _rho_denominator(rho_bar, warp.rho_max)) ** 2)
    return float(val)


def _r1_gradient(warp):
    m = warp.tau.shape[0]
    tau_bar = warp.tau.mean(axis=0)
    rho_bar = warp.rho.mean(axis=0)
    g_tau = np.zeros_like(warp.tau)
    g_rho = np.zeros_like(warp.rho)
    if warp.tau_max > 0:
        g_tau += 2 * tau_bar / warp.tau_max**2 / m
    if warp.rho_max > 1:
        d = _rho_denominator(rho_bar, warp.rho_max)
        g_rho += 2 * (rho_bar - 1.0) / d**2 / m
    return g_tau, g_rho


def _r2_value_and_grad(Y, l, sigma, N, need_grad):
    # Y: (m, p, E, n)
    A = np.abs(Y)
    Z = moving_average_cyclic(A, l)
    D = Z - Z.mean(axis=0)
    value = np.sum(D**2) / (2 * sigma**2 * N)
    if not need_grad:
        return value, None
    G_Z = D / (sigma**2 * N)
    G_Y = moving_average_cyclic(G_Z, l, adjoint=True) * np.sign(Y)
    return value, G_Y


def reg_r2(X, W, warp, l=3, sigma=1.0):
    """Envelope penalty: spread of the smoothed magnitudes ``S_l(|Y^i|)``.

    The squared norm is a sum over samples divided by the number of samples,
    as for the integrals of the likelihood.
    """
    Xv, Wm = _as_arrays(X, W, warp)
    fw = _Forward(Xv, Wm, warp.tau, warp.rho, *_data_meta(X))
    _check_l(l, fw.n)
    return float(_r2_value_and_grad(fw.Y, l, sigma, fw.N, False)[0])


def _check_l(l, n):
    if not 1 <= l <= n:
        raise ValueError(f"l must be in [1, {n}], got {l}")


# ---------------------------------------------------------------------------
# loss and gradient


def _evaluate(X, W, warp, sigma, lam, l, use_r2, need_grad):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    Xv, Wm = _as_arrays(X, W, warp)
    logabs = _logdets(Wm)
    fw = _Forward(Xv, Wm, warp.tau, warp.rho, *_data_meta(X))
    m, N = fw.m, fw.N
    Y = fw.Y
    Ybar = Y.mean(axis=0)
    R = Y - Ybar

    logdet_term = -float(np.sum(logabs))
    density_term = float(np.sum(smoothed_logdensity(Ybar, m, sigma)) / N)
    consensus_term = float(np.sum(R**2) / (2 * sigma**2 * N))
    r1 = reg_r1(warp)
    r2 = 0.0
    G_r2 = None
    if use_r2:
        _check_l(l, fw.n)
        r2, G_r2 = _r2_value_and_grad(Y, l, sigma, N, need_grad)
        r2 = float(r2)
    total = logdet_term + density_term + consensus_term + lam * r1 + r2
    loss = LossBreakdown(logdet_term, density_term, consensus_term, r1, r2, total)
    if not need_grad:
        return loss, None

    G_Y = smoothed_logdensity_prime(Ybar, m, sigma) / (N * m) + R / (sigma**2 * N)
    if G_r2 is not None:
        G_Y = G_Y + G_r2
    grad_W, grad_tau, grad_rho = fw.backward(G_Y, Xv)
    grad_W -= np.linalg.inv(Wm).transpose(0, 2, 1)
    g1_tau, g1_rho = _r1_gradient(warp)
    grad_tau += lam * g1_tau
    grad_rho += lam * g1_rho
    return loss, (grad_W, grad_tau, grad_rho)


def approx_nll(X, W, warp, sigma=1.0):
    """The three likelihood terms (log-det, density, consensus), no penalties."""
    loss, _ = _evaluate(X, W, warp, sigma, 0.0, 1, False, False)
    return loss


def total_loss(X, W, warp, sigma=1.0, lam=1.0, l=3, use_r2=True):
    """Likelihood plus ``lam * R1`` plus ``R2`` (``R2`` dropped if not ``use_r2``)."""
    loss, _ = _evaluate(X, W, warp, sigma, lam, l, use_r2, False)
    return loss


def loss_and_gradient(X, W, warp, sigma=1.0, lam=1.0, l=3, use_r2=True):
    """:func:`total_loss` together with ``(grad_W, grad_tau, grad_rho)``.

    The absolute value is differentiated as ``sign`` (0 at 0) and linear
    interpolation piecewise (centered slope on grid nodes).
    """
    return _evaluate(X, W, warp, sigma, lam, l, use_r2, True)


def total_loss_gradient(X, W, warp, sigma=1.0, lam=1.0, l=3, use_r2=True):
    return loss_and_gradient(X, W, warp, sigma, lam, l, use_r2)[1]
