"""Rescaling of delays and dilations before the quasi-Newton run.

Delays of source ``j`` are multiplied by ``lambda2 / tau_max * lambda1[j]``
and dilations by ``lambda2 / (rho_max - 1)``. ``lambda1[j]`` balances how
strongly a delay and a dilation of the averaged source change the signal;
``lambda2`` boosts both time parameters relative to the unmixing matrices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .warpsig import Signal, WarpParams

logger = logging.getLogger(__name__)

__all__ = [
    "ScalePlan",
    "compute_lambda1",
    "build_scale_plan",
    "scale_params",
    "unscale_params",
    "DEFAULT_LAMBDA2",
]

DEFAULT_LAMBDA2 = 2.0**9
LAMBDA2_RANGE = (2.0**4, 2.0**14)
_EPS = 1e-12


def compute_lambda1(ybar):
    """Per-source delay scale from the averaged aligned sources.

    ``Lambda_j = n * sqrt(mean(t^2 y_j'^2) / mean(y_j'^2))`` with ``t = k/n``
    the normalized time within an epoch of ``n`` samples. The derivative is
    taken by central differences (one-sided at the epoch edges) and the
    integrals by the trapezoid rule over one period. Sources
    with no variation fall back to the ramp value ``n / sqrt(3)``.
    """
    if not isinstance(ybar, Signal):
        ybar = Signal(ybar)
    n = ybar.epoch_length
    if n < 3:
        raise ValueError("need at least 3 samples per epoch")
    y = ybar.values.reshape(ybar.n_components, ybar.n_epochs, n)
    dy = np.gradient(y, axis=-1)
    t = np.arange(n) / n
    # trapezoid rule on [0, 1]; the epoch is periodic so y'(1) = y'(0)
    num = (np.sum(t**2 * dy**2, axis=-1) + 0.5 * dy[..., 0] ** 2).mean(axis=-1) / n
    den = np.mean(dy**2, axis=(1, 2))
    energy = np.mean(y**2, axis=(1, 2))
    out = np.full(ybar.n_components, n / np.sqrt(3.0))
    ok = den > _EPS * np.maximum(energy, _EPS)
    out[ok] = n * np.sqrt(num[ok] / den[ok])
    return out


@dataclass(frozen=True)
class ScalePlan:
    lambda1: np.ndarray
    lambda2: float
    tau_scale: np.ndarray
    rho_scale: float
    tau_max: float
    rho_max: float

    @property
    def tau_bounds(self):
        """Scaled delay bounds, one (lower, upper) pair per source."""
        return -self.tau_scale * self.tau_max, self.tau_scale * self.tau_max

    @property
    def rho_bounds(self):
        return self.rho_scale / self.rho_max, self.rho_scale * self.rho_max

    def boxes(self, m, p, n_w=None):
        """Lower/upper bound vectors for the flattened ``(W, tau, rho)`` vector.

        ``W`` entries (``n_w`` of them, default ``m * p * p``) are unbounded.
        """
        n_w = m * p * p if n_w is None else n_w
        t_lo, t_hi = self.tau_bounds
        r_lo, r_hi = self.rho_bounds
        lower = np.concatenate(
            [np.full(n_w, -np.inf), np.tile(t_lo, m), np.full(m * p, r_lo)]
        )
        upper = np.concatenate(
            [np.full(n_w, np.inf), np.tile(t_hi, m), np.full(m * p, r_hi)]
        )
        return lower, upper


def build_scale_plan(ybar, lambda2=DEFAULT_LAMBDA2, tau_max=0.05, rho_max=1.15,
                     lambda1=None):
    if lambda2 <= 0:
        raise ValueError("lambda2 must be positive")
    if not LAMBDA2_RANGE[0] <= lambda2 <= LAMBDA2_RANGE[1]:
        logger.warning("lambda2=%g is outside the usual range [2^4, 2^14]", lambda2)
    if lambda1 is None:
        lambda1 = compute_lambda1(ybar)
    lambda1 = np.asarray(lambda1, dtype=float)
    # degenerate bounds (no delay / no dilation allowed) keep a unit scale
    tau_scale = lambda2 / tau_max * lambda1 if tau_max > 0 else np.ones_like(lambda1)
    rho_scale = lambda2 / (rho_max - 1.0) if rho_max > 1 else 1.0
    return ScalePlan(lambda1, float(lambda2), tau_scale, float(rho_scale),
                     float(tau_max), float(rho_max))


def scale_params(warp, plan):
    """Map a warp to the optimizer's variables ``(tau_scaled, rho_scaled)``."""
    return warp.tau * plan.tau_scale, warp.rho * plan.rho_scale


def unscale_params(tau_scaled, rho_scaled, plan):
    """Inverse of :func:`scale_params`."""
    tau = np.asarray(tau_scaled) / plan.tau_scale
    rho = np.asarray(rho_scaled) / plan.rho_scale
    return WarpParams(tau, rho, plan.tau_max, plan.rho_max)
