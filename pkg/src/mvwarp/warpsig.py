"""Sampled multivariate signals, time warps and envelope smoothing.

A signal is a ``p x N`` array of samples on a uniform grid. When a record is
made of ``n_epochs`` concatenated epochs, every epoch is treated as one period
of a periodic signal: warps and smoothing wrap around within the epoch and
never leak into the neighbouring one.

Times are measured from the start of each epoch, in the same unit as
``sample_period``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Signal",
    "WarpParams",
    "MultiViewData",
    "forward_warp",
    "inverse_warp",
    "smooth_envelope",
    "warp_indices",
    "interp_cyclic",
    "moving_average_cyclic",
]


def _check_finite(values, name="signal"):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class Signal:
    """A ``p x N`` sampled signal.

    Parameters
    ----------
    values : ndarray, shape (p, N)
        Rows are components, columns are samples.
    sample_period : float
        Time between two samples.
    n_epochs : int
        Number of concatenated epochs; ``N`` must be a multiple of it.
    """

    values: np.ndarray
    sample_period: float = 1.0
    n_epochs: int = 1

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.ndim != 2:
            raise ValueError(f"signal must be 2-D, got shape {values.shape}")
        _check_finite(values)
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if self.n_epochs < 1 or values.shape[1] % self.n_epochs:
            raise ValueError(
                f"{values.shape[1]} samples cannot be split into "
                f"{self.n_epochs} epochs"
            )
        if values.shape[1] // self.n_epochs < 2:
            raise ValueError("each epoch needs at least 2 samples")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_components(self):
        return self.values.shape[0]

    @property
    def n_samples(self):
        return self.values.shape[1]

    @property
    def epoch_length(self):
        return self.n_samples // self.n_epochs

    def with_values(self, values):
        return Signal(values, self.sample_period, self.n_epochs)


@dataclass(frozen=True)
class WarpParams:
    """Per-view, per-source delays and dilations.

    ``tau`` and ``rho`` have shape ``(m, p)``. ``tau`` is expressed in the
    time unit of the data (see :class:`Signal`).
    """

    tau: np.ndarray
    rho: np.ndarray
    tau_max: float
    rho_max: float
    atol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        tau = np.atleast_2d(np.asarray(self.tau, dtype=float))
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        if tau.shape != rho.shape:
            raise ValueError(f"tau {tau.shape} and rho {rho.shape} differ in shape")
        if self.tau_max < 0:
            raise ValueError("tau_max must be nonnegative")
        if self.rho_max < 1:
            raise ValueError("rho_max must be >= 1")
        _check_finite(tau, "tau")
        _check_finite(rho, "rho")
        slack = self.atol * max(1.0, self.tau_max)
        if np.any(np.abs(tau) > self.tau_max + slack):
            raise ValueError(f"delays exceed tau_max={self.tau_max}")
        if np.any(rho <= 0):
            raise ValueError("dilations must be positive")
        if np.any(rho < 1 / self.rho_max - self.atol) or np.any(
            rho > self.rho_max + self.atol
        ):
            raise ValueError(f"dilations outside [1/{self.rho_max}, {self.rho_max}]")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def identity(cls, m, p, tau_max, rho_max):
        return cls(np.zeros((m, p)), np.ones((m, p)), tau_max, rho_max)

    @property
    def shape(self):
        return self.tau.shape


@dataclass(frozen=True)
class MultiViewData:
    """Observations of ``m`` views, each a ``p x N`` array."""

    views: np.ndarray
    sample_period: float = 1.0
    n_epochs: int = 1

    def __post_init__(self):
        views = np.asarray(self.views, dtype=float)
        if views.ndim != 3:
            raise ValueError(f"views must have shape (m, p, N), got {views.shape}")
        _check_finite(views, "views")
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if self.n_epochs < 1 or views.shape[2] % self.n_epochs:
            raise ValueError(
                f"{views.shape[2]} samples cannot be split into "
                f"{self.n_epochs} epochs"
            )
        views.setflags(write=False)
        object.__setattr__(self, "views", views)

    @property
    def m(self):
        return self.views.shape[0]

    @property
    def p(self):
        return self.views.shape[1]

    @property
    def n_total(self):
        return self.views.shape[2]

    @property
    def epoch_length(self):
        return self.n_total // self.n_epochs

    @property
    def epoch_duration(self):
        return self.epoch_length * self.sample_period

    def view(self, i):
        return Signal(self.views[i], self.sample_period, self.n_epochs)


# ---------------------------------------------------------------------------
# array-level kernels shared with the objective and its gradient


def warp_indices(tau, rho, n, sample_period=1.0, inverse=True):
    """Fractional sample positions read by a warp.

    Parameters
    ----------
    tau, rho : array_like, shape (...,)
        Delays (in time units) and dilations, broadcast together.
    n : int
        Epoch length in samples.
    inverse : bool
        ``True`` for the aligning warp ``t / rho + tau``, ``False`` for the
        forward warp ``rho * (t - tau)``.

    Returns
    -------
    pos : ndarray, shape (..., n)
        Positions in sample units, not yet wrapped.
    """
    k = np.arange(n, dtype=float)
    tau = np.asarray(tau, dtype=float)[..., None] / sample_period
    rho = np.asarray(rho, dtype=float)[..., None]
    if np.any(rho <= 0):
        raise ValueError("dilations must be positive")
    if inverse:
        return k / rho + tau
    return rho * (k - tau)


def _split(pos, n):
    fl = np.floor(pos)
    frac = pos - fl
    i0 = fl.astype(np.int64) % n
    i1 = i0 + 1
    i1[i1 == n] = 0
    return i0, i1, frac


def interp_cyclic(values, pos):
    """Linear interpolation of periodic epochs at fractional positions.

    Parameters
    ----------
    values : ndarray, shape (..., E, n)
        ``E`` epochs of ``n`` samples each.
    pos : ndarray, shape (..., n)
        Positions (in samples) to read, shared by all epochs.

    Returns
    -------
    out : ndarray, shape (..., E, n)
    """
    n = values.shape[-1]
    i0, i1, frac = _split(pos, n)
    i0 = np.broadcast_to(i0[..., None, :], values.shape)
    i1 = np.broadcast_to(i1[..., None, :], values.shape)
    frac = frac[..., None, :]
    lo = np.take_along_axis(values, i0, axis=-1)
    hi = np.take_along_axis(values, i1, axis=-1)
    out = lo + frac * (hi - lo)
    # exact grid nodes return the stored sample
    return np.where(frac == 0.0, lo, out)


def _epochs(values, n_epochs):
    p, N = values.shape
    return values.reshape(p, n_epochs, N // n_epochs)


def _check_warp_args(sig, tau, rho):
    p = sig.n_components
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (p,))
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (p,))
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(rho))):
        raise ValueError("warp parameters must be finite")
    if np.any(rho <= 0):
        raise ValueError("dilations must be positive")
    return tau, rho


def _warp(sig, tau, rho, inverse):
    tau, rho = _check_warp_args(sig, tau, rho)
    n = sig.epoch_length
    pos = warp_indices(tau, rho, n, sig.sample_period, inverse=inverse)
    out = interp_cyclic(_epochs(sig.values, sig.n_epochs), pos)
    return sig.with_values(out.reshape(sig.values.shape))


def forward_warp(sig, tau, rho):
    """Delay then dilate each component: ``out(t) = sig(rho * (t - tau))``."""
    return _warp(sig, tau, rho, inverse=False)


def inverse_warp(sig, tau, rho):
    """Undo :func:`forward_warp`: ``out(t) = sig(t / rho + tau)``."""
    return _warp(sig, tau, rho, inverse=True)


def _window_offsets(l):
    start = -((l - 1) // 2)
    return start, start + l


def moving_average_cyclic(values, l, adjoint=False):
    """Cyclic moving average of length ``l`` along the last axis.

    The window covers offsets ``[-(l-1)//2, l - (l-1)//2)`` around each
    sample. ``adjoint=True`` applies the transposed operator, which only
    differs from the direct one for even ``l``.
    """
    n = values.shape[-1]
    if not 1 <= l <= n:
        raise ValueError(f"window length must be in [1, {n}], got {l}")
    start, stop = _window_offsets(l)
    if adjoint:
        start, stop = -stop + 1, -start + 1
    # out[k] = mean(values[k + start : k + stop]) with wrap-around
    idx = np.arange(start, n + stop - 1) % n
    padded = values[..., idx]
    csum = np.cumsum(padded, axis=-1)
    csum = np.concatenate([np.zeros(csum.shape[:-1] + (1,)), csum], axis=-1)
    return (csum[..., l:] - csum[..., :-l])[..., :n] / l


def smooth_envelope(sig, l):
    """Moving average of ``|sig|`` over ``l`` consecutive samples (cyclic)."""
    if not 1 <= l <= sig.epoch_length:
        raise ValueError(f"l must be in [1, {sig.epoch_length}], got {l}")
    env = moving_average_cyclic(_epochs(np.abs(sig.values), sig.n_epochs), l)
    return sig.with_values(env.reshape(sig.values.shape))
