"""Synthetic data, separation metrics and benchmark sweeps.

Generated records use a time unit in which one epoch lasts 1, so ``tau_max``
is a fraction of the epoch and the sample period is ``1/n``.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .warpsig import MultiViewData, Signal, forward_warp

logger = logging.getLogger(__name__)

__all__ = [
    "GenConfig",
    "GroundTruth",
    "BenchRecord",
    "generate",
    "amari_distance",
    "match_sources",
    "align_warps",
    "d_delays",
    "d_dilations",
    "random_guess_baseline",
    "score_estimate",
    "score_fit",
    "run_sweep",
    "summarize",
    "SWEEP_AXES",
]


@dataclass(frozen=True)
class GenConfig:
    m: int = 5
    p: int = 3
    n: int = 600
    n_concat: int = 5
    tau_max: float = 0.05
    rho_max: float = 1.15
    sigma: float = 1.0
    n_bins: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("m", "p", "n", "n_concat", "n_bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.tau_max < 0 or self.rho_max < 1 or self.sigma < 0:
            raise ValueError("need tau_max >= 0, rho_max >= 1 and sigma >= 0")


@dataclass(frozen=True)
class GroundTruth:
    A: np.ndarray
    S: np.ndarray
    tau_true: np.ndarray
    rho_true: np.ndarray
    noise: np.ndarray
    X: MultiViewData
    config: GenConfig


# ---------------------------------------------------------------------------
# generator


def _source_epoch(rng, n, n_bins):
    """One epoch of one source: a two-lobed peak plus windowed ripples."""
    t = np.arange(n, dtype=float)
    mu = rng.uniform(0.3 * n, 0.6 * n)
    width = rng.uniform(n / 30, n / 10)
    height = rng.uniform(0.7, 1.3)
    x = (t - mu) / width
    wave = -x * np.exp(-(x**2))
    wave[wave < 0] *= 0.5
    wave *= height / np.max(np.abs(wave))

    ripple = np.zeros(n)
    edges = np.linspace(0, n, n_bins + 1).round().astype(int)
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a < 2:
            continue
        cycles = rng.uniform(1.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        k = np.arange(b - a)
        ripple[a:b] = np.sin(2 * np.pi * cycles * k / (b - a) + phase) * np.hamming(b - a)
    return wave + 0.1 * height * ripple


def generate(cfg=GenConfig()):
    """Draw sources, mixing matrices, warps and noise, and mix them.

    Each source is ``n_concat`` independently drawn epochs, standardized to
    unit variance over the whole record. ``X[i] = A[i] @ (forward_warp(S,
    tau[i], rho[i]) + noise[i])`` with warps applied epoch by epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    m, p, n, E = cfg.m, cfg.p, cfg.n, cfg.n_concat
    S = np.empty((p, E * n))
    for j in range(p):
        S[j] = np.concatenate([_source_epoch(rng, n, cfg.n_bins) for _ in range(E)])
    S /= S.std(axis=1, keepdims=True)

    A = rng.standard_normal((m, p, p))
    tau = rng.uniform(-cfg.tau_max, cfg.tau_max, (m, p))
    rho = rng.uniform(1 / cfg.rho_max, cfg.rho_max, (m, p))
    noise = cfg.sigma * rng.standard_normal((m, p, E * n))

    src = Signal(S, 1.0 / n, E)
    X = np.empty((m, p, E * n))
    for i in range(m):
        X[i] = A[i] @ (forward_warp(src, tau[i], rho[i]).values + noise[i])
    data = MultiViewData(X, 1.0 / n, E)
    return GroundTruth(A, S, tau, rho, noise, data, cfg)


# ---------------------------------------------------------------------------
# metrics


def amari_distance(W, A):
    """Distance of ``W @ A`` to the set of scale-permutation matrices.

    Normalized to ``[0, 1]``; a row or column of zeros counts as the maximal
    penalty for that row or column.
    """
    P = np.abs(np.asarray(W, dtype=float) @ np.asarray(A, dtype=float))
    p = P.shape[0]
    if p == 1:
        return 0.0 if P[0, 0] > 0 else 1.0

    def side(M):
        mx = M.max(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = M.sum(axis=1) / mx - 1
        return np.where(mx > 0, r, p - 1.0).sum()

    return float((side(P) + side(P.T)) / (2 * p * (p - 1)))


def match_sources(W, A):
    """Permutation matching estimated sources to true ones.

    Pools ``|W^i A^i|`` (rows normalized) over views and solves the
    assignment. ``perm[r]`` is the true source recovered by estimated source
    ``r``.
    """
    W = np.asarray(W, dtype=float)
    A = np.asarray(A, dtype=float)
    if W.ndim == 2:
        W, A = W[None], A[None]
    P = np.abs(np.matmul(W, A))
    P = P / np.maximum(P.max(axis=2, keepdims=True), np.finfo(float).tiny)
    rows, cols = linear_sum_assignment(-P.sum(axis=0))
    perm = np.empty(P.shape[1], dtype=int)
    perm[rows] = cols
    return perm


def align_warps(tau_est, rho_est, perm):
    """Reorder estimated warp columns into the true source order."""
    tau = np.empty_like(tau_est)
    rho = np.empty_like(rho_est)
    tau[:, perm] = tau_est
    rho[:, perm] = rho_est
    return tau, rho


def _check_bounds(x, lo, hi, name, tol=1e-9):
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise ValueError(f"{name} outside [{lo}, {hi}]")


def _centered_gap(a, b):
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    return float(np.mean(np.abs(a - b)))


def d_delays(tau_true, tau_est, tau_max):
    """Mean absolute error of delays mapped to ``[-1/2, 1/2]`` and centered
    per source across views."""
    tau_true = np.asarray(tau_true, dtype=float)
    tau_est = np.asarray(tau_est, dtype=float)
    if tau_max <= 0:
        return 0.0
    _check_bounds(tau_true, -tau_max, tau_max, "tau_true")
    _check_bounds(tau_est, -tau_max, tau_max, "tau_est")
    return _centered_gap(tau_true / (2 * tau_max), tau_est / (2 * tau_max))


def d_dilations(rho_true, rho_est, rho_max):
    """Same as :func:`d_delays` for dilations, mapped linearly from
    ``[1/rho_max, rho_max]``."""
    rho_true = np.asarray(rho_true, dtype=float)
    rho_est = np.asarray(rho_est, dtype=float)
    if rho_max <= 1:
        return 0.0
    lo, hi = 1 / rho_max, rho_max
    _check_bounds(rho_true, lo, hi, "rho_true")
    _check_bounds(rho_est, lo, hi, "rho_est")

    def unit(r):
        return (r - lo) / (hi - lo) - 0.5

    return _centered_gap(unit(rho_true), unit(rho_est))


def random_guess_baseline(m, p, tau_max, rho_max, n_draws=2000, seed=0):
    """Expected ``(d_delays, d_dilations)`` of warps drawn independently of
    the truth, by Monte Carlo."""
    rng = np.random.default_rng(seed)
    dd = np.empty(n_draws)
    dr = np.empty(n_draws)
    for k in range(n_draws):
        t1, t2 = rng.uniform(-tau_max, tau_max, (2, m, p))
        r1, r2 = rng.uniform(1 / rho_max, rho_max, (2, m, p))
        dd[k] = d_delays(t1, t2, tau_max)
        dr[k] = d_dilations(r1, r2, rho_max)
    return float(dd.mean()), float(dr.mean())


def score_estimate(W, tau, rho, A, tau_true, rho_true, tau_max, rho_max):
    """Metrics of an estimate against known mixing matrices and warps.

    ``tau_max`` is in the same time unit as the delays. Returns a dict with
    the per-view and mean Amari distances, the warp errors after matching
    the estimated sources to the true ones, and the matching itself.
    """
    W = np.asarray(W, dtype=float)
    A = np.asarray(A, dtype=float)
    per_view = [amari_distance(W[i], A[i]) for i in range(W.shape[0])]
    perm = match_sources(W, A)
    tau_a, rho_a = align_warps(np.asarray(tau), np.asarray(rho), perm)
    return {
        "amari_per_view": per_view,
        "amari": float(np.mean(per_view)),
        "d_delays": d_delays(tau_true, tau_a, tau_max),
        "d_dilations": d_dilations(rho_true, rho_a, rho_max),
        "permutation": perm.tolist(),
    }


def score_fit(W, tau, rho, truth):
    """:func:`score_estimate` against a :class:`GroundTruth`."""
    cfg = truth.config
    return score_estimate(W, tau, rho, truth.A, truth.tau_true, truth.rho_true,
                          cfg.tau_max * truth.X.epoch_duration, cfg.rho_max)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = {
    "subjects": "m",
    "sources": "p",
    "concats": "n_concat",
    "noise": "sigma",
    "tau_max": "tau_max",
    "rho_max": "rho_max",
    "warp": ("tau_max", "rho_max"),
}


@dataclass
class BenchRecord:
    axis: str
    value: object
    method: str
    seed: int
    amari: float = np.nan
    d_delays: float = np.nan
    d_dilations: float = np.nan
    init_amari: float = np.nan
    init_d_delays: float = np.nan
    init_d_dilations: float = np.nan
    wall_time: float = np.nan
    status: str = "ok"
    error: str = ""
    amari_per_view: list = field(default_factory=list)

    def to_row(self):
        row = asdict(self)
        row["value"] = _value_str(self.value)
        row["amari_per_view"] = ";".join(f"{a:.10g}" for a in self.amari_per_view)
        return row


def _value_str(value):
    if isinstance(value, (tuple, list)):
        return ":".join(f"{v:g}" for v in value)
    return f"{value:g}" if isinstance(value, float) else str(value)


def cell_gen_config(base, axis, value, seed, value_index):
    """Generator config of one sweep cell.

    The data seed depends on ``(seed, value_index)`` only, so every method
    sees the same data.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    key = SWEEP_AXES[axis]
    if isinstance(key, tuple):
        changes = dict(zip(key, value))
    else:
        changes = {key: value}
    data_seed = int(np.random.SeedSequence([seed, value_index]).generate_state(1)[0])
    return replace(base, seed=data_seed, **changes)


def run_cell(base_gen, fit_cfg, axis, value, value_index, seed, methods):
    """Generate one dataset and fit every method on it."""
    from .pipeline import fit  # avoid an import cycle

    records = []
    try:
        gen = cell_gen_config(base_gen, axis, value, seed, value_index)
        truth = generate(gen)
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        return [BenchRecord(axis, value, mth, seed, status="failed", error=repr(exc))
                for mth in methods]
    for method in methods:
        rec = BenchRecord(axis, value, method, seed)
        try:
            cfg = replace(fit_cfg, method=method, tau_max=gen.tau_max,
                          rho_max=gen.rho_max, seed=seed)
            t0 = time.perf_counter()
            res = fit(truth.X, cfg)
            rec.wall_time = time.perf_counter() - t0
            sc = score_fit(res.W.matrices, res.warp.tau, res.warp.rho, truth)
            rec.amari, rec.d_delays, rec.d_dilations = sc["amari"], sc["d_delays"], sc["d_dilations"]
            rec.amari_per_view = sc["amari_per_view"]
            if res.init_W is not None:
                si = score_fit(res.init_W.matrices, res.init_warp.tau, res.init_warp.rho, truth)
                rec.init_amari = si["amari"]
                rec.init_d_delays, rec.init_d_dilations = si["d_delays"], si["d_dilations"]
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            logger.warning("cell %s=%s method=%s seed=%d failed: %r", axis, value, method, seed, exc)
            rec.status = "failed"
            rec.error = repr(exc)
        records.append(rec)
    return records


def _run_cell_args(args):
    return run_cell(*args)


def sweep_cells(axis, values, n_seeds, seed0=0):
    """Cells ``(value_index, value, seed)`` in their canonical order."""
    return [(k, v, seed0 + s) for k, v in enumerate(values) for s in range(n_seeds)]


def run_sweep(axis, values, methods, n_seeds, base_gen=GenConfig(), fit_cfg=None,
              jobs=1, seed0=0, skip=(), on_cell=None):
    """Generate, fit and score every ``(value, method, seed)`` combination.

    Parameters
    ----------
    skip : collection of (value_index, seed)
        Cells already done (resumed sweeps); they are not run again.
    on_cell : callable, optional
        Called with ``(value_index, seed, records)`` as each cell finishes,
        in canonical order.

    Returns
    -------
    list of BenchRecord
        Ordered by value, then seed, then method (as given).
    """
    from .pipeline import FitConfig

    fit_cfg = FitConfig() if fit_cfg is None else fit_cfg
    values = list(values)
    cells = [c for c in sweep_cells(axis, values, n_seeds, seed0) if (c[0], c[2]) not in set(skip)]
    args = [(base_gen, fit_cfg, axis, v, k, s, list(methods)) for k, v, s in cells]
    out = []
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = ex.map(_run_cell_args, args)
            for (k, _, s), recs in zip(cells, results):
                out.extend(recs)
                if on_cell is not None:
                    on_cell(k, s, recs)
    else:
        for (k, _, s), a in zip(cells, args):
            recs = _run_cell_args(a)
            out.extend(recs)
            if on_cell is not None:
                on_cell(k, s, recs)
    return out


def summarize(records):
    """Median metrics per ``(value, method)`` over successful seeds."""
    groups = {}
    for r in records:
        groups.setdefault((_value_str(r.value), r.method), []).append(r)
    rows = []
    for (value, method), recs in groups.items():
        ok = [r for r in recs if r.status == "ok"]
        rows.append({
            "value": value,
            "method": method,
            "n_ok": len(ok),
            "n_failed": len(recs) - len(ok),
            "median_amari": float(np.median([r.amari for r in ok])) if ok else np.nan,
            "median_d_delays": float(np.median([r.d_delays for r in ok])) if ok else np.nan,
            "median_d_dilations": float(np.median([r.d_dilations for r in ok])) if ok else np.nan,
        })
    return rows
