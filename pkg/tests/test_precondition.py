import logging

import numpy as np
import pytest
from scipy.integrate import quad

from mvwarp.precondition import (ScalePlan, build_scale_plan, compute_lambda1,
                                 scale_params, unscale_params)
from mvwarp.warpsig import Signal, WarpParams


def test_lambda1_of_ramp():
    n = 4000
    t = np.arange(n) / n
    lam = compute_lambda1(Signal(t[None]))
    # constant derivative: sqrt(mean t^2) = 1/sqrt(3) up to discretization
    assert lam[0] == pytest.approx(n / np.sqrt(3), rel=1e-3)


def test_lambda1_of_sine_against_quadrature():
    n = 512
    t = np.arange(n) / n
    lam = compute_lambda1(Signal(np.sin(2 * np.pi * t)[None]))[0]
    num = quad(lambda u: u**2 * np.cos(2 * np.pi * u) ** 2, 0, 1)[0]
    den = quad(lambda u: np.cos(2 * np.pi * u) ** 2, 0, 1)[0]
    assert lam == pytest.approx(n * np.sqrt(num / den), rel=1e-3)


def test_lambda1_constant_source_falls_back():
    lam = compute_lambda1(np.vstack([np.ones(30), np.linspace(0, 1, 30)]))
    assert lam[0] == pytest.approx(30 / np.sqrt(3))


def test_lambda1_pools_epochs():
    n = 64
    t = np.arange(n) / n
    one = compute_lambda1(Signal(np.sin(2 * np.pi * t)[None]))
    two = compute_lambda1(Signal(np.tile(np.sin(2 * np.pi * t), 2)[None], n_epochs=2))
    np.testing.assert_allclose(one, two)


def test_plan_arithmetic():
    plan = build_scale_plan(None, 512, 0.05, 1.15, lambda1=np.array([10.0, 20.0]))
    np.testing.assert_allclose(plan.tau_scale, 512 / 0.05 * np.array([10.0, 20.0]))
    assert plan.rho_scale == pytest.approx(512 / 0.15)
    lo, hi = plan.rho_bounds
    assert lo == pytest.approx(512 / (0.15 * 1.15))
    assert hi == pytest.approx(512 * 1.15 / 0.15)
    t_lo, t_hi = plan.tau_bounds
    np.testing.assert_allclose(t_hi, 512 * np.array([10.0, 20.0]))
    np.testing.assert_allclose(t_lo, -t_hi)


def test_unit_scales_give_raw_boxes():
    plan = ScalePlan(np.ones(2), 1.0, np.ones(2), 1.0, 0.05, 1.15)
    lower, upper = plan.boxes(3, 2)
    assert np.all(np.isinf(lower[:12])) and np.all(np.isinf(upper[:12]))
    np.testing.assert_allclose(lower[12:18], -0.05)
    np.testing.assert_allclose(upper[18:], 1.15)
    np.testing.assert_allclose(lower[18:], 1 / 1.15)


def test_round_trip(rng):
    plan = build_scale_plan(Signal(rng.standard_normal((3, 100))), 2**9, 0.05, 1.15)
    warp = WarpParams(rng.uniform(-0.05, 0.05, (4, 3)), rng.uniform(0.9, 1.1, (4, 3)), 0.05, 1.15)
    back = unscale_params(*scale_params(warp, plan), plan)
    assert np.max(np.abs(back.tau - warp.tau)) < 1e-12
    assert np.max(np.abs(back.rho - warp.rho)) < 1e-12


def test_boxes_contain_scaled_warps(rng):
    plan = build_scale_plan(Signal(rng.standard_normal((2, 80))), 2**6, 0.1, 1.2)
    warp = WarpParams(rng.uniform(-0.1, 0.1, (3, 2)), np.exp(rng.uniform(-0.18, 0.18, (3, 2))), 0.1, 1.2)
    x = np.concatenate([np.zeros(12), *[a.ravel() for a in scale_params(warp, plan)]])
    lower, upper = plan.boxes(3, 2)
    assert np.all(lower <= x) and np.all(x <= upper)


def test_lambda2_range_checks(caplog):
    with pytest.raises(ValueError):
        build_scale_plan(None, 0, lambda1=np.ones(1))
    with caplog.at_level(logging.WARNING):
        build_scale_plan(None, 2**20, lambda1=np.ones(1))
    assert "outside" in caplog.text


def test_degenerate_bounds_keep_unit_scale():
    plan = build_scale_plan(None, 512, 0.0, 1.0, lambda1=np.array([5.0]))
    assert plan.tau_scale[0] == 1.0 and plan.rho_scale == 1.0
