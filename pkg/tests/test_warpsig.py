import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvwarp.warpsig import (MultiViewData, Signal, WarpParams, forward_warp,
                            interp_cyclic, inverse_warp, moving_average_cyclic,
                            smooth_envelope, warp_indices)


def test_signal_validation():
    with pytest.raises(ValueError):
        Signal(np.zeros((2, 7)), n_epochs=2)
    with pytest.raises(ValueError):
        Signal(np.array([[0.0, np.nan, 1.0]]))
    with pytest.raises(ValueError):
        Signal(np.zeros((1, 4)), sample_period=0)
    sig = Signal(np.zeros((2, 8)), 0.5, 2)
    assert sig.epoch_length == 4 and sig.n_components == 2


def test_warp_params_bounds():
    WarpParams(np.full((2, 2), 0.1), np.full((2, 2), 1.2), 0.1, 1.2)
    with pytest.raises(ValueError):
        WarpParams(np.full((2, 2), 0.2), np.ones((2, 2)), 0.1, 1.2)
    with pytest.raises(ValueError):
        WarpParams(np.zeros((2, 2)), np.full((2, 2), 0.5), 0.1, 1.2)
    with pytest.raises(ValueError):
        WarpParams(np.zeros((2, 2)), np.ones((2, 3)), 0.1, 1.2)


def test_multiview_shape_checks():
    X = MultiViewData(np.zeros((3, 2, 12)), 0.25, 3)
    assert (X.m, X.p, X.n_total, X.epoch_length) == (3, 2, 12, 4)
    assert X.epoch_duration == pytest.approx(1.0)
    with pytest.raises(ValueError):
        MultiViewData(np.zeros((2, 12)))


def test_identity_warp_is_exact(rng):
    sig = Signal(rng.standard_normal((3, 50)))
    np.testing.assert_array_equal(inverse_warp(sig, 0.0, 1.0).values, sig.values)
    np.testing.assert_array_equal(forward_warp(sig, 0.0, 1.0).values, sig.values)


def test_integer_delay_is_cyclic_shift(rng):
    x = rng.standard_normal((1, 40))
    sig = Signal(x)
    np.testing.assert_allclose(forward_warp(sig, 3.0, 1.0).values, np.roll(x, 3, axis=1))
    np.testing.assert_allclose(inverse_warp(sig, 3.0, 1.0).values, np.roll(x, -3, axis=1))


def test_half_sample_delay_averages_neighbours():
    x = np.arange(6, dtype=float)[None]
    out = inverse_warp(Signal(x), 0.5, 1.0).values[0]
    np.testing.assert_allclose(out[:5], x[0, :5] + 0.5)
    assert out[5] == pytest.approx(2.5)  # wraps: (5 + 0) / 2


def test_epochs_warp_independently(rng):
    a = rng.standard_normal((1, 16))
    b = rng.standard_normal((1, 16))
    both = inverse_warp(Signal(np.hstack([a, b]), n_epochs=2), 2.5, 1.1).values
    np.testing.assert_allclose(both[:, :16], inverse_warp(Signal(a), 2.5, 1.1).values)
    np.testing.assert_allclose(both[:, 16:], inverse_warp(Signal(b), 2.5, 1.1).values)


def test_sample_period_rescales_delay(rng):
    x = rng.standard_normal((2, 30))
    a = inverse_warp(Signal(x, sample_period=0.1), 0.25, 1.05).values
    b = inverse_warp(Signal(x), 2.5, 1.05).values
    np.testing.assert_allclose(a, b)


def test_warp_indices_are_inverse_maps():
    k = np.arange(20.0)
    fwd = warp_indices(0.3, 1.1, 20, inverse=False)
    inv = warp_indices(0.3, 1.1, 20, inverse=True)
    # forward maps output k to input rho (k - tau); inverse undoes it
    np.testing.assert_allclose(fwd / 1.1 + 0.3, k)
    np.testing.assert_allclose(1.1 * (inv - 0.3), k)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=30), st.floats(0, 200))
def test_interp_stays_within_range(vals, shift):
    v = np.array(vals)[None, :]
    pos = np.arange(v.shape[1]) + shift
    out = interp_cyclic(v, pos)
    assert out.min() >= v.min() - 1e-12 and out.max() <= v.max() + 1e-12


def test_round_trip_converges_on_smooth_signal():
    errs = []
    for n in (128, 256, 512):
        t = np.arange(n) / n
        x = np.sin(2 * np.pi * t) + 0.5 * np.cos(6 * np.pi * t)
        sig = Signal(x[None], sample_period=1.0 / n)
        back = inverse_warp(forward_warp(sig, 0.0123, 1.07), 0.0123, 1.07)
        errs.append(np.max(np.abs(back.values - sig.values)))
    assert errs[0] / errs[1] >= 3 and errs[1] / errs[2] >= 3


def test_moving_average_against_loop(rng):
    x = rng.standard_normal((2, 11))
    for l in (1, 2, 3, 4, 5):
        out = moving_average_cyclic(x, l)
        start = -((l - 1) // 2)
        ref = np.stack([[np.mean([x[c, (k + j) % 11] for j in range(start, start + l)])
                         for k in range(11)] for c in range(2)])
        np.testing.assert_allclose(out, ref)


@pytest.mark.parametrize("l", [1, 2, 3, 4, 7])
def test_moving_average_adjoint(rng, l):
    a = rng.standard_normal((3, 20))
    b = rng.standard_normal((3, 20))
    lhs = np.sum(moving_average_cyclic(a, l) * b)
    rhs = np.sum(a * moving_average_cyclic(b, l, adjoint=True))
    assert lhs == pytest.approx(rhs)


def test_moving_average_rejects_bad_length():
    with pytest.raises(ValueError):
        moving_average_cyclic(np.zeros((1, 5)), 6)
    with pytest.raises(ValueError):
        moving_average_cyclic(np.zeros((1, 5)), 0)


def test_smooth_envelope_is_nonnegative(rng):
    sig = Signal(rng.standard_normal((2, 40)), n_epochs=2)
    env = smooth_envelope(sig, 3)
    assert env.values.min() >= 0
    np.testing.assert_allclose(smooth_envelope(sig, 1).values, np.abs(sig.values))
