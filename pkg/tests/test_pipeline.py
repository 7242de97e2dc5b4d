import numpy as np
import pytest

from mvwarp.bench import GenConfig, amari_distance, generate, score_fit
from mvwarp.pipeline import (METHODS, FitConfig, FitError, fit, fit_groupica, fit_mvica,
                             fit_mvicad2, fit_mvicad_delay, fit_permica)
from mvwarp.warpsig import MultiViewData


@pytest.fixture(scope="module")
def truth():
    return generate(GenConfig(m=4, p=3, n=300, n_concat=2, seed=2))


QUICK = FitConfig(max_iter=150)


def test_mvicad2_improves_on_its_start(truth):
    res = fit_mvicad2(truth.X, QUICK)
    assert res.loss_trace[-1] < res.loss_trace[0]
    assert np.all(np.diff(res.loss_trace) <= 1e-12)
    start = score_fit(res.init_W.matrices, res.init_warp.tau, res.init_warp.rho, truth)
    end = score_fit(res.W.matrices, res.warp.tau, res.warp.rho, truth)
    assert end["amari"] < start["amari"]
    assert res.aligned_sources.shape == truth.X.views.shape
    np.testing.assert_allclose(res.shared_sources, res.aligned_sources.mean(axis=0))


def test_warps_stay_in_bounds(truth):
    res = fit_mvicad2(truth.X, QUICK)
    tmax = QUICK.tau_max * truth.X.epoch_duration
    assert np.all(np.abs(res.warp.tau) <= tmax * (1 + 1e-9))
    assert np.all(res.warp.rho <= QUICK.rho_max * (1 + 1e-9))
    assert np.all(res.warp.rho >= 1 / QUICK.rho_max * (1 - 1e-9))


def test_delay_only_freezes_dilations(truth):
    res = fit_mvicad_delay(truth.X, FitConfig(method="mvicad_delay", max_iter=100))
    assert np.all(res.warp.rho == 1.0)
    assert np.any(res.warp.tau != 0.0)


@pytest.mark.parametrize("method", ["mvica", "permica", "groupica"])
def test_baselines_return_identity_warps(truth, method):
    res = fit(truth.X, FitConfig(method=method, max_iter=100))
    assert np.all(res.warp.tau == 0) and np.all(res.warp.rho == 1)
    assert res.method == method


def test_permica_is_matched_ica(truth):
    res = fit_permica(truth.X)
    assert res.report is None and len(res.loss_trace) == 1
    assert np.mean([amari_distance(res.W[i], truth.A[i]) for i in range(4)]) < 0.5


def test_groupica_recovers_noise_free_shared_sources():
    rng = np.random.default_rng(0)
    S = rng.laplace(size=(3, 3000))
    A = rng.standard_normal((4, 3, 3))
    X = MultiViewData(np.stack([a @ S for a in A]))
    res = fit_groupica(X)
    assert max(amari_distance(res.W[i], A[i]) for i in range(4)) < 0.05


def test_mvica_matches_noise_free_model():
    rng = np.random.default_rng(1)
    S = rng.laplace(size=(2, 2000))
    A = rng.standard_normal((3, 2, 2))
    X = MultiViewData(np.stack([a @ (S + 0.1 * rng.standard_normal(S.shape)) for a in A]))
    res = fit_mvica(X, FitConfig(method="mvica", max_iter=300))
    assert max(amari_distance(res.W[i], A[i]) for i in range(3)) < 0.05


def test_fit_is_deterministic(truth):
    a = fit(truth.X, FitConfig(max_iter=20))
    b = fit(truth.X, FitConfig(max_iter=20))
    assert np.array_equal(a.W.matrices, b.W.matrices)
    assert np.array_equal(a.warp.tau, b.warp.tau)


def test_config_and_data_validation():
    with pytest.raises(ValueError):
        FitConfig(method="nope")
    with pytest.raises(ValueError):
        FitConfig(rho_max=0.9)
    with pytest.raises(ValueError):
        fit(MultiViewData(np.ones((2, 3, 3))))
    assert set(METHODS) == {"mvicad2", "mvicad_delay", "mvica", "permica", "groupica"}


def test_rank_deficient_view_names_the_stage():
    rng = np.random.default_rng(0)
    V = rng.laplace(size=(3, 2, 200))
    V[1, 1] = V[1, 0]
    with pytest.raises(FitError) as info:
        fit(MultiViewData(V), FitConfig(method="permica"))
    assert info.value.stage == "initialize"
