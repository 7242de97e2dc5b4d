import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvwarp.bench import (BenchRecord, GenConfig, amari_distance, cell_gen_config,
                          d_delays, d_dilations, generate, match_sources,
                          random_guess_baseline, run_cell, run_sweep, score_fit,
                          summarize)
from mvwarp.pipeline import FitConfig
from mvwarp.warpsig import Signal, forward_warp


def scale_perm(rng, p):
    D = np.diag(rng.choice([-1, 1], p) * rng.uniform(0.1, 10, p))
    return D @ np.eye(p)[rng.permutation(p)]


def test_amari_zero_for_scale_permutations(rng):
    for _ in range(200):
        p = int(rng.integers(2, 7))
        A = rng.standard_normal((p, p))
        assert amari_distance(scale_perm(rng, p) @ np.linalg.inv(A), A) < 1e-12


def test_amari_invariant_to_left_signed_permutation(rng):
    for _ in range(50):
        p = int(rng.integers(2, 6))
        W, A = rng.standard_normal((2, p, p))
        Q = np.diag(rng.choice([-1.0, 1.0], p))[rng.permutation(p)]
        assert amari_distance(Q @ W, A) == pytest.approx(amari_distance(W, A))


def test_amari_positive_off_scale_permutations(rng):
    for _ in range(200):
        p = int(rng.integers(2, 6))
        A = rng.standard_normal((p, p))
        M = scale_perm(rng, p) + 0.05 * rng.standard_normal((p, p))
        assert amari_distance(M @ np.linalg.inv(A), A) > 0


def test_amari_range_and_hand_value():
    assert amari_distance(np.ones((2, 2)), np.eye(2)) == pytest.approx(1.0)
    P = np.array([[1.0, 0.5], [0.0, 1.0]])
    # rows: 0.5 + 0, columns: 0 + 0.5 -> 1 / (2 * 2 * 1)
    assert amari_distance(P, np.eye(2)) == pytest.approx(0.25)


def test_d_delays_examples():
    tau = np.array([[0.01], [-0.01]])
    assert d_delays(tau, tau, 0.05) == 0
    assert d_delays(tau, tau + 0.02, 0.05) == pytest.approx(0.0)
    assert d_delays(tau, 2 * tau, 0.05) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        d_delays(tau, tau + 0.1, 0.05)


def test_d_dilations_hand_value():
    true = np.array([[1.0], [1.15]])
    est = np.array([[1.15], [1.0]])
    lo, hi = 1 / 1.15, 1.15
    u = (true - lo) / (hi - lo) - 0.5
    gap = np.abs(u - u.mean()) * 2  # est is true mirrored around its mean
    assert d_dilations(true, est, 1.15) == pytest.approx(gap.mean())
    assert d_dilations(true, true, 1.15) == 0
    with pytest.raises(ValueError):
        d_dilations(true, est * 1.2, 1.15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.2, 0.2))
def test_warp_metrics_ignore_per_source_offsets(seed, shift):
    rng = np.random.default_rng(seed)
    t = rng.uniform(-0.02, 0.02, (4, 3))
    e = rng.uniform(-0.02, 0.02, (4, 3))
    assert d_delays(t, e + 0.025 * shift * 4, 0.05) == pytest.approx(d_delays(t, e, 0.05))
    r = rng.uniform(0.95, 1.05, (4, 3))
    q = rng.uniform(0.95, 1.05, (4, 3))
    assert d_dilations(r, q + shift / 4, 1.15) == pytest.approx(d_dilations(r, q, 1.15))


def test_random_guess_baseline_analytic():
    # centered uniform differences; for m large the mean |U - V| over [-1/2, 1/2] is 1/3
    dd, dr = random_guess_baseline(200, 3, 0.05, 1.15, n_draws=50)
    assert dd == pytest.approx(1 / 3, rel=0.02)
    assert dr == pytest.approx(1 / 3, rel=0.02)


def test_generate_shapes_and_exact_model():
    cfg = GenConfig(m=3, p=2, n=120, n_concat=3, seed=4)
    truth = generate(cfg)
    assert truth.X.views.shape == (3, 2, 360)
    np.testing.assert_allclose(truth.S.std(axis=1), 1.0)
    src = Signal(truth.S, 1.0 / cfg.n, cfg.n_concat)
    for i in range(3):
        rebuilt = truth.A[i] @ (forward_warp(src, truth.tau_true[i], truth.rho_true[i]).values + truth.noise[i])
        assert np.array_equal(rebuilt, truth.X.views[i])
    assert np.all(np.abs(truth.tau_true) <= 0.05)
    assert np.all((truth.rho_true >= 1 / 1.15) & (truth.rho_true <= 1.15))


def test_generate_is_reproducible():
    a = generate(GenConfig(m=2, p=2, n=60, n_concat=1, seed=9))
    b = generate(GenConfig(m=2, p=2, n=60, n_concat=1, seed=9))
    assert np.array_equal(a.X.views, b.X.views)
    c = generate(GenConfig(m=2, p=2, n=60, n_concat=1, seed=10))
    assert not np.array_equal(a.X.views, c.X.views)


def test_oracle_scores_are_zero():
    truth = generate(GenConfig(m=3, p=3, n=100, n_concat=1, seed=1))
    W = np.linalg.inv(truth.A)
    sc = score_fit(W, truth.tau_true, truth.rho_true, truth)
    assert sc["amari"] < 1e-12 and sc["d_delays"] == 0 and sc["d_dilations"] == 0
    # a consistent permutation of the estimate changes nothing after matching
    perm = np.array([2, 0, 1])
    sc = score_fit(W[:, perm], truth.tau_true[:, perm], truth.rho_true[:, perm], truth)
    assert sc["amari"] < 1e-12 and sc["d_delays"] < 1e-15 and sc["d_dilations"] < 1e-15
    assert sc["permutation"] == perm.tolist()


def test_match_sources_pools_views(rng):
    A = rng.standard_normal((3, 4, 4))
    perm = np.array([1, 3, 0, 2])
    W = np.stack([np.linalg.inv(a)[perm] for a in A])
    assert match_sources(W, A).tolist() == perm.tolist()


FAST = FitConfig(max_iter=30)
TINY = GenConfig(m=3, p=2, n=120, n_concat=1)


def test_sweep_record_count_and_order():
    recs = run_sweep("subjects", [2, 3], ["permica", "groupica"], 2, TINY, FAST)
    assert len(recs) == 2 * 2 * 2
    assert [(r.value, r.seed, r.method) for r in recs[:4]] == [
        (2, 0, "permica"), (2, 0, "groupica"), (2, 1, "permica"), (2, 1, "groupica")]
    assert all(r.status == "ok" for r in recs)


def test_single_cell_equals_direct_fit():
    from dataclasses import replace

    from mvwarp.pipeline import fit

    (rec,) = run_sweep("noise", [0.5], ["mvicad2"], 1, TINY, FAST)
    gen = cell_gen_config(TINY, "noise", 0.5, 0, 0)
    truth = generate(gen)
    res = fit(truth.X, replace(FAST, tau_max=gen.tau_max, rho_max=gen.rho_max))
    sc = score_fit(res.W.matrices, res.warp.tau, res.warp.rho, truth)
    assert rec.amari == sc["amari"] and rec.d_delays == sc["d_delays"]


def test_parallel_matches_serial():
    kw = dict(axis="warp", values=[(0.02, 1.05)], methods=["permica", "mvica"], n_seeds=2,
              base_gen=TINY, fit_cfg=FAST)
    serial = run_sweep(**kw)
    parallel = run_sweep(**kw, jobs=2)
    assert [r.to_row() for r in serial] == [
        {**r.to_row(), "wall_time": s.wall_time} for r, s in zip(parallel, serial)]


def test_failures_are_recorded_and_summarized():
    recs = run_cell(GenConfig(m=2, p=4, n=3, n_concat=1), FAST, "subjects", 2, 0, 0, ["groupica"])
    assert recs[0].status == "failed" and recs[0].error
    ok = BenchRecord("noise", 1.0, "mvica", 0, amari=0.2)
    rows = summarize(recs + [ok, BenchRecord("noise", 1.0, "mvica", 1, amari=0.4)])
    by = {(r["value"], r["method"]): r for r in rows}
    assert by[("1", "mvica")]["median_amari"] == pytest.approx(0.3)
    assert by[("2", "groupica")]["n_failed"] == 1


def test_cell_config_axes():
    cfg = cell_gen_config(TINY, "warp", (0.03, 1.1), 5, 2)
    assert (cfg.tau_max, cfg.rho_max) == (0.03, 1.1)
    assert cell_gen_config(TINY, "concats", 4, 5, 2).n_concat == 4
    with pytest.raises(ValueError):
        cell_gen_config(TINY, "bogus", 1, 0, 0)
