"""Sampler correctness: analytic gradients, symplectic properties, chain
statistics against closed forms, and predictive density behaviour."""
import math

import numpy as np
import pytest
from scipy import stats

from hydrobid.pricepdf import (
    PriceModel,
    build_tree,
    fit_price_pdfs,
    leapfrog,
    log_posterior_and_grad,
    nuts_sample,
    posterior_predictive,
    predictive_grid,
)


def std_normal(p):
    return -0.5 * float(p @ p), -p


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    model = PriceModel(prior_loc_mean=1.0, prior_loc_std=5.0, prior_scale=3.0)
    data = rng.normal(2.0, 1.5, size=40)
    worst = 0.0
    for _ in range(25):
        p = rng.normal(size=2)
        _, g = log_posterior_and_grad(model, p, data)
        for k in range(2):
            e = np.zeros(2)
            e[k] = 1e-6
            hi, _ = log_posterior_and_grad(model, p + e, data)
            lo, _ = log_posterior_and_grad(model, p - e, data)
            fd = (hi - lo) / 2e-6
            worst = max(worst, abs(fd - g[k]) / (1.0 + abs(fd)))
    assert worst <= 1e-6


def test_gradient_zero_at_stationary_point():
    model = PriceModel(prior_loc_mean=0.0, prior_loc_std=1e6, prior_scale=1e6)
    data = np.array([-1.0, 1.0, -2.0, 2.0])
    sigma = float(np.std(data))
    _, g = log_posterior_and_grad(model, [0.0, math.log(sigma)], data)
    assert abs(g[0]) <= 1e-9
    # the likelihood part of the scale gradient vanishes at the MLE; what
    # remains is the +1 Jacobian of the log parameterization
    assert g[1] == pytest.approx(1.0, abs=1e-6)


def test_closed_form_gradient_single_datum():
    # flat priors, one observation: d logp / d mu = (x - mu) / sigma^2
    model = PriceModel(prior_loc_mean=0.0, prior_loc_std=1e9, prior_scale=1e9)
    x, mu, sigma = 3.0, 1.0, 2.0
    _, g = log_posterior_and_grad(model, [mu, math.log(sigma)], [x])
    assert g[0] == pytest.approx((x - mu) / sigma**2, rel=1e-9)


def test_lognormal_rejects_nonpositive_data():
    model = PriceModel(family="lognormal")
    with pytest.raises(ValueError, match="positive"):
        log_posterior_and_grad(model, [0.0, 0.0], [1.0, -2.0])


def test_leapfrog_drift_without_gradient():
    flat = lambda p: (0.0, np.zeros_like(p))
    q, r, _, _ = leapfrog(np.array([1.0, -1.0]), np.array([0.5, 2.0]), 0.3, flat)
    assert q == pytest.approx([1.15, -0.4])
    assert r == pytest.approx([0.5, 2.0])


def test_leapfrog_tracks_harmonic_rotation():
    # Hamiltonian flow of the standard normal rotates (q, r); one small step
    # matches the analytic rotation to third order
    eps = 1e-3
    q, r = np.array([1.0]), np.array([0.0])
    q1, r1, _, _ = leapfrog(q, r, eps, std_normal)
    assert abs(q1[0] - math.cos(eps)) <= 5 * eps**3
    assert abs(r1[0] + math.sin(eps)) <= 5 * eps**3


def test_leapfrog_reversibility_battery():
    rng = np.random.default_rng(4)
    for _ in range(30):
        q = rng.normal(size=3)
        r = rng.normal(size=3)
        q1, r1, _, _ = leapfrog(q, r, 0.17, std_normal)
        q2, r2, _, _ = leapfrog(q1, -r1, 0.17, std_normal)
        assert np.max(np.abs(q2 - q)) <= 1e-10
        assert np.max(np.abs(-r2 - r)) <= 1e-10


def test_build_tree_depth_zero_is_one_step():
    rng = np.random.default_rng(0)
    q = np.array([0.3])
    r = np.array([0.7])
    logp, _ = std_normal(q)
    joint0 = logp - 0.5 * float(r @ r)
    out = build_tree(q, r, None, joint0 - 0.1, 1, 0, 0.2, joint0, std_normal, rng)
    q1, r1, _, _ = leapfrog(q, r, 0.2, std_normal)
    assert out[0] == pytest.approx(q1)
    assert out[4] == pytest.approx(q1)
    assert out[6] == 1  # still going


def test_build_tree_flags_divergence_on_huge_step():
    rng = np.random.default_rng(0)
    sharp = lambda p: (-50.0 * float(p @ p), -100.0 * p)
    q, r = np.array([1.0]), np.array([0.1])
    logp, _ = sharp(q)
    joint0 = logp - 0.5 * float(r @ r)
    out = build_tree(q, r, None, joint0, 1, 3, 50.0, joint0, sharp, rng)
    assert out[9] is True or out[9] == 1  # divergent
    assert out[6] == 0  # subtree rejected


def test_uturn_terminates_doubling():
    rng = np.random.default_rng(3)
    s = nuts_sample(std_normal, None, draws=50, warmup=50, seed=5, initial=np.zeros(2))
    assert s.draws.shape == (50, 2)


def test_standard_normal_chain_statistics():
    s = nuts_sample(std_normal, None, draws=10000, warmup=500, seed=42, initial=np.zeros(3))
    assert abs(s.draws[:, 0].mean()) <= 0.05
    assert abs(s.draws[:, 0].var() - 1.0) <= 0.1
    ks = stats.kstest(s.draws[:, 0], "norm").statistic
    assert ks < 1.63 / math.sqrt(10000)  # 1% critical value


def test_determinism_given_seed():
    a = nuts_sample(std_normal, None, draws=300, warmup=100, seed=9, initial=np.zeros(2))
    b = nuts_sample(std_normal, None, draws=300, warmup=100, seed=9, initial=np.zeros(2))
    assert np.array_equal(a.draws, b.draws)
    assert a.step_size == b.step_size


def test_conjugate_posterior_recovery():
    rng = np.random.default_rng(8)
    data = rng.normal(10.0, 2.0, size=400)
    model = PriceModel.for_data(data)
    s = nuts_sample(model, data, draws=4000, warmup=1000, seed=3)
    sigma = data.std()
    prior_var = model.prior_loc_std**2
    post_var = 1.0 / (1.0 / prior_var + len(data) / sigma**2)
    post_mean = post_var * (model.prior_loc_mean / prior_var + data.sum() / sigma**2)
    mc_se = s.draws[:, 0].std() / math.sqrt(len(s.draws))
    assert abs(s.draws[:, 0].mean() - post_mean) <= 3 * mc_se + 1e-3


def test_invalid_sampler_arguments():
    with pytest.raises(ValueError):
        nuts_sample(std_normal, None, draws=0, warmup=10, initial=np.zeros(1))
    with pytest.raises(ValueError):
        nuts_sample(std_normal, None, draws=10, warmup=10, target_accept=1.5, initial=np.zeros(1))


def test_ppd_single_and_two_draw_averages():
    model = PriceModel()
    from hydrobid.pricepdf import PosteriorSamples

    one = PosteriorSamples(np.array([[0.0, 0.0]]), 1.0, 0.1, 0, 1, 0)
    grid = np.linspace(-5, 5, 201)
    d1 = posterior_predictive(one, model, grid)
    assert d1 == pytest.approx(stats.norm.pdf(grid), abs=1e-12)
    two = PosteriorSamples(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0, 0.1, 0, 1, 0)
    d2 = posterior_predictive(two, model, grid)
    expected = 0.5 * (stats.norm.pdf(grid) + stats.norm.pdf(grid, loc=1.0))
    assert d2 == pytest.approx(expected, abs=1e-12)


def test_ppd_matches_closed_form_predictive():
    # with a tight posterior the predictive is near the plug-in normal
    rng = np.random.default_rng(12)
    data = rng.normal(30.0, 4.0, size=3000)
    model = PriceModel.for_data(data)
    s = nuts_sample(model, data, draws=1500, warmup=400, seed=2)
    grid = predictive_grid(s, model)
    dens = posterior_predictive(s, model, grid)
    assert float(np.trapezoid(dens, grid)) == pytest.approx(1.0, abs=1e-3)
    ref = stats.norm.pdf(grid, loc=data.mean(), scale=data.std())
    assert np.max(np.abs(dens - ref)) <= 1e-2


def test_grid_validation():
    model = PriceModel()
    from hydrobid.pricepdf import PosteriorSamples

    s = PosteriorSamples(np.array([[0.0, 0.0]]), 1.0, 0.1, 0, 1, 0)
    with pytest.raises(ValueError):
        posterior_predictive(s, model, np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        posterior_predictive(s, PriceModel(family="lognormal"), np.array([-1.0, 1.0]))


def test_fit_price_pdfs_groups_and_thresholds():
    rng = np.random.default_rng(21)
    groups = {
        "high": rng.normal(40.0, 8.0, 4000),
        "low": rng.normal(20.0, 2.0, 4000),
    }
    out = fit_price_pdfs(groups, draws=800, warmup=300, seed=1, thresholds=(48.0, 12.0))
    for g in out.values():
        assert g.normalization == pytest.approx(1.0, abs=1e-3)
    hi, lo = out["high"], out["low"]
    assert hi.threshold_probs["P(>48.0)"] > lo.threshold_probs["P(>48.0)"]
    analytic = 1.0 - stats.norm.cdf(48.0, 40.0, 8.0)
    assert hi.threshold_probs["P(>48.0)"] == pytest.approx(analytic, abs=0.03)


def test_constant_group_concentrates():
    data = np.full(50, 25.0)
    out = fit_price_pdfs({"flat": data}, draws=500, warmup=200, seed=4)
    g = out["flat"]
    sigmas = np.exp(g.samples.draws[:, 1])
    floor = 1e-3 * (1.0 + 25.0)
    assert np.median(sigmas) <= 20 * floor  # no data spread beyond the prior floor


def test_small_group_rejected():
    with pytest.raises(ValueError, match="observations"):
        fit_price_pdfs({"tiny": np.arange(3.0)})
