import numpy as np
import pytest

from helpers import make_draws
from ltfactor.model import ConfigError, McmcSettings, default_config
from ltfactor.sampler import conditional_loglik, fitted_mean
from ltfactor.summaries import (
    MissingLikelihood, compute_dic, estimated_loadings, shrinkage_probabilities,
    summarize_trajectories,
)


def cfg(**kw):
    base = dict(m=3, p=2, r=2, s=1, mcmc=McmcSettings(burn_in=0, draws=1))
    base.update(kw)
    return default_config(**base)


def with_loglik(draws, values):
    ll = np.array([conditional_loglik(st, values, draws.config) for st in draws])
    return type(draws)(draws.config, draws.prior, draws.fields, ll, {}, draws.channel_names, draws.T)


def test_identical_draws_give_zero_width():
    draws = make_draws(cfg(), n_draws=5)
    x = draws.fields["x"]
    x[:] = x[0]
    s = summarize_trajectories(draws, "x", 0.95)
    assert np.array_equal(s.lower, s.upper)
    assert np.allclose(s.mean[0], x[0, 2:])
    assert s.times.tolist() == list(range(1, 21))


def test_linear_quantile_rule():
    draws = make_draws(cfg(), n_draws=100)
    draws.fields["w"][:] = np.arange(1.0, 101.0)[:, None]
    s = summarize_trajectories(draws, "w", 0.9)
    assert s.lower[0, 0] == pytest.approx(5.95) and s.upper[0, 0] == pytest.approx(95.05)


def test_selectors_and_shapes():
    config = cfg(variant="M+")
    draws = make_draws(config, n_draws=3)
    for which, n in [("x", 1), ("delta", 2), ("w", 1), ("sigma2", 3), ("beta", 4), ("b", 4),
                     ("alpha", 9), ("a", 9)]:
        s = summarize_trajectories(draws, which)
        assert s.mean.shape == (n, 20) and len(s.series) == n
    with pytest.raises(ConfigError):
        summarize_trajectories(draws, "gamma")
    with pytest.raises(ConfigError):
        summarize_trajectories(make_draws(cfg()), "alpha")
    with pytest.raises(ConfigError):
        summarize_trajectories(draws, "x", level=1.0)


def test_zero_thresholds_give_probability_one():
    draws = make_draws(cfg(), d=0.0, beta=np.random.default_rng(0).normal(size=(4, 2, 2, 21)))
    prob = shrinkage_probabilities(draws)["beta"]
    assert prob.shape == (2, 2, 20) and np.all(prob == 1.0)


def test_half_active_gives_one_half():
    draws = make_draws(cfg(), n_draws=4, d=0.5)
    draws.fields["beta"][:2] = 1.0
    draws.fields["beta"][2:] = 0.1
    prob = shrinkage_probabilities(draws)
    assert np.all(prob["beta"] == 0.5) and "alpha" not in prob
    assert np.all(estimated_loadings(draws) == 0.0)  # 0.5 is not > 0.5


def test_estimated_loading_rule():
    draws = make_draws(cfg(), n_draws=10, d=0.5, beta=0.7)
    assert np.allclose(estimated_loadings(draws), 0.7)
    draws.fields["beta"][:6] = 0.2  # Pr = 0.4
    assert np.all(estimated_loadings(draws) == 0.0)


def test_plus_shrinkage_includes_var_coefficients():
    draws = make_draws(cfg(variant="M+"), n_draws=2)
    prob = shrinkage_probabilities(draws)
    assert prob["alpha"].shape == (3, 3, 20) and np.all(prob["alpha"] == 0.0)
    assert np.all(estimated_loadings(draws, "alpha") == 0.0)


def test_dic_degenerate_draws():
    config = cfg()
    draws = make_draws(config, n_draws=4)
    draws.fields["x"][:] = draws.fields["x"][0]
    values = np.random.default_rng(1).normal(size=(20, 3))
    draws = with_loglik(draws, values)
    res = compute_dic(draws, values)
    assert res.p_d == pytest.approx(0.0, abs=1e-9)
    assert res.dic == pytest.approx(-2.0 * draws.loglik[0])


def test_dic_components():
    config = cfg()
    rng = np.random.default_rng(2)
    draws = make_draws(config, n_draws=6, sigma2=rng.uniform(0.5, 2.0, (6, 3, 20)))
    values = rng.normal(size=(20, 3))
    draws = with_loglik(draws, values)
    res = compute_dic(draws, values)
    mu = np.mean([fitted_mean(st, values, config) for st in draws], axis=0)
    var = draws.fields["sigma2"].mean(axis=0).T
    plug = np.sum(np.log(2 * np.pi * var) + (values - mu) ** 2 / var)
    assert res.plugin_deviance == pytest.approx(plug)
    assert res.mean_deviance == pytest.approx(-2 * draws.loglik.mean())
    assert res.dic == pytest.approx(2 * res.mean_deviance - plug)
    assert res.p_d == pytest.approx(res.mean_deviance - plug)


def test_dic_needs_loglik():
    draws = make_draws(cfg())
    draws.loglik[:] = np.nan
    with pytest.raises(MissingLikelihood):
        compute_dic(draws, np.zeros((20, 3)))
