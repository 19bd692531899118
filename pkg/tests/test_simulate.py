import dataclasses

import numpy as np
import pytest

from ltfactor.model import McmcSettings, default_config, default_priors
from ltfactor.sampler import conditional_loglik, run_mcmc
from ltfactor.simulate import ExplosiveSimulation, GenerationSpec, simulate_dataset
from ltfactor.threshold import sparsity_probability
from oracles import ar_stationary_variance


def test_noiseless_limit_is_exact_recursion():
    config = default_config(m=3, p=2, r=2, s=2)
    T = 60
    beta = np.array([[0.7, -0.2], [0.1, 0.4]])
    spec = GenerationSpec(T=T, delta=(0.6, 0.2), psi=np.zeros((2, 2)), w=0.0, sigma2=np.zeros(3),
                          mu=beta, phi=0.5, v=0.0, d=0.0, x_init=(0.3, 1.0))
    tr = simulate_dataset(config, spec, 3)
    x = [0.3, 1.0]
    for _ in range(T):
        x.append(0.6 * x[-1] + 0.2 * x[-2])
    x = np.array(x)
    assert np.allclose(tr.state.x, x, atol=1e-12, rtol=0)
    y = tr.data.values
    xt, xl = x[2:], x[1:-1]  # x_t and x_{t-1}
    assert np.allclose(y[:, 0], xl, atol=1e-12, rtol=0)  # anchor at lag s-1 = 1
    for i in range(2):
        assert np.allclose(y[:, i + 1], beta[i, 0] * xt + beta[i, 1] * xl, atol=1e-12, rtol=0)


def test_long_run_variance_matches_yule_walker():
    config = default_config(m=2, p=2, r=1, s=1)
    phis, w = (0.5, 0.3), 2.0
    spec = GenerationSpec(T=200_000, delta=phis, psi=np.zeros((2, 2)), w=w, sigma2=np.ones(2),
                          mu=0.5, phi=0.5, v=0.1, d=0.0)
    x = simulate_dataset(config, spec, 5).state.x[1000:]
    assert np.var(x) == pytest.approx(ar_stationary_variance(phis, w), rel=0.05)


def test_active_fraction_matches_sparsity_formula_for_zero_mean():
    # the closed form holds for a zero-mean process; phi, v and d come from the prior
    config = default_config(m=201, p=1, r=1, s=1, K=3.0)
    fracs = []
    for seed in range(6):
        spec = GenerationSpec(T=100, delta=(0.5,), psi=np.zeros((1, 1)), w=1.0, sigma2=np.ones(201), mu=0.0)
        st = simulate_dataset(config, spec, seed).state
        fracs.append(st.s_indicators[..., 1:].mean(axis=-1).ravel())
    fracs = np.concatenate(fracs)
    se = fracs.std(ddof=1) / np.sqrt(fracs.size)
    assert abs(fracs.mean() - sparsity_probability(3.0)) < 3 * se


def test_seed_determinism_and_positive_volatilities():
    config = default_config(m=4, p=2, r=2, s=1, lambda_w=0.95, lambda_sigma=0.9, variant="M+")
    spec = GenerationSpec(T=80, delta=(0.4, 0.2), psi=1e-4 * np.eye(2))
    a = simulate_dataset(config, spec, 9)
    b = simulate_dataset(config, spec, 9)
    assert np.array_equal(a.data.values, b.data.values)
    for f in ("x", "beta", "alpha", "w", "sigma2", "d", "y0"):
        assert np.array_equal(getattr(a.state, f), getattr(b.state, f))
    assert np.all(a.state.w > 0) and np.all(a.state.sigma2 > 0)
    assert a.data.values.shape == (80, 4) and a.state.alpha.shape == (4, 4, 81)


def test_explosive_paths_are_regenerated_then_rejected():
    config = default_config(m=2, p=1, r=1, s=1)
    spec = GenerationSpec(T=50, delta=(1.5,), psi=np.zeros((1, 1)), w=1.0, max_abs=1e3, max_tries=3)
    with pytest.raises(ExplosiveSimulation):
        simulate_dataset(config, spec, 0)
    tame = dataclasses.replace(spec, delta=(0.5,))
    assert simulate_dataset(config, tame, 0).regenerations == 0


def test_truth_initialised_chain_fits_no_worse_than_truth():
    config = default_config(m=3, p=2, r=2, s=1, lambda_w=0.98, lambda_sigma=0.98,
                            mcmc=McmcSettings(burn_in=20, draws=60, thin=1, rng_seed=2))
    spec = GenerationSpec(T=100, delta=(0.9, -0.3), psi=1e-5 * np.eye(2), mu=np.array([[0.8, 0.0], [0.0, 0.6]]),
                          phi=0.9, v=0.05, d=0.1)
    tr = simulate_dataset(config, spec, 4)
    prior = default_priors(config)
    truth_ll = conditional_loglik(tr.state, tr.data.values, config)
    draws = run_mcmc(tr.data, config, prior, init=tr.state)
    ll = np.asarray(draws.loglik)
    assert ll.mean() > truth_ll - 3 * ll.std()
