"""Synthetic data from the full generative model, with recorded truth.

Any quantity left as ``None`` in :class:`GenerationSpec` is drawn from the
prior (hyper-level draw); anything given is used as is.  Degenerate values
(zero variances, ``v = 0``) are allowed so that noiseless limits can be
generated exactly.

Volatilities follow the multiplicative beta-shock evolution that underlies
the discount variance model: with precision ``phi_t = 1 / variance_t``,
``phi_t = phi_{t-1} eta_t / lam`` and
``eta_t ~ Beta(lam k / 2, (1 - lam) k / 2)`` where ``k = 1 / (1 - lam)`` is
the steady-state degrees of freedom of the discount filter.  ``lam = 1``
gives a constant variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import (
    ConfigError,
    DimensionMismatchError,
    LatentStateSet,
    ModelConfig,
    ObservationMatrix,
    PriorSpec,
    default_priors,
    validate_config,
)
from .sampler import factor_signal
from .threshold import threshold_upper


@dataclass(frozen=True, eq=False)
class GenerationSpec:
    """Explicit truths for a simulation; ``None`` entries come from the prior.

    Shapes follow :class:`~ltfactor.model.LatentStateSet`, with a few
    conveniences: ``delta`` may be a constant p-vector, ``w`` a scalar,
    ``sigma2`` an m-vector of constant variances, and ``mu``/``phi``/``v``/``d``
    (and their ``_a`` twins) scalars.  ``x_init`` is ``x_{-n+1:0}`` in time
    order.
    """

    T: int
    delta: np.ndarray | None = None
    psi: np.ndarray | None = None
    w: np.ndarray | float | None = None
    sigma2: np.ndarray | None = None
    mu: np.ndarray | float | None = None
    phi: np.ndarray | float | None = None
    v: np.ndarray | float | None = None
    d: np.ndarray | float | None = None
    beta: np.ndarray | None = None
    mu_a: np.ndarray | float | None = None
    phi_a: np.ndarray | float | None = None
    v_a: np.ndarray | float | None = None
    d_a: np.ndarray | float | None = None
    alpha: np.ndarray | None = None
    x_init: np.ndarray | None = None
    y0: np.ndarray | None = None
    x_init_variance: float = 1.0
    y0_variance: float = 1.0
    max_abs: float = 1e8
    max_tries: int = 20


@dataclass(frozen=True, eq=False)
class TruthRecord:
    state: LatentStateSet
    data: ObservationMatrix
    regenerations: int = 0


class ExplosiveSimulation(ConfigError):
    """Every attempt produced a path beyond the overflow guard."""


def _psd_factor(C) -> np.ndarray:
    C = np.atleast_2d(np.asarray(C, float))
    vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _shaped(val, shape, name):
    arr = np.asarray(val, float)
    try:
        return np.broadcast_to(arr, shape).copy()
    except ValueError:
        raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected {shape}") from None


def simulate_volatility(n_series, T, lam, n0, s0, rng, init_precision=None) -> np.ndarray:
    """Variance paths of shape (n_series, T) from the beta-shock evolution."""
    s0 = np.broadcast_to(np.asarray(s0, float), (n_series,))
    if init_precision is None:
        prec = rng.gamma(n0 / 2.0, 1.0, n_series) / (n0 * s0 / 2.0)
    else:
        prec = np.broadcast_to(np.asarray(init_precision, float), (n_series,)).copy()
    if lam >= 1.0:
        return np.repeat((1.0 / prec)[:, None], T, axis=1)
    k = 1.0 / (1.0 - lam)
    eta = rng.beta(lam * k / 2.0, (1.0 - lam) * k / 2.0, (n_series, T))
    prec = prec[:, None] * np.cumprod(eta / lam, axis=1)
    return 1.0 / prec


def _ar1_paths(mu, phi, v, T, rng) -> np.ndarray:
    """Stationary AR(1) paths for t=0..T, shape mu.shape + (T+1,)."""
    u = v / np.sqrt(1.0 - phi**2)
    out = np.empty(mu.shape + (T + 1,))
    out[..., 0] = mu + u * rng.standard_normal(mu.shape)
    eps = rng.standard_normal(mu.shape + (T,))
    for t in range(1, T + 1):
        out[..., t] = mu + phi * (out[..., t - 1] - mu) + v * eps[..., t - 1]
    return out


def _lt_block(shape, T, prior: PriorSpec, K, spec_vals, rng):
    """Draw or take (mu, phi, v, d, coef) for a block of LT-AR(1) processes."""
    mu, phi, v, d, coef = spec_vals
    mu = rng.normal(prior.mu_normal.mean, np.sqrt(prior.mu_normal.variance), shape) if mu is None else _shaped(mu, shape, "mu")
    if phi is None:
        phi = 2.0 * rng.beta(prior.phi_beta.a, prior.phi_beta.b, shape) - 1.0
    phi = _shaped(phi, shape, "phi")
    if v is None:
        v = 1.0 / np.sqrt(rng.gamma(prior.v_prec.shape, 1.0 / prior.v_prec.rate, shape))
    v = _shaped(v, shape, "v")
    if d is None:
        d = rng.random(shape) * threshold_upper(mu, phi, v, K)
    d = _shaped(d, shape, "d")
    coef = _ar1_paths(mu, phi, v, T, rng) if coef is None else _shaped(coef, shape + (T + 1,), "coef")
    return mu, phi, v, d, coef


def simulate_observations(state: LatentStateSet, config: ModelConfig, T: int, rng) -> np.ndarray:
    """Draw ``y_{1:T}`` given every latent quantity; returns (T, m)."""
    m = config.m
    signal = factor_signal(state, T, config.r, config.s)
    noise = np.sqrt(state.sigma2.T) * rng.standard_normal((T, m))
    if state.alpha is None:
        return signal + noise
    a = state.a
    y = np.empty((T, m))
    prev = np.asarray(state.y0, float)
    for t in range(T):
        y[t] = a[..., t + 1] @ prev + signal[t] + noise[t]
        prev = y[t]
    return y


def _attempt(config: ModelConfig, prior: PriorSpec, spec: GenerationSpec, rng):
    T, m, p, r, n = spec.T, config.m, config.p, config.r, config.n_state
    vi = prior.volatility_init
    s0_w = 1.0 if vi.s0_w is None else vi.s0_w
    s0_sig = np.ones(m) if vi.s0_sigma is None else vi.s0_sigma

    if spec.psi is None:
        prec = np.atleast_2d(stats.wishart.rvs(df=prior.psi_prec.dof, scale=prior.psi_prec.scale, random_state=rng))
        psi = np.linalg.inv(prec)
    else:
        psi = _shaped(spec.psi, (p, p), "psi")

    if spec.delta is None:
        d0 = prior.delta0.mean + _psd_factor(prior.delta0.cov) @ rng.standard_normal(p)
        steps = rng.standard_normal((T, p)) @ _psd_factor(psi).T
        delta = np.vstack([d0, d0 + np.cumsum(steps, axis=0)])
    else:
        delta = _shaped(spec.delta, (T + 1, p), "delta")

    if spec.w is None:
        w = simulate_volatility(1, T, config.lambda_w, vi.n0, s0_w, rng)[0]
    else:
        w = _shaped(spec.w, (T,), "w")

    if spec.sigma2 is None:
        sigma2 = np.empty((m, T))
        sigma2[0] = 1.0 / rng.gamma(prior.sigma1_prec.shape, 1.0 / prior.sigma1_prec.rate)
        sigma2[1:] = simulate_volatility(m - 1, T, config.lambda_sigma, vi.n0, s0_sig[1:], rng)
    else:
        s2 = np.asarray(spec.sigma2, float)
        sigma2 = _shaped(s2[:, None] if s2.ndim == 1 else s2, (m, T), "sigma2")

    if spec.x_init is None:
        x_init = np.sqrt(spec.x_init_variance) * rng.standard_normal(n)
    else:
        x_init = _shaped(spec.x_init, (n,), "x_init")
    x = np.empty(T + n)
    x[:n] = x_init
    eps = np.sqrt(w) * rng.standard_normal(T)
    for t in range(1, T + 1):
        lags = x[n - 1 + t - np.arange(1, p + 1)]
        x[n - 1 + t] = delta[t] @ lags + eps[t - 1]

    mu, phi, v, d, beta = _lt_block(
        (m - 1, r), T, prior, config.K_beta_array(),
        (spec.mu, spec.phi, spec.v, spec.d, spec.beta), rng,
    )
    fields = dict(x=x, delta=delta, w=w, sigma2=sigma2, beta=beta, d=d, mu=mu, phi=phi, v=v, psi=psi)
    if config.plus:
        mu_a, phi_a, v_a, d_a, alpha = _lt_block(
            (m, m), T, prior, config.K_alpha_array(),
            (spec.mu_a, spec.phi_a, spec.v_a, spec.d_a, spec.alpha), rng,
        )
        if spec.y0 is None:
            y0 = np.sqrt(spec.y0_variance) * rng.standard_normal(m)
        else:
            y0 = _shaped(spec.y0, (m,), "y0")
        fields.update(alpha=alpha, mu_a=mu_a, phi_a=phi_a, v_a=v_a, d_a=d_a, y0=y0)
    state = LatentStateSet(**fields)
    y = simulate_observations(state, config, T, rng)
    ok = np.all(np.isfinite(x)) and np.all(np.abs(x) < spec.max_abs)
    ok = ok and np.all(np.isfinite(y)) and np.all(np.abs(y) < spec.max_abs)
    return state, y, ok


def simulate_dataset(config: ModelConfig, spec: GenerationSpec, rng=None, prior: PriorSpec | None = None,
                     channel_names=None) -> TruthRecord:
    """Generate data from Model M or M+ and keep the full truth.

    Attempts whose factor path or observations overflow ``spec.max_abs``
    are discarded and regenerated (the count is recorded); after
    ``spec.max_tries`` failures an :class:`ExplosiveSimulation` is raised.
    """
    prior = default_priors(config) if prior is None else prior
    validate_config(config, prior)
    if spec.T < 2:
        raise ConfigError("need T >= 2")
    rng = np.random.default_rng(config.mcmc.rng_seed) if rng is None else rng
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    for attempt in range(spec.max_tries):
        state, y, ok = _attempt(config, prior, spec, rng)
        if ok:
            names = channel_names or tuple(f"y{i + 1}" for i in range(config.m))
            return TruthRecord(state, ObservationMatrix(y, tuple(names)), attempt)
    raise ExplosiveSimulation(
        f"simulated paths exceeded |value| < {spec.max_abs} in all {spec.max_tries} attempts"
    )
