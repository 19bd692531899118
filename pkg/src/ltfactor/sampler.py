"""Metropolis-within-Gibbs sampler for Model M and Model M+.

One sweep visits, in order: the latent factor path ``x`` (companion-form
FFBS), the TVAR coefficients ``delta`` (FFBS), the volatilities (discount
FFBS for ``w`` and ``sigma_i``, conjugate update for the constant
``sigma_1``), the thresholded loadings with their thresholds and AR(1)
hyperparameters, ``Psi`` (Wishart), and for Model M+ the thresholded
TV-VAR(1) coefficients and the pre-sample observation ``y0``.

Each block draws from its own random substream, spawned deterministically
from the run seed, so switching a block off leaves the other blocks' random
numbers untouched.  Per-channel work is vectorised across channels rather
than threaded.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dlm import DlmSpec, discount_variance_ffbs, ffbs_sample, kalman_smooth_moments
from .model import (
    ConfigError,
    LatentStateSet,
    ModelConfig,
    NumericalFailure,
    ObservationMatrix,
    PosteriorDraws,
    PriorSpec,
    VolatilityInit,
    check_state,
    default_priors,
    state_shapes,
    validate_config,
)
from .threshold import (
    AcceptCounter,
    sample_lt_hyperparams,
    sample_lt_trajectory_point,
    sample_threshold,
)

BLOCKS = ("x", "delta", "volatility", "loadings", "psi", "tvvar", "y0", "init")


class SamplerFailure(NumericalFailure):
    """A kernel failure raised inside a sweep; carries the sweep index."""

    def __init__(self, message: str, sweep: int, t: int | None = None):
        super().__init__(f"sweep {sweep}: {message}", t=t)
        self.sweep = sweep


@dataclass(frozen=True)
class SweepPlan:
    """Which blocks run in a sweep.  Disabled blocks keep their current values.

    ``lt_hyper`` and ``lt_thresholds`` switch off the AR(1) hyperparameter and
    threshold moves inside both the loadings and the TV-VAR blocks.
    """

    x: bool = True
    delta: bool = True
    volatility: bool = True
    loadings: bool = True
    psi: bool = True
    tvvar: bool = True
    y0: bool = True
    lt_hyper: bool = True
    lt_thresholds: bool = True

    def steps(self, plus: bool) -> tuple[str, ...]:
        order = ["x", "delta", "volatility", "loadings", "psi"]
        if plus:
            order += ["tvvar", "y0"]
        return tuple(s for s in order if getattr(self, s))


# ---------------------------------------------------------------------------
# design matrices and fitted values
# ---------------------------------------------------------------------------


def factor_regressors(x, r: int, T: int) -> np.ndarray:
    """``f_t = (x_t, ..., x_{t-r+1})`` for t=1..T as a (T, r) array."""
    x = np.asarray(x)
    n = x.shape[0] - T
    idx = n - 1 + np.arange(1, T + 1)[:, None] - np.arange(r)[None, :]
    return x[idx]


def tvar_regressors(x, p: int, T: int) -> np.ndarray:
    """``(x_{t-1}, ..., x_{t-p})`` for t=1..T as a (T, p) array."""
    x = np.asarray(x)
    n = x.shape[0] - T
    idx = n - 1 + np.arange(1, T + 1)[:, None] - np.arange(1, p + 1)[None, :]
    return x[idx]


def lagged_observations(values, y0) -> np.ndarray:
    """Rows ``y_{t-1}`` for t=1..T, with ``y0`` in the first row."""
    values = np.asarray(values, float)
    return np.vstack([np.asarray(y0, float)[None, :], values[:-1]])


def var_offset(state: LatentStateSet, values) -> np.ndarray:
    """``A_t y_{t-1}`` as a (T, m) array (zeros for Model M)."""
    T, m = np.shape(values)
    if state.alpha is None:
        return np.zeros((T, m))
    ylag = lagged_observations(values, state.y0)
    return np.einsum("ijt,tj->ti", state.a[..., 1:], ylag)


def factor_signal(state: LatentStateSet, T: int, r: int, s: int) -> np.ndarray:
    """``B_t f_t`` as a (T, m) array."""
    F = factor_regressors(state.x, r, T)
    other = np.einsum("irt,tr->ti", state.b[..., 1:], F)
    return np.hstack([F[:, s - 1 : s], other])


def fitted_mean(state: LatentStateSet, values, config: ModelConfig) -> np.ndarray:
    T = np.shape(values)[0]
    return var_offset(state, values) + factor_signal(state, T, config.r, config.s)


def conditional_loglik(state: LatentStateSet, values, config: ModelConfig) -> float:
    """``log p(y_{1:T} | all latent quantities)``."""
    values = np.asarray(values, float)
    resid = values - fitted_mean(state, values, config)
    s2 = state.sigma2.T
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * s2) + resid**2 / s2))


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, ObservationMatrix) else np.asarray(data, float)


# ---------------------------------------------------------------------------
# Gibbs blocks
# ---------------------------------------------------------------------------


def latent_x_spec(state: LatentStateSet, values, config: ModelConfig, prior: PriorSpec) -> DlmSpec:
    """Companion-form DLM for the factor path given everything else.

    State ``z_t = (x_t, ..., x_{t-n+1})`` with ``n = max(p, r)``; channel 1
    reads ``x_{t-s+1}`` with unit weight and channel i>1 reads
    ``sum_k b_{ikt} x_{t-k+1}``.
    """
    T, m = values.shape
    p, r, s, n = config.p, config.r, config.s, config.n_state
    F = np.zeros((T, m, n))
    F[:, 0, s - 1] = 1.0
    F[:, 1:, :r] = np.moveaxis(state.b[..., 1:], -1, 0)
    G = np.zeros((T, n, n))
    G[:, 0, :p] = state.delta[1:]
    if n > 1:
        G[:, np.arange(1, n), np.arange(n - 1)] = 1.0
    W = np.zeros((T, n, n))
    W[:, 0, 0] = state.w
    V = np.zeros((T, m, m))
    V[:, np.arange(m), np.arange(m)] = state.sigma2.T
    offset = var_offset(state, values) if config.plus else None
    return DlmSpec.build(F, V, G, W, np.zeros(n), prior.x0_variance * np.eye(n), T=T, offset=offset)


def sample_latent_x(state, data, config, prior, rng) -> np.ndarray:
    """FFBS draw of ``x`` including the pre-sample values; returns length T+n."""
    values = _values(data)
    z = ffbs_sample(latent_x_spec(state, values, config, prior), values, rng)
    return np.concatenate([z[0, ::-1], z[1:, 0]])


def tvar_spec(state: LatentStateSet, config: ModelConfig, prior: PriorSpec, T: int) -> DlmSpec:
    """Dynamic regression of ``x_t`` on its p lags with random-walk coefficients."""
    X = tvar_regressors(state.x, config.p, T)
    return DlmSpec.build(
        X[:, None, :], state.w, np.eye(config.p), state.psi,
        prior.delta0.mean, prior.delta0.cov, T=T,
    )


def sample_tvar_coefficients(state, config, prior, rng, T: int | None = None) -> np.ndarray:
    """FFBS draw of ``delta_{0:T}``, shape (T+1, p)."""
    T = state.w.shape[0] if T is None else T
    n = config.n_state
    target = state.x[n:]
    return ffbs_sample(tvar_spec(state, config, prior, T), target, rng)


def tvar_residuals(state: LatentStateSet, config: ModelConfig) -> np.ndarray:
    T = state.w.shape[0]
    X = tvar_regressors(state.x, config.p, T)
    return state.x[config.n_state :] - np.sum(X * state.delta[1:], axis=1)


def sigma1_conditional(resid, prior: PriorSpec) -> tuple[float, float]:
    """Gamma (shape, rate) of ``sigma_1^{-2}`` given channel-1 residuals."""
    resid = np.asarray(resid, float)
    return (
        prior.sigma1_prec.shape + resid.size / 2.0,
        prior.sigma1_prec.rate + float(np.sum(resid**2)) / 2.0,
    )


def sample_volatilities(state, data, config, prior, rng) -> tuple[np.ndarray, np.ndarray]:
    """Return new ``(w, sigma2)``."""
    values = _values(data)
    T, m = values.shape
    vi = prior.volatility_init
    w = discount_variance_ffbs(tvar_residuals(state, config), config.lambda_w, vi.n0, vi.s0_w, rng).variances
    resid = values - fitted_mean(state, values, config)
    sigma2 = np.empty((m, T))
    shape, rate = sigma1_conditional(resid[:, 0], prior)
    sigma2[0] = rate / rng.gamma(shape)
    sigma2[1:] = discount_variance_ffbs(
        resid[:, 1:].T, config.lambda_sigma, vi.n0, vi.s0_sigma[1:], rng
    ).variances
    return w, sigma2


def _lt_priors(prior: PriorSpec):
    return (prior.mu_normal, prior.phi_beta, prior.v_prec)


def _lt_update(coef, mu, phi, v, d, K, target, regressor, noise_var, prior, rng, counters, prefix,
               phi_scale, update_hyper, update_thresholds):
    """One pass of the LT-AR(1) moves for a batch of rows sharing a regressor."""
    T = target.shape[-1]
    for times in (np.arange(0, T + 1, 2), np.arange(1, T + 1, 2)):
        coef = sample_lt_trajectory_point(
            coef, mu, phi, v, d, target, regressor, noise_var, times, rng, counters[prefix + "point"]
        )
    if update_hyper:
        mu, phi, v, acc = sample_lt_hyperparams(coef, mu, phi, v, d, K, _lt_priors(prior), rng, phi_scale)
        for name, a in acc.items():
            counters[prefix + name].add(int(a.sum()), int(a.size))
    if update_thresholds:
        d = sample_threshold(
            coef, mu, phi, v, d, K, target, regressor, noise_var, rng, counters[prefix + "threshold"]
        )
    return coef, mu, phi, v, d


def _new_counters() -> dict[str, AcceptCounter]:
    names = [f"{fam}{k}" for fam in ("beta_", "alpha_") for k in ("point", "threshold", "mu", "phi", "v")]
    return {n: AcceptCounter() for n in names}


def sample_loadings_block(state, data, config, prior, rng, counters=None, phi_scale=1.0,
                          update_hyper=True, update_thresholds=True) -> dict[str, np.ndarray]:
    """Update ``beta``, its thresholds ``d`` and hyperparameters for channels 2..m.

    The r loadings of a channel at one time move jointly; even times are
    updated first, then odd times.  Returns the changed state fields.
    """
    values = _values(data)
    T = values.shape[0]
    counters = _new_counters() if counters is None else counters
    target = (values - var_offset(state, values))[:, 1:].T
    F = factor_regressors(state.x, config.r, T)
    beta, mu, phi, v, d = _lt_update(
        state.beta, state.mu, state.phi, state.v, state.d, config.K_beta_array(),
        target, F, state.sigma2[1:], prior, rng, counters, "beta_",
        phi_scale, update_hyper, update_thresholds,
    )
    return {"beta": beta, "mu": mu, "phi": phi, "v": v, "d": d}


def psi_conditional(delta, prior: PriorSpec) -> tuple[float, np.ndarray]:
    """Wishart (dof, scale) of ``Psi^{-1}`` given ``delta_{0:T}``."""
    inc = np.diff(np.asarray(delta, float), axis=0)
    S = inc.T @ inc
    D_inv = np.linalg.inv(prior.psi_prec.scale)
    scale = np.linalg.inv(D_inv + S)
    return prior.psi_prec.dof + inc.shape[0], 0.5 * (scale + scale.T)


def sample_psi(delta, prior: PriorSpec, rng) -> np.ndarray:
    dof, scale = psi_conditional(delta, prior)
    try:
        prec = stats.wishart.rvs(df=dof, scale=scale, random_state=rng)
        prec = np.atleast_2d(prec)
        psi = np.linalg.inv(prec)
        np.linalg.cholesky(psi)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"Psi update failed: {exc}") from None
    return 0.5 * (psi + psi.T)


def sample_tvvar_block(state, data, config, prior, rng, counters=None, phi_scale=1.0,
                       update_hyper=True, update_thresholds=True) -> dict[str, np.ndarray]:
    """Update the thresholded TV-VAR(1) coefficients of Model M+ (all m rows)."""
    values = _values(data)
    T = values.shape[0]
    counters = _new_counters() if counters is None else counters
    target = (values - factor_signal(state, T, config.r, config.s)).T
    ylag = lagged_observations(values, state.y0)
    alpha, mu, phi, v, d = _lt_update(
        state.alpha, state.mu_a, state.phi_a, state.v_a, state.d_a, config.K_alpha_array(),
        target, ylag, state.sigma2, prior, rng, counters, "alpha_",
        phi_scale, update_hyper, update_thresholds,
    )
    return {"alpha": alpha, "mu_a": mu, "phi_a": phi, "v_a": v, "d_a": d}


def y0_conditional(state, data, config, prior) -> tuple[np.ndarray, np.ndarray]:
    """Normal mean and covariance of ``y0`` under its zero-mean diffuse prior."""
    values = _values(data)
    m = values.shape[1]
    A1 = state.a[..., 1]
    resid1 = values[0] - factor_signal(state, values.shape[0], config.r, config.s)[0]
    prec_obs = 1.0 / state.sigma2[:, 0]
    P = np.eye(m) / prior.y0_variance + A1.T @ (prec_obs[:, None] * A1)
    cov = np.linalg.inv(P)
    cov = 0.5 * (cov + cov.T)
    return cov @ (A1.T @ (prec_obs * resid1)), cov


def sample_y0(state, data, config, prior, rng) -> np.ndarray:
    mean, cov = y0_conditional(state, data, config, prior)
    L = np.linalg.cholesky(cov)
    return mean + L @ rng.standard_normal(mean.shape[0])


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def _ols(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, y - X @ coef


def _moment_fits(Mz, Cz, values, config: ModelConfig, lagged=None):
    """Constant TVAR, loading and (with ``lagged``) VAR fits from moments of ``z_t``.

    ``z_t = (x_t, ..., x_{t-max(p,r)})`` for t=1..T with means ``Mz`` (T, n+1)
    and covariances ``Cz``; with ``Cz = 0`` these are plain OLS fits, otherwise
    EM updates.  ``lagged`` holds the rows ``y_{t-1}``; each channel is then
    regressed on its factor terms and ``y_{t-1}`` jointly.  Returns
    ``(coef, w, beta, var, A)`` with ``var[0]`` left for the caller.
    """
    T, m = values.shape
    p, r, s = config.p, config.r, config.s
    E = Cz.sum(axis=0) + Mz.T @ Mz
    Sxx, Sxy = E[1 : p + 1, 1 : p + 1], E[1 : p + 1, 0]
    coef = np.linalg.lstsq(Sxx, Sxy, rcond=None)[0]
    if np.any(np.abs(np.roots(np.r_[1.0, -coef])) >= 1):
        coef = np.zeros(p)
    w = (E[0, 0] - 2.0 * coef @ Sxy + coef @ Sxx @ coef) / T
    L = np.zeros((T, 0)) if lagged is None else lagged
    q = L.shape[1]
    gram = np.block([[E[:r, :r], Mz[:, :r].T @ L], [L.T @ Mz[:, :r], L.T @ L]])
    rhs = np.vstack([Mz[:, :r].T @ values[:, 1:], L.T @ values[:, 1:]])
    sol = np.linalg.lstsq(gram, rhs, rcond=None)[0].T  # (m-1, r+q)
    var = np.ones(m)
    var[1:] = (np.sum(values[:, 1:] ** 2, axis=0) - 2.0 * np.sum(sol * rhs.T, axis=1)
               + np.einsum("ik,kl,il->i", sol, gram, sol)) / T
    A = None
    if q:
        a1 = np.linalg.lstsq(L, values[:, 0] - Mz[:, s - 1], rcond=None)[0]
        A = np.vstack([a1, sol[:, r:]])
        if np.max(np.abs(np.linalg.eigvals(A))) >= 1:
            A = np.zeros((m, m))
    return coef, max(float(w), 1e-12), sol[:, :r], np.maximum(var, 1e-12), A


def _refine_spec(coef, w, beta, var, config: ModelConfig, T: int, x0_var: float, offset=None) -> DlmSpec:
    """Constant-parameter companion DLM for ``z_t`` with one spare lag."""
    p, r, s = config.p, config.r, config.s
    n1 = config.n_state + 1
    m = beta.shape[0] + 1
    F = np.zeros((m, n1))
    F[0, s - 1] = 1.0
    F[1:, :r] = beta
    G = np.zeros((n1, n1))
    G[0, :p] = coef
    G[np.arange(1, n1), np.arange(n1 - 1)] = 1.0
    W = np.zeros((n1, n1))
    W[0, 0] = w
    return DlmSpec.build(F, np.diag(var), G, W, np.zeros(n1), x0_var * np.eye(n1), T=T, offset=offset)


def initial_state(data, config: ModelConfig, prior: PriorSpec, refine: int = 50,
                  fit_var: bool = True) -> LatentStateSet:
    """Data-scaled starting point.

    ``x`` starts as channel 1 shifted back by the anchor lag, with OLS fits
    of a constant AR(p) and constant loadings (plus a constant ``A`` for
    Model M+, with ``y_0 = y_1``).  ``refine`` EM passes of the
    constant-parameter model then update the fits and replace ``x`` by its
    smoothed mean (``sigma_1^2`` stays at its prior mean).  Without them the
    noise in channel 1 attenuates every loading, and the chain needs many
    sweeps to walk back along the weakly identified scale of ``x``; in
    Model M+ the factor would also soak up the lagged-observation terms.
    Loadings and ``A`` are constant in time with zero thresholds, and
    ``Psi`` is the prior mean of ``Psi^{-1}`` inverted.  ``fit_var=False``
    starts Model M+ at ``A = 0`` with the Model M fits, so that a run with
    the VAR block switched off matches Model M exactly.
    """
    values = _values(data)
    T, m = values.shape
    p, r, s, n = config.p, config.r, config.s, config.n_state
    # y_{1,t} ~ x_{t-s+1}, so x_j ~ y_{1,j+s-1} for j = 2-s .. T-s+1
    lead = values[:, 0]
    j = np.arange(-n, T + 1)
    xx = lead[np.clip(j + s - 1, 1, T) - 1]  # x_{-n} .. x_T
    Mz = np.stack([xx[n - k : n - k + T + 1] for k in range(n + 1)], axis=1)
    Cz = np.zeros((T + 1, n + 1, n + 1))
    sigma1 = prior.sigma1_prec.rate / prior.sigma1_prec.shape
    x0_var = prior.x0_variance if prior.x0_variance is not None else 1e6 * max(float(np.var(lead)), 1e-12)
    lagged = lagged_observations(values, values[0]) if config.plus and fit_var else None
    fits = _moment_fits(Mz[1:], Cz[1:], values, config, lagged)
    for _ in range(refine):
        coef, w0, b0, var, A = fits
        offset = None if A is None else lagged @ A.T
        spec = _refine_spec(coef, w0, b0, np.r_[sigma1, var[1:]], config, T, x0_var, offset)
        try:
            M1, C1 = kalman_smooth_moments(spec, values)
        except NumericalFailure:
            break
        if not (np.all(np.isfinite(M1)) and np.all(np.isfinite(C1))):
            break
        Mz, Cz = M1, C1
        fits = _moment_fits(Mz[1:], Cz[1:], values, config, lagged)
    coef, w0, b0, var, A0 = fits
    A0 = np.zeros((m, m)) if A0 is None else A0
    x = np.concatenate([Mz[0, :n][::-1], Mz[1:, 0]])
    delta = np.tile(coef, (T + 1, 1))
    w = np.full(T, w0)
    beta = np.repeat(b0[..., None], T + 1, -1)
    sigma2 = np.repeat(np.r_[sigma1, var[1:]][:, None], T, 1)
    phi0 = 2.0 * prior.phi_beta.a / (prior.phi_beta.a + prior.phi_beta.b) - 1.0
    v0 = np.sqrt(prior.v_prec.rate / prior.v_prec.shape)
    fields = dict(
        x=x, delta=delta, w=w, sigma2=sigma2, beta=beta,
        d=np.zeros((m - 1, r)),
        mu=beta[..., 0].copy(),
        phi=np.full((m - 1, r), phi0),
        v=np.full((m - 1, r), v0),
        psi=np.linalg.inv(prior.psi_prec.dof * prior.psi_prec.scale),
    )
    if config.plus:
        fields.update(
            alpha=np.repeat(A0[..., None], T + 1, -1),
            d_a=np.zeros((m, m)),
            mu_a=A0.copy(),
            phi_a=np.full((m, m), phi0),
            v_a=np.full((m, m), v0),
            y0=values[0].copy(),
        )
    return LatentStateSet(**fields)


def resolve_prior(prior: PriorSpec, data, config: ModelConfig, state: LatentStateSet) -> PriorSpec:
    """Fill data-dependent prior defaults; the result is fixed for the whole run.

    Diffuse initial-state variances are 1e6 times the data scale and the
    discount recursions start from ``n0`` and the variance of the first 20
    residuals of the initial state.
    """
    values = _values(data)
    vi = prior.volatility_init
    changes = {}
    if prior.x0_variance is None:
        changes["x0_variance"] = 1e6 * max(float(np.var(values[:, 0])), 1e-12)
    if prior.y0_variance is None:
        changes["y0_variance"] = 1e6 * max(float(np.mean(np.var(values, axis=0))), 1e-12)
    s0_w, s0_sigma = vi.s0_w, vi.s0_sigma
    if s0_w is None:
        e = tvar_residuals(state, config)[:20]
        s0_w = max(float(np.var(e)), 1e-12)
    if s0_sigma is None:
        resid = (values - fitted_mean(state, values, config))[:20]
        s0_sigma = np.maximum(np.var(resid, axis=0), 1e-12)
        s0_sigma[0] = 1.0  # unused: channel 1 has a static variance
    changes["volatility_init"] = VolatilityInit(vi.n0, s0_w, s0_sigma)
    return dataclasses.replace(prior, **changes)


# ---------------------------------------------------------------------------
# draw sinks
# ---------------------------------------------------------------------------


class MemorySink:
    """Collects thinned draws in preallocated arrays."""

    def __init__(self, config: ModelConfig, T: int, n_draws: int):
        self.shapes = state_shapes(config, T)
        self.fields = {k: np.empty((n_draws,) + s) for k, s in self.shapes.items()}
        self.loglik = np.empty(n_draws)
        self.count = 0

    def append(self, state: LatentStateSet, loglik: float) -> None:
        for k in self.fields:
            self.fields[k][self.count] = getattr(state, k)
        self.loglik[self.count] = loglik
        self.count += 1

    def snapshot(self) -> dict[str, np.ndarray]:
        out = {f"draw_{k}": v[: self.count] for k, v in self.fields.items()}
        out["draw_loglik"] = self.loglik[: self.count]
        return out

    def restore(self, snap: dict, count: int) -> None:
        for k in self.fields:
            self.fields[k][:count] = snap[f"draw_{k}"]
        self.loglik[:count] = snap["draw_loglik"]
        self.count = count

    def finish(self, config, prior, acceptance, channel_names, T) -> PosteriorDraws:
        return PosteriorDraws(
            config=config, prior=prior, fields=self.fields, loglik=self.loglik,
            acceptance=acceptance, channel_names=tuple(channel_names), T=T,
        )


# ---------------------------------------------------------------------------
# the chain
# ---------------------------------------------------------------------------


def _rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def config_digest(config: ModelConfig, prior: PriorSpec) -> str:
    blob = json.dumps({"config": config.to_dict(), "prior": prior.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


class Sampler:
    """State of one chain: current draw, random substreams, MH bookkeeping.

    ``prior`` must already be resolved (see :func:`resolve_prior`);
    :func:`run_mcmc` does that.  ``set_data`` swaps the observations, which
    is what successive-conditional (Geweke) testing needs.
    """

    def __init__(self, data, config: ModelConfig, prior: PriorSpec, state: LatentStateSet,
                 seed: int | None = None, plan: SweepPlan | None = None):
        self.values = np.array(_values(data), float)
        self.config = config
        self.prior = prior
        self.plan = plan or SweepPlan()
        self.state = state
        self.T = self.values.shape[0]
        check_state(state, config, self.T)
        seed = config.mcmc.rng_seed if seed is None else seed
        children = np.random.SeedSequence(seed).spawn(len(BLOCKS))
        self.rngs = {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(BLOCKS, children)}
        self.counters = _new_counters()
        self.phi_scale = {"beta": config.mcmc.phi_proposal_scale, "alpha": config.mcmc.phi_proposal_scale}
        self.sweeps_done = 0
        self.window = {f: [0, 0] for f in ("beta", "alpha")}

    def set_data(self, values) -> None:
        values = np.asarray(values, float)
        if values.shape != self.values.shape:
            raise ConfigError("replacement data must keep its shape")
        self.values = values.copy()

    def reset_counters(self) -> None:
        self.counters = _new_counters()

    def sweep(self) -> LatentStateSet:
        plan, config, prior = self.plan, self.config, self.prior
        st = self.state
        y = self.values
        try:
            for step in plan.steps(config.plus):
                rng = self.rngs[step]
                if step == "x":
                    st = st.replace(x=sample_latent_x(st, y, config, prior, rng))
                elif step == "delta":
                    st = st.replace(delta=sample_tvar_coefficients(st, config, prior, rng, self.T))
                elif step == "volatility":
                    w, sigma2 = sample_volatilities(st, y, config, prior, rng)
                    st = st.replace(w=w, sigma2=sigma2)
                elif step == "loadings":
                    st = st.replace(**sample_loadings_block(
                        st, y, config, prior, rng, self.counters, self.phi_scale["beta"],
                        plan.lt_hyper, plan.lt_thresholds,
                    ))
                elif step == "psi":
                    st = st.replace(psi=sample_psi(st.delta, prior, rng))
                elif step == "tvvar":
                    st = st.replace(**sample_tvvar_block(
                        st, y, config, prior, rng, self.counters, self.phi_scale["alpha"],
                        plan.lt_hyper, plan.lt_thresholds,
                    ))
                elif step == "y0":
                    st = st.replace(y0=sample_y0(st, y, config, prior, rng))
        except NumericalFailure as exc:
            raise SamplerFailure(str(exc), self.sweeps_done + 1, exc.t) from exc
        self.state = st
        self.sweeps_done += 1
        return st

    def loglik(self) -> float:
        return conditional_loglik(self.state, self.values, self.config)

    def adapt(self) -> None:
        """Robbins-Monro step on the log phi-proposal scales, then open a new window."""
        mc = self.config.mcmc
        gain = 1.0 / np.sqrt(1.0 + self.sweeps_done / mc.adapt_window)
        for fam in ("beta", "alpha"):
            c = self.counters[f"{fam}_phi"]
            acc0, att0 = self.window[fam]
            att = c.attempted - att0
            if att > 0:
                rate = (c.accepted - acc0) / att
                scale = self.phi_scale[fam] * np.exp(gain * (rate - mc.adapt_target))
                self.phi_scale[fam] = float(np.clip(scale, 0.05, 20.0))
            self.window[fam] = [c.accepted, c.attempted]

    def acceptance_rates(self) -> dict[str, float]:
        prefixes = ("beta_", "alpha_") if self.config.plus else ("beta_",)
        return {k: c.rate for k, c in self.counters.items() if k.startswith(prefixes) and c.attempted}

    # -- checkpointing ------------------------------------------------------

    def checkpoint_meta(self) -> dict:
        return {
            "sweeps_done": self.sweeps_done,
            "rngs": {k: _rng_state(g) for k, g in self.rngs.items()},
            "counters": {k: [c.accepted, c.attempted] for k, c in self.counters.items()},
            "phi_scale": self.phi_scale,
            "window": self.window,
        }

    def restore_meta(self, meta: dict) -> None:
        self.sweeps_done = int(meta["sweeps_done"])
        for k, s in meta["rngs"].items():
            self.rngs[k].bit_generator.state = s
        for k, (a, n) in meta["counters"].items():
            self.counters[k].accepted, self.counters[k].attempted = int(a), int(n)
        self.phi_scale = {k: float(v) for k, v in meta["phi_scale"].items()}
        self.window = {k: [int(a), int(n)] for k, (a, n) in meta["window"].items()}


def save_checkpoint(path, sampler: Sampler, sink, digest: str) -> None:
    """Write state, rng positions and draws collected so far (atomic rename)."""
    meta = sampler.checkpoint_meta()
    meta["digest"] = digest
    meta["n_draws"] = sink.count
    meta["prior"] = sampler.prior.to_dict()
    arrays = {f"state_{k}": getattr(sampler.state, k) for k in state_shapes(sampler.config, sampler.T)}
    arrays.update(sink.snapshot())
    arrays["meta"] = np.array(json.dumps(meta))
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in z.files if k != "meta"}
    return meta, arrays


def run_mcmc(data, config: ModelConfig, prior: PriorSpec | None = None, seed: int | None = None, *,
             plan: SweepPlan | None = None, init: LatentStateSet | None = None, sink=None,
             checkpoint_path=None, checkpoint_every: int = 0, resume: bool = False,
             progress=None) -> PosteriorDraws:
    """Run ``burn_in + draws`` sweeps and return the thinned draws.

    The run is a deterministic function of the inputs and the seed
    (``config.mcmc.rng_seed`` unless ``seed`` is given).  With
    ``checkpoint_path`` a checkpoint is written every ``checkpoint_every``
    sweeps and, on a kernel failure, with the last valid state before the
    error is re-raised.  ``resume=True`` continues from that file and gives
    the same draws as an uninterrupted run.
    """
    if not isinstance(data, ObservationMatrix):
        data = ObservationMatrix(np.asarray(data, float))
    prior = default_priors(config) if prior is None else prior
    validate_config(config, prior, data)
    mc = config.mcmc
    T = data.T
    n_keep = mc.draws // mc.thin
    digest = config_digest(config, prior)
    plan = SweepPlan() if plan is None else plan
    state = initial_state(data, config, prior, fit_var=plan.tvvar) if init is None else init
    resolved = resolve_prior(prior, data, config, state)
    sampler = Sampler(data, config, resolved, state, seed=seed, plan=plan)
    sink = MemorySink(config, T, n_keep) if sink is None else sink

    if resume:
        meta, arrays = load_checkpoint(checkpoint_path)
        if meta["digest"] != digest:
            raise ConfigError("checkpoint was written for a different config or prior")
        sampler.prior = PriorSpec.from_dict(meta["prior"])
        sampler.state = LatentStateSet(**{
            k: arrays[f"state_{k}"] for k in state_shapes(config, T)
        })
        sampler.restore_meta(meta)
        sink.restore(arrays, int(meta["n_draws"]))

    total = mc.burn_in + mc.draws
    while sampler.sweeps_done < total:
        i = sampler.sweeps_done
        if i == mc.burn_in:
            sampler.reset_counters()
        if mc.adapt_phi and 0 < i < mc.burn_in and i % mc.adapt_window == 0:
            sampler.adapt()
        previous = sampler.state
        # a failing sweep may already have advanced earlier blocks' streams
        before = json.loads(json.dumps(sampler.checkpoint_meta())) if checkpoint_path is not None else None
        try:
            sampler.sweep()
        except SamplerFailure:
            if checkpoint_path is not None:
                sampler.state = previous
                sampler.restore_meta(before)
                save_checkpoint(checkpoint_path, sampler, sink, digest)
            raise
        done = sampler.sweeps_done
        if done > mc.burn_in and (done - mc.burn_in) % mc.thin == 0:
            sink.append(sampler.state, sampler.loglik())
        if checkpoint_path is not None and checkpoint_every and done % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, sampler, sink, digest)
        if progress is not None:
            progress(done, total)

    return sink.finish(config, resolved, sampler.acceptance_rates(), data.channel_names, T)
