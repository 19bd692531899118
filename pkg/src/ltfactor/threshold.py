"""Latent threshold AR(1) processes.

A coefficient process ``beta_t`` is a stationary AR(1) with mean ``mu``,
persistence ``phi`` and innovation s.d. ``v``; its effective value is
``b_t = beta_t * 1(|beta_t| >= d)``.  The threshold prior is
``d ~ U(0, |mu| + K u)`` with ``u^2 = v^2 / (1 - phi^2)``.

The MCMC steps here are vectorised over a batch of *rows* (channels), each
carrying ``J`` coefficient processes that enter one scalar observation
equation per time point:

    target_t = sum_j regressor_{t,j} * b_{j,t} + noise,  noise ~ N(0, noise_var_t)

with ``coef`` arrays of shape ``(rows, J, T+1)`` (time 0..T) and
``target``/``noise_var`` of shape ``(rows, T)`` (time 1..T).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .model import BetaPrior, ConfigError, GammaPrior, NormalPrior


@dataclass(frozen=True)
class LtAr1Params:
    mu: float
    phi: float
    v: float
    d: float
    K: float = 3.0

    def __post_init__(self):
        if not abs(self.phi) < 1 or self.v <= 0 or self.d < 0 or self.K <= 0:
            raise ConfigError("need |phi| < 1, v > 0, d >= 0, K > 0")

    @property
    def u(self) -> float:
        return stationary_sd(self.phi, self.v)

    @property
    def threshold_upper(self) -> float:
        return abs(self.mu) + self.K * self.u


class AcceptCounter:
    """Running count of accepted / attempted MH moves."""

    def __init__(self):
        self.accepted = 0
        self.attempted = 0

    def add(self, accepted: int, attempted: int) -> None:
        self.accepted += accepted
        self.attempted += attempted

    @property
    def rate(self) -> float:
        return self.accepted / self.attempted if self.attempted else float("nan")


@dataclass(frozen=True, eq=False)
class LtTrajectory:
    beta: np.ndarray
    s: np.ndarray
    b: np.ndarray


def stationary_sd(phi, v):
    return np.asarray(v) / np.sqrt(1.0 - np.asarray(phi) ** 2)


def threshold_upper(mu, phi, v, K):
    return np.abs(mu) + K * stationary_sd(phi, v)


def sparsity_probability(K) -> np.ndarray | float:
    """Prior probability that a thresholded coefficient is non-zero.

    Marginal over ``d ~ U(0, K u)`` for a zero-mean process:
    ``2 - 2 Phi(K) - 2 phi(K)/K + sqrt(2/pi)/K``.
    """
    K = np.asarray(K, float)
    if np.any(K <= 0):
        raise ConfigError("K must be > 0")
    val = 2.0 - 2.0 * ndtr(K) - 2.0 * stats.norm.pdf(K) / K + np.sqrt(2.0 / np.pi) / K
    return float(val) if val.ndim == 0 else val


def apply_threshold(beta, d) -> LtTrajectory:
    beta = np.asarray(beta, float)
    d = np.asarray(d, float)
    if np.any(d < 0):
        raise ConfigError("threshold must be >= 0")
    d = d[..., None] if d.ndim and d.ndim == beta.ndim - 1 else d
    s = np.abs(beta) >= d
    return LtTrajectory(beta, s, np.where(s, beta, 0.0))


# ---------------------------------------------------------------------------
# trajectory points
# ---------------------------------------------------------------------------


def _neighbour_prior(coef, mu, phi, v, times):
    """Conditional prior of coef[..., t] given its neighbours, for t in ``times``.

    Returns (mean, precision) with shape ``(rows, J, len(times))``.
    """
    T = coef.shape[-1] - 1
    mu_ = mu[..., None]
    phi_ = phi[..., None]
    prec_v = 1.0 / v[..., None] ** 2
    times = np.asarray(times)
    prec = np.zeros(coef.shape[:-1] + (times.size,))
    num = np.zeros_like(prec)
    # link to t-1 (or the stationary law at t=0)
    first = times == 0
    inner = ~first
    if np.any(first):
        prec[..., first] += (1.0 - phi_**2) * prec_v
        num[..., first] += (1.0 - phi_**2) * prec_v * mu_
    if np.any(inner):
        prev = coef[..., times[inner] - 1]
        prec[..., inner] += prec_v
        num[..., inner] += prec_v * (mu_ + phi_ * (prev - mu_))
    # link to t+1
    has_next = times < T
    if np.any(has_next):
        nxt = coef[..., times[has_next] + 1]
        prec[..., has_next] += phi_**2 * prec_v
        num[..., has_next] += phi_ * prec_v * (nxt - mu_ * (1.0 - phi_))
    return num / prec, prec


def sample_lt_trajectory_point(
    coef, mu, phi, v, d, target, regressor, noise_var, times, rng, accept_counter=None
):
    """Metropolis-within-Gibbs update of coef[..., t] for every t in ``times``.

    The ``times`` must be pairwise non-adjacent so the conditionals are
    independent (the sampler passes even and odd times in turn).  At each
    time the ``J`` coefficients of a row move jointly: the candidate is drawn
    from the conditional that ignores the threshold (all indicators forced to
    one), then accepted with the ratio of thresholded to un-thresholded
    observation likelihoods.  At t=0 there is no observation and the draw is
    exact.  Returns a new ``coef`` array.
    """
    coef = np.array(coef, float)
    times = np.asarray(times, dtype=np.int64)
    if times.size == 0:
        return coef
    mean, prec = _neighbour_prior(coef, mu, phi, v, times)
    z = mean + rng.standard_normal(mean.shape) / np.sqrt(prec)

    obs = times >= 1
    prop = z
    if np.any(obs):
        tt = times[obs]
        X = regressor[tt - 1].T[None, :, :]  # (1, J, n_obs)
        r = target[:, tt - 1]  # (rows, n_obs)
        nv = noise_var[:, tt - 1]
        zo = z[..., obs]
        eps = rng.standard_normal(r.shape) * np.sqrt(nv)
        c = X / prec[..., obs]  # D^{-1} f
        denom = np.sum(X * c, axis=1) + nv
        innov = r - np.sum(X * zo, axis=1) - eps
        prop_o = zo + c * (innov / denom)[:, None, :]

        cur_o = coef[..., tt]
        dd = d[..., None]

        def loglik_ratio(val):
            fit_thr = np.sum(X * np.where(np.abs(val) >= dd, val, 0.0), axis=1)
            fit_lin = np.sum(X * val, axis=1)
            return (-(r - fit_thr) ** 2 + (r - fit_lin) ** 2) / (2.0 * nv)

        log_alpha = loglik_ratio(prop_o) - loglik_ratio(cur_o)
        u = rng.random(r.shape)
        accept = np.log(u) < log_alpha
        new_o = np.where(accept[:, None, :], prop_o, cur_o)
        prop = prop.copy()
        prop[..., obs] = new_o
        if accept_counter is not None:
            accept_counter.add(int(accept.sum()), int(accept.size))
    coef[..., times] = prop
    return coef


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------


def _ar1_sums(coef, mu, phi):
    dev = coef - mu[..., None]
    resid = dev[..., 1:] - phi[..., None] * dev[..., :-1]
    return dev, resid


def _ar1_quadratic(coef, mu, phi):
    dev, resid = _ar1_sums(coef, mu, phi)
    return (1.0 - phi**2) * dev[..., 0] ** 2 + np.sum(resid**2, axis=-1)


def _log_threshold_prior(d, mu, phi, v, K):
    upper = threshold_upper(mu, phi, v, K)
    return np.where(d <= upper, -np.log(upper), -np.inf)


def mu_conditional(coef, phi, v, prior: NormalPrior):
    """Mean and variance of mu given the trajectory, ignoring the threshold prior."""
    Tp1 = coef.shape[-1]
    pv = 1.0 / v**2
    prec = 1.0 / prior.variance + (1.0 - phi**2) * pv + (Tp1 - 1) * (1.0 - phi) ** 2 * pv
    num = (
        prior.mean / prior.variance
        + (1.0 - phi**2) * pv * coef[..., 0]
        + (1.0 - phi) * pv * np.sum(coef[..., 1:] - phi[..., None] * coef[..., :-1], axis=-1)
    )
    return num / prec, 1.0 / prec


def sample_mu(coef, mu, phi, v, d, K, prior: NormalPrior, rng, include_threshold=True):
    """Conjugate-normal proposal for mu, corrected for the threshold prior."""
    mean, var = mu_conditional(coef, phi, v, prior)
    prop = mean + rng.standard_normal(mu.shape) * np.sqrt(var)
    if not include_threshold:
        return prop, np.ones(mu.shape, bool)
    log_a = _log_threshold_prior(d, prop, phi, v, K) - _log_threshold_prior(d, mu, phi, v, K)
    accept = np.log(rng.random(mu.shape)) < log_a
    return np.where(accept, prop, mu), accept


def sample_v(coef, mu, phi, v, d, K, prior: GammaPrior, rng, include_threshold=True):
    """Conjugate inverse-gamma proposal for v^2, corrected for the threshold prior."""
    Tp1 = coef.shape[-1]
    shape = prior.shape + Tp1 / 2.0
    rate = prior.rate + _ar1_quadratic(coef, mu, phi) / 2.0
    prec = rng.gamma(np.broadcast_to(shape, mu.shape), 1.0) / rate
    prop = 1.0 / np.sqrt(prec)
    if not include_threshold:
        return prop, np.ones(mu.shape, bool)
    log_a = _log_threshold_prior(d, mu, phi, prop, K) - _log_threshold_prior(d, mu, phi, v, K)
    accept = np.log(rng.random(mu.shape)) < log_a
    return np.where(accept, prop, v), accept


def _log_phi_target(phi, coef, mu, v, d, K, prior: BetaPrior, include_threshold):
    out = (
        (prior.a - 1.0) * np.log1p(phi)
        + (prior.b - 1.0) * np.log1p(-phi)
        + 0.5 * np.log1p(-(phi**2))
        - _ar1_quadratic(coef, mu, phi) / (2.0 * v**2)
    )
    if include_threshold:
        out = out + _log_threshold_prior(d, mu, phi, v, K)
    return out


def sample_phi(coef, mu, phi, v, d, K, prior: BetaPrior, rng, scale=1.0, include_threshold=True):
    """Independence MH for phi with a truncated-normal proposal at the AR(1) mode."""
    dev = coef - mu[..., None]
    sxx = np.sum(dev[..., :-1] ** 2, axis=-1)
    sxy = np.sum(dev[..., 1:] * dev[..., :-1], axis=-1)
    sxx_safe = np.maximum(sxx, 1e-300)
    loc = np.clip(sxy / sxx_safe, -0.999, 0.999)
    sd = np.maximum(scale * v / np.sqrt(sxx_safe), 1e-6)
    sd = np.minimum(sd, 10.0)
    a, b = (-1.0 - loc) / sd, (1.0 - loc) / sd
    prop = stats.truncnorm.rvs(a, b, loc=loc, scale=sd, random_state=rng)
    prop = np.clip(np.asarray(prop, float).reshape(mu.shape), -1 + 1e-12, 1 - 1e-12)
    log_q = lambda x: -0.5 * ((x - loc) / sd) ** 2  # noqa: E731 truncation constant cancels
    log_a = (
        _log_phi_target(prop, coef, mu, v, d, K, prior, include_threshold)
        - _log_phi_target(phi, coef, mu, v, d, K, prior, include_threshold)
        + log_q(phi)
        - log_q(prop)
    )
    accept = np.log(rng.random(mu.shape)) < log_a
    return np.where(accept, prop, phi), accept


def sample_lt_hyperparams(coef, mu, phi, v, d, K, priors, rng, phi_scale=1.0, include_threshold=True):
    """Update (mu, phi, v) for every process in the batch.

    ``priors`` is ``(NormalPrior, BetaPrior, GammaPrior)`` for mu, (phi+1)/2 and
    1/v^2.  The stationary t=0 term enters every conditional; the structured
    threshold prior ``U(0, |mu| + K u)`` is accounted for through MH
    corrections unless ``include_threshold`` is false.
    Returns ``(mu, phi, v, accepts)`` with ``accepts`` a dict of boolean arrays.
    """
    mu_prior, phi_prior, v_prior = priors
    mu, acc_mu = sample_mu(coef, mu, phi, v, d, K, mu_prior, rng, include_threshold)
    phi, acc_phi = sample_phi(coef, mu, phi, v, d, K, phi_prior, rng, phi_scale, include_threshold)
    v, acc_v = sample_v(coef, mu, phi, v, d, K, v_prior, rng, include_threshold)
    return mu, phi, v, {"mu": acc_mu, "phi": acc_phi, "v": acc_v}


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


def sample_threshold(coef, mu, phi, v, d, K, target, regressor, noise_var, rng, accept_counter=None):
    """Independence MH for each threshold, proposing from its conditional prior.

    Thresholds of the ``J`` coefficients of a row are updated one column at a
    time because they share that row's likelihood.  Returns a new ``d``.
    """
    d = np.array(d, float)
    rows, J, _ = coef.shape
    X = regressor.T[None, :, :]  # (1, J, T)
    cur = coef[..., 1:]
    b = np.where(np.abs(cur) >= d[..., None], cur, 0.0)
    resid = target - np.sum(X * b, axis=1)  # (rows, T)
    upper = threshold_upper(mu, phi, v, K)
    for j in range(J):
        prop = rng.random(rows) * upper[:, j]
        b_old = b[:, j, :]
        b_new = np.where(np.abs(cur[:, j, :]) >= prop[:, None], cur[:, j, :], 0.0)
        resid_new = resid + X[:, j, :] * (b_old - b_new)
        log_a = -np.sum((resid_new**2 - resid**2) / (2.0 * noise_var), axis=-1)
        accept = np.log(rng.random(rows)) < log_a
        d[:, j] = np.where(accept, prop, d[:, j])
        b[:, j, :] = np.where(accept[:, None], b_new, b_old)
        resid = np.where(accept[:, None], resid_new, resid)
        if accept_counter is not None:
            accept_counter.add(int(accept.sum()), rows)
    return d


def row_loglik(coef, d, target, regressor, noise_var):
    """Gaussian log-likelihood of each row's observations, shape (rows,)."""
    cur = coef[..., 1:]
    b = np.where(np.abs(cur) >= d[..., None], cur, 0.0)
    resid = target - np.einsum("tj,rjt->rt", regressor, b)
    return -0.5 * np.sum(np.log(2 * np.pi * noise_var) + resid**2 / noise_var, axis=-1)
