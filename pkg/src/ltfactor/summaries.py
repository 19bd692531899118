"""Posterior summaries: trajectory bands, shrinkage probabilities, b-hat and DIC.

Quantiles use linear interpolation between order statistics (numpy's
default ``"linear"`` method), so draws 1..100 at level 0.9 give the
interval [5.95, 95.05].

DIC is the conditional-deviance version: the deviance of the observations
given every latent quantity, averaged over draws, and the same deviance at
the posterior means of the per-time observation means and variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConfigError, PosteriorDraws
from .sampler import fitted_mean

SELECTORS = ("x", "delta", "w", "sigma2", "beta", "b", "alpha", "a")


class MissingLikelihood(ValueError):
    """The draws carry no usable per-draw log-likelihood."""


@dataclass(frozen=True, eq=False)
class TrajectorySummary:
    """Pointwise summaries over t=1..T; array rows follow ``series``."""

    series: tuple[str, ...]
    times: np.ndarray
    mean: np.ndarray  # (n_series, T)
    lower: np.ndarray
    upper: np.ndarray
    level: float


def _check_level(level: float) -> None:
    if not 0.0 < level < 1.0:
        raise ConfigError(f"credibility level must lie in (0, 1), got {level}")


def _selected(draws: PosteriorDraws, which: str):
    """Stack of (n_draws, n_series, T) and the series names."""
    f = draws.fields
    cfg = draws.config
    names = draws.channel_names or tuple(f"y{i + 1}" for i in range(cfg.m))
    if which not in SELECTORS:
        raise ConfigError(f"unknown trajectory selector {which!r}; choose from {SELECTORS}")
    if which in ("alpha", "a") and "alpha" not in f:
        raise ConfigError(f"selector {which!r} needs Model M+ draws")
    if which == "x":
        return draws.x_identified()[:, None, cfg.p:], ("x",)
    if which == "delta":
        return np.swapaxes(f["delta"][:, 1:], 1, 2), tuple(f"delta{k + 1}" for k in range(cfg.p))
    if which == "w":
        return f["w"][:, None], ("w",)
    if which == "sigma2":
        return f["sigma2"], tuple(f"sigma2_{n}" for n in names)
    if which in ("beta", "b"):
        arr = (f["beta"] if which == "beta" else draws.b)[..., 1:]
        labels = tuple(f"{which}_{names[i + 1]}_{k + 1}" for i in range(cfg.m - 1) for k in range(cfg.r))
        return arr.reshape(arr.shape[0], -1, arr.shape[-1]), labels
    arr = (f["alpha"] if which == "alpha" else draws.a)[..., 1:]
    labels = tuple(f"{which}_{names[i]}_{names[j]}" for i in range(cfg.m) for j in range(cfg.m))
    return arr.reshape(arr.shape[0], -1, arr.shape[-1]), labels


def summarize_trajectories(draws: PosteriorDraws, which: str = "x", level: float = 0.95) -> TrajectorySummary:
    """Posterior mean and equal-tailed interval of each selected trajectory."""
    _check_level(level)
    if len(draws) == 0:
        raise ConfigError("no draws to summarise")
    stack, labels = _selected(draws, which)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(stack, [tail, 1.0 - tail], axis=0, method="linear")
    T = stack.shape[-1]
    return TrajectorySummary(labels, np.arange(1, T + 1), stack.mean(axis=0), lo, hi, level)


def shrinkage_probabilities(draws: PosteriorDraws) -> dict[str, np.ndarray]:
    """Draw frequency of an active coefficient, per (i, k, t) for t=1..T.

    Returns ``{"beta": (m-1, r, T)}`` plus ``"alpha": (m, m, T)`` for Model M+.
    """
    out = {"beta": draws.s_indicators[..., 1:].mean(axis=0)}
    if draws.s_alpha is not None:
        out["alpha"] = draws.s_alpha[..., 1:].mean(axis=0)
    return out


def estimated_loadings(draws: PosteriorDraws, which: str = "beta") -> np.ndarray:
    """``E[beta | y]`` where ``Pr(s = 1 | y) > 0.5``, else zero; t=1..T."""
    if which not in ("beta", "alpha"):
        raise ConfigError("estimated_loadings covers 'beta' or 'alpha'")
    prob = shrinkage_probabilities(draws).get(which)
    if prob is None:
        raise ConfigError("alpha loadings need Model M+ draws")
    mean = draws.fields[which][..., 1:].mean(axis=0)
    return np.where(prob > 0.5, mean, 0.0)


@dataclass(frozen=True)
class DicResult:
    dic: float
    mean_deviance: float
    plugin_deviance: float
    p_d: float

    def to_dict(self) -> dict:
        return {"dic": self.dic, "mean_deviance": self.mean_deviance,
                "plugin_deviance": self.plugin_deviance, "p_d": self.p_d}


def _deviance(values, mean, var) -> float:
    return float(np.sum(np.log(2.0 * np.pi * var) + (values - mean) ** 2 / var))


def compute_dic(draws: PosteriorDraws, data) -> DicResult:
    """Conditional-deviance DIC from the recorded per-draw log-likelihoods."""
    ll = np.asarray(draws.loglik, float)
    if ll.size == 0 or not np.all(np.isfinite(ll)):
        raise MissingLikelihood("per-draw log-likelihoods are missing or non-finite")
    values = np.asarray(getattr(data, "values", data), float)
    mean_dev = float(np.mean(-2.0 * ll))
    mu = np.zeros(values.shape)
    for state in draws:
        mu += fitted_mean(state, values, draws.config)
    mu /= len(draws)
    var = draws.fields["sigma2"].mean(axis=0).T
    plug = _deviance(values, mu, var)
    return DicResult(2.0 * mean_dev - plug, mean_dev, plug, mean_dev - plug)
