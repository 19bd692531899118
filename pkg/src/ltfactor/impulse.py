"""Monte Carlo impulse responses to a shock in the latent innovation.

For each posterior draw and replicate, the model is projected forward from
an origin ``t0`` twice, once with ``e`` added to the latent innovation at
``t0 + 1`` and once without, using the same random numbers in both paths.
The response at horizon ``j`` is the average difference of the two
``y_{t0+j}`` paths.

During projection the TVAR coefficients follow their random walk, loadings
and TV-VAR coefficients follow their AR(1) laws with indicators re-evaluated
against the thresholds each step (``indicator_mode="dynamic"``) or held at
their origin values (``"frozen"``), and the volatilities follow the
beta-shock discount evolution.  Each of these can be frozen at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, PosteriorDraws

STREAMS = ("delta", "w", "sigma", "x", "beta", "alpha", "nu")


@dataclass(frozen=True)
class ImpulseRequest:
    origins: tuple[int, ...]
    horizon: int
    shock: float | str = "auto"
    replicates: int = 1
    freeze_tvar: bool = False
    freeze_loadings: bool = False
    freeze_volatility: bool = False
    indicator_mode: str = "dynamic"
    common_random_numbers: bool = True
    seed: int = 0
    chunk: int = 256
    divergence_guard: float = 1e12

    def __post_init__(self):
        object.__setattr__(self, "origins", tuple(int(t) for t in np.atleast_1d(self.origins)))
        if self.horizon < 1:
            raise ConfigError("impulse horizon must be >= 1")
        if self.replicates < 1:
            raise ConfigError("need at least one replicate")
        if self.indicator_mode not in ("dynamic", "frozen"):
            raise ConfigError("indicator_mode must be 'dynamic' or 'frozen'")
        if not isinstance(self.shock, str) and not np.isfinite(self.shock):
            raise ConfigError("shock must be finite")
        if isinstance(self.shock, str) and self.shock != "auto":
            raise ConfigError("shock must be a number or 'auto'")


@dataclass(frozen=True, eq=False)
class ImpulseSurface:
    responses: np.ndarray  # (m, n_origins, horizon)
    origins: tuple[int, ...]
    shock: float
    divergent: np.ndarray  # (m, n_origins) bool
    channel_names: tuple[str, ...] = field(default=())

    @property
    def horizon(self) -> int:
        return self.responses.shape[-1]


def default_shock(draws: PosteriorDraws) -> float:
    """Average over t of the posterior mean innovation s.d. ``E[sqrt(w_t) | y]``."""
    return float(np.mean(np.sqrt(draws.fields["w"])))


def _psd_sqrt(C):
    """Batched factor L with L L' = C; tolerates singular (even zero) C."""
    vals, vecs = np.linalg.eigh(0.5 * (C + np.swapaxes(C, -1, -2)))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]


def _evolve_precision(prec, lam, rng):
    if lam >= 1.0:
        return prec
    k = 1.0 / (1.0 - lam)
    eta = rng.beta(lam * k / 2.0, (1.0 - lam) * k / 2.0, prec.shape)
    return prec * eta / lam


def _ar1_step(coef, mu, phi, v, rng):
    return mu + phi * (coef - mu) + v * rng.standard_normal(coef.shape)


def _effective(coef, d, s0, mode):
    if mode == "frozen":
        return np.where(s0, coef, 0.0)
    return np.where(np.abs(coef) >= d, coef, 0.0)


def _chunk_paths(fields, idx, t0, y_t0, config, req, e, gens):
    """Responses (chunk, reps, h, m) and divergence flags for a block of draws."""
    p, r, s, m, n = config.p, config.r, config.s, config.m, config.n_state
    R, h = req.replicates, req.horizon
    plus = config.plus
    rep = lambda a: np.repeat(a[idx][:, None], R, axis=1)  # noqa: E731

    x_lags = rep(fields["x"][:, t0 : t0 + n][:, ::-1])  # (N, R, n): x_t0, x_t0-1, ...
    delta = rep(fields["delta"][:, t0])
    psi_f = np.repeat(_psd_sqrt(fields["psi"][idx])[:, None], R, axis=1)
    w_prec = 1.0 / rep(fields["w"][:, max(t0 - 1, 0)])
    sig_prec = 1.0 / rep(fields["sigma2"][:, :, max(t0 - 1, 0)])
    beta = rep(fields["beta"][..., t0])
    mu, phi, v, d = (rep(fields[k]) for k in ("mu", "phi", "v", "d"))
    s_beta0 = np.abs(beta) >= d
    if plus:
        alpha = rep(fields["alpha"][..., t0])
        mu_a, phi_a, v_a, d_a = (rep(fields[k]) for k in ("mu_a", "phi_a", "v_a", "d_a"))
        s_alpha0 = np.abs(alpha) >= d_a
        y_prev = np.repeat(y_t0[idx][:, None], R, axis=1)
    N = x_lags.shape[0]

    paths = {}
    for label, g in (("base", gens["base"]), ("shock", gens["shock"])):
        xl = x_lags.copy()
        dl, wp, sp = delta.copy(), w_prec.copy(), sig_prec.copy()
        be = beta.copy()
        if plus:
            al, yp = alpha.copy(), y_prev.copy()
        out = np.empty((N, R, h, m))
        for j in range(1, h + 1):
            if not req.freeze_tvar:
                dl = dl + np.einsum("nrij,nrj->nri", psi_f, g["delta"].standard_normal((N, R, p)))
            if not req.freeze_volatility:
                wp = _evolve_precision(wp, config.lambda_w, g["w"])
                sp_new = _evolve_precision(sp[..., 1:], config.lambda_sigma, g["sigma"])
                sp = np.concatenate([sp[..., :1], sp_new], axis=-1)
            eps = g["x"].standard_normal((N, R)) / np.sqrt(wp)
            if j == 1 and label == "shock":
                eps = eps + e
            x_new = np.sum(dl * xl[..., :p], axis=-1) + eps
            xl = np.concatenate([x_new[..., None], xl[..., :-1]], axis=-1)
            if not req.freeze_loadings:
                be = _ar1_step(be, mu, phi, v, g["beta"])
            b = _effective(be, d, s_beta0, req.indicator_mode)
            f = xl[..., :r]
            signal = np.concatenate(
                [f[..., s - 1 : s], np.einsum("nrik,nrk->nri", b, f)], axis=-1
            )
            noise = g["nu"].standard_normal((N, R, m)) / np.sqrt(sp)
            if plus:
                if not req.freeze_loadings:
                    al = _ar1_step(al, mu_a, phi_a, v_a, g["alpha"])
                a = _effective(al, d_a, s_alpha0, req.indicator_mode)
                offset = np.einsum("nrij,nrj->nri", a, yp)
            else:
                offset = np.zeros_like(signal)
            y = offset + signal + noise
            if plus:
                yp = y
            out[:, :, j - 1] = y
        paths[label] = out
    return paths["shock"] - paths["base"]


def _generators(seed, origin_index, chunk_index, crn):
    """One generator per component and path; with CRN both paths share seeds."""
    base_ss, shock_ss = np.random.SeedSequence([seed, origin_index, chunk_index]).spawn(2)
    base_children = base_ss.spawn(len(STREAMS))
    shock_children = base_children if crn else shock_ss.spawn(len(STREAMS))
    build = lambda children: {k: np.random.default_rng(c) for k, c in zip(STREAMS, children)}  # noqa: E731
    return {"base": build(base_children), "shock": build(shock_children)}


def impulse_response(draws: PosteriorDraws, request: ImpulseRequest, data=None) -> ImpulseSurface:
    """Expected response of every channel to a latent shock at each origin.

    ``data`` (the observations) is needed for Model M+, whose projection
    starts from the observed ``y_{t0}``.  Divergent projections (non-finite
    or beyond ``request.divergence_guard``) are flagged per channel.
    """
    config = draws.config
    T = draws.T or draws.fields["w"].shape[1]
    for t0 in request.origins:
        if not 0 <= t0 <= T:
            raise ConfigError(f"origin t0={t0} outside 0..{T}")
    e = default_shock(draws) if request.shock == "auto" else float(request.shock)
    fields = draws.fields
    n_draws = len(draws)
    m = config.m
    resp = np.zeros((m, len(request.origins), request.horizon))
    divergent = np.zeros((m, len(request.origins)), bool)
    values = None
    if config.plus:
        if data is None:
            raise ConfigError("Model M+ impulse responses need the observed data")
        values = data.values if hasattr(data, "values") else np.asarray(data, float)
    for oi, t0 in enumerate(request.origins):
        if config.plus:
            y_t0 = fields["y0"] if t0 == 0 else np.broadcast_to(values[t0 - 1], (n_draws, m))
        else:
            y_t0 = None
        total = np.zeros((request.horizon, m))
        for ci, start in enumerate(range(0, n_draws, request.chunk)):
            idx = np.arange(start, min(start + request.chunk, n_draws))
            gens = _generators(request.seed, oi, ci, request.common_random_numbers)
            with np.errstate(all="ignore"):
                diff = _chunk_paths(fields, idx, t0, y_t0, config, request, e, gens)
            bad = ~np.isfinite(diff) | (np.abs(diff) > request.divergence_guard)
            divergent[:, oi] |= bad.any(axis=(0, 1, 2))
            total += diff.sum(axis=(0, 1))
        resp[:, oi] = (total / (n_draws * request.replicates)).T
    return ImpulseSurface(resp, request.origins, e, divergent, tuple(draws.channel_names))
