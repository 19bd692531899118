import numpy as np

from ltfactor.model import PosteriorDraws, default_priors


def random_psd(rng, n, scale=1.0, rank=None):
    rank = n if rank is None else rank
    A = rng.normal(size=(n, rank))
    return scale * (A @ A.T / rank + (0.1 * np.eye(n) if rank == n else 0.0))


def random_dlm(rng, T, n, q, missing=0.0):
    """Arrays for a random, well-posed DLM and data drawn from it."""
    F = rng.normal(size=(T, q, n))
    V = np.stack([random_psd(rng, q, 0.5) for _ in range(T)])
    G = rng.normal(scale=0.6, size=(T, n, n))
    W = np.stack([random_psd(rng, n, 0.3) for _ in range(T)])
    m0 = rng.normal(size=n)
    C0 = random_psd(rng, n, 1.0)
    y = rng.normal(scale=2.0, size=(T, q))
    if missing:
        y[rng.random((T, q)) < missing] = np.nan
    return F, V, G, W, m0, C0, y


def make_draws(config, T=20, n_draws=4, seed=0, **over):
    """Draws with deterministic defaults: static loadings, no TVAR drift."""
    rng = np.random.default_rng(seed)
    m, p, r, n = config.m, config.p, config.r, config.n_state
    f = {
        "x": rng.normal(size=(n_draws, T + n)),
        "delta": np.zeros((n_draws, T + 1, p)),
        "w": np.ones((n_draws, T)),
        "sigma2": np.ones((n_draws, m, T)),
        "beta": np.ones((n_draws, m - 1, r, T + 1)),
        "d": np.zeros((n_draws, m - 1, r)),
        "mu": np.ones((n_draws, m - 1, r)),
        "phi": np.zeros((n_draws, m - 1, r)),
        "v": np.zeros((n_draws, m - 1, r)),
        "psi": np.zeros((n_draws, p, p)),
    }
    if config.plus:
        f.update(
            alpha=np.zeros((n_draws, m, m, T + 1)), d_a=np.full((n_draws, m, m), 1e9),
            mu_a=np.zeros((n_draws, m, m)), phi_a=np.full((n_draws, m, m), 0.5),
            v_a=np.full((n_draws, m, m), 0.1), y0=np.zeros((n_draws, m)),
        )
    for k, val in over.items():
        f[k] = np.broadcast_to(np.asarray(val, float), f[k].shape).copy()
    names = tuple(f"y{i + 1}" for i in range(m))
    return PosteriorDraws(config, default_priors(config), f, np.zeros(n_draws), {}, names, T)
