"""Eigen-decomposition of a TVAR process into quasi-periodic and real components.

At each time the companion matrix ``G_t`` of ``delta_t`` is diagonalised,
``G_t = E_t diag(lambda) E_t^{-1}``, and ``x_t = e_1' z_t`` with
``z_t = (x_t, ..., x_{t-p+1})`` is split as

    x_t = sum_j E_t[0, j] (E_t^{-1} z_t)_j.

A complex-conjugate pair of eigenvalues ``rho exp(+-i omega)`` contributes
twice the real part of one of its terms (a quasi-periodic component with
frequency ``omega / (2 pi)`` cycles per step and modulus ``rho``); a real
eigenvalue contributes a real component.

Components are put into fixed slots: quasi-periodic ones sorted by
frequency (lowest first), real ones by eigenvalue (largest first).  Unused
slots hold NaN, so ``np.nansum`` over slots reconstructs ``x_t``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import NumericalFailure, PosteriorDraws

REPEAT_TOL = 1e-8


class DegenerateDecomposition(NumericalFailure):
    """Repeated (or nearly repeated) eigenvalues at some time point."""


@dataclass(frozen=True, eq=False)
class ComponentSet:
    """Latent-level components for t=1..T (row t-1)."""

    quasi: np.ndarray  # (T, p//2) component values
    frequency: np.ndarray  # (T, p//2) cycles per step, in (0, 0.5)
    modulus: np.ndarray  # (T, p//2)
    amplitude: np.ndarray  # (T, p//2) magnitude of the complex term, times 2
    real: np.ndarray  # (T, p)
    real_root: np.ndarray  # (T, p) the real eigenvalue itself
    n_quasi: np.ndarray  # (T,)
    n_real: np.ndarray  # (T,)

    @property
    def p(self) -> int:
        return self.real.shape[1]

    def total(self) -> np.ndarray:
        return np.nansum(self.quasi, axis=1) + np.nansum(self.real, axis=1)


def companion_matrix(delta) -> np.ndarray:
    """Companion matrix of one coefficient vector (p,) or a stack (..., p)."""
    delta = np.asarray(delta, float)
    p = delta.shape[-1]
    G = np.zeros(delta.shape + (p,))
    G[..., 0, :] = delta
    if p > 1:
        G[..., np.arange(1, p), np.arange(p - 1)] = 1.0
    return G


def _lag_matrix(x, p: int, T: int) -> np.ndarray:
    """Rows ``z_t = (x_t, ..., x_{t-p+1})`` for t=1..T from an x of length T+n."""
    x = np.asarray(x, float)
    n = x.shape[0] - T
    idx = n - 1 + np.arange(1, T + 1)[:, None] - np.arange(p)[None, :]
    return x[idx]


def _check_distinct(vals) -> None:
    p = vals.shape[1]
    if p < 2:
        return
    gap = np.abs(vals[:, :, None] - vals[:, None, :])
    gap[:, np.arange(p), np.arange(p)] = np.inf
    bad = np.nonzero(gap.min(axis=(1, 2)) < REPEAT_TOL)[0]
    if bad.size:
        t = int(bad[0]) + 1
        raise DegenerateDecomposition(f"repeated companion eigenvalues at t={t}", t=t)


def eigen_components(x, delta) -> ComponentSet:
    """Decompose ``x_{1:T}`` given ``delta_{0:T}`` of shape (T+1, p).

    Both arrays use the sampler's layout: ``x`` has length ``T + n`` with
    ``n >= p`` pre-sample values in front, and row 0 of ``delta`` is unused.
    Raises :class:`DegenerateDecomposition` naming the first time with
    repeated eigenvalues.
    """
    x = np.asarray(x, float)
    delta = np.asarray(delta, float)
    T, p = delta.shape[0] - 1, delta.shape[1]
    if x.shape[0] - T < p:
        raise ValueError(f"x needs at least {p} pre-sample values")
    delta = delta[1:]
    z = _lag_matrix(x, p, T)
    vals, vecs = np.linalg.eig(companion_matrix(delta))
    _check_distinct(vals)
    coef = np.linalg.solve(vecs, z[..., None].astype(complex))[..., 0]
    terms = vecs[:, 0, :] * coef  # (T, p)

    im = vals.imag
    is_real = im == 0.0
    is_upper = im > 0.0
    freq = np.angle(vals) / (2.0 * np.pi)
    G = p // 2

    key_q = np.where(is_upper, freq, np.inf)
    order_q = np.argsort(key_q, axis=1, kind="stable")[:, :G]
    take = lambda a, o: np.take_along_axis(a, o, axis=1)  # noqa: E731
    valid_q = take(is_upper, order_q)
    nanq = lambda a: np.where(valid_q, a, np.nan)  # noqa: E731
    quasi = nanq(2.0 * take(terms, order_q).real)
    frequency = nanq(take(freq, order_q))
    modulus = nanq(take(np.abs(vals), order_q))
    amplitude = nanq(2.0 * np.abs(take(terms, order_q)))

    key_r = np.where(is_real, -vals.real, np.inf)
    order_r = np.argsort(key_r, axis=1, kind="stable")
    valid_r = take(is_real, order_r)
    real = np.where(valid_r, take(terms, order_r).real, np.nan)
    root = np.where(valid_r, take(vals.real, order_r), np.nan)

    return ComponentSet(
        quasi=quasi, frequency=frequency, modulus=modulus, amplitude=amplitude,
        real=real, real_root=root,
        n_quasi=is_upper.sum(axis=1), n_real=is_real.sum(axis=1),
    )


def channel_components(cs: ComponentSet, loadings) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel contributions of each component.

    ``loadings`` is the full (m, r, T+1) array (anchor row included).
    Returns ``(quasi, real)`` of shapes (m, T, p//2) and (m, T, p); entry
    ``[i, t-1, g]`` is ``sum_{k=0}^{r-1} b_{i,k+1,t} x~_{g,t-k}``, where a
    slot that is empty at time t-k contributes zero.  Times ``t < r`` need
    components before t=1 and are NaN.
    """
    B = np.asarray(loadings, float)[..., 1:]  # (m, r, T)
    m, r, T = B.shape
    out = []
    for comp in (np.nan_to_num(cs.quasi), np.nan_to_num(cs.real)):
        acc = np.full((m, T) + comp.shape[1:], np.nan)
        if T >= r:
            total = np.zeros((m, T - r + 1) + comp.shape[1:])
            for k in range(r):
                lagged = comp[r - 1 - k : T - k]  # x~_{t-k} for t = r..T
                total += B[:, k, r - 1 :, None] * lagged[None]
            acc[:, r - 1 :] = total
        out.append(acc)
    return out[0], out[1]


@dataclass(frozen=True, eq=False)
class ComponentPosterior:
    """Pointwise posterior summaries, each a dict with mean/lower/upper arrays."""

    frequency: dict
    modulus: dict
    quasi: dict
    real: dict
    n_quasi: np.ndarray  # posterior mean count per t
    skipped: int
    used: int


def _band(stack, level):
    lo, hi = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
    # slots empty in every draw are all-NaN; their summaries stay NaN quietly
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {
            "mean": np.nanmean(stack, axis=0),
            "lower": np.nanquantile(stack, lo, axis=0),
            "upper": np.nanquantile(stack, hi, axis=0),
        }


def component_posterior(draws: PosteriorDraws, level: float = 0.95) -> ComponentPosterior:
    """Decompose every draw and summarise slot by slot.

    Draws with a degenerate decomposition are skipped and counted.
    """
    freq, mod, quasi, real, nq = [], [], [], [], []
    skipped = 0
    for j in range(len(draws)):
        try:
            cs = eigen_components(draws.fields["x"][j], draws.fields["delta"][j])
        except DegenerateDecomposition:
            skipped += 1
            continue
        freq.append(cs.frequency)
        mod.append(cs.modulus)
        quasi.append(cs.quasi)
        real.append(cs.real)
        nq.append(cs.n_quasi)
    if not freq:
        raise DegenerateDecomposition("every draw has a degenerate decomposition")
    return ComponentPosterior(
        frequency=_band(np.array(freq), level),
        modulus=_band(np.array(mod), level),
        quasi=_band(np.array(quasi), level),
        real=_band(np.array(real), level),
        n_quasi=np.mean(nq, axis=0),
        skipped=skipped,
        used=len(freq),
    )
