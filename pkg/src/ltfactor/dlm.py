"""Linear-Gaussian state-space primitives.

State convention: ``theta_0 ~ N(m0, C0)``, ``theta_t = G_t theta_{t-1} + omega_t``
with ``omega_t ~ N(0, W_t)``, and ``y_t = offset_t + F_t theta_t + nu_t`` with
``nu_t ~ N(0, V_t)`` for ``t = 1..T``.  Arrays indexed by time hold ``t = 1..T``
in rows ``0..T-1``; filtered/smoothed outputs hold ``t = 0..T`` in rows ``0..T``.

Missing observations are NaN and are skipped in the update.  Singular
evolution or observation covariances are allowed (companion-form states,
noiseless observations); singular innovation covariances are handled by a
pseudo-inverse provided the innovation lies in their range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.signal import lfilter

from .model import ConfigError, NumericalFailure

_EIG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DlmSpec:
    F: np.ndarray  # (T, q, n)
    V: np.ndarray  # (T, q, q)
    G: np.ndarray  # (T, n, n)
    W: np.ndarray  # (T, n, n)
    m0: np.ndarray  # (n,)
    C0: np.ndarray  # (n, n)
    offset: np.ndarray | None = None  # (T, q)

    @classmethod
    def build(cls, F, V, G, W, m0, C0, T: int | None = None, offset=None) -> "DlmSpec":
        """Broadcast time-invariant pieces to full per-time arrays.

        ``F`` is ``(q, n)`` or ``(T, q, n)``; ``V`` is a scalar, ``(q, q)``,
        ``(T, q, q)``, or ``(T,)`` when ``q == 1``; ``G`` and ``W`` are
        ``(n, n)`` or ``(T, n, n)`` (``W`` may also be a scalar times I).
        """
        m0 = np.atleast_1d(np.asarray(m0, float))
        n = m0.shape[0]
        C0 = np.asarray(C0, float).reshape(n, n)
        F = np.asarray(F, float)
        V = np.asarray(V, float)
        G = np.asarray(G, float)
        W = np.asarray(W, float)
        if T is None:
            for arr in (F, V, G, W):
                if arr.ndim == 3:
                    T = arr.shape[0]
                    break
        if T is None:
            raise ConfigError("cannot infer T; pass it explicitly")
        if F.ndim == 1:
            F = F.reshape(1, n)
        if F.ndim == 2:
            F = np.broadcast_to(F, (T,) + F.shape)
        q = F.shape[1]
        if V.ndim == 0:
            V = np.broadcast_to(V * np.eye(q), (T, q, q))
        elif V.ndim == 1:
            if q != 1 or V.shape[0] != T:
                raise ConfigError("1-d V is only accepted as per-time scalar variances with q == 1")
            V = V.reshape(T, 1, 1)
        elif V.ndim == 2:
            V = np.broadcast_to(V, (T, q, q))
        if G.ndim < 3:
            G = np.broadcast_to(G.reshape(n, n), (T, n, n))
        if W.ndim == 0:
            W = W * np.eye(n)
        if W.ndim < 3:
            W = np.broadcast_to(W.reshape(n, n), (T, n, n))
        if offset is not None:
            offset = np.broadcast_to(np.asarray(offset, float).reshape(-1, q), (T, q))
        spec = cls(
            np.ascontiguousarray(F), np.ascontiguousarray(V), np.ascontiguousarray(G),
            np.ascontiguousarray(W), m0.copy(), C0.copy(),
            None if offset is None else np.ascontiguousarray(offset),
        )
        spec.check()
        return spec

    @property
    def T(self) -> int:
        return self.F.shape[0]

    @property
    def n(self) -> int:
        return self.m0.shape[0]

    @property
    def q(self) -> int:
        return self.F.shape[1]

    def check(self) -> None:
        T, q, n = self.F.shape
        if self.V.shape != (T, q, q) or self.G.shape != (T, n, n) or self.W.shape != (T, n, n):
            raise ConfigError("inconsistent DLM dimensions")
        if self.m0.shape != (n,) or self.C0.shape != (n, n):
            raise ConfigError("initial moments have wrong dimension")
        if self.offset is not None and self.offset.shape != (T, q):
            raise ConfigError("offset must be (T, q)")


@dataclass(frozen=True, eq=False)
class FilterResult:
    a: np.ndarray  # (T, n) prior means for t=1..T
    R: np.ndarray  # (T, n, n)
    m: np.ndarray  # (T+1, n) filtered means for t=0..T
    C: np.ndarray  # (T+1, n, n)
    loglik: float


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sym(A):
    return 0.5 * (A + A.T)


@njit(cache=True)
def _pinv_psd(A, tol):
    lam, U = np.linalg.eigh(_sym(A))
    top = 0.0
    for i in range(lam.shape[0]):
        if abs(lam[i]) > top:
            top = abs(lam[i])
    out = np.zeros_like(A)
    if top == 0.0:
        return out, lam
    for i in range(lam.shape[0]):
        if lam[i] > tol * top:
            u = U[:, i]
            out += np.outer(u, u) / lam[i]
    return out, lam


@njit(cache=True)
def _psd_sqrt(A):
    lam, U = np.linalg.eigh(_sym(A))
    L = np.empty_like(A)
    for i in range(lam.shape[0]):
        s = np.sqrt(lam[i]) if lam[i] > 0.0 else 0.0
        L[:, i] = U[:, i] * s
    return L


@njit(cache=True)
def _filter_kernel(y, F, V, G, W, off, m0, C0, diagV):
    T, q, n = F.shape
    a_all = np.empty((T, n))
    R_all = np.empty((T, n, n))
    m_all = np.empty((T + 1, n))
    C_all = np.empty((T + 1, n, n))
    m = m0.copy()
    C = _sym(C0)
    m_all[0] = m
    C_all[0] = C
    loglik = 0.0
    status = -1
    for t in range(T):
        Gt = G[t]
        a = Gt @ m
        R = _sym(Gt @ C @ Gt.T + W[t])
        a_all[t] = a
        R_all[t] = R
        m = a.copy()
        C = R.copy()
        if diagV:
            for j in range(q):
                yj = y[t, j]
                if not np.isfinite(yj):
                    continue
                f = F[t, j]
                Cf = C @ f
                Q = f @ Cf + V[t, j, j]
                scale = V[t, j, j]
                for u in range(n):
                    for v in range(n):
                        scale += abs(f[u] * f[v] * C[u, v])
                e = yj - off[t, j] - f @ m
                if not np.isfinite(Q):
                    return a_all, R_all, m_all, C_all, loglik, t + 1
                if scale == 0.0 or Q <= 1e-12 * scale:
                    if abs(e) <= 1e-8 * (1.0 + abs(yj)):
                        continue
                    return a_all, R_all, m_all, C_all, loglik, t + 1
                K = Cf / Q
                m = m + K * e
                C = _sym(C - np.outer(K, Cf))
                loglik += -0.5 * (np.log(2.0 * np.pi * Q) + e * e / Q)
        else:
            cnt = 0
            for j in range(q):
                if np.isfinite(y[t, j]):
                    cnt += 1
            if cnt == 0:
                m_all[t + 1] = m
                C_all[t + 1] = C
                continue
            idx = np.empty(cnt, dtype=np.int64)
            c = 0
            for j in range(q):
                if np.isfinite(y[t, j]):
                    idx[c] = j
                    c += 1
            Fo = np.empty((cnt, n))
            Vo = np.empty((cnt, cnt))
            e = np.empty(cnt)
            for u in range(cnt):
                Fo[u] = F[t, idx[u]]
                for v in range(cnt):
                    Vo[u, v] = V[t, idx[u], idx[v]]
            for u in range(cnt):
                e[u] = y[t, idx[u]] - off[t, idx[u]] - Fo[u] @ a
            Q = _sym(Fo @ R @ Fo.T + Vo)
            if not np.all(np.isfinite(Q)):
                return a_all, R_all, m_all, C_all, loglik, t + 1
            Qi, lam = _pinv_psd(Q, _EIG_TOL)
            top = np.max(np.abs(lam))
            if lam.shape[0] > 0 and np.min(lam) < -1e-10 * max(top, 1e-300):
                return a_all, R_all, m_all, C_all, loglik, t + 1
            # innovation must lie in the range of Q
            resid = e - Q @ (Qi @ e)
            if np.max(np.abs(resid)) > 1e-8 * (1.0 + np.max(np.abs(e))):
                return a_all, R_all, m_all, C_all, loglik, t + 1
            K = R @ Fo.T @ Qi
            IKF = np.eye(n) - K @ Fo
            m = a + K @ e
            C = _sym(IKF @ R @ IKF.T + K @ Vo @ K.T)
            logdet = 0.0
            for i in range(lam.shape[0]):
                if lam[i] > _EIG_TOL * top:
                    logdet += np.log(2.0 * np.pi * lam[i])
            loglik += -0.5 * (logdet + e @ (Qi @ e))
        m_all[t + 1] = m
        C_all[t + 1] = C
    return a_all, R_all, m_all, C_all, loglik, status


@njit(cache=True)
def _smooth_kernel(a_all, R_all, m_all, C_all, G):
    T = a_all.shape[0]
    n = m_all.shape[1]
    ms = np.empty((T + 1, n))
    Cs = np.empty((T + 1, n, n))
    ms[T] = m_all[T]
    Cs[T] = C_all[T]
    for t in range(T - 1, -1, -1):
        Ri, _ = _pinv_psd(R_all[t], _EIG_TOL)
        J = C_all[t] @ G[t].T @ Ri
        ms[t] = m_all[t] + J @ (ms[t + 1] - a_all[t])
        Cs[t] = _sym(C_all[t] + J @ (Cs[t + 1] - R_all[t]) @ J.T)
    return ms, Cs


@njit(cache=True)
def _backward_sample_kernel(a_all, R_all, m_all, C_all, G, z):
    S, T1, n = z.shape
    T = T1 - 1
    out = np.empty((S, T + 1, n))
    L = _psd_sqrt(C_all[T])
    for s in range(S):
        out[s, T] = m_all[T] + L @ z[s, T]
    for t in range(T - 1, -1, -1):
        Ri, _ = _pinv_psd(R_all[t], _EIG_TOL)
        J = C_all[t] @ G[t].T @ Ri
        H = C_all[t] - J @ G[t] @ C_all[t]
        L = _psd_sqrt(H)
        for s in range(S):
            h = m_all[t] + J @ (out[s, t + 1] - a_all[t])
            out[s, t] = h + L @ z[s, t]
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _is_diag(V: np.ndarray) -> bool:
    q = V.shape[-1]
    if q == 1:
        return True
    off = V * (1.0 - np.eye(q))
    return not np.any(off)


def forward_filter(spec: DlmSpec, observations) -> FilterResult:
    y = np.ascontiguousarray(np.asarray(observations, float).reshape(spec.T, spec.q))
    off = spec.offset if spec.offset is not None else np.zeros((spec.T, spec.q))
    a, R, m, C, loglik, status = _filter_kernel(
        y, spec.F, spec.V, spec.G, spec.W, off, spec.m0, spec.C0, _is_diag(spec.V)
    )
    if status >= 0:
        raise NumericalFailure(
            f"innovation covariance not positive semidefinite (or inconsistent) at t={status}",
            t=int(status),
        )
    return FilterResult(a, R, m, C, float(loglik))


def kalman_smooth_moments(spec: DlmSpec, observations):
    """Smoothed means ``(T+1, n)`` and covariances ``(T+1, n, n)`` for t=0..T."""
    fr = forward_filter(spec, observations)
    return _smooth_kernel(fr.a, fr.R, fr.m, fr.C, spec.G)


def ffbs_sample(spec: DlmSpec, observations, rng: np.random.Generator, size: int | None = None):
    """Forward-filter, backward-sample a state trajectory for t=0..T.

    With ``size`` set, returns ``size`` independent draws stacked on a new
    leading axis (the filter runs once).
    """
    fr = forward_filter(spec, observations)
    S = 1 if size is None else int(size)
    z = rng.standard_normal((S, spec.T + 1, spec.n))
    out = _backward_sample_kernel(fr.a, fr.R, fr.m, fr.C, spec.G, z)
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# discount variance learning
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VolatilityPath:
    variances: np.ndarray  # (..., T)
    discount: float
    n0: float
    s0: np.ndarray | float


def _check_discount(lam: float) -> None:
    if not 0.0 < lam <= 1.0:
        raise ConfigError(f"discount factor must lie in (0, 1], got {lam}")


def discount_filter(residuals, lam: float, n0, s0):
    """Filtered degrees of freedom and sums of squares.

    Returns ``(n, d)`` with shape ``(..., T+1)``; index 0 is the initial
    ``(n0, n0*s0)``.  The point estimate of the variance at time t is
    ``d[..., t] / n[..., t]``.  NaN residuals are skipped.
    """
    _check_discount(lam)
    e = np.asarray(residuals, float)
    obs = np.isfinite(e)
    e2 = np.where(obs, e, 0.0) ** 2
    n0 = np.broadcast_to(np.asarray(n0, float), e.shape[:-1])
    d0 = n0 * np.broadcast_to(np.asarray(s0, float), e.shape[:-1])
    coef_b, coef_a = [1.0], [1.0, -lam]
    n, _ = lfilter(coef_b, coef_a, obs.astype(float), axis=-1, zi=(lam * n0)[..., None])
    d, _ = lfilter(coef_b, coef_a, e2, axis=-1, zi=(lam * d0)[..., None])
    n = np.concatenate([n0[..., None], n], axis=-1)
    d = np.concatenate([d0[..., None], d], axis=-1)
    return n, d


def discount_variance_ffbs(residuals, lam: float, n0, s0, rng: np.random.Generator) -> VolatilityPath:
    """Draw a variance trajectory from its discount-model retrospective posterior.

    Precisions evolve as ``phi_t = phi_{t-1} * eta_t / lam`` with beta shocks;
    the backward pass draws ``phi_T ~ Ga(n_T/2, d_T/2)`` then
    ``phi_t = lam * phi_{t+1} + Ga((1-lam) n_t/2, d_t/2)``.  Vectorised over
    leading axes of ``residuals``.
    """
    n, d = discount_filter(residuals, lam, n0, s0)
    nT, dT = n[..., 1:], d[..., 1:]
    shape = (1.0 - lam) * nT / 2.0
    shape[..., -1] = nT[..., -1] / 2.0
    g = rng.gamma(shape, 1.0) / (dT / 2.0)
    # phi_t = lam * phi_{t+1} + g_t, run from t=T backwards
    phi = lfilter([1.0], [1.0, -lam], g[..., ::-1], axis=-1)[..., ::-1]
    return VolatilityPath(1.0 / phi, lam, float(np.mean(n0)), s0)
