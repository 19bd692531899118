"""Domain types, configuration, priors and validation.

Everything downstream (kernels, sampler, summaries, CLI) speaks in terms of
the containers defined here.  Arrays held by the frozen dataclasses are
marked read-only on construction so the objects behave as value types.

Index conventions used throughout the package
---------------------------------------------
* ``data`` is ``(T, m)``; row ``t-1`` holds ``y_t`` for ``t = 1..T``.
* ``x`` has length ``T + n`` with ``n = max(p, r)``; entry ``j`` is
  ``x_{j-n+1}`` so ``x[n-1+t]`` is ``x_t``.  Only ``x_{-p+1:T}`` is
  identified by the model; the extra ``n - p`` leading values (if any)
  are pure prior draws.
* ``delta`` is ``(T+1, p)``; row ``t`` is ``delta_t`` for ``t = 0..T``.
* ``beta`` is ``(m-1, r, T+1)``; ``beta[i-2, k-1, t]`` is ``beta_{ikt}``.
* ``alpha`` is ``(m, m, T+1)``; ``alpha[i-1, j-1, t]`` is ``alpha_{ijt}``.
* ``w`` is ``(T,)`` and ``sigma2`` is ``(m, T)`` for ``t = 1..T``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class ConfigError(ValueError):
    """Base class for invalid configuration, prior or data."""


class DimensionMismatchError(ConfigError):
    pass


class AnchorRangeError(ConfigError):
    pass


class StateDimensionError(ConfigError):
    pass


class NonFiniteDataError(ConfigError):
    pass


class PriorParameterError(ConfigError):
    pass


class NumericalFailure(RuntimeError):
    """Raised when a filtering recursion loses positive (semi)definiteness."""

    def __init__(self, message: str, t: int | None = None):
        super().__init__(message)
        self.t = t


VARIANTS = ("M", "M+")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    values: np.ndarray
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DimensionMismatchError("observations must be a (T, m) matrix")
        T, m = vals.shape
        if T < 2 or m < 2:
            raise DimensionMismatchError(f"need T >= 2 and m >= 2, got T={T}, m={m}")
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise NonFiniteDataError(
                f"non-finite observation at row {bad[0] + 1}, column {bad[1] + 1}"
            )
        names = tuple(self.channel_names) or tuple(f"y{i + 1}" for i in range(m))
        if len(names) != m:
            raise DimensionMismatchError(f"{len(names)} channel names for {m} channels")
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "channel_names", tuple(str(n) for n in names))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "channel_names": list(self.channel_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationMatrix":
        return cls(np.array(d["values"], dtype=float), tuple(d["channel_names"]))

    def __eq__(self, other):
        return (
            isinstance(other, ObservationMatrix)
            and self.channel_names == other.channel_names
            and np.array_equal(self.values, other.values)
        )


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McmcSettings:
    burn_in: int = 5000
    draws: int = 20000
    thin: int = 1
    rng_seed: int = 0
    # independence-proposal scale for phi, adapted during burn-in only
    phi_proposal_scale: float = 1.0
    adapt_phi: bool = True
    adapt_target: float = 0.5
    adapt_window: int = 50

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "McmcSettings":
        return cls(**d)


@dataclass(frozen=True)
class ModelConfig:
    """Model dimensions, discount factors and run settings.

    ``K`` may be a scalar or an ``(m-1, r)`` array of per-coefficient
    multipliers for the threshold prior range.  ``K_alpha`` (Model M+) is a
    scalar or ``(m, m)`` array and defaults to ``K``.
    """

    m: int = 19
    p: int = 6
    r: int = 5
    s: int = 3
    variant: str = "M"
    lambda_w: float = 0.99
    lambda_sigma: float = 0.99
    K: Any = 3.0
    K_alpha: Any = None
    mcmc: McmcSettings = field(default_factory=McmcSettings)

    def __post_init__(self):
        for name in ("K", "K_alpha"):
            val = getattr(self, name)
            if val is not None and np.ndim(val) > 0:
                object.__setattr__(self, name, _frozen(val))

    @property
    def n_state(self) -> int:
        return max(self.p, self.r)

    @property
    def plus(self) -> bool:
        return self.variant == "M+"

    def K_beta_array(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.K, float), (self.m - 1, self.r))

    def K_alpha_array(self) -> np.ndarray:
        K = self.K if self.K_alpha is None else self.K_alpha
        if np.ndim(K) == 2 and np.shape(K) != (self.m, self.m):
            K = float(np.mean(K))
        return np.broadcast_to(np.asarray(K, float), (self.m, self.m))

    def to_dict(self) -> dict:
        d = {
            "m": self.m, "p": self.p, "r": self.r, "s": self.s,
            "variant": self.variant,
            "lambda_w": self.lambda_w, "lambda_sigma": self.lambda_sigma,
            "K": np.asarray(self.K).tolist(),
            "K_alpha": None if self.K_alpha is None else np.asarray(self.K_alpha).tolist(),
            "mcmc": self.mcmc.to_dict(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        mc = d.pop("mcmc", None)
        mcmc = McmcSettings.from_dict(mc) if isinstance(mc, dict) else (mc or McmcSettings())
        return cls(mcmc=mcmc, **d)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate); mean shape/rate."""

    shape: float
    rate: float

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class BetaPrior:
    a: float
    b: float


@dataclass(frozen=True)
class NormalPrior:
    mean: float
    variance: float


@dataclass(frozen=True, eq=False)
class WishartPrior:
    """Wishart(dof, scale) with E[X] = dof * scale."""

    dof: float
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scale", _frozen(np.atleast_2d(self.scale)))

    def __eq__(self, other):
        return (
            isinstance(other, WishartPrior)
            and self.dof == other.dof
            and np.array_equal(self.scale, other.scale)
        )


@dataclass(frozen=True, eq=False)
class MvNormalPrior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.atleast_1d(self.mean)))
        object.__setattr__(self, "cov", _frozen(np.atleast_2d(self.cov)))

    def __eq__(self, other):
        return (
            isinstance(other, MvNormalPrior)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
        )


@dataclass(frozen=True, eq=False)
class VolatilityInit:
    """Initial (n0, s0) of the discount variance recursions.

    ``s0_w`` is a scalar for the TVAR innovation variance; ``s0_sigma`` has
    one entry per channel (entry 0 is unused because channel 1 has a static
    variance).  ``None`` means "resolve from the data at fit time".
    """

    n0: float = 1.0
    s0_w: float | None = None
    s0_sigma: np.ndarray | None = None

    def __post_init__(self):
        if self.s0_sigma is not None:
            object.__setattr__(self, "s0_sigma", _frozen(np.atleast_1d(self.s0_sigma)))

    def __eq__(self, other):
        if not isinstance(other, VolatilityInit):
            return False
        same_sig = (self.s0_sigma is None and other.s0_sigma is None) or (
            self.s0_sigma is not None
            and other.s0_sigma is not None
            and np.array_equal(self.s0_sigma, other.s0_sigma)
        )
        return self.n0 == other.n0 and self.s0_w == other.s0_w and same_sig


@dataclass(frozen=True)
class PriorSpec:
    sigma1_prec: GammaPrior
    v_prec: GammaPrior
    phi_beta: BetaPrior
    mu_normal: NormalPrior
    psi_prec: WishartPrior
    delta0: MvNormalPrior
    volatility_init: VolatilityInit = field(default_factory=VolatilityInit)
    x0_variance: float | None = None
    y0_variance: float | None = None

    def to_dict(self) -> dict:
        vi = self.volatility_init
        return {
            "sigma1_prec": dataclasses.asdict(self.sigma1_prec),
            "v_prec": dataclasses.asdict(self.v_prec),
            "phi_beta": dataclasses.asdict(self.phi_beta),
            "mu_normal": dataclasses.asdict(self.mu_normal),
            "psi_prec": {"dof": self.psi_prec.dof, "scale": self.psi_prec.scale.tolist()},
            "delta0": {"mean": self.delta0.mean.tolist(), "cov": self.delta0.cov.tolist()},
            "volatility_init": {
                "n0": vi.n0,
                "s0_w": vi.s0_w,
                "s0_sigma": None if vi.s0_sigma is None else vi.s0_sigma.tolist(),
            },
            "x0_variance": self.x0_variance,
            "y0_variance": self.y0_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        vi = d.get("volatility_init") or {}
        return cls(
            sigma1_prec=GammaPrior(**d["sigma1_prec"]),
            v_prec=GammaPrior(**d["v_prec"]),
            phi_beta=BetaPrior(**d["phi_beta"]),
            mu_normal=NormalPrior(**d["mu_normal"]),
            psi_prec=WishartPrior(d["psi_prec"]["dof"], np.array(d["psi_prec"]["scale"], float)),
            delta0=MvNormalPrior(np.array(d["delta0"]["mean"], float), np.array(d["delta0"]["cov"], float)),
            volatility_init=VolatilityInit(
                n0=vi.get("n0", 1.0),
                s0_w=vi.get("s0_w"),
                s0_sigma=None if vi.get("s0_sigma") is None else np.array(vi["s0_sigma"], float),
            ),
            x0_variance=d.get("x0_variance"),
            y0_variance=d.get("y0_variance"),
        )


def default_priors(config: ModelConfig) -> PriorSpec:
    """Prior settings used in the EEG study (shape-rate gammas)."""
    p = config.p
    return PriorSpec(
        sigma1_prec=GammaPrior(500.0, 1e4),
        v_prec=GammaPrior(50.0, 0.01),
        phi_beta=BetaPrior(20.0, 1.5),
        mu_normal=NormalPrior(0.0, 1.0),
        psi_prec=WishartPrior(100.0, 1e-3 * np.eye(p)),
        delta0=MvNormalPrior(np.zeros(p), np.eye(p)),
        volatility_init=VolatilityInit(n0=1.0),
    )


def default_config(**overrides) -> ModelConfig:
    """The EEG-study configuration (m=19, p=6, r=5, anchor at lag index 3)."""
    return dataclasses.replace(ModelConfig(), **overrides)


# ---------------------------------------------------------------------------
# Latent state
# ---------------------------------------------------------------------------


STATE_FIELDS = (
    "x", "delta", "w", "sigma2", "beta", "d", "mu", "phi", "v", "psi",
    "alpha", "d_a", "mu_a", "phi_a", "v_a", "y0",
)
PLUS_FIELDS = ("alpha", "d_a", "mu_a", "phi_a", "v_a", "y0")


@dataclass(frozen=True, eq=False)
class LatentStateSet:
    """One configuration of every latent quantity (see module docstring)."""

    x: np.ndarray
    delta: np.ndarray
    w: np.ndarray
    sigma2: np.ndarray
    beta: np.ndarray
    d: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    alpha: np.ndarray | None = None
    d_a: np.ndarray | None = None
    mu_a: np.ndarray | None = None
    phi_a: np.ndarray | None = None
    v_a: np.ndarray | None = None
    y0: np.ndarray | None = None

    def __post_init__(self):
        for name in STATE_FIELDS:
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val))

    @property
    def plus(self) -> bool:
        return self.alpha is not None

    @property
    def s_indicators(self) -> np.ndarray:
        return np.abs(self.beta) >= self.d[..., None]

    @property
    def b(self) -> np.ndarray:
        """Thresholded free loadings, shape (m-1, r, T+1)."""
        return np.where(self.s_indicators, self.beta, 0.0)

    @property
    def s_alpha(self) -> np.ndarray | None:
        if self.alpha is None:
            return None
        return np.abs(self.alpha) >= self.d_a[..., None]

    @property
    def a(self) -> np.ndarray | None:
        if self.alpha is None:
            return None
        return np.where(self.s_alpha, self.alpha, 0.0)

    def loadings(self, s: int) -> np.ndarray:
        """Full loading array B of shape (m, r, T+1) with the anchor row."""
        b = self.b
        anchor = np.zeros((1,) + b.shape[1:])
        anchor[0, s - 1, :] = 1.0
        return np.concatenate([anchor, b], axis=0)

    def replace(self, **changes) -> "LatentStateSet":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: (None if getattr(self, k) is None else getattr(self, k).tolist()) for k in STATE_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "LatentStateSet":
        return cls(**{k: (None if d.get(k) is None else np.array(d[k], float)) for k in STATE_FIELDS})

    def __eq__(self, other):
        if not isinstance(other, LatentStateSet):
            return False
        for k in STATE_FIELDS:
            a, b = getattr(self, k), getattr(other, k)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


def state_shapes(config: ModelConfig, T: int) -> dict[str, tuple[int, ...]]:
    m, p, r, n = config.m, config.p, config.r, config.n_state
    shapes = {
        "x": (T + n,),
        "delta": (T + 1, p),
        "w": (T,),
        "sigma2": (m, T),
        "beta": (m - 1, r, T + 1),
        "d": (m - 1, r),
        "mu": (m - 1, r),
        "phi": (m - 1, r),
        "v": (m - 1, r),
        "psi": (p, p),
    }
    if config.plus:
        shapes.update({
            "alpha": (m, m, T + 1),
            "d_a": (m, m),
            "mu_a": (m, m),
            "phi_a": (m, m),
            "v_a": (m, m),
            "y0": (m,),
        })
    return shapes


def check_state(state: LatentStateSet, config: ModelConfig, T: int) -> None:
    """Dimension and invariant checks for a state (raises ConfigError)."""
    for name, shape in state_shapes(config, T).items():
        val = getattr(state, name)
        if val is None or val.shape != shape:
            got = None if val is None else val.shape
            raise DimensionMismatchError(f"state field {name!r} has shape {got}, expected {shape}")
    if np.any(np.abs(state.phi) >= 1):
        raise ConfigError("|phi| must be < 1")
    if np.any(state.d < 0) or np.any(state.v <= 0):
        raise ConfigError("thresholds must be >= 0 and v > 0")
    if np.any(state.w <= 0) or np.any(state.sigma2 <= 0):
        raise ConfigError("variances must be positive")
    try:
        np.linalg.cholesky(state.psi)
    except np.linalg.LinAlgError:
        raise ConfigError("psi must be positive definite") from None


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PosteriorDraws:
    """Thinned draws stored column-wise: ``fields[name]`` is ``(n_draws, ...)``."""

    config: ModelConfig
    prior: PriorSpec
    fields: dict[str, np.ndarray]
    loglik: np.ndarray
    acceptance: dict[str, float]
    channel_names: tuple[str, ...] = ()
    T: int = 0

    def __len__(self) -> int:
        return int(self.loglik.shape[0])

    def __getitem__(self, j: int) -> LatentStateSet:
        return LatentStateSet(**{k: v[j] for k, v in self.fields.items()})

    def __iter__(self):
        for j in range(len(self)):
            yield self[j]

    @property
    def s_indicators(self) -> np.ndarray:
        return np.abs(self.fields["beta"]) >= self.fields["d"][..., None]

    @property
    def b(self) -> np.ndarray:
        return np.where(self.s_indicators, self.fields["beta"], 0.0)

    @property
    def s_alpha(self) -> np.ndarray | None:
        if "alpha" not in self.fields:
            return None
        return np.abs(self.fields["alpha"]) >= self.fields["d_a"][..., None]

    @property
    def a(self) -> np.ndarray | None:
        if "alpha" not in self.fields:
            return None
        return np.where(self.s_alpha, self.fields["alpha"], 0.0)

    def x_identified(self) -> np.ndarray:
        """x_{-p+1:T} per draw, shape (n_draws, T+p)."""
        extra = self.config.n_state - self.config.p
        return self.fields["x"][:, extra:]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _positive(name: str, *vals) -> None:
    for v in vals:
        if not np.all(np.isfinite(v)) or np.any(np.asarray(v) <= 0):
            raise PriorParameterError(f"prior parameter {name} must be strictly positive, got {v}")


def validate_config(config: ModelConfig, prior: PriorSpec, data: ObservationMatrix | None = None):
    """Check every invariant; return ``(config, prior, data)`` unchanged."""
    if config.variant not in VARIANTS:
        raise ConfigError(f"unknown model variant {config.variant!r}; expected one of {VARIANTS}")
    if config.p < 1:
        raise StateDimensionError("TVAR order p must be >= 1")
    if config.r < 1:
        raise StateDimensionError("number of factor lags r must be >= 1")
    if not 1 <= config.s <= config.r:
        raise AnchorRangeError(f"anchor index out of range: s={config.s} not in 1..{config.r}")
    if config.r > config.p + 1:
        raise StateDimensionError(f"r exceeds p+1 (r={config.r}, p={config.p})")
    if config.m < 2:
        raise DimensionMismatchError("need at least two channels")
    for name in ("lambda_w", "lambda_sigma"):
        lam = getattr(config, name)
        if not 0.8 < lam <= 1.0:
            raise ConfigError(f"discount factor {name}={lam} outside (0.8, 1]")
    K = np.asarray(config.K, float)
    if K.ndim not in (0, 2) or (K.ndim == 2 and K.shape != (config.m - 1, config.r)):
        raise DimensionMismatchError(f"K must be scalar or shape {(config.m - 1, config.r)}")
    if not np.all(K > 0):
        raise ConfigError("threshold prior multiplier K must be > 0")
    if config.K_alpha is not None and not np.all(np.asarray(config.K_alpha, float) > 0):
        raise ConfigError("K_alpha must be > 0")
    mc = config.mcmc
    if mc.burn_in < 0 or mc.draws < 1 or mc.thin < 1:
        raise ConfigError("need burn_in >= 0, draws >= 1, thin >= 1")

    _positive("sigma1_prec", prior.sigma1_prec.shape, prior.sigma1_prec.rate)
    _positive("v_prec", prior.v_prec.shape, prior.v_prec.rate)
    _positive("phi_beta", prior.phi_beta.a, prior.phi_beta.b)
    _positive("mu_normal.variance", prior.mu_normal.variance)
    _positive("psi_prec.dof", prior.psi_prec.dof)
    if prior.psi_prec.scale.shape != (config.p, config.p):
        raise DimensionMismatchError(f"Wishart scale must be {config.p}x{config.p}")
    if prior.psi_prec.dof <= config.p - 1:
        raise PriorParameterError("Wishart dof must exceed p-1")
    try:
        np.linalg.cholesky(prior.psi_prec.scale)
    except np.linalg.LinAlgError:
        raise PriorParameterError("Wishart scale must be positive definite") from None
    if prior.delta0.mean.shape != (config.p,) or prior.delta0.cov.shape != (config.p, config.p):
        raise DimensionMismatchError("delta0 prior must have dimension p")
    vi = prior.volatility_init
    _positive("volatility_init.n0", vi.n0)
    if vi.s0_w is not None:
        _positive("volatility_init.s0_w", vi.s0_w)
    if vi.s0_sigma is not None:
        if vi.s0_sigma.shape != (config.m,):
            raise DimensionMismatchError("volatility_init.s0_sigma needs one entry per channel")
        _positive("volatility_init.s0_sigma", vi.s0_sigma)
    for name in ("x0_variance", "y0_variance"):
        val = getattr(prior, name)
        if val is not None:
            _positive(name, val)

    if data is not None:
        if data.m != config.m:
            raise DimensionMismatchError(f"data has {data.m} channels but config.m={config.m}")
        if not np.all(np.isfinite(data.values)):
            raise NonFiniteDataError("non-finite data")
    return config, prior, data
