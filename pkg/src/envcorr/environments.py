"""Two-bit and anti-causal synthetic environments.

An environment is a joint distribution over observed features and a label.
Two generative processes are implemented:

Two-bit process (parameters ``alpha``, ``beta``, one noise law per env)::

    hidden invariant bit   xh1 ~ Rad(0.5)
    label                  y   = xh1 * Rad(alpha)
    hidden spurious bit    xh2 = y * Rad(beta)
    observed features      x1  = xh1 + eta,   x2 = xh2 + eta

where ``Rad(d)`` is -1 with probability ``d`` and +1 otherwise, and ``eta``
is a single shared noise draw per sample added to both coordinates (the
cross moment E[x1*x2] = a*b + mu^2 + sigma^2 only holds for a shared draw).
With ``a = 1 - 2*alpha`` and ``b = 1 - 2*beta`` the population second
moments have closed forms for no noise and Gaussian noise:

    E[x1^2] = E[x2^2] = 1 + mu^2 + sigma^2
    E[x1*x2]          = a*b + mu^2 + sigma^2
    E[x1*y] = a,  E[x2*y] = b,  E[x1] = E[x2] = mu,  E[y^2] = 1

Anti-causal process (``SemConfig``): a hidden invariant vector generates a
continuous label, the label generates spurious coordinates, per-environment
noise is added to both blocks, and an invertible square matrix S mixes them
into the observed input.  The top ``d_inv`` rows of S^-1 give the left
inverse used by the oracle predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOISE_KINDS = ("none", "gaussian", "uniform", "poisson-centered")

# Noise kinds with closed-form two-bit moments.
_ANALYTIC_KINDS = ("none", "gaussian")


class EnvcorrError(Exception):
    """Base error for this package."""


class NoClosedFormError(EnvcorrError):
    """A closed form was requested for a case it is not derived for."""


class ConfigError(EnvcorrError, ValueError):
    """Invalid configuration or domain-violating parameters."""


@dataclass(frozen=True)
class NoiseSpec:
    """Additive per-environment noise law.

    ``scale`` is the standard deviation for ``gaussian``, the half-width of
    the recentered interval for ``uniform``, and the Poisson rate for
    ``poisson-centered`` (sample = draw - rate + mean).
    """

    kind: str = "none"
    mean: float = 0.0
    scale: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ConfigError("noise scale must be >= 0")
        if self.kind == "none" and (self.mean != 0.0 or self.scale != 0.0):
            raise ConfigError("kind='none' requires mean=0 and scale=0")

    @property
    def variance(self) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "gaussian":
            return self.scale**2
        if self.kind == "uniform":
            return self.scale**2 / 3.0
        return self.scale  # poisson-centered: Var(Poisson(rate)) = rate

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(n)
        if self.kind == "gaussian":
            return rng.normal(self.mean, self.scale, n)
        if self.kind == "uniform":
            return rng.uniform(self.mean - self.scale, self.mean + self.scale, n)
        # poisson-centered
        return rng.poisson(self.scale, n) - self.scale + self.mean


def gaussian_noise(mean: float, var: float) -> NoiseSpec:
    """Gaussian NoiseSpec from (mean, variance), the parameterization used
    throughout the loss tables."""
    return NoiseSpec("gaussian", mean, float(np.sqrt(var)))


NO_NOISE = NoiseSpec()


@dataclass(frozen=True)
class EnvironmentSpec:
    """One two-bit environment (alpha, beta, noise)."""

    alpha: float
    beta: float
    noise: NoiseSpec = NO_NOISE

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigError("alpha and beta must lie in [0, 1]")

    @property
    def a(self) -> float:
        return 1.0 - 2.0 * self.alpha

    @property
    def b(self) -> float:
        return 1.0 - 2.0 * self.beta


@dataclass(frozen=True)
class Moments:
    """Population second moments of (x1, x2, y) for one environment."""

    m11: float
    m22: float
    m12: float
    m1y: float
    m2y: float
    m1: float
    m2: float
    myy: float = 1.0


@dataclass(frozen=True)
class Dataset:
    """Finite sample from one environment; y entries are -1/+1."""

    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    spec: EnvironmentSpec | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if not (len(self.x1) == len(self.x2) == len(self.y)):
            raise ConfigError("x1, x2, y must have equal length")

    @property
    def n(self) -> int:
        return len(self.y)

    def features(self) -> np.ndarray:
        return np.column_stack([self.x1, self.x2])

    def to_csv(self, path) -> None:
        header = "x1,x2,y"
        np.savetxt(path, self.features_with_label(), delimiter=",",
                   header=header, comments="", fmt="%.17g")

    def features_with_label(self) -> np.ndarray:
        return np.column_stack([self.x1, self.x2, self.y])


def rademacher(rng: np.random.Generator, delta: float, n: int) -> np.ndarray:
    """-1 with probability delta, +1 otherwise."""
    return np.where(rng.random(n) < delta, -1.0, 1.0)


def two_bit_moments(env: EnvironmentSpec) -> Moments:
    """Closed-form population moments; only 'none' and 'gaussian' noise."""
    if env.noise.kind not in _ANALYTIC_KINDS:
        raise NoClosedFormError(
            f"no closed-form moments for {env.noise.kind!r} noise; "
            "use empirical_moments on a sample instead")
    k = env.noise.mean**2 + env.noise.variance
    a, b = env.a, env.b
    return Moments(m11=1.0 + k, m22=1.0 + k, m12=a * b + k,
                   m1y=a, m2y=b, m1=env.noise.mean, m2=env.noise.mean)


def sample_two_bit(env: EnvironmentSpec, n: int, seed: int) -> Dataset:
    """Draw n samples; one shared noise draw per sample on both features."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    xh1 = rademacher(rng, 0.5, n)
    y = xh1 * rademacher(rng, env.alpha, n)
    xh2 = y * rademacher(rng, env.beta, n)
    eta = env.noise.draw(rng, n)
    return Dataset(x1=xh1 + eta, x2=xh2 + eta, y=y, spec=env, seed=seed)


def empirical_moments(data: Dataset) -> Moments:
    """Plug-in sample averages of all eight moment fields."""
    if data.n == 0:
        raise ConfigError("empty dataset")
    x1, x2, y = data.x1, data.x2, data.y
    return Moments(
        m11=float(np.mean(x1 * x1)), m22=float(np.mean(x2 * x2)),
        m12=float(np.mean(x1 * x2)), m1y=float(np.mean(x1 * y)),
        m2y=float(np.mean(x2 * y)), m1=float(np.mean(x1)),
        m2=float(np.mean(x2)), myy=float(np.mean(y * y)))


# ---------------------------------------------------------------------------
# Anti-causal structural model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SemEnvironment:
    """Per-environment noise laws and spurious-link flip rate."""

    noise_inv: NoiseSpec = NO_NOISE
    noise_s: NoiseSpec = NO_NOISE
    beta: float = 0.2


@dataclass(frozen=True)
class SemConfig:
    """Anti-causal generator: y = gamma.x_inv + eta_y, mixed observation."""

    gamma: np.ndarray
    d_s: int
    envs: tuple[SemEnvironment, ...]
    mixing: np.ndarray
    label_noise_var: float = 0.0
    inv_law: str = "rademacher"  # zero mean, unit variance per coordinate

    def __post_init__(self) -> None:
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "gamma", gamma)
        if not np.any(gamma != 0.0):
            raise ConfigError("gamma must be nonzero")
        if self.d_s < 1:
            raise ConfigError("d_s must be >= 1")
        if self.label_noise_var < 0:
            raise ConfigError("label_noise_var must be >= 0")
        if self.inv_law not in ("rademacher", "gaussian"):
            raise ConfigError(f"unknown inv_law {self.inv_law!r}")
        d = self.d_inv + self.d_s
        s = np.asarray(self.mixing, dtype=float)
        if s.shape != (d, d):
            raise ConfigError(f"mixing must be {d}x{d}, got {s.shape}")
        # Reject numerically singular S at load time.
        if np.linalg.cond(s) > 1e8:
            raise ConfigError("mixing matrix is singular or ill-conditioned")
        object.__setattr__(self, "mixing", s)

    @property
    def d_inv(self) -> int:
        return int(self.gamma.shape[0])

    @property
    def s_tilde(self) -> np.ndarray:
        """Left inverse recovering the invariant block: top rows of S^-1."""
        return np.linalg.inv(self.mixing)[: self.d_inv]

    @property
    def inv_feature_variance(self) -> float:
        """Var(gamma . xh_inv); coordinates are iid with unit variance."""
        return float(np.sum(self.gamma**2))


@dataclass(frozen=True)
class SemSample:
    """Observed table plus the hidden invariant block for oracle checks."""

    x: np.ndarray
    y: np.ndarray
    x_inv_hidden: np.ndarray
    env_index: int
    seed: int

    @property
    def n(self) -> int:
        return len(self.y)


def random_mixing(d: int, seed: int) -> np.ndarray:
    """Random well-conditioned invertible d x d matrix."""
    rng = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(rng.normal(size=(d, d)))
    q2, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q1 @ np.diag(rng.uniform(0.7, 1.5, d)) @ q2


def sem_generate(cfg: SemConfig, env_index: int, n: int, seed: int) -> SemSample:
    """Sample (x, y) from one SEM environment; also return hidden x_inv."""
    if not (0 <= env_index < len(cfg.envs)):
        raise ConfigError(f"env_index {env_index} out of range")
    if n < 1:
        raise ConfigError("n must be >= 1")
    env = cfg.envs[env_index]
    rng = np.random.default_rng(seed)
    if cfg.inv_law == "rademacher":
        xh_inv = rademacher(rng, 0.5, n * cfg.d_inv).reshape(n, cfg.d_inv)
    else:
        xh_inv = rng.normal(size=(n, cfg.d_inv))
    eta_y = (rng.normal(0.0, np.sqrt(cfg.label_noise_var), n)
             if cfg.label_noise_var > 0 else np.zeros(n))
    y = xh_inv @ cfg.gamma + eta_y
    # Spurious block: per-coordinate sign flips of the label.
    flips = rademacher(rng, env.beta, n * cfg.d_s).reshape(n, cfg.d_s)
    xh_s = y[:, None] * flips
    eta_inv = env.noise_inv.draw(rng, n * cfg.d_inv).reshape(n, cfg.d_inv)
    eta_s = env.noise_s.draw(rng, n * cfg.d_s).reshape(n, cfg.d_s)
    stacked = np.hstack([xh_inv + eta_inv, xh_s + eta_s])
    x = stacked @ cfg.mixing.T
    return SemSample(x=x, y=y, x_inv_hidden=xh_inv, env_index=env_index,
                     seed=seed)
