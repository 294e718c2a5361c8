"""Population risk, correlation, and invariance penalties for the linear model.

Everything here is exact moment algebra for the predictor
``f(x) = w1*x1 + w2*x2`` under square loss ``R = E[(f - y)^2] / 2``:

    R(w)      = (w1^2 m11 + w2^2 m22 + 2 w1 w2 m12
                 - 2 w1 m1y - 2 w2 m2y + myy) / 2
    rho(w)    = E[(f - E f) y] = w1 m1y + w2 m2y      (E[y] = 0)
    D(w)      = E[(f - y) f]   = w1^2 m11 + 2 w1 w2 m12 + w2^2 m22
                                 - w1 m1y - w2 m2y

Penalties compare per-environment summaries across a set of environments:

    icorr   variance over envs of rho
    vrex    variance over envs of R
    irmv1   sum over envs of D^2
    iga     squared deviation of per-env risk gradients dR/dw
    fishr   squared deviation of per-coordinate variances of the
            per-sample gradient (f - y) * (x1, x2)
    ib_erm  sum over envs and labels of Var(f | y)

Variances over environments divide by the number of environments.  The
deviation-style penalties (iga, fishr) use ``(4/m) * sum_e |u_e - mean u|^2``
so that two environments reduce exactly to the pairwise form
``|u_1 - u_2|^2``.  Fishr needs fourth moments, which are estimated once per
environment from a fixed-seed sample (plug-in moment table); its value and
gradient are exact functions of that frozen table.  ib_erm uses the two-bit
conditional-variance identity Var(f|y) = Var(f) - E[f y]^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environments import (
    ConfigError,
    Dataset,
    EnvironmentSpec,
    Moments,
    sample_two_bit,
)

PENALTY_KINDS = ("icorr", "irmv1", "vrex", "iga", "fishr", "ib_erm")

# E[y] for the two-bit label; y = xh1 * Rad(alpha) is symmetric.
LABEL_MEAN = 0.0


@dataclass(frozen=True)
class LinearParams:
    """Weight pair of the linear predictor f = w1*x1 + w2*x2."""

    w1: float
    w2: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.w1) and math.isfinite(self.w2)):
            raise ConfigError("weights must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2])

    @property
    def norm(self) -> float:
        return float(math.hypot(self.w1, self.w2))


@dataclass(frozen=True)
class Objective:
    """Penalty kind plus a finite weight; lambda=inf lives in the oracle."""

    penalty: str
    lam: float

    def __post_init__(self) -> None:
        if self.penalty not in PENALTY_KINDS:
            raise ConfigError(f"unknown penalty {self.penalty!r}; "
                              f"valid: {', '.join(PENALTY_KINDS)}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")


def population_risk(m: Moments, w: LinearParams) -> float:
    return 0.5 * (w.w1**2 * m.m11 + w.w2**2 * m.m22 + 2 * w.w1 * w.w2 * m.m12
                  - 2 * w.w1 * m.m1y - 2 * w.w2 * m.m2y + m.myy)


def population_correlation(m: Moments, w: LinearParams,
                           centered: bool = True) -> float:
    """E[(f - E f) * y]; the centering term vanishes because E[y] = 0.

    Both code paths are kept: ``centered=False`` returns plain E[f*y].
    """
    raw = w.w1 * m.m1y + w.w2 * m.m2y
    if not centered:
        return raw
    return raw - (w.w1 * m.m1 + w.w2 * m.m2) * LABEL_MEAN


def population_dummy_gradient(m: Moments, w: LinearParams) -> float:
    """d/dv of the per-env risk of v*f at v=1, i.e. E[(f - y) f]."""
    return (w.w1**2 * m.m11 + 2 * w.w1 * w.w2 * m.m12 + w.w2**2 * m.m22
            - w.w1 * m.m1y - w.w2 * m.m2y)


def risk_gradient(m: Moments, w: LinearParams) -> np.ndarray:
    """dR/dw = (w1 m11 + w2 m12 - m1y, w2 m22 + w1 m12 - m2y)."""
    return np.array([w.w1 * m.m11 + w.w2 * m.m12 - m.m1y,
                     w.w2 * m.m22 + w.w1 * m.m12 - m.m2y])


def _risk_hessian(m: Moments) -> np.ndarray:
    return np.array([[m.m11, m.m12], [m.m12, m.m22]])


def env_variance(values) -> float:
    """Variance over a finite set of environments (divide by m)."""
    v = np.asarray(values, dtype=float)
    return float(np.mean((v - v.mean()) ** 2))


# ---------------------------------------------------------------------------
# Fourth-moment tables for the fishr penalty (fixed-seed plug-in estimator)
# ---------------------------------------------------------------------------

FISHR_MC_N = 10**6
FISHR_MC_SEED = 20240

# (p, q, s) exponents of x1^p x2^q y^s needed by the fishr algebra.
_FOURTH_KEYS = (
    (2, 0, 0), (0, 2, 0), (1, 1, 0), (1, 0, 1), (0, 1, 1),
    (4, 0, 0), (0, 4, 0), (2, 2, 0), (3, 1, 0), (1, 3, 0),
    (3, 0, 1), (0, 3, 1), (2, 1, 1), (1, 2, 1),
)


@dataclass(frozen=True)
class FourthMoments:
    """Plug-in mixed moments E[x1^p x2^q y^s] up to total degree four."""

    table: dict

    @classmethod
    def from_arrays(cls, x1: np.ndarray, x2: np.ndarray,
                    y: np.ndarray) -> "FourthMoments":
        table = {}
        for p, q, s in _FOURTH_KEYS:
            v = np.ones_like(x1)
            if p:
                v = v * x1**p
            if q:
                v = v * x2**q
            if s:
                v = v * y
            table[(p, q, s)] = float(np.mean(v))
        return cls(table=table)

    @classmethod
    def from_dataset(cls, data: Dataset) -> "FourthMoments":
        return cls.from_arrays(data.x1, data.x2, data.y)

    def __getitem__(self, key) -> float:
        return self.table[key]


_FISHR_CACHE: dict = {}


def fishr_tables(envs, n: int = FISHR_MC_N,
                 seed: int = FISHR_MC_SEED) -> list[FourthMoments]:
    """Fixed-seed Monte Carlo fourth-moment tables, one per environment."""
    out = []
    for i, env in enumerate(envs):
        key = (env, n, seed, i)
        if key not in _FISHR_CACHE:
            data = sample_two_bit(env, n, seed + i)
            _FISHR_CACHE[key] = FourthMoments.from_dataset(data)
        out.append(_FISHR_CACHE[key])
    return out


def _gradient_variances(t: FourthMoments, w: LinearParams):
    """Per-coordinate variance of (f - y)*(x1, x2) and its w-Jacobian."""
    w1, w2 = w.w1, w.w2
    e_rx1 = w1 * t[2, 0, 0] + w2 * t[1, 1, 0] - t[1, 0, 1]
    e_rx2 = w1 * t[1, 1, 0] + w2 * t[0, 2, 0] - t[0, 1, 1]
    d_rx1 = np.array([t[2, 0, 0], t[1, 1, 0]])
    d_rx2 = np.array([t[1, 1, 0], t[0, 2, 0]])
    e_r2x1 = (w1**2 * t[4, 0, 0] + w2**2 * t[2, 2, 0] + t[2, 0, 0]
              + 2 * w1 * w2 * t[3, 1, 0] - 2 * w1 * t[3, 0, 1]
              - 2 * w2 * t[2, 1, 1])
    e_r2x2 = (w1**2 * t[2, 2, 0] + w2**2 * t[0, 4, 0] + t[0, 2, 0]
              + 2 * w1 * w2 * t[1, 3, 0] - 2 * w1 * t[1, 2, 1]
              - 2 * w2 * t[0, 3, 1])
    d_r2x1 = np.array([2 * w1 * t[4, 0, 0] + 2 * w2 * t[3, 1, 0] - 2 * t[3, 0, 1],
                       2 * w2 * t[2, 2, 0] + 2 * w1 * t[3, 1, 0] - 2 * t[2, 1, 1]])
    d_r2x2 = np.array([2 * w1 * t[2, 2, 0] + 2 * w2 * t[1, 3, 0] - 2 * t[1, 2, 1],
                       2 * w2 * t[0, 4, 0] + 2 * w1 * t[1, 3, 0] - 2 * t[0, 3, 1]])
    u = np.array([e_r2x1 - e_rx1**2, e_r2x2 - e_rx2**2])
    jac = np.vstack([d_r2x1 - 2 * e_rx1 * d_rx1,
                     d_r2x2 - 2 * e_rx2 * d_rx2])
    return u, jac


def _conditional_variance(m: Moments, w: LinearParams) -> float:
    """Var(f | y) under the two-bit structure: Var(f) - E[f y]^2."""
    ef2 = w.w1**2 * m.m11 + w.w2**2 * m.m22 + 2 * w.w1 * w.w2 * m.m12
    ef = w.w1 * m.m1 + w.w2 * m.m2
    efy = w.w1 * m.m1y + w.w2 * m.m2y
    return (ef2 - ef**2) - efy**2


def _deviation_sum(vectors) -> float:
    """(4/m) * sum_e |u_e - mean|^2; equals |u_1 - u_2|^2 for two envs."""
    u = np.asarray(vectors, dtype=float)
    centered = u - u.mean(axis=0)
    return float(4.0 / len(u) * np.sum(centered**2))


def _require_envs(ms) -> None:
    if len(ms) < 2:
        raise ConfigError("penalties need at least 2 environments")


def penalty_value(kind: str, ms, w: LinearParams,
                  fourth=None) -> float:
    """Exact penalty value for one of PENALTY_KINDS over env moments.

    ``fourth`` is the per-env FourthMoments list required by fishr; other
    kinds ignore it.
    """
    _require_envs(ms)
    if kind == "icorr":
        return env_variance([population_correlation(m, w) for m in ms])
    if kind == "vrex":
        return env_variance([population_risk(m, w) for m in ms])
    if kind == "irmv1":
        return float(sum(population_dummy_gradient(m, w) ** 2 for m in ms))
    if kind == "iga":
        return _deviation_sum([risk_gradient(m, w) for m in ms])
    if kind == "ib_erm":
        return float(sum(2.0 * _conditional_variance(m, w) for m in ms))
    if kind == "fishr":
        if fourth is None:
            raise ConfigError(
                "fishr needs fourth-moment tables; pass fourth=fishr_tables(envs)")
        return _deviation_sum([_gradient_variances(t, w)[0] for t in fourth])
    raise ConfigError(f"unknown penalty {kind!r}")


def penalty_gradient(kind: str, ms, w: LinearParams,
                     fourth=None) -> np.ndarray:
    """Exact gradient of penalty_value with respect to (w1, w2)."""
    _require_envs(ms)
    m_count = len(ms)
    if kind == "icorr":
        rhos = np.array([population_correlation(m, w) for m in ms])
        grads = np.array([[m.m1y, m.m2y] for m in ms])
        centered = rhos - rhos.mean()
        return 2.0 / m_count * centered @ grads
    if kind == "vrex":
        risks = np.array([population_risk(m, w) for m in ms])
        grads = np.array([risk_gradient(m, w) for m in ms])
        centered = risks - risks.mean()
        return 2.0 / m_count * centered @ grads
    if kind == "irmv1":
        total = np.zeros(2)
        for m in ms:
            d = population_dummy_gradient(m, w)
            dd = np.array([2 * w.w1 * m.m11 + 2 * w.w2 * m.m12 - m.m1y,
                           2 * w.w2 * m.m22 + 2 * w.w1 * m.m12 - m.m2y])
            total += 2.0 * d * dd
        return total
    if kind == "iga":
        gs = np.array([risk_gradient(m, w) for m in ms])
        centered = gs - gs.mean(axis=0)
        total = np.zeros(2)
        for m, c in zip(ms, centered):
            total += _risk_hessian(m) @ c
        return 8.0 / m_count * total
    if kind == "ib_erm":
        total = np.zeros(2)
        for m in ms:
            mw = _risk_hessian(m) @ w.as_array()
            ef = w.w1 * m.m1 + w.w2 * m.m2
            efy = w.w1 * m.m1y + w.w2 * m.m2y
            total += 2.0 * (2.0 * mw - 2.0 * ef * np.array([m.m1, m.m2])
                            - 2.0 * efy * np.array([m.m1y, m.m2y]))
        return total
    if kind == "fishr":
        if fourth is None:
            raise ConfigError(
                "fishr needs fourth-moment tables; pass fourth=fishr_tables(envs)")
        pairs = [_gradient_variances(t, w) for t in fourth]
        us = np.array([p[0] for p in pairs])
        centered = us - us.mean(axis=0)
        total = np.zeros(2)
        for (_, jac), c in zip(pairs, centered):
            total += jac.T @ c
        return 8.0 / m_count * total
    raise ConfigError(f"unknown penalty {kind!r}")


def erm_params(ms) -> LinearParams:
    """Exact least-squares minimizer of the summed population risks."""
    _require_envs(ms)
    h = sum(_risk_hessian(m) for m in ms)
    c = np.array([sum(m.m1y for m in ms), sum(m.m2y for m in ms)])
    w = np.linalg.solve(h, c)
    return LinearParams(float(w[0]), float(w[1]))


def moments_for(envs) -> list[Moments]:
    from .environments import two_bit_moments

    return [two_bit_moments(e) for e in envs]
