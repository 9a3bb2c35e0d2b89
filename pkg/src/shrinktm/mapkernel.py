"""Hyperparameters, relevance weights and the nonlinear map kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .basegauss import BaseCoefficients, BaseFamily
from .geometry import M_MAX, Ordering

MODES = ("shrinktm", "simpletm")
RHOS = ("se", "matern32")

# fields optimized for each mode, in vector order; base-family parameters go first
_SHRINK_FIELDS = ("log_cd", "theta_sigma1", "theta_sigma2", "theta_q", "theta_gamma", "theta_sigma0")
_SIMPLE_FIELDS = _SHRINK_FIELDS + ("theta_d1", "theta_d2")


def sparsity_level(theta_q: float, eps: float = 0.01, m_max: int = M_MAX) -> int:
    """Largest k with exp(-e^theta_q * k) >= eps, clamped to [0, m_max]."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    rate = math.exp(theta_q) if theta_q < 700 else math.inf
    if rate == 0.0:
        return m_max
    k = min(int(math.floor(-math.log(eps) / rate)) if np.isfinite(rate) else 0, m_max)
    # guard the floor against rounding in either direction
    while k < m_max and math.exp(-rate * (k + 1)) >= eps:
        k += 1
    while k > 0 and math.exp(-rate * k) < eps:
        k -= 1
    return k


@dataclass(frozen=True)
class HyperParams:
    """All map hyperparameters on their unconstrained scale.

    ``mode="simpletm"`` drops the base family: conditional means are zero and
    the prior variance scale is ``exp(theta_d1) * scale**theta_d2``.
    """

    base: Optional[BaseFamily] = field(default_factory=BaseFamily)
    log_cd: float = 0.0
    theta_sigma1: float = 0.0
    theta_sigma2: float = 0.0
    theta_q: float = -1.0
    theta_gamma: float = 0.0
    theta_sigma0: float = 0.0
    theta_d1: float = 0.0
    theta_d2: float = 0.0
    mode: str = "shrinktm"
    eps: float = 0.01
    m: int = 30
    m_max: int = M_MAX
    rho: str = "se"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.rho not in RHOS:
            raise ValueError(f"unknown kernel correlation {self.rho!r}")
        if self.mode == "shrinktm" and self.base is None:
            raise ValueError("shrinktm mode needs a base covariance family")
        if not 1 <= self.m <= self.m_max:
            raise ValueError("need 1 <= m <= m_max")

    @classmethod
    def default(cls, mode: str = "shrinktm", kind: str = "matern", **kw) -> "HyperParams":
        base = BaseFamily(kind=kind) if mode == "shrinktm" else None
        return cls(base=base, mode=mode, **kw)

    @property
    def cd(self) -> float:
        return math.exp(self.log_cd)

    @property
    def alpha(self) -> float:
        return 2.0 + math.exp(-2.0 * self.log_cd)

    @property
    def sigma0_sq(self) -> float:
        return float(np.exp(self.theta_sigma0))

    @property
    def gamma(self) -> float:
        return math.exp(self.theta_gamma)

    @property
    def m_prime(self) -> int:
        return sparsity_level(self.theta_q, self.eps, self.m_max)

    def names(self) -> tuple[str, ...]:
        own = _SHRINK_FIELDS if self.mode == "shrinktm" else _SIMPLE_FIELDS
        base = tuple("base." + k for k in self.base.param_names) if self.mode == "shrinktm" else ()
        return base + own

    def vector(self) -> np.ndarray:
        return np.array([self.get(k) for k in self.names()], dtype=float)

    def get(self, name: str) -> float:
        if name.startswith("base."):
            return getattr(self.base, name[5:])
        return getattr(self, name)

    def with_vector(self, values) -> "HyperParams":
        values = np.asarray(values, dtype=float)
        names = self.names()
        if values.shape != (len(names),):
            raise ValueError(f"expected {len(names)} values, got {values.shape}")
        upd = {k: float(v) for k, v in zip(names, values) if not k.startswith("base.")}
        base = self.base
        if self.mode == "shrinktm":
            nb = len(base.param_names)
            base = base.with_params(values[:nb])
        return replace(self, base=base, **upd)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if isinstance(v, BaseFamily) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        d = dict(d)
        base = d.pop("base", None)
        if base is not None:
            base = BaseFamily(**base)
        return cls(base=base, **d)


@dataclass(frozen=True)
class PriorMoments:
    """Inverse-gamma prior moments and kernel scales per ordered component.

    ``weights[i, k]`` holds q_{i,c_i(k+1)}^2 (the diagonal of Q_i) for the
    first ``m_prime`` neighbors; entries beyond the available predecessors
    are zero. ``sigma2[0]`` is zero because the first component has no
    regression function.
    """

    alpha: np.ndarray
    beta: np.ndarray
    tau2: np.ndarray
    sigma2: np.ndarray
    weights: np.ndarray
    m_prime: int

    def q(self) -> np.ndarray:
        return np.sqrt(self.weights)


def relevance_weights(theta_q: float, m_prime: int, counts: np.ndarray) -> np.ndarray:
    """Squared relevance weights q^2, shape (N, m_prime), zero past each count."""
    k = np.arange(1, m_prime + 1)
    q = np.exp(-math.exp(theta_q) * k)
    live = k[None, :] <= counts[:, None]
    return np.where(live, q * q, 0.0)


def variance_scales(hp: HyperParams, ordering: Ordering, base: Optional[BaseCoefficients]):
    """E(d_i^2): the base residual variances, or the SimpleTM power law."""
    if hp.mode == "shrinktm":
        if base is None:
            raise ValueError("shrinktm mode needs base coefficients")
        return base.tau2
    return np.exp(hp.theta_d1) * ordering.scales ** hp.theta_d2


def nonlinear_scales(hp: HyperParams, ordering: Ordering) -> np.ndarray:
    s = np.exp(hp.theta_sigma1) * ordering.scales ** hp.theta_sigma2
    s = np.array(s, dtype=float)
    s[0] = 0.0
    return s


def prior_moments(hp: HyperParams, base: Optional[BaseCoefficients], ordering: Ordering,
                  m_prime: Optional[int] = None) -> PriorMoments:
    m_prime = hp.m_prime if m_prime is None else m_prime
    tau2 = variance_scales(hp, ordering, base)
    inv_c2 = math.exp(-2.0 * hp.log_cd)
    n = ordering.size
    return PriorMoments(
        alpha=np.full(n, 2.0 + inv_c2),
        beta=(1.0 + inv_c2) * tau2,
        tau2=np.asarray(tau2, float),
        sigma2=nonlinear_scales(hp, ordering),
        weights=relevance_weights(hp.theta_q, m_prime, ordering.counts(hp.m_max)),
        m_prime=m_prime,
    )


def correlation(h2: np.ndarray, gamma: float, kind: str = "se") -> np.ndarray:
    """Isotropic correlation of the weighted distance h (given as h^2) over gamma."""
    if kind == "se":
        return np.exp(-0.5 * h2 / gamma ** 2)
    t = np.sqrt(3.0 * h2) / gamma
    return (1.0 + t) * np.exp(-t)


def correlation_derivs(h2: np.ndarray, gamma: float, kind: str = "se"):
    """Correlation, d/d(h^2) and d/d(log gamma)."""
    if kind == "se":
        r = np.exp(-0.5 * h2 / gamma ** 2)
        return r, -0.5 * r / gamma ** 2, r * h2 / gamma ** 2
    t = np.sqrt(3.0 * h2) / gamma
    e = np.exp(-t)
    return (1.0 + t) * e, -1.5 * e / gamma ** 2, t * t * e


def kernel_matrix(hp: HyperParams, moments: PriorMoments, i: int, x, x2=None) -> np.ndarray:
    """Normalized kernel K_i between rows of neighbor values.

    ``x`` and ``x2`` have one column per effective neighbor of component i,
    i.e. ``min(m_prime, i)`` columns in ordered-neighbor order.
    """
    x = np.atleast_2d(np.asarray(x, float))
    x2 = x if x2 is None else np.atleast_2d(np.asarray(x2, float))
    w = moments.weights[i, :x.shape[1]]
    if x.shape[1] != x2.shape[1] or np.count_nonzero(w) != x.shape[1]:
        raise ValueError(f"component {i} expects {np.count_nonzero(moments.weights[i])} neighbor columns")
    lin = (x * w) @ x2.T
    h2 = np.maximum((x * x) @ w[:, None] + ((x2 * x2) @ w)[None, :] - 2 * lin, 0.0)
    c = hp.sigma0_sq * lin + moments.sigma2[i] * correlation(h2, hp.gamma, hp.rho)
    return c / moments.tau2[i]
