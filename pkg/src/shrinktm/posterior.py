"""Posterior transport map: fitting, forward/inverse evaluation, densities, likelihood."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln, ndtr, ndtri, stdtr, stdtrit

from .basegauss import BaseCoefficients, VecchiaBlocks, vecchia_coefficients
from .geometry import Ordering
from .mapkernel import (HyperParams, PriorMoments, correlation, correlation_derivs,
                        prior_moments)

log = logging.getLogger(__name__)

Z_CLAMP = 8.2
CHUNK_BYTES = 64 * 2 ** 20


def as_data(y, ordering: Ordering) -> np.ndarray:
    """Validate an (n, N) data matrix whose columns are in maximin order."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None, :] if y.size else y.reshape(0, ordering.size)
    if y.ndim != 2 or y.shape[1] != ordering.size:
        raise ValueError(f"data must have {ordering.size} columns, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("data contain non-finite values")
    return y


def _chunks(n_comp: int, n: int, width: int) -> list[slice]:
    per = 8 * max(n * n * (width + 6), 1)
    size = max(1, min(n_comp, CHUNK_BYTES // per))
    return [slice(a, min(a + size, n_comp)) for a in range(0, n_comp, size)]


class MapProblem:
    """Quantities that do not depend on the hyperparameters.

    Holds the ordered data, padded neighbor indices and (for ShrinkTM) the
    Vecchia distance blocks, so repeated likelihood evaluations only redo the
    parameter-dependent algebra.
    """

    def __init__(self, y, ordering: Ordering, m: int = 30, blocks: Optional[VecchiaBlocks] = None):
        self.ordering = ordering
        self.y = as_data(y, ordering)
        self.m = m
        self.nb = np.where(ordering.neighbors >= 0, ordering.neighbors, 0)
        self._blocks = blocks

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def size(self) -> int:
        return self.ordering.size

    @property
    def blocks(self) -> VecchiaBlocks:
        if self._blocks is None or self._blocks.m != self.m:
            self._blocks = VecchiaBlocks(self.ordering, self.m)
        return self._blocks

    def base(self, hp: HyperParams, grad: bool = False):
        if hp.m != self.m:
            raise ValueError(f"hyperparameters use m={hp.m} but the problem was built with m={self.m}")
        if hp.mode == "simpletm":
            n = self.size
            coeffs = BaseCoefficients(xi=np.zeros((n, self.m)), tau2=variance_scales_simple(hp, self.ordering), m=self.m)
            return (coeffs, None, None) if grad else coeffs
        return vecchia_coefficients(hp.base, self.ordering, self.m, self.blocks, grad=grad)


def variance_scales_simple(hp: HyperParams, ordering: Ordering) -> np.ndarray:
    return np.exp(hp.theta_d1) * ordering.scales ** hp.theta_d2


def _kernel_blocks(hp: HyperParams, mom: PriorMoments, x, sl):
    """Kernel pieces for the training design of components ``sl``.

    x: (C, n, m') neighbor values. Returns P (weighted inner products), H2,
    R (correlation) and K.
    """
    w = mom.weights[sl]
    p = np.einsum("cjk,ck,clk->cjl", x, w, x)
    d = np.einsum("cjj->cj", p)
    h2 = np.maximum(d[:, :, None] + d[:, None, :] - 2 * p, 0.0)
    r = correlation(h2, hp.gamma, hp.rho)
    s2 = mom.sigma2[sl][:, None, None]
    k = (hp.sigma0_sq * p + s2 * r) / mom.tau2[sl][:, None, None]
    return p, h2, r, k


def _factor(g):
    try:
        return np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError("kernel matrix G is not positive definite") from exc


def _inv_from_chol(chol):
    n = chol.shape[-1]
    eye = np.broadcast_to(np.eye(n), chol.shape)
    li = np.linalg.solve(chol, eye)
    return np.swapaxes(li, -1, -2) @ li


@dataclass
class _Terms:
    """Per-component results of one pass over the data."""

    beta_t: np.ndarray
    logdet: np.ndarray
    chol: np.ndarray
    u: np.ndarray
    ll: np.ndarray
    grad: Optional[np.ndarray] = None


def _component_pass(prob: MapProblem, hp: HyperParams, grad: bool = False,
                    m_prime: Optional[int] = None, keep: bool = True) -> tuple:
    """Evaluate posterior statistics and per-component likelihood terms."""
    ordering = prob.ordering
    if grad:
        base, dxi, dtau2 = prob.base(hp, grad=True)
    else:
        base = prob.base(hp)
    mom = prior_moments(hp, base, ordering, m_prime)
    mp = mom.m_prime
    n, n_comp = prob.n, prob.size
    alpha = float(mom.alpha[0])
    alpha_t = alpha + n / 2.0
    inv_c2 = math.exp(-2.0 * hp.log_cd)
    tau2 = mom.tau2

    names = hp.names()
    n_par = len(names)
    gvec = np.zeros(n_par) if grad else None
    ll = np.empty(n_comp)
    beta_t = np.empty(n_comp)
    logdet = np.empty(n_comp)
    chol_all = np.empty((n_comp, n, n)) if keep else None
    u_all = np.empty((n_comp, n)) if keep else None

    y = prob.y
    nb = prob.nb
    yg_full = y[:, nb[:, :prob.m]]  # (n, N, m)
    resid_all = y - np.einsum("jim,im->ji", yg_full, base.xi)  # (n, N)
    x_all = y[:, nb[:, :mp]]  # (n, N, m')

    if grad:
        log_l = np.log(ordering.scales)
        kvec = np.arange(1, mp + 1, dtype=float)
        rate = math.exp(hp.theta_q)

    for sl in _chunks(n_comp, n, max(mp, 1) + (n_par if grad else 0)):
        x = np.transpose(x_all[:, sl], (1, 0, 2))
        p, h2, r, k = _kernel_blocks(hp, mom, x, sl)
        g = k + np.eye(n)
        chol = _factor(g)
        res = resid_all[:, sl].T  # (C, n)
        ginv = _inv_from_chol(chol)
        u = np.einsum("cjl,cl->cj", ginv, res)
        quad = np.einsum("cj,cj->c", res, u)
        ld = 2.0 * np.sum(np.log(np.einsum("cjj->cj", chol)), axis=1)
        beta = mom.beta[sl]
        bt = beta + 0.5 * quad
        if not np.all(np.isfinite(bt)) or np.any(bt <= 0):
            bad = sl.start + int(np.flatnonzero(~np.isfinite(bt) | (bt <= 0))[0])
            raise FloatingPointError(f"non-finite posterior scale at component {bad}")
        terms = (-0.5 * ld + alpha * np.log(beta) - alpha_t * np.log(bt)
                 + gammaln(alpha_t) - gammaln(alpha))
        ll[sl] = terms
        beta_t[sl] = bt
        logdet[sl] = ld
        if keep:
            chol_all[sl] = chol
            u_all[sl] = u
        if not grad:
            continue

        t2 = tau2[sl]
        s2 = mom.sigma2[sl]
        dig = digamma(alpha_t) - digamma(alpha)

        def add(idx, dk=None, dres=None, dbeta=None, dalpha=0.0):
            tr = 0.0
            dquad = 0.0
            if dk is not None:
                tr = np.einsum("cjl,cjl->c", ginv, dk)
                dquad = -np.einsum("cj,cjl,cl->c", u, dk, u)
            if dres is not None:
                dquad = dquad + 2.0 * np.einsum("cj,cj->c", u, dres)
            db = 0.0 if dbeta is None else dbeta
            dbt = db + 0.5 * dquad
            val = (-0.5 * tr + dalpha * np.log(beta) + alpha * db / beta
                   - dalpha * np.log(bt) - alpha_t * dbt / bt + dalpha * dig)
            gvec[idx] += float(np.sum(val))

        for idx, name in enumerate(names):
            if name.startswith("base."):
                j = idx
                dt = dtau2[j][sl]
                dres = -np.einsum("jcm,cm->cj", yg_full[:, sl], dxi[j][sl])
                add(idx, dk=-k * (dt / t2)[:, None, None], dres=dres, dbeta=(1.0 + inv_c2) * dt)
            elif name in ("theta_d1", "theta_d2"):
                dt = t2 if name == "theta_d1" else t2 * log_l[sl]
                add(idx, dk=-k * (dt / t2)[:, None, None], dbeta=(1.0 + inv_c2) * dt)
            elif name == "log_cd":
                add(idx, dbeta=-2.0 * inv_c2 * t2, dalpha=-2.0 * inv_c2)
            elif name == "theta_sigma0":
                add(idx, dk=hp.sigma0_sq * p / t2[:, None, None])
            elif name in ("theta_sigma1", "theta_sigma2"):
                ds = s2 if name == "theta_sigma1" else s2 * log_l[sl]
                add(idx, dk=(ds / t2)[:, None, None] * r)
            elif name == "theta_gamma":
                _, _, dr_dg = correlation_derivs(h2, hp.gamma, hp.rho)
                add(idx, dk=(s2 / t2)[:, None, None] * dr_dg)
            elif name == "theta_q":
                if mp == 0:
                    continue
                w = mom.weights[sl]
                dw = -2.0 * rate * kvec[None, :] * w
                dp = np.einsum("cjk,ck,clk->cjl", x, dw, x)
                dd = np.einsum("cjj->cj", dp)
                dh2 = dd[:, :, None] + dd[:, None, :] - 2 * dp
                _, dr_dh2, _ = correlation_derivs(h2, hp.gamma, hp.rho)
                dk = (hp.sigma0_sq * dp + s2[:, None, None] * dr_dh2 * dh2) / t2[:, None, None]
                add(idx, dk=dk)
            else:  # pragma: no cover - names() and this switch must agree
                raise KeyError(name)

    out = _Terms(beta_t=beta_t, logdet=logdet, chol=chol_all, u=u_all, ll=ll, grad=gvec)
    return out, base, mom, alpha_t


def integrated_loglik(y, hp: HyperParams, ordering: Ordering, problem: Optional[MapProblem] = None,
                      grad: bool = False, m_prime: Optional[int] = None, constant: bool = False):
    """Log integrated likelihood of the data with f and d integrated out.

    By default the hyperparameter-free term ``-(n N / 2) log(2 pi)`` is
    dropped; pass ``constant=True`` to include it, which makes the value
    the exact log density of the data.
    """
    prob = problem if problem is not None else MapProblem(y, ordering, hp.m)
    if prob.n < 1:
        raise ValueError("the integrated likelihood needs at least one replicate")
    terms, *_ = _component_pass(prob, hp, grad=grad, m_prime=m_prime, keep=False)
    if not np.all(np.isfinite(terms.ll)):
        bad = int(np.flatnonzero(~np.isfinite(terms.ll))[0])
        raise FloatingPointError(f"non-finite likelihood term at component {bad}")
    total = float(np.sum(terms.ll))
    if constant:
        total -= 0.5 * prob.n * prob.size * math.log(2 * math.pi)
    return (total, terms.grad) if grad else total


@dataclass
class FittedMap:
    """Posterior transport map for one data matrix and hyperparameter setting.

    Everything needed to evaluate the map is stored explicitly (rather than
    recomputed from the data) so a map read back from disk evaluates
    bit-identically to the one that was written.
    """

    hp: HyperParams
    ordering: Ordering
    y: np.ndarray  # (n, N) training data, maximin order
    xi: np.ndarray  # (N, m)
    tau2: np.ndarray
    sigma2: np.ndarray
    weights: np.ndarray  # (N, m')
    alpha_t: np.ndarray
    beta_t: np.ndarray
    chol: np.ndarray  # (N, n, n) lower Cholesky factors of G_i
    u: np.ndarray  # (N, n) G_i^{-1} r_i
    ginv: np.ndarray = field(init=False, repr=False)
    clamped: int = field(default=0, init=False)

    def __post_init__(self):
        self.ginv = _inv_from_chol(self.chol) if self.n else np.zeros((self.size, 0, 0))
        self._nb = np.where(self.ordering.neighbors >= 0, self.ordering.neighbors, 0)
        mp = self.m_prime
        self._x = np.transpose(self.y[:, self._nb[:, :mp]], (1, 0, 2))  # (N, n, m')
        self._xdiag = np.einsum("cjk,ck,cjk->cj", self._x, self.weights, self._x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def size(self) -> int:
        return self.ordering.size

    @property
    def m(self) -> int:
        return self.xi.shape[1]

    @property
    def m_prime(self) -> int:
        return self.weights.shape[1]

    @property
    def dhat(self) -> np.ndarray:
        return np.sqrt(self.beta_t / self.alpha_t)

    def base_coefficients(self) -> BaseCoefficients:
        return BaseCoefficients(xi=self.xi, tau2=self.tau2, m=self.m)

    # -- prediction -------------------------------------------------------
    def _kstar(self, sl, xs):
        """Cross kernel K_i(x*, Y) and K_i(x*, x*) for components ``sl``.

        xs: (B, C, m') neighbor values of the new fields.
        """
        w = self.weights[sl]
        x = self._x[sl]
        cross = np.einsum("bck,ck,cjk->bcj", xs, w, x)
        a = np.einsum("bck,ck,bck->bc", xs, w, xs)
        h2 = np.maximum(a[:, :, None] + self._xdiag[sl][None] - 2 * cross, 0.0)
        s2 = self.sigma2[sl]
        t2 = self.tau2[sl]
        ks = (self.hp.sigma0_sq * cross + s2[None, :, None] * correlation(h2, self.hp.gamma, self.hp.rho)) / t2[None, :, None]
        kss = (self.hp.sigma0_sq * a + s2[None, :]) / t2[None, :]
        return ks, kss

    def predict(self, ystar, sl=slice(None)):
        """Posterior mean f_hat and variance factor v for components ``sl``.

        ``ystar`` is (B, N); only predecessors of each component are read.
        """
        ystar = np.atleast_2d(ystar)
        idx = np.arange(self.size)[sl]
        nb = self._nb[idx]
        mean = np.einsum("bcm,cm->bc", ystar[:, nb[:, :self.m]], self.xi[idx])
        xs = ystar[:, nb[:, :self.m_prime]]
        ks, kss = self._kstar(idx, xs)
        fhat = mean + np.einsum("bcj,cj->bc", ks, self.u[idx])
        v = kss - np.einsum("bcj,cjl,bcl->bc", ks, self.ginv[idx], ks)
        return fhat, np.maximum(v, 0.0)

    def _scale(self, v, idx):
        return self.dhat[idx] * np.sqrt(v + 1.0)

    def forward(self, ystar) -> np.ndarray:
        """Map fields (rows, maximin order) to standard-normal reference draws."""
        single = np.ndim(ystar) == 1
        ystar = np.atleast_2d(np.asarray(ystar, float))
        idx = np.arange(self.size)
        fhat, v = self.predict(ystar)
        t = (ystar - fhat) / self._scale(v, idx)
        z = self._t_to_z(t, 2.0 * self.alpha_t)
        return z[0] if single else z

    def inverse(self, zstar) -> np.ndarray:
        """Generate fields from reference draws by solving the triangular system."""
        return self.conditional_inverse(zstar, np.zeros(0))

    def conditional_inverse(self, zstar, observed) -> np.ndarray:
        """Inverse map with the first ``len(observed)`` ordered values held fixed."""
        z = np.atleast_2d(np.asarray(zstar, float))
        obs = np.asarray(observed, float)
        k = obs.shape[-1]
        if k > self.size:
            raise ValueError(f"observed prefix of length {k} exceeds N={self.size}")
        if z.shape[1] != self.size:
            raise ValueError(f"reference draws must have {self.size} columns")
        out = np.zeros_like(z)
        out[:, :k] = obs
        nu = 2.0 * self.alpha_t
        tq = self._z_to_t(z, nu)
        for i in range(k, self.size):
            sl = slice(i, i + 1)
            fhat, v = self.predict(out, sl)
            out[:, i] = fhat[:, 0] + tq[:, i] * self._scale(v[:, 0], i)
        return out

    def log_density(self, ystar) -> np.ndarray:
        """Posterior predictive log density of each row of ``ystar``."""
        ystar = np.atleast_2d(np.asarray(ystar, float))
        idx = np.arange(self.size)
        fhat, v = self.predict(ystar)
        s = self._scale(v, idx)
        return np.sum(t_logpdf((ystar - fhat) / s, 2.0 * self.alpha_t) - np.log(s), axis=1)

    # -- CDF transforms ---------------------------------------------------
    def _t_to_z(self, t, nu):
        lower = stdtr(nu, -np.abs(t))
        z = np.where(t > 0, -1.0, 1.0) * ndtri(lower)
        bad = ~(np.abs(z) <= Z_CLAMP)
        if np.any(bad):
            self.clamped += int(np.count_nonzero(bad))
            log.warning("clamped %d reference values at +/-%.1f", np.count_nonzero(bad), Z_CLAMP)
            z = np.clip(np.nan_to_num(z, nan=0.0, posinf=Z_CLAMP, neginf=-Z_CLAMP), -Z_CLAMP, Z_CLAMP)
        return z

    @staticmethod
    def _z_to_t(z, nu):
        za = np.minimum(np.abs(z), Z_CLAMP)
        p = ndtr(-za)
        nu_b = np.broadcast_to(nu, z.shape)
        t = stdtrit(nu_b, p)
        return np.where(z > 0, -t, t)


def t_logpdf(t, nu):
    """Log density of a standard Student t with ``nu`` degrees of freedom."""
    return (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi)
            - (nu + 1) / 2 * np.log1p(t * t / nu))


def fit_components(y, hp: HyperParams, ordering: Ordering,
                   problem: Optional[MapProblem] = None) -> FittedMap:
    """Posterior statistics for every component at fixed hyperparameters."""
    prob = problem if problem is not None else MapProblem(y, ordering, hp.m)
    terms, base, mom, alpha_t = _component_pass(prob, hp, keep=True)
    return FittedMap(hp=hp, ordering=ordering, y=prob.y.copy(), xi=base.xi, tau2=mom.tau2,
                     sigma2=mom.sigma2, weights=mom.weights,
                     alpha_t=np.full(prob.size, alpha_t), beta_t=terms.beta_t,
                     chol=terms.chol, u=terms.u)
