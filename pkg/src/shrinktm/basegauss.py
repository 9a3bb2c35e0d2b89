"""Parametric base covariances, Vecchia regression coefficients and the MatCov baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import gammaln, kve

from .geometry import Ordering, as_locations, euclidean

log = logging.getLogger(__name__)

KINDS = ("exponential", "matern")
_CLOSED_FORM = (0.5, 1.5, 2.5)
_NU_STEP = 1e-5


@dataclass(frozen=True)
class BaseFamily:
    """Isotropic exponential or Matérn covariance, stored on the log scale.

    The Matérn correlation uses the argument ``x = d / range`` so that
    smoothness 1/2 coincides with ``exp(-d / range)``.
    """

    kind: str = "matern"
    log_variance: float = 0.0
    log_range: float = 2.0
    log_smoothness: float = float(np.log(1.5))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        vals = (self.log_variance, self.log_range, self.log_smoothness)
        if not all(np.isfinite(vals)):
            raise ValueError("covariance parameters must be finite and positive")

    @classmethod
    def create(cls, kind="matern", variance=1.0, range=0.3, smoothness=1.5):
        if min(variance, range, smoothness) <= 0:
            raise ValueError("covariance parameters must be positive")
        if kind == "exponential":
            smoothness = 0.5
        return cls(kind, float(np.log(variance)), float(np.log(range)), float(np.log(smoothness)))

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance))

    @property
    def range(self) -> float:
        return float(np.exp(self.log_range))

    @property
    def smoothness(self) -> float:
        return 0.5 if self.kind == "exponential" else float(np.exp(self.log_smoothness))

    @property
    def param_names(self) -> tuple[str, ...]:
        if self.kind == "exponential":
            return ("log_variance", "log_range")
        return ("log_variance", "log_range", "log_smoothness")

    def params(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in self.param_names])

    def with_params(self, values) -> "BaseFamily":
        return replace(self, **dict(zip(self.param_names, map(float, values))))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "log_variance": self.log_variance,
                "log_range": self.log_range, "log_smoothness": self.log_smoothness}


def _matern_general(x, nu):
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(under="ignore", divide="ignore"):
        logm = (1 - nu) * np.log(2) - gammaln(nu) + nu * np.log(xp) + np.log(kve(nu, xp)) - xp
    out[pos] = np.exp(logm)
    return out


def _matern_general_dlogrange(x, nu):
    # d/dlog(range) of M(d/range) = c x^(nu+1) K_(nu-1)(x)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(under="ignore", divide="ignore"):
        logm = ((1 - nu) * np.log(2) - gammaln(nu) + (nu + 1) * np.log(xp)
                + np.log(kve(nu - 1, xp)) - xp)
    out[pos] = np.exp(logm)
    return out


def matern_correlation(x, nu: float) -> np.ndarray:
    """Matérn correlation at scaled distance ``x = d / range``."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-x)
    if nu == 0.5:
        return e
    if nu == 1.5:
        return (1 + x) * e
    if nu == 2.5:
        return (1 + x + x * x / 3) * e
    return _matern_general(x, nu)


def matern_correlation_grads(x, nu: float, smoothness_grad: bool = True):
    """Correlation plus its derivatives with respect to log range and log smoothness."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-x)
    if nu == 0.5:
        val, dr = e, x * e
    elif nu == 1.5:
        val, dr = (1 + x) * e, x * x * e
    elif nu == 2.5:
        val, dr = (1 + x + x * x / 3) * e, x * x * (1 + x) * e / 3
    else:
        val, dr = _matern_general(x, nu), _matern_general_dlogrange(x, nu)
    dnu = None
    if smoothness_grad:
        up = _matern_general(x, nu * np.exp(_NU_STEP))
        dn = _matern_general(x, nu * np.exp(-_NU_STEP))
        dnu = (up - dn) / (2 * _NU_STEP)
    return val, dr, dnu


def _on_unique(d: np.ndarray, fn):
    """Evaluate ``fn`` on the distinct entries of ``d`` only (grids repeat distances)."""
    u, inv = np.unique(d, return_inverse=True)
    res = fn(u)
    if isinstance(res, tuple):
        return tuple(None if r is None else r[inv].reshape(d.shape) for r in res)
    return res[inv].reshape(d.shape)


def correlation_from_distance(family: BaseFamily, d: np.ndarray) -> np.ndarray:
    return _on_unique(np.asarray(d, float) / family.range,
                      lambda x: matern_correlation(x, family.smoothness))


def covariance_grads_from_distance(family: BaseFamily, d: np.ndarray):
    """Covariance and its derivatives w.r.t. ``family.param_names``: shape (P, *d.shape)."""
    nu = family.smoothness
    want_nu = family.kind == "matern"
    val, dr, dnu = _on_unique(np.asarray(d, float) / family.range,
                              lambda x: matern_correlation_grads(x, nu, want_nu))
    s2 = family.variance
    cov = s2 * val
    grads = [cov, s2 * dr]
    if want_nu:
        grads.append(s2 * dnu)
    return cov, np.stack(grads)


def covariance(family: BaseFamily, a, b=None) -> np.ndarray:
    """Cross-covariance matrix between point sets ``a`` and ``b`` (default ``b = a``)."""
    a = as_locations(a)
    b = a if b is None else as_locations(b)
    return family.variance * correlation_from_distance(family, euclidean(a, b))


@dataclass(frozen=True)
class BaseCoefficients:
    """Vecchia regression weights and residual variances in maximin order.

    ``xi[i, :k_i]`` are the weights on ``neighbors[i, :k_i]``; the remaining
    slots are zero so padded products are safe.
    """

    xi: np.ndarray
    tau2: np.ndarray
    m: int

    def weights(self, i: int) -> np.ndarray:
        return self.xi[i, :min(i, self.m)]


class VecchiaBlocks:
    """Distances needed by the Vecchia conditionals for one ordering and set size m."""

    def __init__(self, ordering: Ordering, m: int):
        if m < 1:
            raise ValueError("m must be at least 1")
        if m > ordering.m_max:
            raise ValueError(f"m={m} exceeds m_max={ordering.m_max}")
        n = ordering.size
        self.m = m
        self.counts = ordering.counts(m)
        nb = ordering.neighbors[:, :m]
        self.mask = nb >= 0
        safe = np.where(self.mask, nb, 0)
        xs = ordering.coords
        pts = xs[safe]  # (N, m, dim)
        self.d_gi = np.linalg.norm(pts - xs[:, None, :], axis=-1)
        self.d_gg = np.linalg.norm(pts[:, :, None, :] - pts[:, None, :, :], axis=-1)
        self.pair_mask = self.mask[:, :, None] & self.mask[:, None, :]
        self.eye_pad = np.zeros((n, m, m))
        idx = np.arange(m)
        self.eye_pad[:, idx, idx] = ~self.mask
        # only distances of real entries matter; pad with 0 to keep np.unique small
        self.d_gi = np.where(self.mask, self.d_gi, 0.0)
        self.d_gg = np.where(self.pair_mask, self.d_gg, 0.0)
        if np.any(self.d_gi[self.mask] <= 0):
            raise ValueError("degenerate locations: duplicate points")
        flat = np.concatenate([self.d_gg.ravel(), self.d_gi.ravel()])
        self._uniq, self._inv = np.unique(flat, return_inverse=True)
        self._split = self.d_gg.size

    def covariances(self, family: BaseFamily, grad: bool = False):
        """Neighbor-block and cross covariances (and parameter derivatives)."""
        x = self._uniq / family.range
        s2 = family.variance
        nu = family.smoothness

        def expand(v):
            full = v[self._inv]
            return (full[:self._split].reshape(self.d_gg.shape),
                    full[self._split:].reshape(self.d_gi.shape))

        if not grad:
            return expand(s2 * matern_correlation(x, nu))
        val, dr, dnu = matern_correlation_grads(x, nu, family.kind == "matern")
        parts = [s2 * val, s2 * dr] + ([s2 * dnu] if dnu is not None else [])
        expanded = [expand(v) for v in parts]
        c_gg, c_gi = expanded[0]
        dc_gg = np.stack([c_gg] + [e[0] for e in expanded[1:]])
        dc_gi = np.stack([c_gi] + [e[1] for e in expanded[1:]])
        return c_gg, c_gi, dc_gg, dc_gi


def _solve_blocks(a, b):
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("numerically singular neighbor covariance") from exc
    # a^{-1} b via two batched triangular solves expressed as general solves
    y = np.linalg.solve(chol, b[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]


def vecchia_coefficients(family: BaseFamily, ordering: Ordering, m: int = 30,
                         blocks: Optional[VecchiaBlocks] = None, grad: bool = False):
    """Vecchia conditional weights and variances for every ordered location.

    With ``grad=True`` also returns ``(dxi, dtau2)`` with a leading axis over
    ``family.param_names``.
    """
    blocks = VecchiaBlocks(ordering, m) if blocks is None else blocks
    s2 = family.variance
    if grad:
        c_gg, c_gi, dc_gg, dc_gi = blocks.covariances(family, grad=True)
    else:
        c_gg, c_gi = blocks.covariances(family)
    a = np.where(blocks.pair_mask, c_gg, 0.0) + blocks.eye_pad
    b = np.where(blocks.mask, c_gi, 0.0)
    xi = _solve_blocks(a, b)
    tau2 = s2 - np.einsum("ij,ij->i", b, xi)
    if np.any(tau2 <= 0) or not np.all(np.isfinite(tau2)):
        raise np.linalg.LinAlgError("numerically singular neighbor covariance")
    coeffs = BaseCoefficients(xi=xi, tau2=tau2, m=blocks.m)
    if not grad:
        return coeffs

    n_par = dc_gg.shape[0]
    dxi = np.empty((n_par,) + xi.shape)
    dtau2 = np.empty((n_par,) + tau2.shape)
    for p in range(n_par):
        da = np.where(blocks.pair_mask, dc_gg[p], 0.0)
        db = np.where(blocks.mask, dc_gi[p], 0.0)
        rhs = db - np.einsum("ijk,ik->ij", da, xi)
        dxi[p] = _solve_blocks(a, rhs)
        # the variance enters every entry, including the unconditional sill
        dsii = s2 if family.param_names[p] == "log_variance" else 0.0
        dtau2[p] = (dsii - 2 * np.einsum("ij,ij->i", db, xi)
                    + np.einsum("ij,ijk,ik->i", xi, da, xi))
    return coeffs, dxi, dtau2


def vecchia_loglik(coeffs: BaseCoefficients, ordering: Ordering, y: np.ndarray) -> np.ndarray:
    """Per-row Vecchia Gaussian log-density of fields ``y`` (rows, maximin order)."""
    y = np.atleast_2d(y)
    nb = np.where(ordering.neighbors[:, :coeffs.m] >= 0, ordering.neighbors[:, :coeffs.m], 0)
    mean = np.einsum("rij,ij->ri", y[:, nb], coeffs.xi)
    resid = y - mean
    return -0.5 * np.sum(np.log(2 * np.pi * coeffs.tau2) + resid ** 2 / coeffs.tau2, axis=1)


def gaussian_loglik(family: BaseFamily, coords, y, grad: bool = False):
    """Exact zero-mean Gaussian log-likelihood summed over the rows of ``y``."""
    x = as_locations(coords)
    y = np.atleast_2d(np.asarray(y, float))
    d = euclidean(x, x)
    if grad:
        cov, dcov = covariance_grads_from_distance(family, d)
    else:
        cov = family.variance * correlation_from_distance(family, d)
    chol = np.linalg.cholesky(cov)
    w = np.linalg.solve(chol, y.T)
    n = y.shape[0]
    ll = -0.5 * (np.sum(w * w) + n * (2 * np.sum(np.log(np.diag(chol))) + x.shape[0] * np.log(2 * np.pi)))
    if not grad:
        return ll
    cinv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(x.shape[0])))
    alpha = cinv @ y.T
    outer = alpha @ alpha.T - n * cinv
    g = 0.5 * np.einsum("ij,pij->p", outer, dcov)
    return ll, g


def _vecchia_loglik_grad(family, ordering, blocks, y):
    coeffs, dxi, dtau2 = vecchia_coefficients(family, ordering, blocks.m, blocks, grad=True)
    nb = np.where(blocks.mask, ordering.neighbors[:, :blocks.m], 0)
    yg = y[:, nb]
    resid = y - np.einsum("rij,ij->ri", yg, coeffs.xi)
    t2 = coeffs.tau2
    ll = -0.5 * np.sum(np.log(2 * np.pi * t2) + resid ** 2 / t2)
    dres = -np.einsum("rij,pij->pri", yg, dxi)
    g = (-0.5 * y.shape[0] * np.sum(dtau2 / t2, axis=1)
         - np.einsum("ri,pri->p", resid / t2, dres)
         + 0.5 * np.einsum("ri,pi->p", resid ** 2, dtau2 / t2 ** 2))
    return ll, g


@dataclass
class MatCovFit:
    family: BaseFamily
    loglik: float
    method: str
    n_evals: int


EXACT_MAX_N = 2000


def matcov_mle(data, coords, kind: str = "matern", ordering: Optional[Ordering] = None,
               init: Optional[BaseFamily] = None, m: int = 30, maxiter: int = 500,
               y_original_order: bool = False) -> MatCovFit:
    """Maximum-likelihood Matérn (or exponential) fit to replicated zero-mean fields.

    ``data`` columns must match ``coords`` row for row. Uses the exact
    likelihood up to ``EXACT_MAX_N`` locations and a Vecchia likelihood beyond
    that; ``ordering`` is then required, and the columns are taken to be in
    maximin order unless ``y_original_order`` is set. Without ``init`` the
    best of a few L-BFGS-B starts is kept.
    """
    y = np.atleast_2d(np.asarray(data, float))
    x = as_locations(coords)
    if y.shape[1] != x.shape[0]:
        raise ValueError(f"data has {y.shape[1]} columns but there are {x.shape[0]} locations")
    if y.shape[0] < 1 or not np.all(np.isfinite(y)):
        raise ValueError("degenerate data: need at least one finite replicate")
    var0 = float(np.mean(y * y))
    if var0 <= 0:
        raise ValueError("degenerate data: zero variance")

    n_loc = x.shape[0]
    diam = float(euclidean(x, x).max())
    if init is None:
        starts = [BaseFamily.create(kind, variance=var0, range=f * diam, smoothness=nu)
                  for f in (0.05, 0.2) for nu in ((0.5,) if kind == "exponential" else (0.5, 1.5))]
    else:
        starts = [init]
    names = starts[0].param_names
    use_exact = n_loc <= EXACT_MAX_N
    if not use_exact:
        if ordering is None:
            raise ValueError("an ordering is required for the Vecchia likelihood")
        blocks = VecchiaBlocks(ordering, m)
        y = ordering.to_ordered(y) if y_original_order else y

    evals = 0
    scale = 1.0 / y.size

    def objective(p):
        nonlocal evals
        evals += 1
        fam = starts[0].with_params(p)
        try:
            if use_exact:
                ll, g = gaussian_loglik(fam, x, y, grad=True)
            else:
                ll, g = _vecchia_loglik_grad(fam, ordering, blocks, y)
        except np.linalg.LinAlgError:
            return 1e300, np.zeros_like(p)
        if not np.isfinite(ll):
            return 1e300, np.zeros_like(p)
        return -ll * scale, -g * scale

    bounds = {"log_variance": (np.log(var0) - 10, np.log(var0) + 10),
              "log_range": (np.log(diam) - 12, np.log(diam) + 4),
              "log_smoothness": (np.log(0.2), np.log(4.0))}
    best = None
    for start in starts:
        res = optimize.minimize(objective, start.params(), jac=True, method="L-BFGS-B",
                                bounds=[bounds[k] for k in names], options={"maxiter": maxiter})
        if best is None or res.fun < best.fun:
            best = res
    fam = starts[0].with_params(best.x)
    if not np.isfinite(best.fun) or best.fun >= 1e299:
        raise RuntimeError(f"MatCov optimization diverged; last iterate {fam}")
    if not best.success:
        log.warning("MatCov optimizer stopped early: %s", best.message)
    res = best
    return MatCovFit(family=fam, loglik=float(-res.fun / scale),
                     method="exact" if use_exact else "vecchia", n_evals=evals)
