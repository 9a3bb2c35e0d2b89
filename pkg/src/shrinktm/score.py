"""Log-scores, conditional-simulation RMSE and method comparisons."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .basegauss import (BaseFamily, VecchiaBlocks, covariance, matcov_mle, vecchia_coefficients,
                        vecchia_loglik)
from .geometry import Ordering
from .optimize import PROTOCOL, OptimizerConfig, fit, initial_hyperparams
from .posterior import FittedMap, as_data
from .simulate import SimDesign, make_generator, generate

log = logging.getLogger(__name__)

METHODS = ("shrinktm", "simpletm", "matcov")
RESULT_FIELDS = ("method", "n", "replication", "metric", "value", "seed", "seconds")


class GaussianModel:
    """Zero-mean Gaussian field with a parametric covariance (the MatCov model).

    ``mode="exact"`` uses the dense covariance; ``mode="vecchia"`` uses the
    nearest-neighbor factorization with conditioning-set size ``m``.
    """

    def __init__(self, family: BaseFamily, ordering: Ordering, mode: str = "exact", m: int = 30):
        if mode not in ("exact", "vecchia"):
            raise ValueError("mode must be 'exact' or 'vecchia'")
        self.family = family
        self.ordering = ordering
        self.mode = mode
        self.m = m
        self._chol = None
        self._coeffs = None

    @property
    def size(self) -> int:
        return self.ordering.size

    @property
    def cov(self) -> np.ndarray:
        return covariance(self.family, self.ordering.coords)

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.cov)
        return self._chol

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = vecchia_coefficients(self.family, self.ordering, self.m,
                                                VecchiaBlocks(self.ordering, self.m))
        return self._coeffs

    def log_density(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, float))
        if self.mode == "vecchia":
            return vecchia_loglik(self.coeffs, self.ordering, y)
        w = np.linalg.solve(self.chol, y.T)
        half_logdet = np.sum(np.log(np.diag(self.chol)))
        return -0.5 * np.sum(w * w, axis=0) - half_logdet - 0.5 * self.size * np.log(2 * np.pi)

    def conditional_sample(self, observed, draws: int, rng: np.random.Generator) -> np.ndarray:
        """Draws of the full field given the first ``len(observed)`` ordered values."""
        obs = np.asarray(observed, float)
        k = obs.size
        out = np.empty((draws, self.size))
        out[:, :k] = obs
        if k == self.size:
            return out
        z = rng.standard_normal((draws, self.size - k))
        if self.mode == "vecchia":
            c = self.coeffs
            nb = np.where(self.ordering.neighbors >= 0, self.ordering.neighbors, 0)[:, :c.m]
            for i in range(k, self.size):
                out[:, i] = out[:, nb[i]] @ c.xi[i] + np.sqrt(c.tau2[i]) * z[:, i - k]
            return out
        # the ordered Cholesky factor gives the conditional directly:
        # y_2 = L21 L11^{-1} y_1 + L22 e
        chol = self.chol
        e1 = np.linalg.solve(chol[:k, :k], obs) if k else np.zeros(0)
        mean = chol[k:, :k] @ e1
        out[:, k:] = mean + z @ chol[k:, k:].T
        return out

    def conditional_mean(self, observed) -> np.ndarray:
        obs = np.asarray(observed, float)
        k = obs.size
        chol = self.chol
        e1 = np.linalg.solve(chol[:k, :k], obs) if k else np.zeros(0)
        return np.concatenate([obs, chol[k:, :k] @ e1])


Model = Union[FittedMap, GaussianModel]


def log_scores(model: Model, test) -> np.ndarray:
    """Log predictive density of each held-out field (columns in maximin order)."""
    y = as_data(test, model.ordering)
    if y.shape[0] == 0:
        raise ValueError("test data are empty")
    return model.log_density(y)


def log_score(model: Model, test) -> float:
    """Average log-score over held-out fields (higher is better)."""
    return float(np.mean(log_scores(model, test)))


def conditional_draws(model: Model, truth, k: int, draws: int = 50, seed: int = 0) -> np.ndarray:
    truth = np.asarray(truth, float)
    rng = np.random.default_rng(seed)
    if isinstance(model, GaussianModel):
        return model.conditional_sample(truth[:k], draws, rng)
    z = rng.standard_normal((draws, model.size))
    return model.conditional_inverse(z, truth[:k])


def conditional_rmse(model: Model, truth, k: int, draws: int = 50, seed: int = 0) -> float:
    """RMSE at the held-out ordered locations k..N-1 of the mean of conditional draws."""
    truth = np.asarray(truth, float)
    if truth.shape != (model.size,):
        raise ValueError(f"truth must be a single field of length {model.size}")
    if not 0 <= k < model.size:
        raise ValueError("need 0 <= k < N")
    if draws < 1:
        raise ValueError("need at least one draw")
    sims = conditional_draws(model, truth, k, draws, seed)
    pred = sims[:, k:].mean(axis=0)
    return float(np.sqrt(np.mean((pred - truth[k:]) ** 2)))


@dataclass(frozen=True)
class CompareConfig:
    n_test: int = 20
    optimizer: OptimizerConfig = PROTOCOL
    rmse_k: Optional[int] = None  # observed prefix for conditional RMSE; None means N/5
    draws: int = 50
    matcov_kind: str = "matern"


def fit_method(method: str, y, ordering: Ordering, cfg: CompareConfig) -> Model:
    """Train one of the compared methods on ordered training data."""
    if method == "matcov":
        res = matcov_mle(y, ordering.coords, kind=cfg.matcov_kind, ordering=ordering)
        mode = "exact" if res.method == "exact" else "vecchia"
        return GaussianModel(res.family, ordering, mode=mode)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return fit(y, ordering, cfg.optimizer, initial_hyperparams(method), method).map


METRICS = ("logscore", "logscore_per_location", "rmse")


def _replicate(design: SimDesign, gen, methods, n: int, r: int, seed: int, cfg: CompareConfig,
               metrics) -> list[dict]:
    ss = np.random.SeedSequence([seed, int(n), r])
    train_seed, test_seed, draw_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    amp = design.amplitude if design.kind == "nr" else 0.0
    train = generate(gen, n, train_seed, amp, design.frequency)
    test = generate(gen, cfg.n_test, test_seed, amp, design.frequency)
    size = gen.ordering.size
    rows = []
    for method in methods:
        t0 = time.perf_counter()
        model = fit_method(method, train, gen.ordering, cfg)
        ls = log_score(model, test)
        secs = time.perf_counter() - t0
        base = {"method": method, "n": n, "replication": r, "seed": train_seed, "seconds": secs}
        if "logscore" in metrics:
            rows.append({**base, "metric": "logscore", "value": ls})
        if "logscore_per_location" in metrics:
            rows.append({**base, "metric": "logscore_per_location", "value": ls / size})
        if "rmse" in metrics:
            k = cfg.rmse_k if cfg.rmse_k is not None else max(1, size // 5)
            rm = conditional_rmse(model, test[0], k, cfg.draws, draw_seed)
            rows.append({**base, "metric": "rmse", "value": rm})
    return rows


def compare(design: SimDesign, methods: Sequence[str] = METHODS, ns: Sequence[int] = (1, 2, 5, 10),
            reps: int = 10, seed: int = 0, cfg: CompareConfig = CompareConfig(),
            progress=None, metrics: Sequence[str] = ("logscore", "logscore_per_location"),
            workers: int = 1) -> list[dict]:
    """Train each method on fresh replicates and score on shared held-out fields.

    Returns one row per (method, n, replication, metric) with the columns of
    ``RESULT_FIELDS``. Metrics: ``logscore`` (per field), ``logscore_per_location``
    and ``rmse`` (conditional simulation with an observed prefix of ``cfg.rmse_k``
    ordered values, default N/5). Replications run in ``workers`` processes;
    every task has its own seed so the table does not depend on ``workers``.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    for m in metrics:
        if m not in METRICS:
            raise ValueError(f"unknown metric {m!r}")
    gen = make_generator(design)
    tasks = [(n, r) for n in ns for r in range(reps)]
    rows = []
    if workers <= 1:
        for n, r in tasks:
            part = _replicate(design, gen, methods, n, r, seed, cfg, metrics)
            rows.extend(part)
            if progress is not None:
                for row in part:
                    progress(row)
        return rows
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_replicate, design, gen, methods, n, r, seed, cfg, metrics) for n, r in tasks]
        for fut in futures:  # collected in task order
            part = fut.result()
            rows.extend(part)
            if progress is not None:
                for row in part:
                    progress(row)
    return rows


def summarize(rows: Iterable[dict], metric: str = "logscore") -> dict:
    """Mean and standard deviation of ``metric`` per (method, n)."""
    acc: dict = {}
    for row in rows:
        if row["metric"] == metric:
            acc.setdefault((row["method"], int(row["n"])), []).append(float(row["value"]))
    return {k: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0, len(v))
            for k, v in acc.items()}


def write_results(rows: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in RESULT_FIELDS})


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r, n=int(r["n"]), replication=int(r["replication"]), value=float(r["value"]),
                     seconds=float(r["seconds"])) for r in csv.DictReader(fh)]
