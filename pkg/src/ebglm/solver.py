"""Fitting: an outer loop that refreshes s2(theta) around L-BFGS inner solves."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import family as fam
from .errors import DataError
from .family import Family
from .lbfgs import lbfgs_minimize
from .objective import Dataset, Objective, Standardization
from .penalty import PosteriorSummary, reconstruct_posterior
from .priors import Prior, initial_prior

log = logging.getLogger(__name__)

OUTER_BACKTRACKS = 30


@dataclass(frozen=True)
class SolverConfig:
    m: int = 10
    inner_max_iter: int = 200
    outer_max_iter: int = 50
    grad_tol: float = 1e-5
    obj_rel_tol: float = 1e-8
    rho: float = 0.5
    c1: float = 1e-4
    root_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        for name in ("m", "inner_max_iter", "outer_max_iter"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be a positive integer")
        for name in ("grad_tol", "root_tol"):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} must be positive")
        if self.obj_rel_tol < 0:
            raise DataError("obj_rel_tol must be nonnegative")
        if not 0 < self.rho < 1:
            raise DataError("line-search contraction rho must lie in (0, 1)")
        if not 0 < self.c1 < 1:
            raise DataError("Armijo constant c1 must lie in (0, 1)")


@dataclass
class FitResult:
    theta: np.ndarray
    prior: Prior
    family: Family
    objective_trace: list
    inner_traces: list
    converged: bool
    outer_iters: int
    inner_iters: int
    s2: np.ndarray
    summary: PosteriorSummary
    has_intercept: bool
    standardization: Standardization | None
    feature_names: tuple
    response_name: str | None
    n: int
    seed: int = 0
    stalled: bool = False
    coef_names: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def elbo(self) -> float:
        return -self.objective_trace[-1]

    @property
    def iters(self) -> tuple[int, int]:
        return self.outer_iters, self.inner_iters


def _summaries(dataset: Dataset, theta, prior: Prior, s2, tol) -> PosteriorSummary:
    p = dataset.p
    pen = dataset.penalized()
    z = theta.copy()
    var = s2.copy()
    nz = np.ones(p)
    ps = reconstruct_posterior(theta[pen], prior, s2[pen], tol)
    z[pen] = ps.z
    var[pen] = ps.variance
    if ps.nonzero_prob is not None:
        nz[pen] = ps.nonzero_prob
    else:
        nz[pen] = np.nan
    # the intercept has a flat prior: its normal-means posterior is N(theta_0, s2_0)
    return PosteriorSummary(z=z, s=np.sqrt(s2), mean=theta.copy(), variance=var, nonzero_prob=nz)


def fit(dataset: Dataset, family: Family, prior: str | Prior = "point-normal",
        config: SolverConfig | None = None, init_theta=None, fit_prior: bool = True,
        ash_K: int = 20) -> FitResult:
    """Minimise h(theta, g) jointly over posterior means and prior parameters.

    ``prior`` is a prior name (started from neutral parameters) or a Prior
    instance used as the starting point, or held fixed when ``fit_prior`` is
    False.
    """
    config = config or SolverConfig()
    start = initial_prior(prior, dataset.n, ash_K) if isinstance(prior, str) else prior
    if init_theta is None:
        theta0 = np.zeros(dataset.p)
    else:
        theta0 = np.asarray(init_theta, dtype=float)
        if theta0.shape != (dataset.p,):
            raise DataError(f"initial theta has length {theta0.size}, expected {dataset.p}")
    with threadpool_limits(limits=1, user_api="blas"):
        return _fit(dataset, family, start, config, theta0, fit_prior)


def _fit(dataset, family, start, config, theta0, fit_prior):
    obj = Objective(dataset, family, start, config.root_tol, fit_prior)
    x = obj.pack(theta0, start)
    h = obj.value(x)
    if not math.isfinite(h):
        raise DataError("objective is not finite at the initial point")
    live = [h]
    inner_traces = []
    inner_total = 0
    converged = False
    stalled = False
    outer = 0
    memory = None
    while outer < config.outer_max_iter:
        outer += 1
        s2 = obj.s2(x)
        res = lbfgs_minimize(
            lambda v: obj.value(v, s2), lambda v: obj.gradient(v, s2), x,
            m=config.m, max_iter=config.inner_max_iter, grad_tol=config.grad_tol,
            obj_rel_tol=config.obj_rel_tol, rho=config.rho, c1=config.c1, memory=memory,
        )
        # s2 moves little between outer steps, so the curvature pairs stay informative
        memory = res.memory
        inner_traces.append(res.trace)
        inner_total += res.n_iter
        stalled = res.status == "stall"
        x_new = res.x
        h_new = obj.value(x_new)
        if not h_new <= h:
            # refreshing s2 moved the live objective up: shrink the outer step until it descends
            step = x_new - x
            alpha = 1.0
            for _ in range(OUTER_BACKTRACKS):
                alpha *= 0.5
                x_try = x + alpha * step
                h_try = obj.value(x_try)
                if h_try <= h:
                    x_new, h_new = x_try, h_try
                    break
            else:
                log.debug("outer iteration %d: no descent on the live objective", outer)
                converged = res.converged
                break
        rel = (h - h_new) / max(abs(h), abs(h_new), 1.0)
        x, h = x_new, h_new
        live.append(h)
        log.debug("outer %d: h=%.12g inner=%d (%s)", outer, h, res.n_iter, res.status)
        if rel <= config.obj_rel_tol:
            converged = res.converged or res.status == "gtol"
            break
    theta, ghat = obj.unpack(x)
    theta = theta.copy()
    s2 = obj.s2(x)
    summary = _summaries(dataset, theta, ghat, s2, config.root_tol)
    return FitResult(
        theta=theta, prior=ghat, family=family, objective_trace=live,
        inner_traces=inner_traces, converged=converged, outer_iters=outer,
        inner_iters=inner_total, s2=s2, summary=summary,
        has_intercept=dataset.has_intercept, standardization=dataset.standardization,
        feature_names=dataset.feature_names, response_name=dataset.response_name,
        n=dataset.n, seed=config.seed, stalled=stalled, coef_names=dataset.coef_names,
    )


def design_matrix(model, features) -> np.ndarray:
    """Apply a fitted model's standardization and intercept to raw feature rows."""
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[None, :]
    p = len(model.theta)
    want = p - (1 if model.has_intercept else 0)
    if features.shape[1] != want:
        raise DataError(f"new data has {features.shape[1]} feature columns, model expects {want}")
    if model.standardization is not None:
        features = model.standardization.apply(features)
    if model.has_intercept:
        features = np.column_stack([np.ones(features.shape[0]), features])
    return features


def predict(model, features, kind: str = "response") -> np.ndarray:
    """Predictions from a FitResult or loaded ModelDocument.

    ``kind="link"`` gives x' theta, ``kind="response"`` applies the mean function.
    """
    if kind not in ("link", "response"):
        raise DataError(f"prediction type must be 'link' or 'response', got {kind!r}")
    X = design_matrix(model, features)
    eta = X @ np.asarray(model.theta, dtype=float)
    if kind == "link":
        return eta
    return fam.cumulant_d1(model.family, eta)
