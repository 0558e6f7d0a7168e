"""The penalized objective h(theta, g) and its gradient.

    h(theta, g) = -sum_i l(x_i' theta) + sum_{j not intercept} r_j(theta, g)

with r_j evaluated at the per-coefficient normal-means variance

    s2_j(theta) = a(phi) / sum_i b''(x_i' theta) x_ij^2.

The gradient is taken with s2 held fixed ("frozen"); the solver refreshes s2
in an outer loop.  Prior parameters are optimised in unconstrained
coordinates (see ``Prior.unconstrained``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import family as fam
from .errors import DataError, DegeneratePriorError
from .family import Family
from .penalty import DEFAULT_ROOT_TOL
from .priors import Prior, _logsumexp_last, invert_posterior_mean

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Standardization:
    """Per-feature (center, scale) applied to the non-intercept columns."""

    center: np.ndarray
    scale: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.center) / self.scale

    def to_original(self, theta, has_intercept: bool) -> np.ndarray:
        """Coefficients on the raw feature scale giving the same linear predictor."""
        theta = np.asarray(theta, dtype=float)
        first = 1 if has_intercept else 0
        out = theta.copy()
        out[first:] = theta[first:] / self.scale
        if has_intercept:
            out[0] = theta[0] - out[first:] @ self.center
        return out

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(np.asarray(d["center"], dtype=float), np.asarray(d["scale"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    """Design matrix (intercept column first when ``has_intercept``) and response."""

    X: np.ndarray
    y: np.ndarray | None
    has_intercept: bool = False
    standardization: Standardization | None = None
    feature_names: tuple = field(default=())
    response_name: str | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, order="C")
        if X.ndim != 2 or X.shape[1] == 0:
            raise DataError("design matrix must be 2-d with at least one column")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"design matrix has a non-finite entry at row {r}, column {c}")
        if self.has_intercept and not np.all(X[:, 0] == 1.0):
            raise DataError("intercept column must be exactly all ones")
        sq = np.einsum("ij,ij->j", X, X)
        if np.any(sq == 0):
            j = int(np.flatnonzero(sq == 0)[0])
            raise DataError(f"column {self._label(j)} is all zeros")
        first = 1 if self.has_intercept else 0
        if X.shape[0] > 1:
            const = np.all(X[:, first:] == X[0, first:], axis=0)
            if const.any():
                j = int(np.flatnonzero(const)[0]) + first
                raise DataError(f"column {self._label(j)} is constant")
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.array(self.y, dtype=float)
            if y.shape != (X.shape[0],):
                raise DataError(f"response has shape {y.shape}, expected ({X.shape[0]},)")
            if not np.all(np.isfinite(y)):
                raise DataError("response contains non-finite values")
            object.__setattr__(self, "y", y)
        if not self.feature_names:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1] - first))
            object.__setattr__(self, "feature_names", names)
        elif len(self.feature_names) != X.shape[1] - first:
            raise DataError("feature_names length does not match the number of feature columns")
        else:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def _label(self, j: int) -> str:
        first = 1 if self.has_intercept else 0
        if self.feature_names and j >= first and j - first < len(self.feature_names):
            return repr(self.feature_names[j - first])
        return str(j)

    @classmethod
    def from_features(cls, features, y=None, intercept: bool = True, standardize: bool = False,
                      feature_names=(), response_name=None) -> "Dataset":
        features = np.asarray(features, dtype=float)
        if features.ndim != 2:
            raise DataError("features must be a 2-d array")
        record = None
        if standardize:
            # without an intercept, centering would change the model; scale by RMS only
            if intercept:
                center = features.mean(axis=0)
                scale = features.std(axis=0)
            else:
                center = np.zeros(features.shape[1])
                scale = np.sqrt(np.mean(features**2, axis=0))
            scale = np.where(scale > 0, scale, 1.0)
            record = Standardization(center, scale)
            features = record.apply(features)
        X = np.column_stack([np.ones(features.shape[0]), features]) if intercept else features
        return cls(X, y, intercept, record, tuple(feature_names), response_name)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def coef_names(self) -> list[str]:
        return (["(intercept)"] if self.has_intercept else []) + list(self.feature_names)

    def penalized(self) -> np.ndarray:
        return np.arange(1 if self.has_intercept else 0, self.p)

    def take_columns(self, order) -> "Dataset":
        """Reorder the feature columns (intercept stays first)."""
        order = np.asarray(order)
        first = 1 if self.has_intercept else 0
        cols = np.concatenate([np.arange(first), order + first])
        std = self.standardization
        if std is not None:
            std = Standardization(std.center[order], std.scale[order])
        names = tuple(self.feature_names[k] for k in order)
        return replace(self, X=self.X[:, cols], standardization=std, feature_names=names)


@dataclass
class ParamVector:
    theta: np.ndarray
    prior_u: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta, self.prior_u])


def compute_s2(dataset: Dataset, family: Family, theta) -> np.ndarray:
    """s2_j = a(phi) / sum_i b''(x_i' theta) x_ij^2, floored against b'' underflow."""
    X = dataset.X
    eta = X @ np.asarray(theta, dtype=float)
    if family.kind == "poisson":
        eta = np.minimum(eta, fam.POISSON_ETA_MAX)
    X2 = X * X
    colsq = X2.sum(axis=0)
    denom = fam.cumulant_d2(family, eta) @ X2
    denom = np.maximum(denom, 1e-12 * colsq)
    return family.a / denom


class Objective:
    """h and its frozen-s2 gradient over the flat vector (theta, prior_u).

    With ``fit_prior=False`` the prior is held at ``prior`` and the vector
    is theta alone.
    """

    def __init__(self, dataset: Dataset, family: Family, prior: Prior,
                 root_tol: float = DEFAULT_ROOT_TOL, fit_prior: bool = True):
        if dataset.y is None:
            raise DataError("dataset has no response")
        self.dataset = dataset
        self.family = family
        self.y = fam.check_response(family, dataset.y)
        self.X = dataset.X
        self.X2 = self.X * self.X
        self.colsq = self.X2.sum(axis=0)
        self.prior = prior
        self.root_tol = root_tol
        self.fit_prior = fit_prior
        self.pen = dataset.penalized()
        self.p = dataset.p
        self.n_u = prior.unconstrained().size if fit_prior else 0
        self._cache_key = None
        self._cache = None

    # -- packing -----------------------------------------------------------

    def pack(self, theta, prior: Prior | None = None) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if not self.fit_prior:
            return theta.copy()
        prior = self.prior if prior is None else prior
        return np.concatenate([theta, prior.unconstrained()])

    def unpack(self, x) -> tuple[np.ndarray, Prior]:
        x = np.asarray(x, dtype=float)
        theta = x[: self.p]
        if not self.fit_prior:
            return theta, self.prior
        return theta, self.prior.with_unconstrained(x[self.p:])

    def s2(self, x) -> np.ndarray:
        theta, _ = self.unpack(x)
        eta = self.X @ theta
        if self.family.kind == "poisson":
            eta = np.minimum(eta, fam.POISSON_ETA_MAX)
        denom = fam.cumulant_d2(self.family, eta) @ self.X2
        return self.family.a / np.maximum(denom, 1e-12 * self.colsq)

    # -- evaluation --------------------------------------------------------

    def _evaluate(self, x, s2):
        key = (np.asarray(x, dtype=float).tobytes(), np.asarray(s2).tobytes())
        if key == self._cache_key:
            return self._cache
        out = self._compute(x, s2)
        self._cache_key, self._cache = key, out
        return out

    def _bad(self):
        return math.inf, np.full(self.p + self.n_u, np.nan), None

    def _compute(self, x, s2):
        try:
            theta, prior = self.unpack(x)
        except (DataError, OverflowError):
            return self._bad()
        eta = self.X @ theta
        if self.family.kind == "poisson" and np.any(eta > fam.POISSON_ETA_MAX):
            return self._bad()
        with np.errstate(over="ignore", invalid="ignore"):
            b = fam.cumulant(self.family, eta)
            nll = -(self.y @ eta - b.sum()) / self.family.a
            resid = self.y - fam.cumulant_d1(self.family, eta)
        grad = np.empty(self.p + self.n_u)
        grad[: self.p] = -(self.X.T @ resid) / self.family.a

        th = theta[self.pen]
        sp = s2[self.pen]
        try:
            z = invert_posterior_mean(th, prior, sp, self.root_tol)
        except DegeneratePriorError:
            return self._bad()
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            logc, _, _ = prior.component_terms(z, sp)
            lnm, w = _logsumexp_last(logc)
            r = -lnm - 0.5 * (_LOG_2PI + np.log(sp)) - (z - th) ** 2 / (2.0 * sp)
            h = nll + r.sum()
            grad[self.pen] += (z - th) / sp
            if self.fit_prior:
                grad[self.p:] = -prior.grad_unconstrained(z, sp, w).sum(axis=0)
        if not (np.isfinite(h) and np.all(np.isfinite(grad))):
            return self._bad()
        return float(h), grad, z

    def value(self, x, s2=None) -> float:
        """h at x; live mode (s2 recomputed from theta) when ``s2`` is None."""
        if s2 is None:
            s2 = self.s2(x)
        return self._evaluate(x, s2)[0]

    def gradient(self, x, s2) -> np.ndarray:
        return self._evaluate(x, s2)[1].copy()

    def pseudo_data(self, x, s2) -> np.ndarray:
        return self._evaluate(x, s2)[2]


def eval_objective(dataset: Dataset, family: Family, params: ParamVector, prior: Prior,
                   s2=None, root_tol: float = DEFAULT_ROOT_TOL) -> float:
    """h(theta, g).  ``prior`` supplies the parameter layout (and the ash grid);
    ``params.prior_u`` supplies the values.  ``s2=None`` means live mode."""
    fit_prior = params.prior_u.size > 0
    obj = Objective(dataset, family, prior, root_tol, fit_prior=fit_prior)
    return obj.value(params.flat(), s2)


def eval_gradient(dataset: Dataset, family: Family, params: ParamVector, prior: Prior,
                  s2, root_tol: float = DEFAULT_ROOT_TOL) -> np.ndarray:
    fit_prior = params.prior_u.size > 0
    obj = Objective(dataset, family, prior, root_tol, fit_prior=fit_prior)
    return obj.gradient(params.flat(), np.asarray(s2, dtype=float))
