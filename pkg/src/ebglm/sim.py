"""Synthetic sparse-GLM data and held-out scoring."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import DataError
from .family import Family, cumulant_d1, deviance
from .objective import Dataset

BETA_DISTS = ("normal", "laplace", "constant1", "uniform")
CORR_MODELS = ("equicorrelated", "ar1")


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    p: int = 1000
    s: int = 20
    rho: float = 0.0
    beta_dist: str = "normal"
    family: str = "logistic"
    n_test: int = 2000
    seed: int = 0
    corr_model: str = "equicorrelated"
    dispersion: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.n_test < 0:
            raise DataError("n and p must be positive and n_test nonnegative")
        if not 0 <= self.s <= self.p:
            raise DataError(f"sparsity s={self.s} must lie in [0, p={self.p}]")
        if not 0 <= self.rho < 1:
            raise DataError(f"correlation rho={self.rho} must lie in [0, 1)")
        if self.beta_dist not in BETA_DISTS:
            raise DataError(f"beta_dist must be one of {BETA_DISTS}")
        if self.corr_model not in CORR_MODELS:
            raise DataError(f"corr_model must be one of {CORR_MODELS}")
        Family(self.family, self.dispersion)

    @property
    def glm_family(self) -> Family:
        return Family(self.family, self.dispersion)

    def to_dict(self) -> dict:
        return asdict(self)


def _design(rng, n, p, rho, corr_model):
    if corr_model == "ar1":
        X = np.empty((n, p))
        X[:, 0] = rng.standard_normal(n)
        innov = np.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            X[:, j] = rho * X[:, j - 1] + innov * rng.standard_normal(n)
        return X
    shared = rng.standard_normal((n, 1))
    return np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * rng.standard_normal((n, p))


def _coefficients(rng, p, s, dist):
    beta = np.zeros(p)
    if s == 0:
        return beta
    idx = rng.choice(p, size=s, replace=False)
    if dist == "normal":
        vals = rng.standard_normal(s)
    elif dist == "laplace":
        vals = rng.laplace(0.0, 1.0, s)
    elif dist == "constant1":
        vals = np.ones(s)
    else:
        vals = rng.uniform(-1.0, 1.0, s)
    beta[idx] = vals
    return beta


def _response(rng, family: Family, eta):
    if family.kind == "bernoulli":
        return (rng.random(eta.shape) < expit(eta)).astype(float)
    if family.kind == "poisson":
        return rng.poisson(np.exp(np.minimum(eta, 700.0))).astype(float)
    return eta + np.sqrt(family.dispersion) * rng.standard_normal(eta.shape)


def simulate(config: SimConfig):
    """Draw (train, test, beta).  Coefficients, training and test data use
    independent streams spawned from the seed, and the intercept is zero."""
    beta_ss, train_ss, test_ss = np.random.SeedSequence(config.seed).spawn(3)
    beta = _coefficients(np.random.default_rng(beta_ss), config.p, config.s, config.beta_dist)
    family = config.glm_family
    names = tuple(f"x{j + 1}" for j in range(config.p))

    def draw(ss, n):
        rng = np.random.default_rng(ss)
        X = _design(rng, n, config.p, config.rho, config.corr_model)
        y = _response(rng, family, X @ beta)
        return Dataset.from_features(X, y, intercept=True, feature_names=names, response_name="y")

    train = draw(train_ss, config.n)
    test = draw(test_ss, config.n_test) if config.n_test > 0 else None
    return train, test, beta


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic, ties getting half credit."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError("scores and labels must have the same length")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = int((labels == 0).sum())
    if n1 + n0 != labels.size:
        raise DataError("labels must be 0/1")
    if n1 == 0 or n0 == 0:
        raise DataError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def score(family: Family, eta, y) -> tuple[str, float]:
    """Held-out metric: AUC for logistic, RMSE for gaussian, mean deviance for poisson."""
    if family.kind == "bernoulli":
        return "auc", auc(eta, y)
    mu = cumulant_d1(family, eta)
    if family.kind == "gaussian":
        return "rmse", float(np.sqrt(np.mean((np.asarray(y) - mu) ** 2)))
    return "deviance", float(np.mean(deviance(family, y, mu)))
