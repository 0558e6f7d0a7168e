"""Canonical exponential-family likelihoods.

Each family is described by its cumulant function ``b`` and dispersion
``a(phi)``; the per-observation log-likelihood (up to the ``c(y, phi)``
constant, which never enters the objective) is ``(y * eta - b(eta)) / a``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError

KINDS = ("gaussian", "bernoulli", "poisson")
_ALIASES = {"logistic": "bernoulli", "binomial": "bernoulli", "normal": "gaussian"}

# exp() overflows just above 709; the objective treats anything past this as non-finite
POISSON_ETA_MAX = 700.0


@dataclass(frozen=True)
class Family:
    kind: str
    dispersion: float = 1.0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise DataError(f"unknown family {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        disp = float(self.dispersion)
        if kind != "gaussian" and disp != 1.0:
            raise DataError(f"{kind} family has dispersion fixed at 1, got {disp}")
        if not np.isfinite(disp) or disp <= 0:
            raise DataError(f"dispersion must be a positive finite number, got {disp}")
        object.__setattr__(self, "dispersion", disp)

    @property
    def a(self) -> float:
        """a(phi): sigma^2 for gaussian, 1 otherwise."""
        return self.dispersion

    @property
    def cli_name(self) -> str:
        return "logistic" if self.kind == "bernoulli" else self.kind


def gaussian(sigma2: float) -> Family:
    return Family("gaussian", sigma2)


def bernoulli() -> Family:
    return Family("bernoulli")


def poisson() -> Family:
    return Family("poisson")


def _softplus(eta):
    # log(1 + e^eta) with the branch at 0: max(eta, 0) + log1p(e^{-|eta|})
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def cumulant(family: Family, eta):
    """b(eta)."""
    eta = np.asarray(eta, dtype=float)
    if family.kind == "gaussian":
        return 0.5 * eta * eta
    if family.kind == "bernoulli":
        return _softplus(eta)
    with np.errstate(over="ignore"):
        return np.exp(eta)


def cumulant_d1(family: Family, eta):
    """b'(eta), the mean function."""
    eta = np.asarray(eta, dtype=float)
    if family.kind == "gaussian":
        return eta.copy()
    if family.kind == "bernoulli":
        return expit(eta)
    with np.errstate(over="ignore"):
        return np.exp(eta)


def cumulant_d2(family: Family, eta):
    """b''(eta), the variance function. May underflow to 0 for bernoulli at large |eta|."""
    eta = np.asarray(eta, dtype=float)
    if family.kind == "gaussian":
        return np.ones_like(eta)
    if family.kind == "bernoulli":
        p = expit(eta)
        q = expit(-eta)
        return p * q
    with np.errstate(over="ignore"):
        return np.exp(eta)


def check_response(family: Family, y) -> np.ndarray:
    """Validate that ``y`` lies in the family's support and return it as floats."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError("response contains non-finite values")
    if family.kind == "bernoulli":
        bad = (y != 0.0) & (y != 1.0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"bernoulli response must be 0/1; found {y.flat[i]!r} at index {i}")
    elif family.kind == "poisson":
        bad = (y < 0) | (y != np.floor(y))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"poisson response must be a nonnegative integer; found {y.flat[i]!r} at index {i}"
            )
    return y


def log_lik_term(family: Family, y, eta):
    """l(eta) = (y * eta - b(eta)) / a(phi), excluding c(y, phi)."""
    y = check_response(family, y)
    eta = np.asarray(eta, dtype=float)
    return (y * eta - cumulant(family, eta)) / family.a


def deviance(family: Family, y, mu) -> np.ndarray:
    """Unit deviances, used for held-out scoring of non-logistic fits."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if family.kind == "gaussian":
        return (y - mu) ** 2
    if family.kind == "poisson":
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y > 0, y * np.log(y / mu), 0.0)
        return 2.0 * (term - (y - mu))
    eps = np.finfo(float).tiny
    return -2.0 * (y * np.log(np.maximum(mu, eps)) + (1 - y) * np.log(np.maximum(1 - mu, eps)))
