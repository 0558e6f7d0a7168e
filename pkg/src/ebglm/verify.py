"""Self-certification suites run by ``ebglm verify``.

Each check compares an analytic quantity with an independent oracle from
:mod:`ebglm.oracles` and reports the worst discrepancy against a tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .family import Family
from .objective import Dataset, Objective
from .oracles import central_difference, dual_penalty, quad_marginal_loglik, quad_posterior_mean_var
from .penalty import eval_penalty
from .priors import (
    NormalMixture,
    PointLaplace,
    PointNormal,
    initial_prior,
    make_ash_grid,
    marginal_loglik,
    posterior_mean,
    posterior_variance,
    invert_posterior_mean,
)

SUITES = ("bnm", "penalty", "gradient", "all")


@dataclass(frozen=True)
class Check:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<56s} max_err={self.error:.3e} tol={self.tol:.0e}"


def reference_priors() -> dict:
    grid = make_ash_grid(100, 20)
    w = np.exp(-0.3 * np.arange(grid.size))
    return {
        "point-normal": PointNormal(0.5, 1.0),
        "point-normal-sparse": PointNormal(0.95, 4.0),
        "point-laplace": PointLaplace(0.5, 1.0),
        "point-laplace-narrow": PointLaplace(0.2, 0.3),
        "ash": NormalMixture(w / w.sum(), grid),
    }


def check_quadrature(priors=None, s2_values=(0.01, 1.0, 100.0), z_values=None, tol=1e-8) -> list[Check]:
    priors = priors or reference_priors()
    z_values = np.linspace(-20, 20, 21) if z_values is None else np.asarray(z_values)
    out = []
    for name, prior in priors.items():
        err = 0.0
        for s2 in s2_values:
            ana = marginal_loglik(z_values, prior, np.full(z_values.shape, s2))
            ref = np.array([quad_marginal_loglik(float(z), prior, s2) for z in z_values])
            err = max(err, float(np.max(np.abs(ana - ref))))
        out.append(Check(f"bnm quadrature l_NM [{name}]", err, tol))
    return out


def check_posterior_moments(priors=None, z_values=(-6.0, -1.0, 0.0, 0.5, 3.0, 12.0), s2=0.7, tol=1e-8):
    priors = priors or reference_priors()
    z = np.asarray(z_values)
    out = []
    for name, prior in priors.items():
        m = posterior_mean(z, prior, np.full(z.shape, s2))
        v = posterior_variance(z, prior, np.full(z.shape, s2))
        ref = np.array([quad_posterior_mean_var(float(t), prior, s2) for t in z])
        err = max(np.max(np.abs(m - ref[:, 0])), np.max(np.abs(v - ref[:, 1])))
        out.append(Check(f"bnm posterior mean/var [{name}]", float(err), tol))
    return out


def check_roundtrip(priors=None, s2_values=(0.1, 1.0, 10.0), tol=1e-10) -> list[Check]:
    priors = priors or reference_priors()
    theta = np.array([-20, -3, -0.5, -0.01, 0.01, 0.5, 3, 20], dtype=float)
    out = []
    for name, prior in priors.items():
        err = 0.0
        for s2 in s2_values:
            sv = np.full(theta.shape, s2)
            z = invert_posterior_mean(theta, prior, sv, tol=1e-12)
            err = max(err, float(np.max(np.abs(posterior_mean(z, prior, sv) - theta))))
        out.append(Check(f"bnm inverse roundtrip [{name}]", err, tol))
    return out


def check_normal_penalty(tol=1e-8) -> list[Check]:
    err = 0.0
    theta = np.linspace(-4, 4, 9)
    for sig2 in (0.1, 0.5, 1.0, 3.0, 10.0):
        for s2 in (0.05, 0.3, 1.0, 2.0, 8.0):
            r = eval_penalty(theta, PointNormal(0.0, sig2), s2).r
            exact = theta**2 / (2 * sig2) + 0.5 * np.log((sig2 + s2) / s2)
            err = max(err, float(np.max(np.abs(r - exact))))
    return [Check("penalty closed form (pure normal)", err, tol)]


def check_dual_penalty(priors=None, thetas=(-2.0, -0.3, 0.0, 0.4, 1.5), s2=0.5, tol=1e-7):
    priors = priors or reference_priors()
    out = []
    for name, prior in priors.items():
        r = eval_penalty(np.asarray(thetas), prior, s2).r
        ref = np.array([dual_penalty(t, prior, s2) for t in thetas])
        out.append(Check(f"penalty duality oracle [{name}]", float(np.max(np.abs(r - ref))), tol))
    return out


def check_penalty_derivative(priors=None, thetas=(-2.0, -0.3, 0.2, 0.9, 4.0), s2=0.5, h=1e-5, tol=1e-6):
    priors = priors or reference_priors()
    th = np.asarray(thetas)
    out = []
    for name, prior in priors.items():
        pe = eval_penalty(th, prior, s2, tol=1e-13)
        fd = (eval_penalty(th + h, prior, s2, tol=1e-13).r - eval_penalty(th - h, prior, s2, tol=1e-13).r) / (2 * h)
        err = float(np.max(np.abs(fd - pe.dr_dtheta) / np.maximum(np.abs(fd), 1.0)))
        out.append(Check(f"penalty envelope derivative [{name}]", err, tol))
    return out


def random_problem(family: Family, n: int = 50, p: int = 10, seed: int = 0):
    """A small random problem with an intercept, for gradient checks."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, p - 1))
    beta = rng.standard_normal(p - 1) * 0.5
    eta = 0.2 + features @ beta
    if family.kind == "bernoulli":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    elif family.kind == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        y = eta + math.sqrt(family.dispersion) * rng.standard_normal(n)
    data = Dataset.from_features(features, y, intercept=True)
    theta = rng.standard_normal(p) * 0.3
    return data, theta, rng


FAMILIES = (Family("gaussian", 1.5), Family("bernoulli"), Family("poisson"))


def gradient_error(family: Family, prior_name: str, seed: int = 0, h: float = 1e-6) -> float:
    data, theta, rng = random_problem(family, seed=seed)
    prior = initial_prior(prior_name, data.n)
    obj = Objective(data, family, prior)
    x = obj.pack(theta, prior)
    # move the prior parameters off their neutral start
    x[data.p:] += 0.3 * rng.standard_normal(x.size - data.p)
    s2 = obj.s2(x)
    g = obj.gradient(x, s2)
    fd = central_difference(lambda v: obj.value(v, s2), x, h)
    return float(np.max(np.abs(fd - g) / np.maximum(np.abs(fd), 1.0)))


def check_gradients(seeds=(0, 1), tol=1e-5) -> list[Check]:
    out = []
    for family in FAMILIES:
        for prior_name in ("point-normal", "point-laplace", "ash"):
            err = max(gradient_error(family, prior_name, seed) for seed in seeds)
            out.append(Check(f"gradient vs FD [{family.cli_name}, {prior_name}]", err, tol))
    return out


def run_suite(suite: str) -> list[Check]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    checks = []
    if suite in ("bnm", "all"):
        checks += check_quadrature() + check_posterior_moments() + check_roundtrip()
    if suite in ("penalty", "all"):
        checks += check_normal_penalty() + check_dual_penalty() + check_penalty_derivative()
    if suite in ("gradient", "all"):
        checks += check_gradients()
    return checks
