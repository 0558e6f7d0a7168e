"""Independent numerical oracles.

Nothing here touches the analytic marginal formulas in :mod:`ebglm.priors`.
Integrals over the prior are done by adaptive quadrature on the prior
*density* (the spike is an exact point-mass term), and derivatives by
central differences.  Used by the test-suite and by ``ebglm verify``.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, optimize

from .priors import NormalMixture, PointLaplace, PointNormal, Prior


def _slab_pieces(prior: Prior):
    """Continuous parts of the prior as (weight, log_density, scale) triples."""
    if isinstance(prior, PointNormal):
        v = prior.sigma2
        return [(1.0 - prior.pi0, lambda b, v=v: -0.5 * math.log(2 * math.pi * v) - b * b / (2 * v), math.sqrt(v))]
    if isinstance(prior, PointLaplace):
        sc = prior.scale
        return [(1.0 - prior.pi0, lambda b, sc=sc: -math.log(2 * sc) - abs(b) / sc, math.inf)]
    if isinstance(prior, NormalMixture):
        out = []
        for w, v in zip(prior.weights, prior.variances):
            if v > 0 and w > 0:
                out.append((float(w), lambda b, v=float(v): -0.5 * math.log(2 * math.pi * v) - b * b / (2 * v), math.sqrt(v)))
        return out
    raise TypeError(f"no oracle for {type(prior).__name__}")


def _spike_mass(prior: Prior) -> float:
    return prior.spike_weight if prior.has_spike else 0.0


def log_quad(logf, width: float, anchors=(0.0,), moments=(0,), epsrel: float = 1e-13):
    """Log of the integral of x**k * exp(logf(x)) for each k in ``moments``.

    ``logf`` must be concave.  Its mode is located by Brent's method, the
    integrand is rescaled by the value there, and quad is run over
    mode +/- 60 * width with break points at the mode, its local scale and
    the anchors.  Returns (log_scale, [integral_k / exp(log_scale)]).
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _log_quad(logf, width, anchors, moments, epsrel)


def _log_quad(logf, width, anchors, moments, epsrel):
    lo_a, hi_a = min(anchors), max(anchors)
    res = optimize.minimize_scalar(
        lambda x: -logf(x), bracket=(lo_a - width, hi_a + width), tol=1e-12
    )
    mode = float(res.x)
    top = logf(mode)
    h = 1e-4 * max(width, 1e-8)
    curv = -(logf(mode + h) - 2 * top + logf(mode - h)) / (h * h)
    local = 1.0 / math.sqrt(curv) if curv > 0 else width
    local = min(local, width)
    lo = mode - 60.0 * width
    hi = mode + 60.0 * width
    pts = sorted({p for p in (mode, mode - 8 * local, mode + 8 * local, *anchors) if lo < p < hi})
    mass, _ = integrate.quad(lambda x: math.exp(logf(x) - top), lo, hi, points=pts,
                             limit=500, epsabs=0.0, epsrel=epsrel)
    vals = []
    for k in moments:
        if k == 0:
            vals.append(mass)
            continue
        # moment integrals can vanish (odd moments at z = 0), so the tolerance is tied to the mass
        atol = epsrel * mass * (abs(mode) + local) ** k
        v, _ = integrate.quad(lambda x, k=k: x**k * math.exp(logf(x) - top), lo, hi, points=pts,
                              limit=500, epsabs=atol, epsrel=epsrel)
        vals.append(v)
    return top, vals


def _normal_logpdf(x, mean, var):
    return -0.5 * math.log(2 * math.pi * var) - (x - mean) ** 2 / (2 * var)


def quad_moments(z: float, prior: Prior, s2: float):
    """(log marginal, E[b|z], E[b^2|z]) by quadrature."""
    s = math.sqrt(s2)
    spike = _spike_mass(prior)
    logs, m0, m1, m2 = [], [], [], []
    if spike > 0:
        logs.append(math.log(spike) + _normal_logpdf(z, 0.0, s2))
        m0.append(1.0)
        m1.append(0.0)
        m2.append(0.0)
    for w, logg, scale in _slab_pieces(prior):
        top, (i0, i1, i2) = log_quad(
            lambda b, logg=logg: _normal_logpdf(z, b, s2) + logg(b),
            width=min(s, scale),
            anchors=(0.0, z),
            moments=(0, 1, 2),
        )
        logs.append(math.log(w) + top + math.log(i0))
        m0.append(1.0)
        m1.append(i1 / i0)
        m2.append(i2 / i0)
    logs = np.array(logs)
    big = logs.max()
    wts = np.exp(logs - big)
    total = wts.sum()
    wts /= total
    lml = big + math.log(total)
    return lml, float(wts @ np.array(m1)), float(wts @ np.array(m2))


def quad_marginal_loglik(z: float, prior: Prior, s2: float) -> float:
    return quad_moments(z, prior, s2)[0]


def quad_posterior_mean_var(z: float, prior: Prior, s2: float):
    _, e1, e2 = quad_moments(z, prior, s2)
    return e1, e2 - e1 * e1


def dual_penalty(theta: float, prior: Prior, s2: float) -> float:
    """Penalty by Lagrangian duality, independent of l_NM and of root finding.

    r(theta) = min over q with mean theta of E_q[(b - theta)^2] / (2 s2) + KL(q || g)
             = max over lam of -log integral g(b) exp(-(b - theta)^2 / (2 s2) - lam (b - theta)) db.
    The inner integral is done by quadrature and the outer max by Brent's method.
    """
    s = math.sqrt(s2)
    spike = _spike_mass(prior)
    pieces = _slab_pieces(prior)

    def log_partition(lam):
        logs = []
        if spike > 0:
            logs.append(math.log(spike) - theta * theta / (2 * s2) + lam * theta)
        for w, logg, scale in pieces:
            top, (i0,) = log_quad(
                lambda b, logg=logg: logg(b) - (b - theta) ** 2 / (2 * s2) - lam * (b - theta),
                width=min(s, scale),
                anchors=(0.0, theta),
            )
            logs.append(math.log(w) + top + math.log(i0))
        logs = np.array(logs)
        big = logs.max()
        return big + math.log(np.exp(logs - big).sum())

    # the maximiser is lam = (theta - z) / s2 with |z| >= |theta|, so it has sign opposite to theta
    span = 10.0 * (abs(theta) + s) / s2 + 10.0
    res = optimize.minimize_scalar(log_partition, bounds=(-span, span), method="bounded",
                                   options={"xatol": 1e-12 / s2, "maxiter": 2000})
    return -float(res.fun)


def central_difference(f, x, h: float):
    """Gradient of scalar ``f`` at vector ``x`` by central differences."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g
