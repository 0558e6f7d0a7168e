"""Sparse priors and the Bayesian normal-means (BNM) machinery.

The BNM model is ``z | b ~ N(b, s2)``, ``b ~ g``.  Everything downstream
needs only the log marginal likelihood ``l_NM(z)``, its z-derivatives and
its gradient in the prior parameters, all of which are computed here from
per-component log densities combined with log-sum-exp.

Every prior is written as a finite list of components.  For component ``k``
we track

``logc``  log(weight_k) + log of the component's marginal density at z,
``d1``    d/dz of the component log marginal,
``c2``    1 + s2 * d^2/dz^2 of the component log marginal, which equals the
          component's posterior variance divided by s2 (always in [0, 1]).

The point-Laplace slab is split into its two half-line pieces, each of which
is an ``exp(-z^2/2s2) * erfcx(u)`` term, so no exponential is ever formed
outside log space.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.special import erfc, erfcx, expit, logit

from .errors import DataError, DegeneratePriorError

SPIKE_CAP = 1e-8
"""The spike weight is kept at or below ``1 - SPIKE_CAP`` during optimisation."""

_LOG_2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRTPI = 2.0 / math.sqrt(math.pi)


def _log_erfcx(u):
    """log(exp(u^2) erfc(u)) without overflow on either side."""
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        pos = np.log(erfcx(u))
        neg = u * u + np.log(erfc(u))
    return np.where(u >= 0, pos, neg)


def _dlog_erfcx(u):
    """First and second derivatives of log erfcx at u."""
    with np.errstate(over="ignore"):
        r = _TWO_OVER_SQRTPI / erfcx(u)  # -> 0 as erfcx overflows for very negative u
    d1 = 2.0 * u - r
    d2 = 2.0 + r * d1
    return d1, d2


def _logsumexp_last(a):
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a - m)
    tot = e.sum(axis=-1, keepdims=True)
    return (m + np.log(tot))[..., 0], e / tot


def _spike_logit(pi0: float) -> float:
    return float(logit(pi0 / (1.0 - SPIKE_CAP)))


def _spike_from_logit(t: float) -> float:
    return float((1.0 - SPIKE_CAP) * expit(t))


def _log_weight(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


@dataclass(frozen=True)
class Prior:
    """Base class. Subclasses define their components and parameter maps."""

    kind: ClassVar[str] = ""
    cli_name: ClassVar[str] = ""
    has_spike: ClassVar[bool] = True

    def component_terms(self, z, s2):
        raise NotImplementedError

    def unconstrained(self) -> np.ndarray:
        raise NotImplementedError

    def with_unconstrained(self, u) -> "Prior":
        raise NotImplementedError

    def grad_unconstrained(self, z, s2, w) -> np.ndarray:
        raise NotImplementedError

    @property
    def spike_weight(self) -> float:
        raise NotImplementedError

    def is_degenerate(self) -> bool:
        return self.spike_weight > 1.0 - SPIKE_CAP * (1.0 - 1e-6)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_spike(pi0: float) -> float:
    pi0 = float(pi0)
    if not (0.0 <= pi0 <= 1.0):
        raise DataError(f"spike weight pi0 must lie in [0, 1], got {pi0}")
    return pi0


def _spike_terms(z, s2, log_pi0):
    logc = log_pi0 - 0.5 * (_LOG_2PI + np.log(s2)) - z * z / (2.0 * s2)
    return logc, -z / s2, np.zeros_like(logc)


def _spike_logit_grad(pi0, w0, w_slab):
    """d l_NM / d logit, with pi0 = (1 - cap) * sigmoid(logit)."""
    one_minus_sig = 1.0 - pi0 / (1.0 - SPIKE_CAP)
    if pi0 >= 1.0:
        return np.zeros_like(w0)
    return one_minus_sig * (w0 - w_slab * pi0 / (1.0 - pi0))


@dataclass(frozen=True)
class PointNormal(Prior):
    """pi0 * delta_0 + (1 - pi0) * N(0, sigma2)."""

    pi0: float
    sigma2: float

    kind: ClassVar[str] = "point_normal"
    cli_name: ClassVar[str] = "point-normal"

    def __post_init__(self):
        object.__setattr__(self, "pi0", _check_spike(self.pi0))
        s = float(self.sigma2)
        if not (s > 0 and np.isfinite(s)):
            raise DataError(f"slab variance must be positive, got {s}")
        object.__setattr__(self, "sigma2", s)

    @property
    def spike_weight(self) -> float:
        return self.pi0

    def component_terms(self, z, s2):
        z = z[..., None]
        s2 = s2[..., None]
        logw = _log_weight(np.array([self.pi0, 1.0 - self.pi0]))
        v = np.array([0.0, self.sigma2])
        tot = s2 + v
        logc = logw - 0.5 * (_LOG_2PI + np.log(tot)) - z * z / (2.0 * tot)
        return logc, -z / tot, v / tot

    def unconstrained(self) -> np.ndarray:
        return np.array([_spike_logit(self.pi0), math.log(self.sigma2)])

    def with_unconstrained(self, u) -> "PointNormal":
        return PointNormal(_spike_from_logit(u[0]), math.exp(u[1]))

    def grad_unconstrained(self, z, s2, w):
        g_t = _spike_logit_grad(self.pi0, w[..., 0], w[..., 1])
        tot = s2 + self.sigma2
        g_v = w[..., 1] * self.sigma2 * 0.5 * (z * z / (tot * tot) - 1.0 / tot)
        return np.stack([g_t, g_v], axis=-1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pi0": self.pi0, "sigma2": self.sigma2}


@dataclass(frozen=True)
class PointLaplace(Prior):
    """pi0 * delta_0 + (1 - pi0) * Laplace(0, scale).

    ``scale`` is the Laplace scale b (density exp(-|x|/b) / 2b), so the slab
    variance is 2 b^2.
    """

    pi0: float
    scale: float

    kind: ClassVar[str] = "point_laplace"
    cli_name: ClassVar[str] = "point-laplace"

    def __post_init__(self):
        object.__setattr__(self, "pi0", _check_spike(self.pi0))
        b = float(self.scale)
        if not (b > 0 and np.isfinite(b)):
            raise DataError(f"Laplace scale must be positive, got {b}")
        object.__setattr__(self, "scale", b)

    @property
    def spike_weight(self) -> float:
        return self.pi0

    @property
    def variance(self) -> float:
        return 2.0 * self.scale**2

    def _u(self, z, s2):
        s = np.sqrt(s2)
        a = s / (_SQRT2 * self.scale)
        c = z / (_SQRT2 * s)
        return s, a - c, a + c

    def component_terms(self, z, s2):
        b = self.scale
        s, u_minus, u_plus = self._u(z, s2)
        lse_spike, d_spike, c_spike = _spike_terms(z, s2, _log_weight(self.pi0))
        base = _log_weight(1.0 - self.pi0) - math.log(4.0 * b) - z * z / (2.0 * s2)
        dm, d2m = _dlog_erfcx(u_minus)
        dp, d2p = _dlog_erfcx(u_plus)
        logc = np.stack(
            [lse_spike, base + _log_erfcx(u_minus), base + _log_erfcx(u_plus)], axis=-1
        )
        d1 = np.stack(
            [d_spike, -z / s2 - dm / (_SQRT2 * s), -z / s2 + dp / (_SQRT2 * s)], axis=-1
        )
        c2 = np.stack([c_spike, 0.5 * d2m, 0.5 * d2p], axis=-1)
        return logc, d1, c2

    def unconstrained(self) -> np.ndarray:
        return np.array([_spike_logit(self.pi0), math.log(self.scale)])

    def with_unconstrained(self, u) -> "PointLaplace":
        return PointLaplace(_spike_from_logit(u[0]), math.exp(u[1]))

    def grad_unconstrained(self, z, s2, w):
        g_t = _spike_logit_grad(self.pi0, w[..., 0], w[..., 1] + w[..., 2])
        s, u_minus, u_plus = self._u(z, s2)
        dm, _ = _dlog_erfcx(u_minus)
        dp, _ = _dlog_erfcx(u_plus)
        k = s / (_SQRT2 * self.scale)
        g_b = w[..., 1] * (-1.0 - dm * k) + w[..., 2] * (-1.0 - dp * k)
        return np.stack([g_t, g_b], axis=-1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pi0": self.pi0, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class NormalMixture(Prior):
    """Scale mixture of zero-mean normals on a fixed variance grid (ash).

    ``variances[0] == 0`` makes the first component a point mass at zero.
    Only the weights are free; they are parameterised by softmax logits with
    the last logit pinned to 0.
    """

    weights: np.ndarray
    variances: np.ndarray = field(repr=False)

    kind: ClassVar[str] = "normal_mixture"
    cli_name: ClassVar[str] = "ash"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        v = np.array(self.variances, dtype=float)
        if w.ndim != 1 or w.shape != v.shape or w.size < 2:
            raise DataError("mixture weights and variances must be 1-d arrays of equal length >= 2")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DataError("mixture weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DataError(f"mixture weights must sum to 1 (got {w.sum()!r})")
        if v[0] < 0 or np.any(np.diff(v) <= 0) or not np.all(np.isfinite(v)):
            raise DataError("mixture variances must be finite, nonnegative and strictly increasing")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "variances", v)

    def __eq__(self, other):
        return (
            isinstance(other, NormalMixture)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.variances, other.variances)
        )

    def __hash__(self):
        return hash((self.weights.tobytes(), self.variances.tobytes()))

    @property
    def has_spike(self) -> bool:  # type: ignore[override]
        return bool(self.variances[0] == 0.0)

    @property
    def spike_weight(self) -> float:
        return float(self.weights[0]) if self.has_spike else 0.0

    def component_terms(self, z, s2):
        z = z[..., None]
        tot = s2[..., None] + self.variances
        logc = _log_weight(self.weights) - 0.5 * (_LOG_2PI + np.log(tot)) - z * z / (2.0 * tot)
        return logc, -z / tot, self.variances / tot

    def unconstrained(self) -> np.ndarray:
        logw = np.log(np.maximum(self.weights, np.finfo(float).tiny))
        return logw[:-1] - logw[-1]

    def with_unconstrained(self, u) -> "NormalMixture":
        a = np.append(np.asarray(u, dtype=float), 0.0)
        a = a - a.max()
        e = np.exp(a)
        return NormalMixture(e / e.sum(), self.variances)

    def grad_unconstrained(self, z, s2, w):
        return w[..., :-1] - self.weights[:-1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "variances": self.variances.tolist(),
        }


def make_ash_grid(n: float, K: int = 20) -> np.ndarray:
    """Variance grid 0, 0.01, ..., n of length K+1, geometric after index 0."""
    if n < 2 or K < 2:
        raise DataError(f"ash grid needs n >= 2 and K >= 2 (got n={n}, K={K})")
    smin = 0.01
    a = (n / smin) ** (1.0 / (K - 1))
    grid = np.empty(K + 1)
    grid[0] = 0.0
    grid[1:] = smin * a ** np.arange(K)
    grid[-1] = float(n)
    return grid


def prior_from_dict(d: dict) -> Prior:
    kind = d.get("kind")
    if kind == PointNormal.kind:
        return PointNormal(d["pi0"], d["sigma2"])
    if kind == PointLaplace.kind:
        return PointLaplace(d["pi0"], d["scale"])
    if kind == NormalMixture.kind:
        return NormalMixture(np.array(d["weights"]), np.array(d["variances"]))
    raise DataError(f"unknown prior kind {kind!r}")


PRIOR_NAMES = ("point-normal", "point-laplace", "ash")


def initial_prior(name: str, n: int, K: int = 20) -> Prior:
    """Neutral starting prior used by the solver."""
    if name in ("point-normal", PointNormal.kind):
        return PointNormal(0.5, 1.0)
    if name in ("point-laplace", PointLaplace.kind):
        return PointLaplace(0.5, 1.0)
    if name in ("ash", NormalMixture.kind):
        grid = make_ash_grid(max(n, 2), K)
        return NormalMixture(np.full(K + 1, 1.0 / (K + 1)), grid)
    raise DataError(f"unknown prior {name!r}; expected one of {PRIOR_NAMES}")


# -- normal-means quantities -------------------------------------------------


def _prepare(z, s2):
    z = np.asarray(z, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("normal-means observation z must be finite")
    if not np.all(s2 > 0) or not np.all(np.isfinite(s2)):
        raise ValueError("normal-means variance s2 must be positive and finite")
    z, s2 = np.broadcast_arrays(z, s2)
    return z, s2


def _out(a):
    return float(a) if np.ndim(a) == 0 else a


class _Terms:
    __slots__ = ("l", "w", "d1", "c2", "dl")

    def __init__(self, z, prior, s2):
        logc, d1, c2 = prior.component_terms(z, s2)
        self.l, self.w = _logsumexp_last(logc)
        self.d1 = d1
        self.c2 = c2
        self.dl = np.sum(self.w * d1, axis=-1)

    def d2l(self, s2):
        spread = np.sum(self.w * (self.d1 - self.dl[..., None]) ** 2, axis=-1)
        return (np.sum(self.w * self.c2, axis=-1) - 1.0) / s2 + spread

    def variance(self, s2):
        spread = np.sum(self.w * (self.d1 - self.dl[..., None]) ** 2, axis=-1)
        return s2 * np.sum(self.w * self.c2, axis=-1) + s2 * s2 * spread


def bnm_terms(z, prior: Prior, s2) -> _Terms:
    z, s2 = _prepare(z, s2)
    return _Terms(z, prior, s2)


def marginal_loglik(z, prior: Prior, s2):
    """l_NM(z; g, s2) = log of the integral of N(z; b, s2) g(b) db."""
    z, s2 = _prepare(z, s2)
    logc, _, _ = prior.component_terms(z, s2)
    l, _ = _logsumexp_last(logc)
    return _out(l)


def marginal_loglik_d1(z, prior: Prior, s2):
    """d l_NM / dz."""
    z, s2 = _prepare(z, s2)
    return _out(_Terms(z, prior, s2).dl)


def marginal_loglik_d2(z, prior: Prior, s2):
    """d^2 l_NM / dz^2."""
    z, s2 = _prepare(z, s2)
    return _out(_Terms(z, prior, s2).d2l(s2))


def posterior_mean(z, prior: Prior, s2):
    """Tweedie: E[b | z] = z + s2 * l_NM'(z)."""
    z, s2 = _prepare(z, s2)
    return _out(z + s2 * _Terms(z, prior, s2).dl)


def _posterior_mean_fast(z, prior, s2):
    logc, d1, _ = prior.component_terms(z, s2)
    _, w = _logsumexp_last(logc)
    return z + s2 * np.sum(w * d1, axis=-1)


def posterior_variance(z, prior: Prior, s2):
    """Var[b | z] = s2 * (1 + s2 * l_NM''(z)), assembled from component moments."""
    z, s2 = _prepare(z, s2)
    var = _Terms(z, prior, s2).variance(s2)
    if np.any(var < 0):
        warnings.warn("posterior variance dipped below 0 numerically; clamped", RuntimeWarning)
        var = np.maximum(var, 0.0)
    return _out(var)


def posterior_nonzero_prob(z, prior: Prior, s2):
    """1 - posterior weight of the spike component."""
    if not prior.has_spike:
        raise DataError(f"{prior.cli_name} prior has no spike component")
    z, s2 = _prepare(z, s2)
    t = _Terms(z, prior, s2)
    return _out(1.0 - t.w[..., 0])


def marginal_loglik_dprior(z, prior: Prior, s2):
    """Gradient of l_NM at fixed z with respect to ``prior.unconstrained()``.

    Returns an array of shape ``z.shape + (n_params,)``.
    """
    z, s2 = _prepare(z, s2)
    logc, _, _ = prior.component_terms(z, s2)
    _, w = _logsumexp_last(logc)
    return prior.grad_unconstrained(z, s2, w)


def invert_posterior_mean(theta, prior: Prior, s2, tol: float = 1e-10, max_doublings: int = 200):
    """Find z with E[b | z] = theta by bracketed bisection.

    The shipped priors are symmetric and shrink towards zero, so z has the sign
    of theta and |z| >= |theta|.  The bracket starts at [|theta|, 2|theta|] and
    its far end doubles until the posterior mean there reaches |theta|; the
    bracket is then bisected until its width is at most ``tol`` (or no float
    lies strictly inside it).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if prior.is_degenerate():
        raise DegeneratePriorError(
            f"spike weight {prior.spike_weight!r} exceeds 1 - {SPIKE_CAP:g}; inverse map undefined"
        )
    theta, s2 = _prepare(theta, s2)
    scalar = theta.ndim == 0
    theta = np.atleast_1d(theta)
    s2 = np.atleast_1d(s2)
    z = np.zeros_like(theta)
    act = theta != 0
    if act.any():
        t = np.abs(theta[act])
        sa = s2[act]
        lo = t.copy()
        hi = 2.0 * t
        need = np.flatnonzero(np.ones_like(t, dtype=bool))
        with np.errstate(over="ignore", under="ignore"):
            for _ in range(max_doublings):
                m = _posterior_mean_fast(hi[need], prior, sa[need])
                short = m < t[need]
                grow = need[short]
                lo[grow] = hi[grow]
                hi[grow] *= 2.0
                need = grow
                if need.size == 0:
                    break
            else:
                raise DegeneratePriorError(
                    f"bracket expansion failed after {max_doublings} doublings "
                    f"(|theta| up to {t.max():g}, spike weight {prior.spike_weight:g})"
                )
            while True:
                mid = 0.5 * (lo + hi)
                live = (hi - lo > tol) & (mid > lo) & (mid < hi)
                if not live.any():
                    break
                up = _posterior_mean_fast(mid, prior, sa) < t
                lo = np.where(live & up, mid, lo)
                hi = np.where(live & ~up, mid, hi)
        z[act] = np.copysign(0.5 * (lo + hi), theta[act])
    return float(z[0]) if scalar else z
