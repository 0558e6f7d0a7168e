"""Per-coefficient penalty on the posterior mean.

For a posterior mean ``theta`` the penalty is

    r(theta) = -l_NM(z; g, s2) + log N(z; theta, s2),

where ``z`` is the pseudo-observation whose BNM posterior mean equals theta.
``r`` is stationary in ``z`` at that root, which is why its derivative in
theta (at fixed s2) reduces to ``(z - theta) / s2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .priors import (
    Prior,
    bnm_terms,
    invert_posterior_mean,
    marginal_loglik,
)

_LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_ROOT_TOL = 1e-10


@dataclass(frozen=True)
class PenaltyEval:
    r: np.ndarray
    z: np.ndarray
    dr_dtheta: np.ndarray
    s2: np.ndarray


@dataclass(frozen=True)
class PosteriorSummary:
    """Variational posterior q_j, described through its BNM pseudo-data."""

    z: np.ndarray
    s: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    nonzero_prob: np.ndarray | None

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _log_normal(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - (x - mean) ** 2 / (2.0 * var)


def eval_penalty(theta, prior: Prior, s2, tol: float = DEFAULT_ROOT_TOL) -> PenaltyEval:
    theta = np.asarray(theta, dtype=float)
    s2 = np.broadcast_to(np.asarray(s2, dtype=float), theta.shape)
    z = np.asarray(invert_posterior_mean(theta, prior, s2, tol))
    r = -np.asarray(marginal_loglik(z, prior, s2)) + _log_normal(z, theta, s2)
    return PenaltyEval(r=r, z=z, dr_dtheta=(z - theta) / s2, s2=s2)


def reconstruct_posterior(theta, prior: Prior, s2, tol: float = DEFAULT_ROOT_TOL) -> PosteriorSummary:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    s2 = np.broadcast_to(np.asarray(s2, dtype=float), theta.shape)
    z = invert_posterior_mean(theta, prior, s2, tol)
    t = bnm_terms(z, prior, s2)
    var = np.maximum(t.variance(s2), 0.0)
    nz = 1.0 - t.w[..., 0] if prior.has_spike else None
    return PosteriorSummary(z=z, s=np.sqrt(s2), mean=theta.copy(), variance=var, nonzero_prob=nz)


def penalty_curve(grid, prior: Prior, s2: float, tol: float = DEFAULT_ROOT_TOL):
    """(theta, r(theta)) pairs on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    return grid, eval_penalty(grid, prior, s2, tol).r
