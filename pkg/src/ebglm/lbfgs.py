"""Limited-memory BFGS with an Armijo backtracking line search."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

MAX_HALVINGS = 60


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    trace: list = field(default_factory=list)
    n_iter: int = 0
    status: str = ""
    memory: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("gtol", "ftol")


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _backtrack(f, x, fx, g, d, rho, c1):
    slope = g @ d
    alpha = 1.0
    for _ in range(MAX_HALVINGS + 1):
        x_new = x + alpha * d
        if np.array_equal(x_new, x):
            break  # step lost below float resolution
        f_new = f(x_new)
        if math.isfinite(f_new) and f_new <= fx + c1 * alpha * slope:
            return x_new, f_new
        alpha *= rho
    return None, None


def lbfgs_minimize(f, grad, x0, m: int = 10, max_iter: int = 200, grad_tol: float = 1e-5,
                   obj_rel_tol: float = 1e-8, rho: float = 0.5, c1: float = 1e-4,
                   memory=None) -> LbfgsResult:
    """Minimise ``f`` from ``x0``.

    Stops when the gradient's infinity norm drops below ``grad_tol`` ("gtol"),
    the relative decrease of f drops below ``obj_rel_tol`` ("ftol"), or after
    ``max_iter`` iterations ("maxiter").  The relative-decrease test is
    applied to quasi-Newton steps only.  When backtracking fails along the
    quasi-Newton direction, one steepest-descent step is tried with the memory
    cleared; if that fails as well the run ends with status "stall".
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    g = grad(x)
    trace = [fx]
    pairs: deque = deque(memory or (), maxlen=m)
    status = "maxiter"
    it = 0
    while it < max_iter:
        if np.max(np.abs(g)) < grad_tol:
            status = "gtol"
            break
        gnorm = math.sqrt(g @ g)
        quasi_newton = bool(pairs)
        if pairs:
            d = _two_loop(g, pairs)
            if not (g @ d < 0):
                pairs.clear()
                quasi_newton = False
                d = -g / gnorm
        else:
            d = -g / gnorm
        x_new, f_new = _backtrack(f, x, fx, g, d, rho, c1)
        if x_new is None and pairs:
            pairs.clear()
            quasi_newton = False
            x_new, f_new = _backtrack(f, x, fx, g, -g / gnorm, rho, c1)
        if x_new is None:
            status = "stall"
            break
        g_new = grad(x_new)
        it += 1
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * math.sqrt((s @ s) * (y @ y)):
            pairs.append((s, y, 1.0 / sy))
        f_old = fx
        x, fx, g = x_new, f_new, g_new
        trace.append(fx)
        # a unit-length gradient step says little about convergence, so only
        # quasi-Newton steps are subject to the relative-decrease test
        if quasi_newton and f_old - fx <= obj_rel_tol * max(abs(f_old), abs(fx), 1.0):
            status = "gtol" if np.max(np.abs(g)) < grad_tol else "ftol"
            break
    return LbfgsResult(x=x, fun=fx, grad=g, trace=trace, n_iter=it, status=status,
                        memory=list(pairs))
