"""One check per acceptance criterion, each printing a PASS/FAIL line.

Tolerances and problem sizes are pinned; run with ``-s`` to see the lines
as they happen, or read the summary section at the end of the session.
"""
import math
import time

import numpy as np
import pytest
from scipy.special import expit

from acceptance_log import report
from ebglm.bench import parse_grid, run_bench, summary_path, write_bench
from ebglm.cli import available_cores, main
from ebglm.family import bernoulli, gaussian
from ebglm.objective import Dataset
from ebglm.oracles import log_quad
from ebglm.priors import PointNormal
from ebglm.sim import SimConfig, score, simulate
from ebglm.solver import fit
from ebglm.verify import check_gradients, check_normal_penalty, check_quadrature, check_roundtrip

SEEDS10 = range(10)


def _worst(checks):
    return max(c.error for c in checks)


# -- 1-4: oracle identities ---------------------------------------------------


def test_c01_bnm_quadrature():
    t0 = time.perf_counter()
    checks = check_quadrature(z_values=np.linspace(-20.0, 20.0, 81), s2_values=(0.01, 1.0, 100.0), tol=1e-8)
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and len(checks) == 5 and elapsed < 30
    report(1, "BNM marginal vs quadrature", ok,
           f"max_err={_worst(checks):.2e} (tol 1e-08) over 5 priors x 3 s2 x 81 z, {elapsed:.1f}s (limit 30s)")
    assert ok


def test_c02_inverse_roundtrip():
    checks = check_roundtrip(s2_values=(0.1, 1.0, 10.0), tol=1e-10)
    ok = all(c.passed for c in checks)
    report(2, "inverse-map roundtrip", ok, f"max_err={_worst(checks):.2e} (tol 1e-10)")
    assert ok


def test_c03_normal_penalty_identity():
    (check,) = check_normal_penalty(tol=1e-8)
    report(3, "pure-normal penalty closed form", check.passed, f"max_err={check.error:.2e} (tol 1e-08) on 5x5x9 grid")
    assert check.passed


def test_c04_gradient_certification():
    t0 = time.perf_counter()
    checks = check_gradients(tol=1e-5)
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and len(checks) == 9 and elapsed < 60
    report(4, "gradient vs central differences", ok,
           f"max_rel_err={_worst(checks):.2e} (tol 1e-05) over 3 families x 3 priors, {elapsed:.1f}s (limit 60s)")
    assert ok


# -- 5-8: fits -----------------------------------------------------------------


@pytest.fixture(scope="module")
def conjugate_fits():
    rng = np.random.default_rng(55)
    out = []
    for disp, sig2 in ((1.0, 1.0), (0.5, 2.0), (2.0, 0.3)):
        y = rng.standard_normal(20) * math.sqrt(sig2 + disp)
        data = Dataset(np.eye(20), y, has_intercept=False)
        res = fit(data, gaussian(disp), PointNormal(0.0, sig2), fit_prior=False)
        out.append((res, y * sig2 / (sig2 + disp)))
    return out


def test_c05_conjugate_exactness(conjugate_fits):
    err = max(float(np.max(np.abs(res.theta - exact))) for res, exact in conjugate_fits)
    ok = err <= 1e-7
    report(5, "gaussian identity design posterior means", ok, f"max_err={err:.2e} (tol 1e-07) over 3 (a, sigma2) pairs")
    assert ok


def _logistic_exact_mean(k: int, m: int, prior: PointNormal) -> float:
    """E[b | k successes in m trials] under a point-normal prior, by quadrature."""
    def loglik(b):
        return k * b - m * np.logaddexp(0.0, b)

    v = prior.sigma2
    top, (i0, i1) = log_quad(lambda b: loglik(b) - 0.5 * math.log(2 * math.pi * v) - b * b / (2 * v),
                             width=min(math.sqrt(v), 2 / math.sqrt(m)), anchors=(0.0,), moments=(0, 1))
    log_slab = math.log1p(-prior.pi0) + top + math.log(i0) if prior.pi0 < 1 else -math.inf
    log_spike = math.log(prior.pi0) + loglik(0.0) if prior.pi0 > 0 else -math.inf
    big = max(log_slab, log_spike)
    w_slab, w_spike = math.exp(log_slab - big), math.exp(log_spike - big)
    return w_slab / (w_slab + w_spike) * i1 / i0


@pytest.fixture(scope="module")
def replicated_fits():
    X = np.kron(np.eye(10), np.ones((100, 1)))
    out = {}
    for scenario in ("normal", "spike-slab"):
        rows = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            beta = rng.standard_normal(10)
            if scenario == "spike-slab":
                beta = beta * (rng.random(10) < 0.5)
            y = (rng.random(1000) < expit(X @ beta)).astype(float)
            res = fit(Dataset(X, y, has_intercept=False), bernoulli(), "point-normal")
            k = y.reshape(10, 100).sum(axis=1)
            exact = np.array([_logistic_exact_mean(int(kj), 100, res.prior) for kj in k])
            rows.append((res, float(np.max(np.abs(res.theta - exact)))))
        out[scenario] = rows
    return out


def test_c06_replicated_logistic_accuracy(replicated_fits):
    med = {s: float(np.median([e for _, e in rows])) for s, rows in replicated_fits.items()}
    ok = all(v <= 0.05 for v in med.values())
    report(6, "logistic replicated-identity posterior means", ok,
           f"median max_err normal={med['normal']:.4f}, spike-slab={med['spike-slab']:.4f} (tol 0.05, 20 seeds)")
    assert ok


@pytest.fixture(scope="module")
def recovery_fits():
    t0 = time.perf_counter()
    out = []
    for seed in SEEDS10:
        train, test, beta = simulate(SimConfig(n=500, p=200, s=10, rho=0.0, n_test=2000, seed=seed))
        res = fit(train, bernoulli(), "point-normal")
        _, got = score(bernoulli(), test.X @ res.theta, test.y)
        _, oracle = score(bernoulli(), test.X[:, 1:] @ beta, test.y)
        out.append((res, got / oracle))
    return out, time.perf_counter() - t0


@pytest.mark.slow
def test_c07_recovery(recovery_fits):
    fits, elapsed = recovery_fits
    med = float(np.median([r for _, r in fits]))
    ok = med >= 0.95 and elapsed < 300
    report(7, "held-out AUC vs oracle AUC", ok,
           f"median ratio={med:.4f} (need >= 0.95, 10 seeds), {elapsed:.1f}s (limit 300s)")
    assert ok


@pytest.fixture(scope="module")
def null_fits():
    out = []
    for seed in SEEDS10:
        train, _, _ = simulate(SimConfig(n=500, p=200, s=0, n_test=0, seed=seed))
        out.append(fit(train, bernoulli(), "point-normal"))
    return out


@pytest.mark.slow
def test_c08_null_model(null_fits):
    pi0 = float(np.median([r.prior.pi0 for r in null_fits]))
    sup = float(np.median([np.max(np.abs(r.theta[1:])) for r in null_fits]))
    ok = pi0 >= 0.9 and sup <= 0.1
    report(8, "null model sparsity", ok,
           f"median pi0={pi0:.4f} (need >= 0.9), median max|theta|={sup:.4f} (need <= 0.1), 10 seeds")
    assert ok


@pytest.mark.slow
def test_c09_monotone_descent(conjugate_fits, replicated_fits, recovery_fits, null_fits):
    fits = [r for r, _ in conjugate_fits]
    fits += [r for rows in replicated_fits.values() for r, _ in rows]
    fits += [r for r, _ in recovery_fits[0]]
    fits += list(null_fits)
    worst = max(float(np.max(np.diff(r.objective_trace), initial=-math.inf)) for r in fits)
    ok = worst <= 0.0
    report(9, "monotone outer objective trace", ok,
           f"largest increase={worst:.3e} (need <= 0) across {len(fits)} fits")
    assert ok


# -- 10: qualitative sweep shapes ----------------------------------------------


def _sweep(sweep: dict, base: dict):
    t0 = time.perf_counter()
    res = run_bench(parse_grid({"base": base, "sweep": sweep}), reps=10, seed=0, threads=available_cores())
    means = [row[-3] for row in res.summary]
    n_ok = sum(row[-5] for row in res.summary)
    return means, n_ok, time.perf_counter() - t0


@pytest.mark.slow
def test_c10_sweep_shapes():
    base = {"n": 500, "p": 500, "s": 20, "n_test": 2000}
    rho_means, rho_ok, rho_t = _sweep({"rho": [0.0, 0.9]}, base)
    s_means, s_ok, s_t = _sweep({"s": [1, 30, 300]}, base)
    rho_shape = rho_means[1] < rho_means[0]
    s_shape = s_means[1] > s_means[0] and s_means[2] < s_means[1]
    ok = rho_shape and s_shape and rho_ok == 20 and s_ok == 30 and rho_t < 1800 and s_t < 1800
    report(10, "sweep shapes (R=10)", ok,
           f"AUC rho 0->0.9: {rho_means[0]:.4f}->{rho_means[1]:.4f} ({rho_t:.0f}s); "
           f"s 1/30/300: {s_means[0]:.4f}/{s_means[1]:.4f}/{s_means[2]:.4f} ({s_t:.0f}s); limit 1800s each")
    assert ok


# -- 11: determinism -----------------------------------------------------------


@pytest.mark.slow
def test_c11_determinism(tmp_path):
    data = tmp_path / "train.csv"
    assert main(["simulate", "--n", "300", "--p", "60", "--s", "5", "--n-test", "0", "--seed", "3",
                 "--out", str(tmp_path), "--quiet"]) == 0
    docs = []
    for k, threads in enumerate((1, 8, 1, 8)):
        out = tmp_path / f"m{k}.model"
        assert main(["fit", "--data", str(data), "--family", "logistic", "--prior", "ash",
                     "--threads", str(threads), "--out", str(out), "--quiet"]) == 0
        docs.append(out.read_bytes())
    grid = parse_grid({"base": {"n": 100, "p": 20, "s": 3, "n_test": 200}, "sweep": {"rho": [0.0, 0.5]}})
    benches = []
    for k, threads in enumerate((1, 8, 1, 8)):
        out = tmp_path / f"b{k}.csv"
        write_bench(run_bench(grid, reps=3, seed=11, threads=threads), out)
        benches.append(out.read_bytes() + summary_path(out).read_bytes())
    same_docs = all(d == docs[0] for d in docs)
    same_bench = all(b == benches[0] for b in benches)
    ok = same_docs and same_bench
    report(11, "byte-identical outputs for threads 1 and 8", ok,
           f"model documents identical={same_docs}, bench CSVs identical={same_bench} (2 runs each)")
    assert ok
