"""Grid benchmark: simulate, fit and score every (cell, replication).

A grid file is TOML with a ``[base]`` table of fixed settings and an optional
``[sweep]`` table of lists whose cartesian product defines the cells::

    [base]
    n = 500
    p = 500
    prior = "point-normal"

    [sweep]
    rho = [0.0, 0.9]

Every replication gets its own seed derived from (base seed, cell, rep), so
the output does not depend on how the work is spread over processes.
"""
from __future__ import annotations

import itertools
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DataError, EBGLMError
from .io import fmt_float
from .priors import PRIOR_NAMES
from .sim import SimConfig, score, simulate
from .solver import SolverConfig, fit

log = logging.getLogger(__name__)

SIM_KEYS = tuple(f.name for f in fields(SimConfig) if f.name != "seed")
FIT_KEYS = ("prior", "ash_K")
DEFAULT_REPS = 10


@dataclass(frozen=True)
class Grid:
    base: dict
    sweep: dict

    def cells(self) -> list[dict]:
        keys = list(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            cell = dict(self.base)
            cell.update(zip(keys, combo))
            out.append(cell)
        return out

    @property
    def columns(self) -> list[str]:
        seen = list(self.base) + [k for k in self.sweep if k not in self.base]
        return seen


def _check_keys(table: dict, where: str):
    for k in table:
        if k not in SIM_KEYS and k not in FIT_KEYS:
            raise DataError(f"grid [{where}]: unknown setting {k!r}; allowed {SIM_KEYS + FIT_KEYS}")


def parse_grid(data: dict) -> Grid:
    extra = set(data) - {"base", "sweep"}
    if extra:
        raise DataError(f"grid file: unknown tables {sorted(extra)}")
    base = dict(data.get("base", {}))
    sweep = dict(data.get("sweep", {}))
    _check_keys(base, "base")
    _check_keys(sweep, "sweep")
    for k, v in sweep.items():
        if not isinstance(v, list) or not v:
            raise DataError(f"grid [sweep]: {k!r} must be a non-empty list")
    grid = Grid(base, sweep)
    for cell in grid.cells():
        _cell_configs(cell, 0)
    return grid


def load_grid(path) -> Grid:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"grid file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{path}: invalid TOML ({exc})") from None
    return parse_grid(data)


def _cell_configs(cell: dict, seed: int):
    sim_kw = {k: v for k, v in cell.items() if k in SIM_KEYS}
    try:
        sim = SimConfig(seed=seed, **sim_kw)
    except TypeError as exc:
        raise DataError(f"grid cell {cell}: {exc}") from None
    prior = cell.get("prior", "point-normal")
    if prior not in PRIOR_NAMES:
        raise DataError(f"grid cell {cell}: unknown prior {prior!r}")
    return sim, prior, int(cell.get("ash_K", 20))


def replication_seed(base_seed: int, cell: int, rep: int) -> int:
    return int(np.random.SeedSequence([base_seed, cell, rep]).generate_state(1)[0])


@dataclass(frozen=True)
class _Task:
    cell_index: int
    rep: int
    seed: int
    cell: dict
    solver: SolverConfig


def _run_task(task: _Task) -> dict:
    t0 = time.perf_counter()
    out = {"metric": "", "value": math.nan, "oracle": math.nan, "converged": False, "status": "ok"}
    try:
        with threadpool_limits(limits=1):
            sim, prior, ash_K = _cell_configs(task.cell, task.seed)
            train, test, beta = simulate(sim)
            res = fit(train, sim.glm_family, prior, replace(task.solver, seed=task.seed), ash_K=ash_K)
            eta = test.X @ res.theta
            name, value = score(sim.glm_family, eta, test.y)
            _, oracle = score(sim.glm_family, test.X[:, 1:] @ beta, test.y)
        out.update(metric=name, value=value, oracle=oracle, converged=bool(res.converged))
        if res.stalled:
            out["status"] = "stall"
    except (EBGLMError, ArithmeticError, ValueError) as exc:
        out["status"] = "error: " + " ".join(str(exc).split()).replace(",", ";")
    out["wall"] = time.perf_counter() - t0
    return out


@dataclass
class BenchResult:
    columns: list
    rows: list
    summary: list
    timing: list


def run_bench(grid: Grid, reps: int = DEFAULT_REPS, seed: int = 0, solver: SolverConfig | None = None,
              threads: int = 1, progress=None) -> BenchResult:
    if reps < 1:
        raise DataError("number of replications must be at least 1")
    solver = solver or SolverConfig()
    cells = grid.cells()
    tasks = [
        _Task(c, r, replication_seed(seed, c, r), cell, solver)
        for c, cell in enumerate(cells) for r in range(reps)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = []
            for k, res in enumerate(pool.map(_run_task, tasks)):
                results.append(res)
                if progress:
                    progress(k + 1, len(tasks))
    else:
        results = []
        for k, task in enumerate(tasks):
            results.append(_run_task(task))
            if progress:
                progress(k + 1, len(tasks))

    columns = grid.columns
    rows, timing = [], []
    for task, res in zip(tasks, results):
        params = [task.cell.get(k, "") for k in columns]
        rows.append([task.cell_index, *params, task.rep, task.seed, res["metric"], res["value"],
                     res["oracle"], res["converged"], res["status"]])
        timing.append([task.cell_index, task.rep, res["wall"]])
        if res["status"].startswith("error"):
            log.warning("cell %d rep %d failed: %s", task.cell_index, task.rep, res["status"])

    summary = []
    for c, cell in enumerate(cells):
        mine = [res for task, res in zip(tasks, results) if task.cell_index == c]
        ok = [res for res in mine if not res["status"].startswith("error")]
        vals = np.array([res["value"] for res in ok])
        orc = np.array([res["oracle"] for res in ok])
        metric = ok[0]["metric"] if ok else ""
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else math.nan
        summary.append([c, *[cell.get(k, "") for k in columns], len(mine), len(ok), metric,
                        float(vals.mean()) if len(vals) else math.nan, sd,
                        float(orc.mean()) if len(orc) else math.nan])
    return BenchResult(columns, rows, summary, timing)


def _cell_text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt_float(v) if math.isfinite(v) else "nan"
    return str(v)


def _write(path: Path, header, rows):
    lines = [",".join(header)] + [",".join(_cell_text(v) for v in row) for row in rows]
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.csv")


def timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".timing.csv")


def write_bench(result: BenchResult, path):
    """Long results at ``path``, per-cell summary and wall times alongside it."""
    path = Path(path)
    cols = result.columns
    _write(path, ["cell", *cols, "rep", "seed", "metric", "value", "oracle_value", "converged", "status"],
           result.rows)
    _write(summary_path(path), ["cell", *cols, "reps", "n_ok", "metric", "mean", "sd", "oracle_mean"],
           result.summary)
    _write(timing_path(path), ["cell", "rep", "wall_seconds"], result.timing)
