"""Replicated simulations, figure data and the verification suite."""

from __future__ import annotations

import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _kernels
from .asymptotics import (
    SCALINGS,
    binomial_identity_residual,
    limit_covariance_closed_form,
    limit_covariance_via_transform,
    limiting_pmf,
    relative_difference,
    transform_matrices,
)
from .degree_stats import CENTERINGS, CovarianceAccumulator, centering_vector
from .errors import InsufficientDataError, InvariantError, ParameterError
from .martingale import (
    compatibility_residual,
    fit_scaling_exponent,
    one_step_expectation_check,
    scaling_exponent,
)
from .model import ModelParams, advance, init_pa1, make_rng, simulate, step

# Replications per work unit.  Fixed so results do not depend on the worker count.
CHUNK = 250

FIGURE_TIMES = (100, 1000, 5000)


@dataclass
class ExperimentConfig:
    m: int = 1
    delta: float = 0.0
    steps: int = 10_000
    reps: int = 1000
    kmax: int = 30
    seed: int = 0
    centering: str = "exact_mean"
    workers: int = 1
    out: str = "pa_clt"
    scaling: str = "arrival"

    def __post_init__(self):
        self.m = int(self.m)
        self.delta = float(self.delta)
        self.steps = int(self.steps)
        self.reps = int(self.reps)
        self.kmax = int(self.kmax)
        self.seed = int(self.seed)
        self.workers = int(self.workers)
        ModelParams(self.m, self.delta)
        if self.steps < 2:
            raise ParameterError("steps must be >= 2")
        if self.reps < 1:
            raise ParameterError("reps must be >= 1")
        if self.kmax < self.m:
            raise ParameterError("kmax must be >= m")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        if self.centering not in CENTERINGS:
            raise ParameterError(f"centering must be one of {CENTERINGS}")
        if self.scaling not in SCALINGS:
            raise ParameterError(f"scaling must be one of {SCALINGS}")

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.m, self.delta)


CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)}


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in CONFIG_KEYS:
            raise ParameterError(f"{path}:{lineno}: expected one of {sorted(CONFIG_KEYS)} = value")
        out[key] = value.strip()
    return out


def default_workers() -> int:
    env = os.environ.get("PA_CLT_WORKERS")
    return int(env) if env else 1


def fmt(x) -> str:
    """Floats with 17 significant digits; integers as is."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return format(float(x), ".17g")


def _write_rows(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_csv(path, header, rows) -> None:
    """RFC 4180 CSV with one header row; ``"-"`` writes to stdout."""
    if str(path) == "-":
        _write_rows(sys.stdout, header, rows)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        _write_rows(fh, header, rows)


# ---------------------------------------------------------------------------
# Replication engine


def _run_chunk(task):
    m, delta, times, kmax, seed, start, stop = task
    times = np.asarray(times, dtype=np.int64)
    out = np.empty((stop - start, times.shape[0], kmax + 1), np.int64)
    for idx in range(start, stop):
        snap = _kernels.count_snapshots(m, delta, times, kmax, make_rng(seed, idx))
        if snap[0, 0] < 0:
            raise InvariantError(f"sampler failure in replication {idx}")
        out[idx - start] = snap
    return out


def replicate_counts(params: ModelParams, times, reps: int, kmax: int, seed: int,
                     workers: int = 1) -> np.ndarray:
    """Degree counts ``N_k`` (``k = 0..kmax``) of ``reps`` independent runs.

    Returns an integer array of shape ``(reps, len(times), kmax + 1)``.
    Replication ``j`` uses stream ``j`` of ``seed``, so the result does not
    depend on ``workers``.
    """
    times = tuple(sorted(set(int(t) for t in times)))
    if not times or times[0] < 1:
        raise ParameterError("times must be >= 1")
    tasks = [(params.m, params.delta, times, kmax, seed, a, min(a + CHUNK, reps))
             for a in range(0, reps, CHUNK)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    return np.concatenate(parts) if parts else np.empty((0, len(times), kmax + 1), np.int64)


@dataclass
class CovarianceRun:
    time: int
    estimate: object
    center: np.ndarray


def empirical_covariances(params: ModelParams, times, reps: int, kmax: int, seed: int,
                          centering: str = "exact_mean", workers: int = 1) -> dict:
    """Sample covariance of the fluctuation vectors at each time, keyed by time."""
    if reps < 2:
        raise InsufficientDataError("need at least 2 replications")
    times = sorted(set(int(t) for t in times))
    counts = replicate_counts(params, times, reps, kmax, seed, workers)
    m = params.m
    out = {}
    for j, t in enumerate(times):
        center = centering_vector(params, t, kmax, centering)
        acc = CovarianceAccumulator(m, kmax)
        for a in range(0, reps, CHUNK):
            block = counts[a:a + CHUNK, j, m:].astype(float)
            acc.add_batch(np.sqrt(t) * (block / t - center))
        out[t] = CovarianceRun(t, acc.finalize(), center)
    return out


# ---------------------------------------------------------------------------
# Subcommand bodies


def run_simulate(cfg: ExperimentConfig, path) -> None:
    params = cfg.params
    state = simulate(params, cfg.steps, seed=cfg.seed)
    counts = state.counts_view
    rows = []
    for k in range(params.m, cfg.kmax + 1):
        c = int(counts[k]) if k < counts.shape[0] else 0
        rows.append((k, c, c / cfg.steps, limiting_pmf(params, k)))
    write_csv(path, ["k", "count", "empirical_pmf", "theoretical_pk"], rows)


def run_covariance(cfg: ExperimentConfig) -> dict:
    """Writes ``<out>_empirical.csv``, ``<out>_theoretical.csv`` and ``<out>_summary.csv``."""
    params = cfg.params
    runs = empirical_covariances(params, [cfg.steps], cfg.reps, cfg.kmax, cfg.seed,
                                 cfg.centering, cfg.workers)
    est = runs[cfg.steps].estimate
    theory = limit_covariance_closed_form(params, cfg.kmax, cfg.scaling)
    rel = relative_difference(est.values, theory.values)
    ks = range(params.m, cfg.kmax + 1)
    emp_rows, th_rows, sum_rows = [], [], []
    for r in ks:
        for l in ks:
            i, j = r - params.m, l - params.m
            emp_rows.append((r, l, est.values[i, j], est.stderr[i, j]))
            th_rows.append((r, l, theory.values[i, j]))
            sum_rows.append((r, l, est.values[i, j], theory.values[i, j], est.stderr[i, j], rel[i, j]))
    paths = {
        "empirical": f"{cfg.out}_empirical.csv",
        "theoretical": f"{cfg.out}_theoretical.csv",
        "summary": f"{cfg.out}_summary.csv",
    }
    write_csv(paths["empirical"], ["r", "l", "value", "mc_stderr"], emp_rows)
    write_csv(paths["theoretical"], ["r", "l", "value"], th_rows)
    write_csv(paths["summary"], ["r", "l", "empirical", "theoretical", "mc_stderr", "rel_dev"],
              sum_rows)
    return paths


@dataclass
class Panel:
    name: str
    columns: list = field(default_factory=list)  # (title, {r: value})
    logscale: bool = False
    ylabel: str = ""


FIGURE_GRIDS = {
    1: [("left", 1, (-0.5, 0.0, 1.0, 3.0, 5.0)), ("right", 2, (-1.0, 0.0, 2.0, 6.0, 10.0))],
    2: [("main", (1, 2, 3), 0.0)],
    3: [("main", (1, 2, 3), 0.0)],
}


def _diag(matrix) -> dict:
    return {r: matrix.entry(r, r) for r in matrix.degrees}


def _column(matrix, l: int) -> dict:
    return {r: matrix.entry(r, l) for r in matrix.degrees}


def figure_panels(which: int, cfg: ExperimentConfig) -> list[Panel]:
    """Curves of one figure; ``r`` runs over ``m..cfg.kmax``."""
    kmax, sc = cfg.kmax, cfg.scaling
    if which == 1:
        panels = []
        for name, m, deltas in FIGURE_GRIDS[1]:
            p = Panel(f"{name}", logscale=True, ylabel="R_Z(r,r)")
            for d in deltas:
                mat = limit_covariance_closed_form(ModelParams(m, d), kmax, sc)
                p.columns.append((f"m={m} delta={d:g}", _diag(mat)))
            panels.append(p)
        return panels
    if which in (2, 3):
        p = Panel("main", logscale=which == 2, ylabel="R_Z(r,r)" if which == 2 else "R_Z(r,5)")
        for m in (1, 2, 3):
            mat = limit_covariance_closed_form(ModelParams(m, 0.0), kmax, sc)
            p.columns.append((f"m={m}", _diag(mat) if which == 2 else _column(mat, 5)))
        return [p]
    if which == 4:
        panels = []
        for name, m, d, pick, log in (("left", 1, 1.0, None, True), ("right", 2, 0.0, 5, False)):
            params = ModelParams(m, d)
            p = Panel(name, logscale=log, ylabel="R_Z(r,r)" if pick is None else "R_Z(r,5)")
            mat = limit_covariance_closed_form(params, kmax, sc)
            p.columns.append(("t=inf", _diag(mat) if pick is None else _column(mat, pick)))
            if m > 1:
                other = "edge" if sc == "arrival" else "arrival"
                alt = limit_covariance_closed_form(params, kmax, other)
                p.columns.append((f"t=inf ({other} scaling)", _column(alt, pick)))
            times = FIGURE_TIMES
            runs = empirical_covariances(params, times, cfg.reps, kmax, cfg.seed,
                                         cfg.centering, cfg.workers)
            for t in times:
                est = runs[t].estimate
                if pick is None:
                    col = {r: est.entry(r, r) for r in range(m, kmax + 1)}
                else:
                    col = {r: est.entry(r, pick) for r in range(m, kmax + 1)}
                p.columns.append((f"t={t}", col))
            panels.append(p)
        return panels
    raise ParameterError(f"unknown figure {which}; expected 1, 2, 3 or 4")


def gnuplot_script(data_file: str, panel: Panel, ncols: int) -> str:
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 'r'",
        f"set ylabel '{panel.ylabel}'",
    ]
    if panel.logscale:
        lines.append("set logscale y")
    lines.append(f"plot for [i=2:{ncols + 1}] '{Path(data_file).name}' using 1:i with linespoints")
    return "\n".join(lines) + "\n"


def run_figures(which: int, cfg: ExperimentConfig) -> list[str]:
    """Writes one CSV and one gnuplot script per panel; returns the paths."""
    written = []
    for panel in figure_panels(which, cfg):
        stem = f"{cfg.out}_fig{which}_{panel.name}"
        rs = sorted(set().union(*(col.keys() for _, col in panel.columns)))
        header = ["r"] + [title for title, _ in panel.columns]
        rows = [[r] + [col.get(r) for _, col in panel.columns] for r in rs]
        write_csv(stem + ".csv", header, rows)
        Path(stem + ".gp").write_text(gnuplot_script(stem + ".csv", panel, len(panel.columns)))
        written += [stem + ".csv", stem + ".gp"]
    return written


# ---------------------------------------------------------------------------
# Verification suite


@dataclass
class CheckResult:
    check: str
    params: str
    residual: float
    passed: bool


def _tag(params: ModelParams, **extra) -> str:
    items = [f"m={params.m}", f"delta={params.delta:g}"] + [f"{k}={v}" for k, v in extra.items()]
    return " ".join(items)


def default_verify_grid() -> list[ModelParams]:
    return [ModelParams(m, d) for m in (1, 2, 3) for d in (-0.9 * m, 0.0, 4.0)]


def random_states(params: ModelParams, count: int, s_max: int, seed: int):
    """Reachable states at random positions ``(s, i)`` with ``s <= s_max``."""
    rng = make_rng(seed, 10**6)
    for _ in range(count):
        state = init_pa1(params, seed=int(rng.integers(2**62)))
        advance(state, int(rng.integers(0, s_max - 1)))
        for _ in range(int(rng.integers(0, params.m))):
            step(state)
        yield state


def sampler_pvalue(params: ModelParams, state, draws: int, seed) -> float:
    """Chi-square p-value of fast-sampler draws against the exact distribution."""
    from scipy.stats import chisquare

    from .model import attachment_distribution

    rng = make_rng(seed)
    got = _kernels.draw_fast_many(state.degrees, state.pool, state.pool_size, state.s,
                                  params.delta, draws, rng)
    if (got < 0).any():
        raise InvariantError("rejection sampler hit its iteration cap")
    probs = attachment_distribution(state)[: state.s]
    observed = np.bincount(got, minlength=state.s)
    return float(chisquare(observed, probs * draws).pvalue)


def run_verify(params_list, seed: int = 0, quick: bool = True,
               flip_noise_sign: bool = False) -> list[CheckResult]:
    """Run the property checks for each parameter set."""
    results = []
    n_states = 20 if quick else 100
    for params in params_list:
        m = params.m
        # state identities along whole runs
        worst = 0.0
        for rep in range(3):
            state = init_pa1(params, seed=make_rng(seed, rep))
            worst = max(worst, advance(state, 2000, check=True))
        results.append(CheckResult("state_identities", _tag(params, s=2001), worst, worst <= 1e-9))

        for j, state in enumerate(random_states(params, 3, 100, seed)):
            p = sampler_pvalue(params, state, 200_000, make_rng(seed, 500 + j))
            results.append(CheckResult("sampler_chi2_pvalue", _tag(params, s=state.s), p, p > 1e-3))

        worst = max(compatibility_residual(params, s, i, k)
                    for s in (2, 10, 50, 1000) for i in range(m) for k in range(m, 11))
        results.append(CheckResult("compatibility", _tag(params), worst, worst <= 1e-10))

        rng = make_rng(seed, 7)
        worst = 0.0
        for state in random_states(params, n_states, 200, seed + 1):
            k = int(rng.integers(m, 11))
            worst = max(worst, one_step_expectation_check(state, k))
        results.append(CheckResult("martingale_one_step", _tag(params, states=n_states), worst,
                                   worst <= 1e-9))

        for sc in SCALINGS:
            a = limit_covariance_closed_form(params, 20, sc, flip_noise_sign=flip_noise_sign)
            b = limit_covariance_via_transform(params, 20, sc)
            dev = float(relative_difference(a.values, b.values).max())
            results.append(CheckResult("covariance_cross_path", _tag(params, kmax=20, scaling=sc),
                                       dev, dev <= 1e-8))

        res = transform_matrices(params, 30).identity_residual()
        results.append(CheckResult("transform_inverse", _tag(params, kmax=30), res, res <= 1e-10))
        res = max(binomial_identity_residual(params, r, l, x)
                  for r, l in ((12, m), (20, m + 3), (9, 9)) for x in (0, 1, 2))
        results.append(CheckResult("binomial_identity", _tag(params), res, res <= 1e-10))

        grid = np.unique(np.geomspace(1e3, 1e5, 25).astype(np.int64))
        worst = 0.0
        for k in range(m, 11):
            fit = fit_scaling_exponent(params, k, grid)
            worst = max(worst, abs(fit / scaling_exponent(params, k) - 1))
        results.append(CheckResult("scaling_exponent", _tag(params, kmax=10), worst, worst <= 0.01))
    return results


def write_verify_report(results, path) -> None:
    write_csv(path, ["check", "params", "residual", "status"],
              [(r.check, r.params, r.residual, "pass" if r.passed else "FAIL") for r in results])

