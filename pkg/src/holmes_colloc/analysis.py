"""Error norms, convergence-study orchestration, and rate fitting."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import geometry, problems
from .collocation import ProblemDefinition, assemble, evaluate_solution, solve_system
from .maxent import holmes_params


def relative_error(values, exact) -> float:
    """Relative discrete error sqrt(sum|v - v^h|^2 / sum|v|^2).

    ``values`` is the numerical nodal field, ``exact`` the reference; vector
    fields contribute componentwise.  Raises if the reference is identically
    zero.
    """
    values = np.asarray(values, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if values.shape != exact.shape:
        raise ValueError(f"shape mismatch {values.shape} vs {exact.shape}")
    denom = float(np.sum(exact * exact))
    if denom == 0.0:
        raise ValueError("exact field is identically zero")
    return math.sqrt(float(np.sum((exact - values) ** 2)) / denom)


@dataclass(frozen=True)
class ConvergenceRow:
    m: int
    E_L2: float
    E_H1: float
    note: str = ""


@dataclass(frozen=True)
class ConvergenceReport:
    """One refinement study: errors per grid plus fitted rates.

    Rates are least-squares slopes of log E versus log m^(1/d), sign-flipped
    so positive means convergence; NaN when fewer than three grids produced
    positive finite errors.
    """

    benchmark: str
    dim: int
    n: int
    p: int
    R_hat: float
    eps: float
    perturbation: float
    seed: int
    rows: tuple
    fitted_rate_L2: float
    fitted_rate_H1: float

    def __post_init__(self):
        ms = [r.m for r in self.rows]
        if ms != sorted(ms):
            raise ValueError("rows must be sorted by node count")


def fit_rate(rows, dim: int, field: str = "E_L2", tail: int | None = None) -> float:
    """Least-squares convergence rate from report rows.

    Fits log E against log m^(1/d) and returns the negated slope.  Requires
    at least three rows with positive finite errors; ``tail`` restricts the
    fit to the last so many rows.
    """
    rows = sorted(rows, key=lambda r: r.m)
    if tail is not None:
        rows = rows[-int(tail):]
    if len(rows) < 3:
        raise ValueError("rate fit needs at least 3 rows")
    m = np.array([r.m for r in rows], dtype=float)
    E = np.array([getattr(r, field) for r in rows], dtype=float)
    if not np.all(np.isfinite(E)) or np.any(E <= 0):
        raise ValueError("rate fit needs positive finite errors")
    slope = np.polyfit(np.log(m) / dim, np.log(E), 1)[0]
    return float(-slope)


@dataclass(frozen=True)
class SingleRun:
    """One assembled-and-solved grid with its nodal errors."""

    nodes: object
    params: object
    coefficients: np.ndarray
    values: np.ndarray
    solve_info: object
    E_L2: float
    E_H1: float


def solve_single(problem: ProblemDefinition, target, n: int = 2, p: int = 2,
                 R_hat: float | None = None, eps: float = 1e-11,
                 perturbation: float = 0.0, seed: int = 0,
                 method: str = "auto", tol: float | None = None) -> SingleRun:
    """Generate one grid, solve the benchmark on it, and measure errors.

    An integer ``target`` is a node-count goal, a float a spacing.  E_H1 is
    the stress error when the problem carries a constitutive map and a
    reference stress, otherwise the gradient error; nodes where the reference
    stress is singular are excluded.
    """
    if isinstance(problem, str):
        problem = problems.make_problem(problem)
    if R_hat is None:
        R_hat = float(n + 2)
    if isinstance(target, (int, np.integer)):
        h_req = geometry.target_h_for_count(problem.domain, int(target), problem.bc)
    else:
        h_req = float(target)
    ns = geometry.generate_nodes(problem.domain, h_req, problem.bc)
    if perturbation > 0:
        ns = geometry.perturb_nodes(ns, perturbation, seed)
    params = holmes_params(n=n, p=p, R_hat=R_hat, eps=eps, h=ns.h)
    system = assemble(ns, params, problem)
    d, info = solve_system(system, method=method, tol=tol)

    ref = problem.reference
    if ref is None:
        raise ValueError(f"{problem.name}: no reference solution for errors")
    want_h1 = ref.gradient is not None or (
        ref.stress is not None and problem.gradient_to_stress is not None)
    if want_h1:
        vals_h, grads_h = evaluate_solution(ns, params, d, ns.coords, deriv_order=1)
    else:
        vals_h = evaluate_solution(ns, params, d, ns.coords, deriv_order=0)
    V = np.atleast_2d(np.asarray(ref.value(ns.coords), dtype=float))
    E_L2 = relative_error(vals_h, V)
    E_H1 = math.nan
    if ref.stress is not None and problem.gradient_to_stress is not None:
        S = np.asarray(ref.stress(ns.coords), dtype=float)
        Sh = problem.gradient_to_stress(grads_h)
        keep = np.all(np.isfinite(S), axis=1)
        E_H1 = relative_error(Sh[keep], S[keep])
    elif ref.gradient is not None:
        Gx = np.asarray(ref.gradient(ns.coords), dtype=float).reshape(ns.m, -1)
        E_H1 = relative_error(grads_h.reshape(ns.m, -1), Gx)
    return SingleRun(nodes=ns, params=params, coefficients=d, values=vals_h,
                     solve_info=info, E_L2=E_L2, E_H1=E_H1)


def run_convergence(problem, grids, n: int = 2, p: int = 2,
                    R_hat: float | None = None, eps: float = 1e-11,
                    perturbation: float = 0.0, seed: int = 0,
                    method: str = "auto", tol: float | None = None) -> ConvergenceReport:
    """Refinement study over ``grids`` for one benchmark.

    ``problem`` is a ProblemDefinition or a registered benchmark name.  Grid
    entries that are integers are node-count targets; floats are spacings.
    Failures on individual grids are recorded in the row note, with NaN
    errors, and do not abort the study.
    """
    if isinstance(problem, str):
        problem = problems.make_problem(problem)
    grids = list(grids)
    if len(grids) < 3:
        raise ValueError("a convergence study needs at least 3 grids")
    if R_hat is None:
        R_hat = float(n + 2)
    rows = []
    for target in grids:
        try:
            run = solve_single(problem, target, n=n, p=p, R_hat=R_hat, eps=eps,
                               perturbation=perturbation, seed=seed,
                               method=method, tol=tol)
            rows.append(ConvergenceRow(m=run.nodes.m, E_L2=run.E_L2, E_H1=run.E_H1))
        except Exception as exc:
            m = target if isinstance(target, (int, np.integer)) else 0
            rows.append(ConvergenceRow(m=int(m), E_L2=math.nan, E_H1=math.nan,
                                       note=f"{type(exc).__name__}: {exc}"))
    rows.sort(key=lambda r: r.m)
    dim = problem.dim

    def _try_fit(field):
        ok = [r for r in rows if np.isfinite(getattr(r, field)) and getattr(r, field) > 0]
        if len(ok) < 3:
            return math.nan
        return fit_rate(ok, dim, field)

    return ConvergenceReport(
        benchmark=problem.name, dim=dim, n=n, p=p, R_hat=R_hat, eps=eps,
        perturbation=perturbation, seed=seed, rows=tuple(rows),
        fitted_rate_L2=_try_fit("E_L2"), fitted_rate_H1=_try_fit("E_H1"))


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta_path(path: str) -> str:
    return os.path.splitext(path)[0] + ".meta"


def save_report(report: ConvergenceReport, path: str) -> None:
    """Write rows as CSV ``m,E_L2,E_H1`` plus a key=value sidecar ``.meta``."""
    lines = ["m,E_L2,E_H1"]
    for r in report.rows:
        lines.append("%d,%.17g,%.17g" % (r.m, r.E_L2, r.E_H1))
    _atomic_write(path, "\n".join(lines) + "\n")
    meta = [
        f"benchmark={report.benchmark}",
        f"dim={report.dim}",
        f"n={report.n}",
        f"p={report.p}",
        "R_hat=%.17g" % report.R_hat,
        "eps=%.17g" % report.eps,
        "perturbation=%.17g" % report.perturbation,
        f"seed={report.seed}",
        "fitted_rate_L2=%.17g" % report.fitted_rate_L2,
        "fitted_rate_H1=%.17g" % report.fitted_rate_H1,
    ]
    for i, r in enumerate(report.rows):
        if r.note:
            meta.append(f"note_{i}={r.note}")
    _atomic_write(_meta_path(path), "\n".join(meta) + "\n")


def load_report(path: str) -> ConvergenceReport:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "m,E_L2,E_H1":
        raise ValueError(f"{path}: not a convergence report")
    meta = {}
    with open(_meta_path(path)) as fh:
        for ln in fh:
            ln = ln.strip()
            if ln:
                key, _, val = ln.partition("=")
                meta[key] = val
    rows = []
    for i, ln in enumerate(lines[1:]):
        m_s, e2_s, eh_s = ln.split(",")
        rows.append(ConvergenceRow(m=int(m_s), E_L2=float(e2_s), E_H1=float(eh_s),
                                   note=meta.get(f"note_{i}", "")))
    return ConvergenceReport(
        benchmark=meta["benchmark"], dim=int(meta["dim"]), n=int(meta["n"]),
        p=int(meta["p"]), R_hat=float(meta["R_hat"]), eps=float(meta["eps"]),
        perturbation=float(meta["perturbation"]), seed=int(meta["seed"]),
        rows=tuple(rows), fitted_rate_L2=float(meta["fitted_rate_L2"]),
        fitted_rate_H1=float(meta["fitted_rate_H1"]))
