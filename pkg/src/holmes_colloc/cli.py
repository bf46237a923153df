"""Command-line harness: node clouds, basis dumps, single solves, studies.

Every subcommand reads a flat key=value config file, writes its artifacts
plus a re-parseable config echo (``run.meta``) into the output directory, and
is deterministic for a fixed seed.  Exit codes: 0 success, 1 numerical
failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import analysis, geometry, problems
from .analysis import _atomic_write
from .collocation import CollocationError
from .maxent import (DualDivergenceError, InfeasibleSupportError,
                     evaluate_basis, holmes_params, truncation_radius)


class ConfigError(Exception):
    pass


KNOWN_KEYS = ("subcommand", "benchmark", "n", "p", "R_hat", "eps", "grids",
              "perturbation", "seed", "out", "tol", "samples", "seg_start",
              "seg_end")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    benchmark: str
    n: int = 2
    p: int = 2
    R_hat: float = 4.0
    eps: float = 1e-11
    grids: tuple = ()
    perturbation: float = 0.0
    seed: int = 0
    out: str = "."
    tol: float | None = None
    samples: int = 201
    seg_start: tuple | None = None
    seg_end: tuple | None = None


def _parse_grid_entry(token: str):
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"bad grid entry {token!r}") from None


def _parse_point(value: str) -> tuple:
    try:
        return tuple(float(t) for t in value.split(","))
    except ValueError:
        raise ConfigError(f"bad point {value!r}") from None


def parse_config(path: str, subcommand: str) -> RunConfig:
    """Read a flat key=value config; unknown or duplicate keys are rejected."""
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    raw = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    if raw.get("subcommand", subcommand) != subcommand:
        raise ConfigError(
            f"config names subcommand {raw['subcommand']!r}, got {subcommand!r}")
    if "benchmark" not in raw:
        raise ConfigError("config must set benchmark")

    def _int(key, default):
        try:
            return int(raw[key]) if key in raw else default
        except ValueError:
            raise ConfigError(f"{key} must be an integer") from None

    def _float(key, default):
        try:
            return float(raw[key]) if key in raw else default
        except ValueError:
            raise ConfigError(f"{key} must be a number") from None

    n = _int("n", 2)
    p = _int("p", 2)
    eps = _float("eps", 1e-11)
    R_hat = _float("R_hat", float(n + 2))
    try:
        holmes_params(n=n, p=p, R_hat=R_hat, eps=eps, h=1.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    grids = tuple(_parse_grid_entry(t) for t in raw["grids"].split(",")) \
        if "grids" in raw else ()
    perturbation = _float("perturbation", 0.0)
    if perturbation < 0:
        raise ConfigError("perturbation must be non-negative")
    samples = _int("samples", 201)
    if samples < 2:
        raise ConfigError("samples must be at least 2")
    cfg = RunConfig(
        subcommand=subcommand, benchmark=raw["benchmark"], n=n, p=p,
        R_hat=R_hat, eps=eps, grids=grids, perturbation=perturbation,
        seed=_int("seed", 0), out=raw.get("out", "."),
        tol=_float("tol", None) if "tol" in raw else None, samples=samples,
        seg_start=_parse_point(raw["seg_start"]) if "seg_start" in raw else None,
        seg_end=_parse_point(raw["seg_end"]) if "seg_end" in raw else None)
    _check_grids(cfg)
    return cfg


def _check_grids(cfg: RunConfig) -> None:
    need = {"nodes": 1, "basis": 1, "solve": 1, "converge": 3}[cfg.subcommand]
    if len(cfg.grids) < need:
        raise ConfigError(f"{cfg.subcommand} needs at least {need} grids entr"
                          f"{'y' if need == 1 else 'ies'}")
    if cfg.subcommand in ("basis", "solve") and len(cfg.grids) != 1:
        raise ConfigError(f"{cfg.subcommand} takes exactly one grids entry")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_config(cfg: RunConfig) -> None:
    """Write ``run.meta`` so that re-parsing it reproduces ``cfg``."""
    lines = [f"subcommand={cfg.subcommand}", f"benchmark={cfg.benchmark}",
             f"n={cfg.n}", f"p={cfg.p}", f"R_hat={_fmt(cfg.R_hat)}",
             f"eps={_fmt(cfg.eps)}",
             "grids=" + ",".join(_fmt(g) for g in cfg.grids),
             f"perturbation={_fmt(cfg.perturbation)}", f"seed={cfg.seed}",
             f"out={cfg.out}", f"samples={cfg.samples}"]
    if cfg.tol is not None:
        lines.append(f"tol={_fmt(cfg.tol)}")
    if cfg.seg_start is not None:
        lines.append("seg_start=" + ",".join(_fmt(c) for c in cfg.seg_start))
    if cfg.seg_end is not None:
        lines.append("seg_end=" + ",".join(_fmt(c) for c in cfg.seg_end))
    _atomic_write(os.path.join(cfg.out, "run.meta"), "\n".join(lines) + "\n")


def _grid_nodes(cfg: RunConfig, problem, target) -> geometry.NodeSet:
    if isinstance(target, int):
        h = geometry.target_h_for_count(problem.domain, target, problem.bc)
    else:
        h = float(target)
    ns = geometry.generate_nodes(problem.domain, h, problem.bc)
    if cfg.perturbation > 0:
        ns = geometry.perturb_nodes(ns, cfg.perturbation, cfg.seed)
    return ns


def cmd_nodes(cfg: RunConfig) -> int:
    problem = problems.make_problem(cfg.benchmark)
    for i, target in enumerate(cfg.grids):
        ns = _grid_nodes(cfg, problem, target)
        geometry.save_nodes(ns, os.path.join(cfg.out, f"nodes-{i:03d}.csv"))
    echo_config(cfg)
    return 0


_HESS_LABELS = {1: ["d2phi"],
                2: ["d2phi_xx", "d2phi_xy", "d2phi_yy"],
                3: ["d2phi_xx", "d2phi_xy", "d2phi_xz",
                    "d2phi_yy", "d2phi_yz", "d2phi_zz"]}
_GRAD_LABELS = {1: ["dphi"], 2: ["dphi_x", "dphi_y"],
                3: ["dphi_x", "dphi_y", "dphi_z"]}


def cmd_basis(cfg: RunConfig) -> int:
    problem = problems.make_problem(cfg.benchmark)
    ns = _grid_nodes(cfg, problem, cfg.grids[0])
    params = holmes_params(n=cfg.n, p=cfg.p, R_hat=cfg.R_hat, eps=cfg.eps, h=ns.h)
    dim = ns.dim
    start, end = cfg.seg_start, cfg.seg_end
    if start is None or end is None:
        if problem.domain.kind != "interval":
            raise ConfigError("seg_start and seg_end are required outside 1D")
        start, end = (problem.domain.a,), (problem.domain.b,)
    if len(start) != dim or len(end) != dim:
        raise ConfigError(f"segment endpoints must have {dim} coordinates")
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)

    coord_labels = ["x", "y", "z"][:dim]
    pairs = [(i, j) for i in range(dim) for j in range(i, dim)]
    header = coord_labels + ["node_index", "phi"] + _GRAD_LABELS[dim] \
        + _HESS_LABELS[dim] + ["sum_phi"]
    lines = [",".join(header)]
    for t in np.linspace(0.0, 1.0, cfg.samples):
        x = (1.0 - t) * start + t * end
        be = evaluate_basis(ns, x, params, deriv_order=2)
        total = float(np.sum(be.phi))
        for j, a in enumerate(be.neighbors):
            fields = ["%.17g" % c for c in x] + [str(int(a)),
                                                 "%.17g" % be.phi[j]]
            fields += ["%.17g" % g for g in be.grad[j]]
            fields += ["%.17g" % be.hess[j, i, k] for i, k in pairs]
            fields.append("%.17g" % total)
            lines.append(",".join(fields))
    _atomic_write(os.path.join(cfg.out, "basis.csv"), "\n".join(lines) + "\n")
    meta = ["gamma=%.17g" % params.gamma, "h=%.17g" % params.h,
            "r_p=%.17g" % truncation_radius(params), f"m={ns.m}",
            f"samples={cfg.samples}"]
    _atomic_write(os.path.join(cfg.out, "basis.meta"), "\n".join(meta) + "\n")
    echo_config(cfg)
    return 0


def cmd_solve(cfg: RunConfig) -> int:
    run = analysis.solve_single(
        cfg.benchmark, cfg.grids[0], n=cfg.n, p=cfg.p, R_hat=cfg.R_hat,
        eps=cfg.eps, perturbation=cfg.perturbation, seed=cfg.seed, tol=cfg.tol)
    ns = run.nodes
    dof = run.values.shape[1]
    coord_labels = ["x", "y", "z"][:ns.dim]
    header = coord_labels + ["kind"] + [f"u{c}" for c in range(dof)]
    lines = [",".join(header)]
    for a in range(ns.m):
        fields = ["%.17g" % c for c in ns.coords[a]] + [str(int(ns.kind[a]))]
        fields += ["%.17g" % v for v in run.values[a]]
        lines.append(",".join(fields))
    _atomic_write(os.path.join(cfg.out, "solution.csv"), "\n".join(lines) + "\n")
    meta = [f"m={ns.m}", "h=%.17g" % ns.h, "E_L2=%.17g" % run.E_L2,
            "E_H1=%.17g" % run.E_H1,
            "residual=%.17g" % run.solve_info.residual,
            f"method={run.solve_info.method}"]
    _atomic_write(os.path.join(cfg.out, "solve.meta"), "\n".join(meta) + "\n")
    echo_config(cfg)
    return 0


def cmd_converge(cfg: RunConfig) -> int:
    report = analysis.run_convergence(
        cfg.benchmark, list(cfg.grids), n=cfg.n, p=cfg.p, R_hat=cfg.R_hat,
        eps=cfg.eps, perturbation=cfg.perturbation, seed=cfg.seed, tol=cfg.tol)
    analysis.save_report(report, os.path.join(cfg.out, "report.csv"))
    echo_config(cfg)
    if all(not math.isfinite(r.E_L2) for r in report.rows):
        print("converge: every grid failed", file=sys.stderr)
        return 1
    return 0


_limiter = None


def _set_threads(threads: int) -> None:
    """Best-effort thread cap; BLAS pools honor it only if configurable."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)
    global _limiter
    try:
        import threadpoolctl
        _limiter = threadpoolctl.threadpool_limits(threads)
    except Exception:
        pass


_COMMANDS = {"nodes": cmd_nodes, "basis": cmd_basis,
             "solve": cmd_solve, "converge": cmd_converge}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="holmes-colloc",
        description="Meshfree strong-form collocation with signed "
                    "maximum-entropy basis functions.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {"nodes": "generate node clouds as CSV",
             "basis": "dump basis values and derivatives along a segment",
             "solve": "solve one benchmark on one grid",
             "converge": "run a refinement study and fit rates"}
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="key=value config file")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        sp.add_argument("--threads", type=int, help="thread cap (best effort)")
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return 2
        _set_threads(args.threads)
    try:
        cfg = parse_config(args.config, args.subcommand)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        os.makedirs(cfg.out, exist_ok=True)
        return _COMMANDS[cfg.subcommand](cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CollocationError, DualDivergenceError, InfeasibleSupportError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
