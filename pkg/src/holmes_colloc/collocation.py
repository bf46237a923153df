"""Strong-form point collocation on signed maximum-entropy bases.

Collocation points coincide with the nodes.  Each node contributes ``dof``
rows to a sparse nonsymmetric system: interior rows apply the differential
operator to the basis, Dirichlet rows sample basis values (the basis is not
interpolatory, so essential conditions are collocated too), and Neumann rows
apply the flux operator with the node's outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DIRICHLET, INTERIOR, NEUMANN, DomainSpec, NodeSet
from .maxent import HolmesParams, evaluate_basis

DIRECT_LIMIT = 20_000


class CollocationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Reference:
    """Closed-form solution attached to a benchmark; callables take (k, dim)
    point arrays.  ``gradient`` may be None; ``stress`` is present for the
    elasticity problems and returns (k, 3) rows (sxx, syy, txy)."""

    value: Callable
    gradient: Callable | None = None
    stress: Callable | None = None


@dataclass(frozen=True)
class ProblemDefinition:
    """Operators and data of one boundary-value problem.

    Row operators map a basis evaluation at a collocation point to row
    coefficient blocks of shape (dof, n_neighbors, dof).
    """

    name: str
    dof: int
    domain: DomainSpec
    bc: str
    interior_op: Callable
    dirichlet_op: Callable
    source: Callable
    dirichlet_data: Callable
    neumann_op: Callable | None = None
    neumann_data: Callable | None = None
    reference: Reference | None = None
    gradient_to_stress: Callable | None = None
    interior_order: int = 2
    neumann_order: int = 1

    @property
    def dim(self) -> int:
        return self.domain.dim


@dataclass(frozen=True)
class CollocationSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    row_kind: np.ndarray
    dof: int
    nodes: NodeSet
    params: HolmesParams


def assemble(ns: NodeSet, params: HolmesParams, problem: ProblemDefinition) -> CollocationSystem:
    """Build the sparse collocation system ``K d = f`` for ``problem``."""
    if ns.dim != problem.dim:
        raise CollocationError(f"node set is {ns.dim}D, problem is {problem.dim}D")
    dof = problem.dof
    m = ns.m
    data, rows, cols = [], [], []
    rhs = np.zeros(m * dof)
    for a in range(m):
        x = ns.coords[a]
        kind = ns.kind[a]
        if kind == INTERIOR:
            be = evaluate_basis(ns, x, params, deriv_order=problem.interior_order)
            block = problem.interior_op(be, x)
            rhs_vals = problem.source(x)
        elif kind == DIRICHLET:
            be = evaluate_basis(ns, x, params, deriv_order=0)
            block = problem.dirichlet_op(be, x)
            rhs_vals = problem.dirichlet_data(x)
        else:
            if problem.neumann_op is None:
                raise CollocationError(f"{problem.name}: no neumann operator defined")
            nrm = ns.normals[a]
            be = evaluate_basis(ns, x, params, deriv_order=problem.neumann_order)
            block = problem.neumann_op(be, x, nrm)
            rhs_vals = problem.neumann_data(x, nrm)
        block = np.asarray(block, dtype=float)
        nb = be.neighbors
        if block.shape != (dof, nb.size, dof):
            raise CollocationError(f"row block shape {block.shape} != {(dof, nb.size, dof)}")
        col = (nb[:, None] * dof + np.arange(dof)).ravel()
        for ci in range(dof):
            data.append(block[ci].ravel())
            cols.append(col)
            rows.append(np.full(col.size, a * dof + ci, dtype=np.intp))
        rhs[a * dof:(a + 1) * dof] = np.asarray(rhs_vals, dtype=float).ravel()
    K = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m * dof, m * dof)).tocsr()
    return CollocationSystem(matrix=K, rhs=rhs, row_kind=np.repeat(ns.kind, dof),
                             dof=dof, nodes=ns, params=params)


@dataclass(frozen=True)
class SolveInfo:
    method: str
    residual: float
    passes: int


def solve_system(system: CollocationSystem, method: str = "auto",
                 tol: float | None = None):
    """Solve ``K d = f``; sparse direct below 2e4 unknowns, otherwise
    ILU-preconditioned GMRES.

    The system is row-equilibrated first (each row divided by its largest
    entry) so that interior rows, which carry second-derivative scales of
    1/h^2, do not swamp the boundary rows; the relative residual is measured
    on the equilibrated system, checked against ``tol`` (1e-12 direct, 1e-10
    iterative), and a failure raises.
    """
    n = system.matrix.shape[0]
    if method == "auto":
        method = "direct" if n < DIRECT_LIMIT else "iterative"
    if method not in ("direct", "iterative"):
        raise ValueError(f"unknown method {method!r}")
    if tol is None:
        tol = 1e-12 if method == "direct" else 1e-10
    row_max = abs(system.matrix).max(axis=1).toarray().ravel()
    if np.any(row_max == 0):
        raise CollocationError("empty row in collocation matrix")
    D = sp.diags(1.0 / row_max)
    K = (D @ system.matrix).tocsr()
    f = D @ system.rhs
    fnorm = np.linalg.norm(f)
    scale = fnorm if fnorm > 0 else 1.0

    if method == "direct":
        try:
            lu = spla.splu(K.tocsc())
            d = lu.solve(f)
        except RuntimeError as exc:
            raise CollocationError(f"singular system: {exc}") from exc
        passes = 0
        res = np.linalg.norm(f - K @ d) / scale
        while res > tol and passes < 5:
            d = d + lu.solve(f - K @ d)
            res = np.linalg.norm(f - K @ d) / scale
            passes += 1
    else:
        try:
            ilu = spla.spilu(K.tocsc(), drop_tol=1e-6, fill_factor=30)
        except RuntimeError as exc:
            raise CollocationError(f"singular system: {exc}") from exc
        M = spla.LinearOperator(K.shape, matvec=ilu.solve)
        d, _ = _gmres(K, f, M, 0.01 * tol)
        passes = 1
        res = np.linalg.norm(f - K @ d) / scale
    if not np.isfinite(d).all():
        raise CollocationError("non-finite solution")
    if res > tol:
        raise CollocationError(f"residual {res:.3e} exceeds tolerance {tol:.1e}")
    return d, SolveInfo(method=method, residual=float(res), passes=passes)


def _gmres(K, f, M, rtol):
    try:
        return spla.gmres(K, f, M=M, rtol=rtol, restart=300, maxiter=100)
    except TypeError:  # scipy < 1.12 spells the tolerance "tol"
        return spla.gmres(K, f, M=M, tol=rtol, restart=300, maxiter=100)


def evaluate_solution(ns: NodeSet, params: HolmesParams, d: np.ndarray,
                      points: np.ndarray, deriv_order: int = 0):
    """Evaluate ``u^h = sum_b phi_b d_b`` (and optionally its gradient) at
    arbitrary points.  Returns (k, dof) values, plus (k, dof, dim) gradients
    when ``deriv_order >= 1``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = points.shape[0]
    dof = d.size // ns.m
    dmat = d.reshape(ns.m, dof)
    vals = np.empty((k, dof))
    grads = np.empty((k, dof, ns.dim)) if deriv_order >= 1 else None
    for i, x in enumerate(points):
        be = evaluate_basis(ns, x, params, deriv_order=min(deriv_order, 1))
        coef = dmat[be.neighbors]
        vals[i] = be.phi @ coef
        if deriv_order >= 1:
            grads[i] = coef.T @ be.grad
    if deriv_order >= 1:
        return vals, grads
    return vals


def dump_matrix(system: CollocationSystem, path: str) -> None:
    """Write the assembled operator in MatrixMarket coordinate format."""
    from scipy.io import mmwrite
    mmwrite(path, system.matrix)
