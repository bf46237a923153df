"""Signed maximum-entropy (HOLMES) basis functions of arbitrary consistency
order.

At an evaluation point ``x`` the basis solves a convex dual problem: with
scaled offsets ``xi_a = (x_a - x)/h``, monomials ``q_a = xi_a^alpha`` over all
multi-indices ``|alpha| <= n`` and the locality potential
``c_a = gamma * |xi_a|_p^p``, the signed weights are

    phi_a = phi_a^+ - phi_a^- ,   phi_a^{+/-} = exp(+/- lam.q_a - c_a - 1),

where the multipliers ``lam`` enforce reproduction of all monomials up to
degree ``n`` exactly.  The dual objective ``g(lam) = sum_a (phi_a^+ + phi_a^-)
- lam_0`` is smooth and convex; its gradient is the constraint residual and its
Hessian is ``J = sum_a (phi_a^+ + phi_a^-) q_a q_a^T``, so a damped Newton
iteration converges quickly.  Spatial derivatives of the basis follow from
implicit differentiation of the stationarity condition through ``J``.

Supports are truncated to the L^p ball of radius ``R_hat * h`` on which the
zero-multiplier envelope ``exp(-c-1)`` exceeds the drop tolerance ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .geometry import NodeSet, neighbors_within

_NEWTON_TOL = 1e-10
_NEWTON_MAXIT = 200
_MAX_HALVINGS = 30
# accept steps whose objective increase is below roundoff, else the line
# search rejects the final Newton step once f sits at its float floor
_F_SLACK = 1e-14


class InfeasibleSupportError(RuntimeError):
    """Too few (or rank-deficient) neighbors to satisfy the constraints."""


class DualDivergenceError(RuntimeError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class MultiIndexSet:
    """Graded multi-index set for all |alpha| <= n, zero index first."""

    dim: int
    n: int
    indices: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def multi_indices(dim: int, n: int) -> MultiIndexSet:
    if dim < 1 or n < 0:
        raise ValueError("need dim >= 1 and n >= 0")

    def comps(total, d):
        if d == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in comps(total - first, d - 1):
                yield (first,) + rest

    rows = [a for k in range(n + 1) for a in comps(k, dim)]
    idx = np.array(rows, dtype=np.intp)
    idx.setflags(write=False)
    assert idx.shape[0] == math.comb(n + dim, dim)
    return MultiIndexSet(dim, n, idx)


@dataclass(frozen=True)
class HolmesParams:
    """Basis parameters: consistency order ``n``, norm exponent ``p``, drop
    tolerance ``eps``, dimensionless support radius ``R_hat``, locality weight
    ``gamma``, and nodal spacing ``h``."""

    n: int
    p: int
    eps: float
    R_hat: float
    gamma: float
    h: float

    def __post_init__(self):
        if self.n < 1 or self.n != int(self.n):
            raise ValueError("consistency order n must be a positive integer")
        if self.p < 2 or self.p != int(self.p):
            raise ValueError("norm exponent p must be an integer >= 2")
        if self.R_hat < self.n:
            raise ValueError(f"R_hat = {self.R_hat} is below the consistency order {self.n}")
        if not 0 < self.eps < math.exp(-1):
            raise ValueError("eps must lie in (0, exp(-1))")
        if self.gamma <= 0 or self.h <= 0:
            raise ValueError("gamma and h must be positive")


def holmes_params(n: int, p: int, R_hat: float, eps: float, h: float) -> HolmesParams:
    """Construct parameters with the locality weight tied to the support:
    ``gamma = -(ln eps + 1) / R_hat^p``, so the untilted envelope decays to
    ``eps`` exactly at the truncation radius."""
    gamma = -(math.log(eps) + 1.0) / float(R_hat) ** p
    return HolmesParams(n=n, p=p, eps=eps, R_hat=float(R_hat), gamma=gamma, h=h)


def truncation_radius(params: HolmesParams) -> float:
    """Support radius in physical units: h * (-(ln eps + 1)/gamma)^(1/p)."""
    return params.h * (-(math.log(params.eps) + 1.0) / params.gamma) ** (1.0 / params.p)


@dataclass(frozen=True)
class DualState:
    lam: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    objectives: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class BasisEval:
    """Basis values at one point: neighbor indices, phi, and (optionally)
    gradients and Hessians with respect to the evaluation point."""

    neighbors: np.ndarray
    phi: np.ndarray
    grad: np.ndarray | None
    hess: np.ndarray | None
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    dual: DualState


def _powers(xi: np.ndarray, n: int) -> np.ndarray:
    return xi[:, :, None] ** np.arange(n + 1)


def _monomials(P: np.ndarray, E: np.ndarray) -> np.ndarray:
    n_nb, d = P.shape[0], P.shape[1]
    cols = np.arange(d)
    Q = np.empty((n_nb, E.shape[0]))
    for m, e in enumerate(E):
        Q[:, m] = P[:, cols, e].prod(axis=1)
    return Q


def _monomial_jacobian(P, E):
    n_nb, d = P.shape[0], P.shape[1]
    cols = np.arange(d)
    dQ = np.zeros((n_nb, E.shape[0], d))
    for m, e in enumerate(E):
        base = P[:, cols, e]
        for i in range(d):
            if e[i] == 0:
                continue
            arr = base.copy()
            arr[:, i] = P[:, i, e[i] - 1]
            dQ[:, m, i] = -e[i] * arr.prod(axis=1)
    return dQ


def _monomial_hessian(P, E):
    n_nb, d = P.shape[0], P.shape[1]
    cols = np.arange(d)
    d2Q = np.zeros((n_nb, E.shape[0], d, d))
    for m, e in enumerate(E):
        base = P[:, cols, e]
        for i in range(d):
            for j in range(i, d):
                if i == j:
                    if e[i] < 2:
                        continue
                    arr = base.copy()
                    arr[:, i] = P[:, i, e[i] - 2]
                    val = e[i] * (e[i] - 1) * arr.prod(axis=1)
                else:
                    if e[i] == 0 or e[j] == 0:
                        continue
                    arr = base.copy()
                    arr[:, i] = P[:, i, e[i] - 1]
                    arr[:, j] = P[:, j, e[j] - 1]
                    val = e[i] * e[j] * arr.prod(axis=1)
                d2Q[:, m, i, j] = val
                d2Q[:, m, j, i] = val
    return d2Q


def _locality(xi: np.ndarray, gamma: float, p: int):
    """Potential c, its gradient and (diagonal) Hessian w.r.t. the scaled
    evaluation point.  Odd p uses the analytic limit at coordinate zeros."""
    absxi = np.abs(xi)
    c = gamma * (absxi ** p).sum(axis=1)
    dc = -gamma * p * np.sign(xi) * absxi ** (p - 1)
    d2c_diag = gamma * p * (p - 1) * absxi ** (p - 2) if p > 2 \
        else np.full_like(xi, gamma * p * (p - 1))
    return c, dc, d2c_diag


def _phi_of(lam, Q, c):
    t = Q @ lam
    with np.errstate(over="ignore"):
        pp = np.exp(t - c - 1.0)
        pm = np.exp(-t - c - 1.0)
    return pp - pm, pp + pm


def _dual_newton(Q, c):
    """Damped Newton on the dual objective; returns multipliers and history."""
    M = Q.shape[1]
    e0 = np.zeros(M)
    e0[0] = 1.0
    lam = np.zeros(M)
    phi, w = _phi_of(lam, Q, c)
    f = w.sum() - lam[0]
    objectives = [f]
    res = Q.T @ phi - e0
    res_norm = np.linalg.norm(res)
    it = 0
    while res_norm > _NEWTON_TOL:
        if it >= _NEWTON_MAXIT:
            raise DualDivergenceError("dual divergence: iteration budget exhausted", res_norm)
        step = -_solve_spd(Q.T @ (w[:, None] * Q), res)
        alpha = 1.0
        for _ in range(_MAX_HALVINGS):
            trial = lam + alpha * step
            phi_t, w_t = _phi_of(trial, Q, c)
            f_t = w_t.sum() - trial[0]
            if np.isfinite(f_t) and f_t <= f + _F_SLACK * max(1.0, abs(f)):
                break
            alpha *= 0.5
        else:
            raise DualDivergenceError("dual divergence: line search stalled", res_norm)
        lam, phi, w, f = trial, phi_t, w_t, f_t
        objectives.append(f)
        res = Q.T @ phi - e0
        res_norm = np.linalg.norm(res)
        it += 1
    # a few polishing steps push the residual to its roundoff floor; spatial
    # derivatives inherit multiplier accuracy with a 1/h amplification, so
    # the extra digits are not cosmetic
    for _ in range(3):
        step = -_solve_spd(Q.T @ (w[:, None] * Q), res)
        phi_t, w_t = _phi_of(lam + step, Q, c)
        res_t = Q.T @ phi_t - e0
        if np.linalg.norm(res_t) >= res_norm:
            break
        lam, phi, w = lam + step, phi_t, w_t
        res = res_t
        res_norm = np.linalg.norm(res_t)
    return lam, it, res_norm, objectives


def _solve_spd(J, rhs):
    reg = 1e-12 * np.trace(J) / J.shape[0]
    for attempt in range(8):
        try:
            return cho_solve(cho_factor(J, lower=True), rhs)
        except LinAlgError:
            J = J + reg * np.eye(J.shape[0])
            reg *= 10.0
    raise DualDivergenceError("dual divergence: singular dual Hessian", np.inf)


def solve_dual(ns: NodeSet, x, params: HolmesParams, neighbors=None) -> DualState:
    """Solve for the multipliers at ``x``; see :func:`evaluate_basis`."""
    _, _, _, state = _prepare(ns, x, params, neighbors)
    return state


def _prepare(ns, x, params, neighbors):
    x = np.asarray(x, dtype=float).ravel()
    if neighbors is None:
        # relative slack so nodes sitting exactly on the truncation circle of
        # a lattice point are kept on both sides regardless of rounding; a
        # one-sided drop would bias the odd moments by the tail amplitude
        radius = truncation_radius(params) * (1.0 + 1e-9)
        neighbors = neighbors_within(ns, x, radius, p=params.p)
    else:
        neighbors = np.asarray(neighbors, dtype=np.intp)
    mis = multi_indices(ns.dim, params.n)
    if neighbors.size < mis.size:
        raise InfeasibleSupportError(
            f"infeasible support: {neighbors.size} neighbors, need {mis.size}")
    xi = (ns.coords[neighbors] - x) / params.h
    P = _powers(xi, params.n)
    Q = _monomials(P, mis.indices)
    c, _, _ = _locality(xi, params.gamma, params.p)
    lam, it, res_norm, hist = _dual_newton(Q, c)
    state = DualState(lam=lam, iterations=it, residual_norm=res_norm,
                      converged=res_norm <= _NEWTON_TOL, objectives=tuple(hist))
    return neighbors, xi, (P, Q, c, mis), state


def evaluate_basis(ns: NodeSet, x, params: HolmesParams, deriv_order: int = 2,
                   neighbors=None) -> BasisEval:
    """Evaluate the signed basis at ``x``.

    Parameters
    ----------
    ns : NodeSet
    x : evaluation point, shape (dim,)
    params : HolmesParams
    deriv_order : 0 for values only, 1 to add gradients, 2 to add Hessians
    neighbors : optional explicit support (indices into ``ns``); when given,
        truncation is skipped, which keeps finite-difference stencils on a
        single smooth branch.

    Returns
    -------
    BasisEval with ``phi`` (n_nb,), ``grad`` (n_nb, dim), ``hess``
    (n_nb, dim, dim) in physical units.
    """
    if deriv_order not in (0, 1, 2):
        raise ValueError("deriv_order must be 0, 1, or 2")
    neighbors, xi, (P, Q, c, mis), state = _prepare(ns, x, params, neighbors)
    lam = state.lam
    phi, w = _phi_of(lam, Q, c)
    grad = hess = None
    if deriv_order >= 1:
        # chain rule in the scaled coordinate y = x/h: with t_a = lam.q_a,
        #   d phi_a = w_a dt_a - phi_a dc_a,   d w_a = phi_a dt_a - w_a dc_a,
        # and lam'(y) from differentiating the stationarity r(lam(y), y) = 0
        E = mis.indices
        d = ns.dim
        _, dc, d2c_diag = _locality(xi, params.gamma, params.p)
        dQ = _monomial_jacobian(P, E)
        J = Q.T @ (w[:, None] * Q)
        try:
            factor = cho_factor(J, lower=True)
        except LinAlgError:
            J = J + (1e-12 * np.trace(J) / J.shape[0]) * np.eye(J.shape[0])
            factor = cho_factor(J, lower=True)
        tilt = np.einsum("amd,m->ad", dQ, lam)
        B = (np.einsum("a,ad,am->md", w, tilt, Q)
             - np.einsum("a,ad,am->md", phi, dc, Q)
             + np.einsum("a,ami->mi", phi, dQ))
        lam_p = -cho_solve(factor, B)
        u = Q @ lam_p + tilt
        gs = w[:, None] * u - phi[:, None] * dc
        grad = gs / params.h
        if deriv_order == 2:
            d2Q = _monomial_hessian(P, E)
            V = np.einsum("amj,mi->aij", dQ, lam_p)
            V = V + V.transpose(0, 2, 1)
            V += np.einsum("amij,m->aij", d2Q, lam)
            # second differential of phi_a short of the lam'' q_a term
            A = (phi[:, None, None] * u[:, :, None] * u[:, None, :]
                 + w[:, None, None] * V
                 - w[:, None, None] * (dc[:, :, None] * u[:, None, :]
                                       + u[:, :, None] * dc[:, None, :])
                 + phi[:, None, None] * dc[:, :, None] * dc[:, None, :])
            diag = np.arange(d)
            A[:, diag, diag] -= phi[:, None] * d2c_diag
            G = (np.einsum("aij,am->mij", A, Q)
                 + np.einsum("ai,amj->mij", gs, dQ)
                 + np.einsum("aj,ami->mij", gs, dQ)
                 + np.einsum("a,amij->mij", phi, d2Q))
            M = G.shape[0]
            lam_pp = -cho_solve(factor, G.reshape(M, -1)).reshape(M, d, d)
            hess = (A + w[:, None, None]
                    * np.einsum("am,mij->aij", Q, lam_pp)) / params.h ** 2
    return BasisEval(neighbors=neighbors, phi=phi, grad=grad, hess=hess,
                     phi_plus=np.maximum(phi, 0.0), phi_minus=np.maximum(-phi, 0.0),
                     dual=state)


@dataclass(frozen=True)
class ContinuityReport:
    """Largest jumps of phi and its derivatives between adjacent samples on a
    probe segment, with the sample spacing for scaling."""

    spacing: float
    max_phi_jump: float
    max_grad_jump: float
    max_hess_jump: float

    def scaled(self):
        return (self.max_phi_jump / self.spacing,
                self.max_grad_jump / self.spacing,
                self.max_hess_jump / self.spacing)


def continuity_probe(ns: NodeSet, params: HolmesParams, x0, x1,
                     samples: int = 200) -> ContinuityReport:
    """Sample the basis along the segment ``x0 -> x1`` and report the largest
    adjacent-sample jumps of phi, grad phi, and hess phi over all nodes.
    Truncation-set changes show up as jumps that do not shrink under sample
    refinement."""
    if samples < 2:
        raise ValueError("need at least two samples")
    x0 = np.asarray(x0, dtype=float).ravel()
    x1 = np.asarray(x1, dtype=float).ravel()
    ts = np.linspace(0.0, 1.0, samples)
    spacing = np.linalg.norm(x1 - x0) / (samples - 1)
    prev = None
    jp = jg = jh = 0.0
    for t in ts:
        be = evaluate_basis(ns, x0 + t * (x1 - x0), params, deriv_order=2)
        cur = (dict(zip(be.neighbors.tolist(), be.phi)),
               dict(zip(be.neighbors.tolist(), be.grad)),
               dict(zip(be.neighbors.tolist(), be.hess)))
        if prev is not None:
            keys = set(prev[0]) | set(cur[0])
            for k in keys:
                jp = max(jp, abs(prev[0].get(k, 0.0) - cur[0].get(k, 0.0)))
                dg = prev[1].get(k, 0.0) - cur[1].get(k, 0.0)
                jg = max(jg, float(np.max(np.abs(dg))))
                dh = prev[2].get(k, 0.0) - cur[2].get(k, 0.0)
                jh = max(jh, float(np.max(np.abs(dh))))
        prev = cur
    return ContinuityReport(spacing=spacing, max_phi_jump=jp,
                            max_grad_jump=jg, max_hess_jump=jh)
