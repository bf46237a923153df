"""Benchmark boundary-value problems with closed-form references.

Scalar Helmholtz problems in 1D/2D/3D (the acoustic cases reduce the complex
pressure to a real field whose Neumann datum carries the 1/(rho0*omega)
scaling), plane-stress elasticity with the Kirsch and Williams fields, and
Poisson problems on a NURBS-bounded star region.  All reference callables
accept (k, dim) arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import geometry, nurbs
from .collocation import ProblemDefinition, Reference
from .maxent import multi_indices

BENCHMARKS = ("helm1d-essential", "helm1d-natural", "helm2d-circle",
              "helm3d-sphere", "plate-hole", "l-shape",
              "star-poisson-u1", "star-poisson-u2")


@dataclass(frozen=True)
class AcousticParams:
    """Air acoustics constants; angular frequency follows from wavelength."""

    rho0: float = 1.21
    c: float = 343.0
    wavelength: float = 2.5
    v_n: float = 1.0

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.c / self.wavelength

    @property
    def k(self) -> float:
        return self.omega / self.c


@dataclass(frozen=True)
class ElasticityParams:
    E: float = 1.0
    nu: float = 0.3
    T_inf: float = 1.0

    @property
    def G(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def kappa(self) -> float:
        """Plane-stress Kolosov constant."""
        return (3.0 - self.nu) / (1.0 + self.nu)

    @property
    def Ebar(self) -> float:
        return self.E / (1.0 - self.nu ** 2)


@dataclass(frozen=True)
class WilliamsParams:
    """First symmetric corner eigenpair for the 270-degree re-entrant corner."""

    lam1: float = 0.544483737
    Q: float = 0.543075579
    alpha: float = math.pi / 2


def bessel_j(order: int, x):
    """J0 or J1 on the validated range |x| <= 50."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 50.0):
        raise ValueError("bessel_j argument outside validated range |x| <= 50")
    return special.j0(x) if order == 0 else special.j1(x)


# ----------------------------------------------------------------------------
# closed-form fields

def helm1d_value(x):
    x = np.asarray(x, dtype=float)
    return np.sin(3 * x) * np.exp(x) + np.arctan(x) + np.cosh(x)


def helm1d_derivative(x):
    x = np.asarray(x, dtype=float)
    return ((3 * np.cos(3 * x) + np.sin(3 * x)) * np.exp(x)
            + 1.0 / (1.0 + x ** 2) + np.sinh(x))


def helm1d_source(x):
    """b = u'' + u for the manufactured 1D solution."""
    x = np.asarray(x, dtype=float)
    d2 = ((-8.0 * np.sin(3 * x) + 6.0 * np.cos(3 * x)) * np.exp(x)
          - 2.0 * x / (1.0 + x ** 2) ** 2 + np.cosh(x))
    return d2 + helm1d_value(x)


def circle_pressure(r, ap: AcousticParams, R: float = 1.0):
    """Real reduced pressure of the pulsating circle, p = j * ptilde."""
    r = np.asarray(r, dtype=float)
    k = ap.k
    return ap.v_n * ap.rho0 * ap.omega * bessel_j(0, k * r) / (k * bessel_j(1, k * R))


def circle_pressure_derivative(r, ap: AcousticParams, R: float = 1.0):
    r = np.asarray(r, dtype=float)
    k = ap.k
    return -ap.v_n * ap.rho0 * ap.omega * bessel_j(1, k * r) / bessel_j(1, k * R)


def sphere_pressure(r, ap: AcousticParams):
    """Real reduced pressure of the pulsating unit sphere, p = -j * ptilde.

    ptilde = vbar rho0 omega sin(kr) / (r (k cos k - sin k)); the apparent
    singularity at r = 0 is removable.
    """
    r = np.asarray(r, dtype=float)
    k = ap.k
    C = ap.v_n * ap.rho0 * ap.omega / (k * math.cos(k) - math.sin(k))
    return C * k * np.sinc(k * r / np.pi)


def sphere_pressure_derivative(r, ap: AcousticParams):
    r = np.asarray(r, dtype=float)
    k = ap.k
    C = ap.v_n * ap.rho0 * ap.omega / (k * math.cos(k) - math.sin(k))
    z = k * r
    small = z < 0.01
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = C * (z * np.cos(z) - np.sin(z)) / r ** 2
    series = C * k ** 2 * z * (-1.0 / 3.0 + z ** 2 / 30.0 - z ** 4 / 840.0)
    return np.where(small, series, direct)


def kirsch_fields(X, ep: ElasticityParams, R: float = 1.0):
    """Kirsch plate-with-hole displacement and stress under remote uniaxial
    tension T_inf along x.  Returns ((k,2) displacements, (k,3) stresses)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.hypot(X[:, 0], X[:, 1])
    th = np.arctan2(X[:, 1], X[:, 0])
    T, G, kap = ep.T_inf, ep.G, ep.kappa
    c1 = T * R / (8.0 * G)
    rr = r / R
    Rr = R / r
    Rr3 = Rr ** 3
    u = c1 * (rr * (kap + 1.0) * np.cos(th)
              + 2.0 * Rr * ((1.0 + kap) * np.cos(th) + np.cos(3 * th))
              - 2.0 * Rr3 * np.cos(3 * th))
    v = c1 * (rr * (kap - 3.0) * np.sin(th)
              + 2.0 * Rr * ((1.0 - kap) * np.sin(th) + np.sin(3 * th))
              - 2.0 * Rr3 * np.sin(3 * th))
    R2, R4 = Rr ** 2, Rr ** 4
    sx = T * (1.0 - R2 * (1.5 * np.cos(2 * th) + np.cos(4 * th)) + 1.5 * R4 * np.cos(4 * th))
    sy = T * (-R2 * (0.5 * np.cos(2 * th) - np.cos(4 * th)) - 1.5 * R4 * np.cos(4 * th))
    txy = T * (-R2 * (0.5 * np.sin(2 * th) + np.sin(4 * th)) + 1.5 * R4 * np.sin(4 * th))
    return np.column_stack([u, v]), np.column_stack([sx, sy, txy])


def williams_fields(X, wp: WilliamsParams, ep: ElasticityParams):
    """Symmetric corner fields for the re-entrant 270-degree wedge; stresses
    are singular at r = 0 (returned as inf there)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.hypot(X[:, 0], X[:, 1])
    th = np.arctan2(X[:, 1], X[:, 0])
    lam, Q = wp.lam1, wp.Q
    twoG = 2.0 * ep.G
    rl = r ** lam
    u = rl / twoG * ((ep.kappa - Q * (lam + 1.0)) * np.cos(lam * th)
                     - lam * np.cos((lam - 2.0) * th))
    v = rl / twoG * ((ep.kappa + Q * (lam + 1.0)) * np.sin(lam * th)
                     + lam * np.sin((lam - 2.0) * th))
    # the r = 0 corner carries infinite stress; inf rows are made uniformly
    # non-finite so callers can mask the singular node
    with np.errstate(divide="ignore", invalid="ignore"):
        rm = np.where(r > 0, r, 0.0) ** (lam - 1.0)
        sx = lam * rm * ((2.0 - Q * (lam + 1.0)) * np.cos((lam - 1.0) * th)
                         - (lam - 1.0) * np.cos((lam - 3.0) * th))
        sy = lam * rm * ((2.0 + Q * (lam + 1.0)) * np.cos((lam - 1.0) * th)
                         + (lam - 1.0) * np.cos((lam - 3.0) * th))
        txy = lam * rm * (Q * (lam + 1.0) * np.sin((lam - 1.0) * th)
                          + (lam - 1.0) * np.sin((lam - 3.0) * th))
    sing = r == 0.0
    if np.any(sing):
        sx[sing] = sy[sing] = txy[sing] = np.inf
    return np.column_stack([u, v]), np.column_stack([sx, sy, txy])


def star_source_u2(X):
    """Laplacian of u2 = exp(x^2+y^2) + sinh(x) cos(2y)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x, y = X[:, 0], X[:, 1]
    s = x ** 2 + y ** 2
    return 4.0 * (1.0 + s) * np.exp(s) - 3.0 * np.sinh(x) * np.cos(2 * y)


# control net of the star-shaped benchmark region (x, y, weight)
STAR_CONTROL_NET = np.array([
    [-0.315646, -1.085310, 1.515248],
    [0.091382, -0.554301, 1.180104],
    [0.471145, -0.906028, 1.275062],
    [0.658987, -0.724081, 0.805530],
    [0.717332, -0.497103, 1.085006],
    [0.612211, -0.207935, 1.204812],
    [1.225410, 0.199055, 1.602287],
    [1.317630, 0.653927, 1.287513],
    [0.781819, 0.724652, 1.279621],
    [0.308763, 0.447180, 1.146973],
    [0.104881, 1.024695, 1.371792],
    [-0.139101, 0.885485, 0.747637],
    [-0.328176, 0.819813, 1.104964],
    [-0.310237, 0.389074, 1.089473],
    [-1.013978, 0.505792, 1.398823],
    [-0.948944, 0.187873, 0.793557],
    [-1.055274, -0.025958, 1.393367],
    [-0.498210, -0.237582, 1.208597],
    [-0.769951, -0.761041, 1.349239],
    [-0.667820, -1.073769, 1.081645],
])

_star_cache = {}


def star_curve() -> nurbs.NurbsCurve:
    """The closed periodic cubic curve bounding the star benchmark region
    (shared instance, so polyline caches are reused across runs)."""
    if "curve" not in _star_cache:
        _star_cache["curve"] = nurbs.NurbsCurve(STAR_CONTROL_NET[:, :2],
                                                STAR_CONTROL_NET[:, 2])
    return _star_cache["curve"]


# ----------------------------------------------------------------------------
# row operators

def _laplacian_op(ksq):
    def op(be, x):
        lap = np.einsum("aii->a", be.hess)
        return (lap + ksq * be.phi)[None, :, None]
    return op


def _identity_op(dof):
    def op(be, x):
        block = np.zeros((dof, be.phi.size, dof))
        for c in range(dof):
            block[c, :, c] = be.phi
        return block
    return op


def _flux_op(scale):
    def op(be, x, normal):
        return (scale * (be.grad @ normal))[None, :, None]
    return op


def _plane_stress_op(ep: ElasticityParams):
    Eb, G, nu = ep.Ebar, ep.G, ep.nu
    mix = Eb * nu + G

    def op(be, x):
        H00 = be.hess[:, 0, 0]
        H11 = be.hess[:, 1, 1]
        H01 = be.hess[:, 0, 1]
        block = np.empty((2, be.phi.size, 2))
        block[0, :, 0] = Eb * H00 + G * H11
        block[0, :, 1] = mix * H01
        block[1, :, 0] = mix * H01
        block[1, :, 1] = G * H00 + Eb * H11
        return block
    return op


def plane_stress_from_gradient(grad, ep: ElasticityParams):
    """Stresses (sxx, syy, txy) from displacement gradients (k, 2, 2)."""
    grad = np.asarray(grad, dtype=float)
    ex = grad[:, 0, 0]
    ey = grad[:, 1, 1]
    gxy = grad[:, 0, 1] + grad[:, 1, 0]
    return np.column_stack([ep.Ebar * (ex + ep.nu * ey),
                            ep.Ebar * (ey + ep.nu * ex),
                            ep.G * gxy])


def _scalar_problem(name, domain, bc, ksq, source_fn, ref: Reference, flux_scale=1.0):
    def source(x):
        return np.array([source_fn(np.atleast_2d(x))[0]])

    def ddata(x):
        return ref.value(np.atleast_2d(x))[0]

    def ndata(x, normal):
        g = ref.gradient(np.atleast_2d(x))[0, 0]
        return np.array([flux_scale * float(g @ normal)])

    return ProblemDefinition(
        name=name, dof=1, domain=domain, bc=bc,
        interior_op=_laplacian_op(ksq), dirichlet_op=_identity_op(1),
        neumann_op=_flux_op(flux_scale), source=source,
        dirichlet_data=ddata, neumann_data=ndata, reference=ref)


def _elastic_problem(name, domain, ep, fields):
    def value(X):
        return fields(X)[0]

    def stress(X):
        return fields(X)[1]

    ref = Reference(value=value, stress=stress)

    def source(x):
        return np.zeros(2)

    def ddata(x):
        return value(np.atleast_2d(x))[0]

    return ProblemDefinition(
        name=name, dof=2, domain=domain, bc="dirichlet",
        interior_op=_plane_stress_op(ep), dirichlet_op=_identity_op(2),
        source=source, dirichlet_data=ddata, reference=ref,
        gradient_to_stress=lambda grad: plane_stress_from_gradient(grad, ep))


def _radial_reference(value_fn, deriv_fn):
    def value(X):
        X = np.atleast_2d(X)
        return value_fn(np.linalg.norm(X, axis=1))[:, None]

    def gradient(X):
        X = np.atleast_2d(X)
        r = np.linalg.norm(X, axis=1)
        dp = deriv_fn(r)
        with np.errstate(invalid="ignore"):
            direction = np.where(r[:, None] > 0, X / np.where(r > 0, r, 1.0)[:, None], 0.0)
        return (dp[:, None] * direction)[:, None, :]
    return Reference(value=value, gradient=gradient)


def make_problem(name: str) -> ProblemDefinition:
    """Build a benchmark problem by name; see ``BENCHMARKS``."""
    if name in ("helm1d-essential", "helm1d-natural"):
        ref = Reference(
            value=lambda X: helm1d_value(np.atleast_2d(X)[:, 0])[:, None],
            gradient=lambda X: helm1d_derivative(np.atleast_2d(X)[:, 0])[:, None, None])
        return _scalar_problem(
            name, geometry.interval(-1.0, 1.0),
            "dirichlet" if name.endswith("essential") else "neumann",
            ksq=1.0, source_fn=lambda X: helm1d_source(np.atleast_2d(X)[:, 0]),
            ref=ref)
    if name == "helm2d-circle":
        ap = AcousticParams()
        ref = _radial_reference(lambda r: circle_pressure(r, ap),
                                lambda r: circle_pressure_derivative(r, ap))
        return _scalar_problem(
            name, geometry.disk(1.0), "neumann", ksq=ap.k ** 2,
            source_fn=lambda X: np.zeros(len(np.atleast_2d(X))), ref=ref,
            flux_scale=1.0 / (ap.rho0 * ap.omega))
    if name == "helm3d-sphere":
        ap = AcousticParams()
        ref = _radial_reference(lambda r: sphere_pressure(r, ap),
                                lambda r: sphere_pressure_derivative(r, ap))
        return _scalar_problem(
            name, geometry.sphere(1.0), "neumann", ksq=ap.k ** 2,
            source_fn=lambda X: np.zeros(len(np.atleast_2d(X))), ref=ref,
            flux_scale=1.0 / (ap.rho0 * ap.omega))
    if name == "plate-hole":
        ep = ElasticityParams()
        return _elastic_problem(name, geometry.quarter_plate(4.0, 1.0), ep,
                                lambda X: kirsch_fields(X, ep))
    if name == "l-shape":
        ep = ElasticityParams()
        wp = WilliamsParams()
        return _elastic_problem(name, geometry.l_shape(1.0), ep,
                                lambda X: williams_fields(X, wp, ep))
    if name in ("star-poisson-u1", "star-poisson-u2"):
        dom = geometry.nurbs_domain(star_curve())
        if name.endswith("u1"):
            ref = Reference(
                value=lambda X: (np.sinh(np.atleast_2d(X)[:, 0])
                                 * np.cos(np.atleast_2d(X)[:, 1]))[:, None],
                gradient=lambda X: np.stack([
                    np.cosh(np.atleast_2d(X)[:, 0]) * np.cos(np.atleast_2d(X)[:, 1]),
                    -np.sinh(np.atleast_2d(X)[:, 0]) * np.sin(np.atleast_2d(X)[:, 1]),
                ], axis=1)[:, None, :])
            src = lambda X: np.zeros(len(np.atleast_2d(X)))
        else:
            def _u2(X):
                X = np.atleast_2d(X)
                x, y = X[:, 0], X[:, 1]
                return (np.exp(x ** 2 + y ** 2) + np.sinh(x) * np.cos(2 * y))[:, None]

            def _grad_u2(X):
                X = np.atleast_2d(X)
                x, y = X[:, 0], X[:, 1]
                es = np.exp(x ** 2 + y ** 2)
                return np.stack([2 * x * es + np.cosh(x) * np.cos(2 * y),
                                 2 * y * es - 2 * np.sinh(x) * np.sin(2 * y)],
                                axis=1)[:, None, :]
            ref = Reference(value=_u2, gradient=_grad_u2)
            src = star_source_u2
        return _scalar_problem(name, dom, "dirichlet", ksq=0.0, source_fn=src, ref=ref)
    raise ValueError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")


# ----------------------------------------------------------------------------
# polynomial patch problems

class _Poly:
    """Dense polynomial over a graded multi-index set with closed-form
    derivatives, for manufactured patch tests."""

    def __init__(self, dim, degree, coeffs):
        self.E = multi_indices(dim, degree).indices
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.dim = dim

    def value(self, X):
        X = np.atleast_2d(X)
        mono = np.prod(X[:, None, :] ** self.E[None, :, :], axis=2)
        return mono @ self.coeffs

    def _derived(self, shifts):
        E = self.E.astype(float)
        factor = np.ones(len(E))
        Enew = E.copy()
        for i in shifts:
            factor *= Enew[:, i]
            Enew[:, i] = np.maximum(Enew[:, i] - 1, 0)
        return factor * self.coeffs, Enew.astype(int)

    def grad(self, X):
        X = np.atleast_2d(X)
        out = np.empty((len(X), self.dim))
        for i in range(self.dim):
            cf, E = self._derived([i])
            out[:, i] = np.prod(X[:, None, :] ** E[None, :, :], axis=2) @ cf
        return out

    def hess(self, X):
        X = np.atleast_2d(X)
        out = np.empty((len(X), self.dim, self.dim))
        for i in range(self.dim):
            for j in range(i, self.dim):
                cf, E = self._derived([i, j])
                val = np.prod(X[:, None, :] ** E[None, :, :], axis=2) @ cf
                out[:, i, j] = out[:, j, i] = val
        return out


_PATCH_DOMAINS = {1: geometry.interval(0.0, 1.0), 2: geometry.disk(1.0),
                  3: geometry.sphere(1.0)}


def make_patch_problem(operator: str, dim: int, degree: int, seed: int = 0) -> ProblemDefinition:
    """Manufactured problem whose exact solution is a random polynomial of the
    given total degree; a basis of matching consistency order must reproduce
    it to solver accuracy."""
    rng = np.random.default_rng(seed)
    dom = _PATCH_DOMAINS[dim]
    name = f"patch-{operator}-{dim}d-deg{degree}"
    if operator in ("poisson", "helmholtz"):
        ksq = 1.0 if operator == "helmholtz" else 0.0
        poly = _Poly(dim, degree, rng.uniform(-1, 1, multi_indices(dim, degree).size))
        ref = Reference(value=lambda X: poly.value(X)[:, None],
                        gradient=lambda X: poly.grad(X)[:, None, :])
        src = lambda X: np.einsum("aii->a", poly.hess(np.atleast_2d(X))) \
            + ksq * poly.value(np.atleast_2d(X))
        return _scalar_problem(name, dom, "dirichlet", ksq, src, ref)
    if operator == "plane-stress":
        if dim != 2:
            raise ValueError("plane-stress patch test is two-dimensional")
        ep = ElasticityParams()
        size = multi_indices(2, degree).size
        pu = _Poly(2, degree, rng.uniform(-1, 1, size))
        pv = _Poly(2, degree, rng.uniform(-1, 1, size))

        def value(X):
            return np.column_stack([pu.value(X), pv.value(X)])

        def source(x):
            X = np.atleast_2d(x)
            Hu, Hv = pu.hess(X), pv.hess(X)
            mix = ep.Ebar * ep.nu + ep.G
            b1 = ep.Ebar * Hu[:, 0, 0] + ep.G * Hu[:, 1, 1] + mix * Hv[:, 0, 1]
            b2 = ep.G * Hv[:, 0, 0] + ep.Ebar * Hv[:, 1, 1] + mix * Hu[:, 0, 1]
            return np.array([b1[0], b2[0]])

        ref = Reference(value=value)
        return ProblemDefinition(
            name=name, dof=2, domain=dom, bc="dirichlet",
            interior_op=_plane_stress_op(ep), dirichlet_op=_identity_op(2),
            source=source, dirichlet_data=lambda x: value(np.atleast_2d(x))[0],
            reference=ref,
            gradient_to_stress=lambda grad: plane_stress_from_gradient(grad, ep))
    raise ValueError(f"unknown patch operator {operator!r}")
