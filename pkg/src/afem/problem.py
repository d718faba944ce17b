"""Problem data: coefficient fields, piecewise projections, benchmarks.

Coefficient callbacks are vectorized: given flat arrays ``x, y`` of length
N they return arrays of shape (N, 2, 2) for the diffusion matrix, (N, 2)
for the convection field and (N,) for scalars. The piecewise-constant
projection realizes the L2 projection by one-point (centroid) quadrature,
which is also how every discrete system evaluates its coefficients.
"""

from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .errors import NotPositiveDefinite, UnknownBenchmark
from .mesh import build_mesh, read_mesh_file

# first Dirichlet-Laplace eigenvalue of the L-shaped domain
LSHAPE_LAMBDA_1 = 9.6397238440219

# default reaction sweep magnitudes bracketing LSHAPE_LAMBDA_1
DEFAULT_GAMMA_SWEEP = (8.0, 9.0, 9.5, 9.63, 9.64, 9.7, 10.0, 12.0)


@dataclass(frozen=True)
class CoefficientField:
    """Variable coefficients of -div(A grad u + u b) + gamma u = f."""

    a: Callable
    b: Callable
    gamma: Callable
    f: Callable
    u_dirichlet: Callable


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad_u: Callable
    p: Callable  # flux -(A grad u + u b)


@dataclass(frozen=True)
class ProblemInstance:
    name: str
    field: CoefficientField
    start_mesh: Callable
    exact: Optional[ExactSolution] = None
    singular_point: Optional[tuple] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PiecewiseData:
    """Per-triangle constants: centroid values of the coefficients plus the
    second-moment functional S_T and the condensation factor data."""

    mesh: object
    a_h: np.ndarray       # (T, 2, 2)
    a_h_inv: np.ndarray   # (T, 2, 2)
    b_h: np.ndarray       # (T, 2)
    b_star_h: np.ndarray  # (T, 2), solves A_h b* = b
    gamma_h: np.ndarray   # (T,)
    f_h: np.ndarray       # (T,)
    s_t: np.ndarray       # (T,)


def constant_matrix(m):
    m = np.asarray(m, dtype=float)

    def a(x, y):
        return np.broadcast_to(m, (np.size(x), 2, 2))

    return a


def constant_vector(v):
    v = np.asarray(v, dtype=float)

    def b(x, y):
        return np.broadcast_to(v, (np.size(x), 2))

    return b


def constant_scalar(c):
    c = float(c)

    def g(x, y):
        return np.full(np.size(x), c)

    return g


def s_of_t(triangle, a_h_inv):
    """Second-moment functional of one triangle.

    Computed with the edge-midpoint rule, which integrates the quadratic
    integrand exactly:  S_T = (|T|/3) sum_k (m_k - c)^T A_h^{-1} (m_k - c).
    """
    tri = np.asarray(triangle, dtype=float)
    c = tri.mean(axis=0)
    mids = 0.5 * (tri + np.roll(tri, -1, axis=0)) - c
    d1 = tri[1] - tri[0]
    d2 = tri[2] - tri[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    return float(area / 3.0 * np.einsum("kd,de,ke->", mids, a_h_inv, mids))


def _s_of_t_all(mesh, a_h_inv):
    pv = mesh.triangle_vertices()
    mids = 0.5 * (pv + np.roll(pv, -1, axis=1)) - mesh.centroid[:, None, :]
    return mesh.area / 3.0 * np.einsum("tkd,tde,tke->t", mids, a_h_inv, mids)


def project_p0(coeffs, mesh):
    """Centroid projection of the coefficient field onto piecewise constants."""
    cx, cy = mesh.centroid[:, 0], mesh.centroid[:, 1]
    a_h = np.asarray(coeffs.a(cx, cy), dtype=float).reshape(-1, 2, 2)
    asym = np.abs(a_h[:, 0, 1] - a_h[:, 1, 0])
    spd = (
        (a_h[:, 0, 0] > 0)
        & (np.linalg.det(a_h) > 0)
        & (asym <= 1e-12 * np.abs(a_h).max())
    )
    if not np.all(spd):
        bad = int(np.flatnonzero(~spd)[0])
        raise NotPositiveDefinite(
            f"A at centroid of triangle {bad} is not symmetric positive definite"
        )
    a_h_inv = np.linalg.inv(a_h)
    b_h = np.asarray(coeffs.b(cx, cy), dtype=float).reshape(-1, 2)
    b_star_h = np.einsum("tde,te->td", a_h_inv, b_h)
    return PiecewiseData(
        mesh=mesh,
        a_h=a_h,
        a_h_inv=a_h_inv,
        b_h=b_h,
        b_star_h=b_star_h,
        gamma_h=np.asarray(coeffs.gamma(cx, cy), dtype=float).ravel(),
        f_h=np.asarray(coeffs.f(cx, cy), dtype=float).ravel(),
        s_t=_s_of_t_all(mesh, a_h_inv),
    )


# -- benchmark domains -------------------------------------------------------


def lshape_start_mesh():
    """(-1,1)^2 minus [0,1]x[-1,0] on the 0.5 grid, diagonals toward origin."""
    coords = np.linspace(-1.0, 1.0, 5)
    index = {}
    verts = []
    for j, y in enumerate(coords):
        for i, x in enumerate(coords):
            if x > 0 and y < 0:
                continue  # inside the removed quadrant
            index[(i, j)] = len(verts)
            verts.append((x, y))
    tris = []
    for j in range(4):
        for i in range(4):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            if any(c not in index for c in corners):
                continue
            p00, p10, p11, p01 = (index[c] for c in corners)
            cx = coords[i] + 0.25
            cy = coords[j] + 0.25
            if cx * cy > 0:
                tris.append((p00, p10, p11))
                tris.append((p00, p11, p01))
            else:
                tris.append((p00, p10, p01))
                tris.append((p10, p11, p01))
    return build_mesh(np.array(verts), np.array(tris))


def crack_start_mesh():
    """Sixteen-gon approximation of the slit unit disc, read from package data."""
    ref = resources.files("afem").joinpath("data/crack0.mesh")
    with ref.open("r") as fh:
        return read_mesh_file(fh)


def _polar(x, y):
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    theta = np.where(theta < 0, theta + 2.0 * np.pi, theta)
    return r, theta


def _lshape_instance():
    two_thirds = 2.0 / 3.0

    def u(x, y):
        r, t = _polar(x, y)
        return r**two_thirds * np.sin(two_thirds * t)

    def grad_u(x, y):
        r, t = _polar(x, y)
        rad = two_thirds * r ** (two_thirds - 1.0)
        ur = rad * np.sin(two_thirds * t)
        ut = rad * np.cos(two_thirds * t)
        ct, st = np.cos(t), np.sin(t)
        return np.stack([ur * ct - ut * st, ur * st + ut * ct], axis=-1)

    def b(x, y):
        return np.stack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)], axis=-1)

    def f(x, y):
        # u is harmonic; div(u b) = b.grad u + 2u = (2/3)u + 2u by homogeneity
        return -20.0 / 3.0 * u(x, y)

    def p(x, y):
        return -(grad_u(x, y) + u(x, y)[..., None] * b(x, y))

    coeffs = CoefficientField(
        a=constant_matrix(np.eye(2)),
        b=b,
        gamma=constant_scalar(-4.0),
        f=f,
        u_dirichlet=u,
    )
    return ProblemInstance(
        name="lshape",
        field=coeffs,
        start_mesh=lshape_start_mesh,
        exact=ExactSolution(u=u, grad_u=grad_u, p=p),
        singular_point=(0.0, 0.0),
    )


def _crack_instance():
    def u(x, y):
        r, t = _polar(x, y)
        return np.sqrt(r) * np.sin(0.5 * t) - 0.5 * np.asarray(y, dtype=float) ** 2

    def grad_u(x, y):
        r, t = _polar(x, y)
        rad = 0.5 / np.sqrt(r)
        ur = rad * np.sin(0.5 * t)
        ut = rad * np.cos(0.5 * t)
        ct, st = np.cos(t), np.sin(t)
        gx = ur * ct - ut * st
        gy = ur * st + ut * ct - np.asarray(y, dtype=float)
        return np.stack([gx, gy], axis=-1)

    def b(x, y):
        return np.stack(
            [np.asarray(x, dtype=float) - 1.0, np.asarray(y, dtype=float) + 1.0],
            axis=-1,
        )

    def f(x, y):
        # -Laplace(u) = 1; gamma = 0, so f = 1 - b.grad u - u div b
        g = grad_u(x, y)
        bv = b(x, y)
        return 1.0 - np.einsum("...d,...d->...", bv, g) - 2.0 * u(x, y)

    def p(x, y):
        return -(grad_u(x, y) + u(x, y)[..., None] * b(x, y))

    coeffs = CoefficientField(
        a=constant_matrix(np.eye(2)),
        b=b,
        gamma=constant_scalar(0.0),
        f=f,
        u_dirichlet=u,
    )
    return ProblemInstance(
        name="crack",
        field=coeffs,
        start_mesh=crack_start_mesh,
        exact=ExactSolution(u=u, grad_u=grad_u, p=p),
        singular_point=(0.0, 0.0),
    )


def _eigen_sweep_instance(gamma):
    """L-shape Laplacian with reaction -gamma and unit load.

    The reaction coefficient is the negative of the sweep magnitude: the
    operator -Laplace - gamma is singular exactly when gamma hits a
    Dirichlet-Laplace eigenvalue, so magnitudes near LSHAPE_LAMBDA_1 probe
    the indefinite regime.
    """
    gamma = float(gamma)
    if not np.isfinite(gamma):
        raise UnknownBenchmark("eigen_sweep needs a finite gamma")
    coeffs = CoefficientField(
        a=constant_matrix(np.eye(2)),
        b=constant_vector((0.0, 0.0)),
        gamma=constant_scalar(-gamma),
        f=constant_scalar(1.0),
        u_dirichlet=constant_scalar(0.0),
    )
    return ProblemInstance(
        name="eigen_sweep",
        field=coeffs,
        start_mesh=lshape_start_mesh,
        exact=None,
        singular_point=None,
        params={"gamma": gamma},
    )


_REGISTRY = {
    "lshape": lambda **kw: _lshape_instance(),
    "crack": lambda **kw: _crack_instance(),
    "eigen_sweep": lambda **kw: _eigen_sweep_instance(
        kw.get("gamma", DEFAULT_GAMMA_SWEEP[0])
    ),
}


def register_problem(name, factory):
    """Plugin point: ``factory(**params) -> ProblemInstance``."""
    _REGISTRY[name] = factory


def benchmark(name, **params):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownBenchmark(
            f"unknown benchmark {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None
    return factory(**params)


def residual_of_exact(instance, x, y, h=1e-5):
    """First-order-system residual div p + gamma u - f of the exact data,
    with the flux divergence taken by central differences (the flux already
    carries the sign, p = -(A grad u + u b)). Consistency diagnostic."""
    ex = instance.exact
    cf = instance.field
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    div_p = (ex.p(x + h, y)[..., 0] - ex.p(x - h, y)[..., 0]) / (2 * h) + (
        ex.p(x, y + h)[..., 1] - ex.p(x, y - h)[..., 1]
    ) / (2 * h)
    return div_p + cf.gamma(x, y) * ex.u(x, y) - cf.f(x, y)


__all__ = [
    "CoefficientField",
    "ExactSolution",
    "ProblemInstance",
    "PiecewiseData",
    "project_p0",
    "s_of_t",
    "benchmark",
    "register_problem",
    "lshape_start_mesh",
    "crack_start_mesh",
    "residual_of_exact",
    "constant_matrix",
    "constant_vector",
    "constant_scalar",
    "LSHAPE_LAMBDA_1",
    "DEFAULT_GAMMA_SWEEP",
]
