"""Sparse direct solves and the two routes to the mixed solution.

The reconstruction route solves the condensed modified nonconforming
system, forms the scalar part from the S_T-weighted average of the element
means and lifts the broken gradient to a conforming flux; the direct route
factors the saddle-point system. Their agreement to solver precision is
the package's strongest correctness oracle and is asserted on every level
of every benchmark run.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (
    CRSolution,
    MixedSolution,
    assemble_mixed_direct,
    assemble_modified_ncfem,
    assemble_ncfem,
    condensation_factors,
    edge_flux_of,
    mixed_from_edge_flux,
    s_mean,
)
from .errors import MeshMismatch, SingularMatrix


@dataclass(frozen=True)
class SolverConfig:
    residual_tol: float = 1e-10  # relative residual contract of solve_sparse
    pivot_floor: float = 1e-14   # pivot / max-pivot ratio treated as singular


CONFIG = SolverConfig()


@dataclass
class LinearSolveReport:
    solution: np.ndarray       # full dof vector, fixed dofs filled in
    residual: float            # ||Ax - b|| / max(||b||, eps)
    min_pivot: float
    max_pivot: float


def solve_sparse(system, config=CONFIG):
    """Direct sparse LU solve with partial pivoting and residual check."""
    n = len(system.rhs)
    if n == 0:
        return LinearSolveReport(
            solution=system.full_solution(np.empty(0)),
            residual=0.0,
            min_pivot=np.inf,
            max_pivot=np.inf,
        )
    matrix = system.matrix.tocsc()
    try:
        lu = spla.splu(matrix)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SingularMatrix(str(exc)) from None
    pivots = np.abs(lu.U.diagonal())
    max_pivot = float(pivots.max()) if len(pivots) else 0.0
    min_pivot = float(pivots.min()) if len(pivots) else 0.0
    if max_pivot == 0.0 or min_pivot < config.pivot_floor * max_pivot:
        raise SingularMatrix(
            f"pivot ratio {min_pivot:.3e} / {max_pivot:.3e} below floor;"
            " reaction coefficient near a discrete eigenvalue or mesh too coarse"
        )
    x = lu.solve(system.rhs)
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("factorization produced non-finite values")
    scale = max(float(np.linalg.norm(system.rhs)), 1e-300)
    residual = float(np.linalg.norm(matrix @ x - system.rhs)) / scale
    if residual > config.residual_tol:
        # one step of iterative refinement before declaring breakdown
        x = x + lu.solve(system.rhs - matrix @ x)
        residual = float(np.linalg.norm(matrix @ x - system.rhs)) / scale
    if residual > config.residual_tol or not np.all(np.isfinite(x)):
        raise SingularMatrix(
            f"relative residual {residual:.3e} exceeds {config.residual_tol:.1e}"
        )
    return LinearSolveReport(
        solution=system.full_solution(x),
        residual=residual,
        min_pivot=min_pivot,
        max_pivot=max_pivot,
    )


def solve_ncfem(mesh, instance_or_field, pw=None):
    """Solve the plain nonconforming method; returns a :class:`CRSolution`."""
    field = getattr(instance_or_field, "field", instance_or_field)
    system = assemble_ncfem(
        mesh, pw if pw is not None else field, u_dirichlet=field.u_dirichlet
    )
    report = solve_sparse(system)
    return CRSolution(mesh=mesh, edge_values=report.solution)


def solve_modified_ncfem(mesh, pw, u_dirichlet):
    system = assemble_modified_ncfem(mesh, pw, u_dirichlet=u_dirichlet)
    report = solve_sparse(system)
    return CRSolution(mesh=mesh, edge_values=report.solution)


def reconstruct_mixed(pw, u_cr_tilde):
    """Closed-form mixed solution from the modified nonconforming one.

    Scalar part: u_M = kappa_T (Pi0 u~ + (S_T/|T|) f_h / 4); flux part:
    p_M(x) = -(A_h grad u~ + u_M b_h) + (f_h - gamma_h u_M)(x - mid T)/2.
    """
    mesh = u_cr_tilde.mesh
    if pw.mesh is not mesh:
        raise MeshMismatch("piecewise data and solution live on different meshes")
    kappa = condensation_factors(pw)
    u_m = kappa * (u_cr_tilde.triangle_means() + s_mean(pw) / 4.0 * pw.f_h)
    grads = u_cr_tilde.gradients()
    slope = 0.5 * (pw.f_h - pw.gamma_h * u_m)
    const = (
        -np.einsum("tde,te->td", pw.a_h, grads)
        - u_m[:, None] * pw.b_h
        - slope[:, None] * mesh.centroid
    )
    return MixedSolution(
        mesh=mesh,
        flux_const=const,
        flux_slope=slope,
        u=u_m,
        edge_flux=edge_flux_of(mesh, const, slope),
    )


def solve_mixed_via_equivalence(mesh, pw, u_dirichlet=None):
    """Mixed solution by reconstruction; returns ``(mixed, u_cr_tilde)``."""
    if u_dirichlet is None:
        from .problem import constant_scalar

        u_dirichlet = constant_scalar(0.0)
    u_tilde = solve_modified_ncfem(mesh, pw, u_dirichlet)
    return reconstruct_mixed(pw, u_tilde), u_tilde


def solve_mixed_direct(mesh, pw, u_dirichlet=None):
    """Mixed solution from the direct saddle-point factorization."""
    if u_dirichlet is None:
        from .problem import constant_scalar

        u_dirichlet = constant_scalar(0.0)
    system = assemble_mixed_direct(mesh, pw, u_dirichlet=u_dirichlet)
    report = solve_sparse(system)
    ne = mesh.num_edges
    return mixed_from_edge_flux(mesh, report.solution[:ne], report.solution[ne:])


def _flux_l2(mesh, const, slope):
    pv = mesh.triangle_vertices()
    mids = 0.5 * (pv + np.roll(pv, -1, axis=1))
    vals = const[:, None, :] + slope[:, None, None] * mids
    return float(
        np.sqrt(np.sum(mesh.area / 3.0 * np.einsum("tqd,tqd->tq", vals, vals).sum(axis=1)))
    )


def equivalence_residual(direct, recon):
    """Relative L2 discrepancies (flux, scalar) between the two routes."""
    if direct.mesh is not recon.mesh:
        raise MeshMismatch("solutions live on different meshes")
    mesh = direct.mesh
    dc = direct.flux_const - recon.flux_const
    ds = direct.flux_slope - recon.flux_slope
    num_p = _flux_l2(mesh, dc, ds)
    den_p = _flux_l2(mesh, direct.flux_const, direct.flux_slope)
    du = direct.u - recon.u
    num_u = float(np.sqrt(np.sum(mesh.area * du**2)))
    den_u = float(np.sqrt(np.sum(mesh.area * direct.u**2)))
    return (
        num_p / den_p if den_p > 0 else num_p,
        num_u / den_u if den_u > 0 else num_u,
    )
