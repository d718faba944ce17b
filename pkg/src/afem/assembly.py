"""Element matrices and global sparse systems.

Three systems are assembled here, all with centroid (one-point) coefficient
quadrature and exact integration of the polynomial element integrands:

* the nonconforming system  a_NC(u, v) = (f_h, v)  over edge-midpoint dofs;
* its condensed modification whose solution reconstructs the mixed one;
* the direct saddle-point system of the lowest-order mixed method over
  edge-flux dofs (normal component on the canonical edge normal) followed
  by one scalar dof per triangle.

Dirichlet data enters by elimination (nonconforming) or through the
natural boundary term of the first mixed equation, approximated with the
one-point edge rule |E| u_D(mid E).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshMismatch, SingularLocalFactor


@dataclass
class SparseSystem:
    """Triplet-assembled sparse system with Dirichlet bookkeeping.

    ``matrix``/``rhs`` describe the reduced system over ``free`` dofs once
    :func:`apply_dirichlet` has run; before that, all dofs are free.
    """

    matrix: sp.csc_matrix
    rhs: np.ndarray
    ndofs: int
    free: np.ndarray
    fixed: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    fixed_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    kind: str = "cr"
    mesh: object = None
    dirichlet_applied: bool = False

    def full_solution(self, x_free):
        out = np.empty(self.ndofs)
        out[self.free] = x_free
        if len(self.fixed):
            out[self.fixed] = self.fixed_values
        return out

    def dump_triplets(self, path):
        """Matrix-market style triplet text dump for offline inspection."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write(f"% {self.kind} system, {coo.shape[0]} x {coo.shape[1]},"
                     f" {coo.nnz} entries\n")
            fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v!r}\n")
            fh.write(f"% rhs {len(self.rhs)}\n")
            for v in self.rhs:
                fh.write(f"{float(v)!r}\n")


@dataclass
class CRSolution:
    """Piecewise affine, continuous at edge midpoints; one dof per edge."""

    mesh: object
    edge_values: np.ndarray

    def gradients(self):
        """Broken gradient per triangle, shape (T, 2)."""
        grad_psi = -2.0 * self.mesh.grad_bary()
        dofs = self.edge_values[self.mesh.triangle_edges]
        return np.einsum("tk,tkd->td", dofs, grad_psi)

    def triangle_means(self):
        """Integral means per triangle = average of the three edge values."""
        return self.edge_values[self.mesh.triangle_edges].mean(axis=1)

    def vertex_traces(self):
        """Values at the triangle corners, shape (T, 3)."""
        dofs = self.edge_values[self.mesh.triangle_edges]
        return dofs.sum(axis=1, keepdims=True) - 2.0 * dofs


@dataclass
class MixedSolution:
    """Per-triangle affine flux c + d*x, scalar P0 part, and edge fluxes."""

    mesh: object
    flux_const: np.ndarray  # (T, 2)
    flux_slope: np.ndarray  # (T,)
    u: np.ndarray           # (T,)
    edge_flux: np.ndarray   # (E,) normal flux w.r.t. the canonical normal

    def flux_at(self, points):
        """Evaluate the flux at per-triangle points of shape (T, Q, 2)."""
        return self.flux_const[:, None, :] + self.flux_slope[:, None, None] * points

    def div(self):
        """Elementwise divergence, constant per triangle."""
        return 2.0 * self.flux_slope

    def normal_jumps(self):
        """[p]_E . nu_E on interior edges (zero for conforming fluxes)."""
        mesh = self.mesh
        inner = mesh.interior_edges
        tp = mesh.edge_tris[inner, 0]
        tm = mesh.edge_tris[inner, 1]
        mid = mesh.edge_mid[inner]
        nu = mesh.edge_normal[inner]
        val_p = self.flux_const[tp] + self.flux_slope[tp, None] * mid
        val_m = self.flux_const[tm] + self.flux_slope[tm, None] * mid
        return np.einsum("ed,ed->e", val_p - val_m, nu)


def mixed_from_edge_flux(mesh, edge_flux, u):
    """Expand edge flux dofs into the per-triangle affine representation."""
    s = (
        mesh.triangle_edge_signs
        * mesh.edge_length[mesh.triangle_edges]
        / (2.0 * mesh.area[:, None])
    )  # (T, 3); local basis sigma |E| / (2|T|) (x - P_opp)
    coef = edge_flux[mesh.triangle_edges] * s
    slope = coef.sum(axis=1)
    const = -np.einsum("tk,tkd->td", coef, mesh.triangle_vertices())
    return MixedSolution(
        mesh=mesh, flux_const=const, flux_slope=slope, u=u, edge_flux=edge_flux
    )


def edge_flux_of(mesh, flux_const, flux_slope):
    """Normal flux on each edge w.r.t. nu_E, taken from the T_plus side
    (falls back to T_minus on boundary edges oriented the other way)."""
    t_of_edge = np.where(
        mesh.edge_tris[:, 0] >= 0, mesh.edge_tris[:, 0], mesh.edge_tris[:, 1]
    )
    val = flux_const[t_of_edge] + flux_slope[t_of_edge, None] * mesh.edge_mid
    return np.einsum("ed,ed->e", val, mesh.edge_normal)


def _coerce_pw(mesh, pw_or_field):
    from .problem import PiecewiseData, project_p0

    if isinstance(pw_or_field, PiecewiseData):
        if pw_or_field.mesh is not mesh:
            raise MeshMismatch("piecewise data belongs to a different mesh")
        return pw_or_field
    return project_p0(pw_or_field, mesh)


def _cr_triplets(mesh, local):
    """Scatter (T, 3, 3) local matrices into COO triplets over edge dofs."""
    te = mesh.triangle_edges
    rows = np.repeat(te, 3, axis=1).ravel()
    cols = np.tile(te, (1, 3)).ravel()
    return rows, cols, local.ravel()


def _compress(rows, cols, vals, shape):
    # deterministic assembly: sort triplets before summing duplicates
    order = np.lexsort((rows, cols))
    m = sp.coo_matrix(
        (vals[order], (rows[order], cols[order])), shape=shape
    ).tocsc()
    m.sum_duplicates()
    return m


def assemble_ncfem(mesh, pw_or_field, u_dirichlet=None):
    """Nonconforming system for a_NC(u, v) = (f_h, v) over all edge dofs.

    Coefficients enter through their centroid values (the piecewise data);
    the remaining polynomial integrals are exact. With ``u_dirichlet``
    given, boundary dofs are eliminated via :func:`apply_dirichlet`.
    """
    pw = _coerce_pw(mesh, pw_or_field)
    grad_psi = -2.0 * mesh.grad_bary()  # (T, 3, 2)
    area = mesh.area

    diff = np.einsum(
        "t,tde,tje,tid->tij", area, pw.a_h, grad_psi, grad_psi
    )
    # (psi_j b_h, grad psi_i):  int_T psi_j = |T|/3
    conv = np.einsum("t,td,tid->ti", area / 3.0, pw.b_h, grad_psi)
    conv = np.repeat(conv[:, :, None], 3, axis=2)
    react = (
        (pw.gamma_h * area / 3.0)[:, None, None] * np.eye(3)[None, :, :]
    )
    rows, cols, vals = _cr_triplets(mesh, diff + conv + react)
    matrix = _compress(rows, cols, vals, (mesh.num_edges, mesh.num_edges))

    rhs = np.zeros(mesh.num_edges)
    np.add.at(
        rhs, mesh.triangle_edges.ravel(),
        np.repeat(pw.f_h * area / 3.0, 3),
    )
    system = SparseSystem(
        matrix=matrix,
        rhs=rhs,
        ndofs=mesh.num_edges,
        free=np.arange(mesh.num_edges),
        kind="cr",
        mesh=mesh,
    )
    if u_dirichlet is not None:
        system = apply_dirichlet(system, u_dirichlet, mesh)
    return system


def s_mean(pw):
    """Element mean of the second-moment form, S_T / |T| (scales like h^2).

    The condensation machinery pairs the S-weighted data against piecewise
    constants in L2, so it is the mean, not the integral, that multiplies
    them; using the raw integral breaks the reconstruction identity by a
    factor |T|.
    """
    return pw.s_t / pw.mesh.area


def condensation_factors(pw):
    """kappa_T = (1 + gamma_h (S_T/|T|) / 4)^(-1), guarded against blow-up."""
    denom = 1.0 + pw.gamma_h * s_mean(pw) / 4.0
    if np.any(np.abs(denom) < 1e-12):
        bad = int(np.argmin(np.abs(denom)))
        raise SingularLocalFactor(
            f"1 + gamma_h S_T/(4|T|) = {denom[bad]:.3e} on triangle {bad};"
            " refine the mesh"
        )
    return 1.0 / denom


def assemble_modified_ncfem(mesh, pw, u_dirichlet=None):
    """Condensed modified nonconforming system.

    The zero-order couplings act on the elementwise mean of the trial
    function (one-point integration semantics), scaled by the condensation
    factor kappa_T; the load carries the matching corrections.
    """
    pw = _coerce_pw(mesh, pw)
    kappa = condensation_factors(pw)
    grad_psi = -2.0 * mesh.grad_bary()
    area = mesh.area

    diff = np.einsum("t,tde,tje,tid->tij", area, pw.a_h, grad_psi, grad_psi)
    # (kappa b_h Pi0 u, grad v): mean of a CR basis function is 1/3
    conv = np.einsum("t,td,tid->ti", kappa * area / 3.0, pw.b_h, grad_psi)
    conv = np.repeat(conv[:, :, None], 3, axis=2)
    react = (pw.gamma_h * kappa * area / 9.0)[:, None, None] * np.ones(
        (1, 3, 3)
    )
    rows, cols, vals = _cr_triplets(mesh, diff + conv + react)
    matrix = _compress(rows, cols, vals, (mesh.num_edges, mesh.num_edges))

    load = pw.f_h * area / 3.0
    correction = kappa * s_mean(pw) / 4.0 * pw.f_h
    local_rhs = (
        load[:, None]
        - np.einsum("t,td,tid->ti", correction * area, pw.b_h, grad_psi)
        - (pw.gamma_h * correction * area / 3.0)[:, None]
    )
    rhs = np.zeros(mesh.num_edges)
    np.add.at(rhs, mesh.triangle_edges.ravel(), local_rhs.ravel())

    system = SparseSystem(
        matrix=matrix,
        rhs=rhs,
        ndofs=mesh.num_edges,
        free=np.arange(mesh.num_edges),
        kind="cr",
        mesh=mesh,
    )
    if u_dirichlet is not None:
        system = apply_dirichlet(system, u_dirichlet, mesh)
    return system


def assemble_mixed_direct(mesh, pw, u_dirichlet=None):
    """Saddle-point system of the lowest-order mixed method.

    Dof order: edge fluxes (canonical edge index), then triangle scalars.
    Block structure [[M, W - B^T], [B, C]] with the flux mass matrix M
    (edge-midpoint rule, exact), the convection coupling W, the divergence
    block B and C = diag(gamma_h |T|).
    """
    pw = _coerce_pw(mesh, pw)
    ne, nt = mesh.num_edges, mesh.num_triangles
    n = ne + nt
    pv = mesh.triangle_vertices()
    sig = mesh.triangle_edge_signs.astype(float)
    scale = sig * mesh.edge_length[mesh.triangle_edges] / (
        2.0 * mesh.area[:, None]
    )  # (T, 3) coefficient of (x - P_k) in the signed local basis

    mids = 0.5 * (pv + np.roll(pv, -1, axis=1))  # edge midpoints, (T, 3, 2)
    # basis values at the quadrature (edge mid) points: (T, k_basis, q, 2)
    vals = scale[:, :, None, None] * (mids[:, None, :, :] - pv[:, :, None, :])
    a_inv_vals = np.einsum("tde,tkqe->tkqd", pw.a_h_inv, vals)
    mass = np.einsum("t,tiqd,tjqd->tij", mesh.area / 3.0, a_inv_vals, vals)

    rows, cols, data = _cr_triplets(mesh, mass)
    rows = [rows]
    cols = [cols]
    data = [data]

    # divergence of the signed basis is sigma |E| / |T|; (div p, 1)_T = sigma |E|
    div_coef = sig * mesh.edge_length[mesh.triangle_edges]  # (T, 3)
    tri_ids = np.repeat(np.arange(nt), 3)
    rows.append(ne + tri_ids)
    cols.append(mesh.triangle_edges.ravel())
    data.append(div_coef.ravel())

    # (u b*_h, q)_T - (div q, u)_T couples each triangle dof to its edges
    w = np.einsum(
        "t,td,tkd->tk",
        mesh.area,
        pw.b_star_h,
        mesh.centroid[:, None, :] - pv,
    ) * scale
    rows.append(mesh.triangle_edges.ravel())
    cols.append(ne + tri_ids)
    data.append((w - div_coef).ravel())

    rows.append(ne + np.arange(nt))
    cols.append(ne + np.arange(nt))
    data.append(pw.gamma_h * mesh.area)

    matrix = _compress(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(data), (n, n)
    )
    rhs = np.zeros(n)
    rhs[ne:] = pw.f_h * mesh.area

    system = SparseSystem(
        matrix=matrix,
        rhs=rhs,
        ndofs=n,
        free=np.arange(n),
        kind="mixed",
        mesh=mesh,
    )
    if u_dirichlet is not None:
        system = apply_dirichlet(system, u_dirichlet, mesh)
    return system


def apply_dirichlet(system, u_dirichlet, mesh):
    """Fold Dirichlet data u_D into a system.

    Nonconforming systems: boundary-edge dofs are fixed to u_D(mid E) and
    eliminated (columns moved to the right-hand side). Mixed systems: all
    dofs stay free; the first equation's right-hand side receives the
    natural term -sigma |E| u_D(mid E) per boundary edge.
    """
    if system.mesh is not mesh:
        raise MeshMismatch("system was assembled on a different mesh")
    if system.dirichlet_applied:
        raise ValueError("Dirichlet data already applied to this system")
    bnd = mesh.boundary_edges
    mid = mesh.edge_mid[bnd]
    values = np.asarray(u_dirichlet(mid[:, 0], mid[:, 1]), dtype=float).ravel()

    if system.kind == "mixed":
        tri = np.where(
            mesh.edge_tris[bnd, 0] >= 0,
            mesh.edge_tris[bnd, 0],
            mesh.edge_tris[bnd, 1],
        )
        # sign of the canonical normal relative to the outward normal
        local = mesh.triangle_edges[tri] == bnd[:, None]
        sigma = mesh.triangle_edge_signs[tri][local].astype(float)
        rhs = system.rhs.copy()
        rhs[bnd] -= sigma * mesh.edge_length[bnd] * values
        return SparseSystem(
            matrix=system.matrix,
            rhs=rhs,
            ndofs=system.ndofs,
            free=system.free,
            kind="mixed",
            mesh=mesh,
            dirichlet_applied=True,
        )

    free = np.setdiff1d(np.arange(system.ndofs), bnd)
    a = system.matrix
    rhs = system.rhs[free] - a[np.ix_(free, bnd)] @ values
    return SparseSystem(
        matrix=a[np.ix_(free, free)].tocsc(),
        rhs=np.asarray(rhs).ravel(),
        ndofs=system.ndofs,
        free=free,
        fixed=bnd.copy(),
        fixed_values=values,
        kind="cr",
        mesh=mesh,
        dirichlet_applied=True,
    )
