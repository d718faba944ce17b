"""A posteriori estimation, marking, and the adaptive driver.

The mixed estimator follows the reliability bound for the saddle-point
solution: data oscillation of f - gamma u_M against its centroid mean, the
mesh-weighted volume term, a nonconformity term in which the minimum over
conforming functions is bounded through the nodal average of -u~_CR, and
two coefficient-approximation terms. The driver runs
solve / estimate / mark / refine, cross-checking the reconstruction
against the direct saddle solve on every level.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import bench, quadrature
from .errors import BadTheta, EquivalenceViolation, MeshMismatch, SingularMatrix
from .problem import project_p0
from .refine import rgb_refine, uniform_red_refine
from .solver import (
    equivalence_residual,
    solve_mixed_direct,
    solve_mixed_via_equivalence,
)

EQUIVALENCE_TOL = 1e-8  # per-level cross-check of the two mixed routes


@dataclass
class EstimatorReport:
    """Named per-triangle squared contributions of an error estimator.

    ``eta_terms`` lists the terms that constitute the estimator proper:
    eta^2 = sum_T eta_T^2 with eta_T^2 the elementwise sum over those
    terms, which is the quantity the tables report and marking consumes.
    The remaining entries of ``term_sq`` (data oscillation and coefficient
    approximation) belong to the full reliability bound and are reported
    alongside; see :attr:`total_bound`.
    """

    mesh: object
    term_sq: dict
    eta_terms: tuple = ()
    diagnostics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not self.eta_terms:
            self.eta_terms = tuple(self.term_sq)

    @property
    def per_triangle_sq(self):
        return sum(self.term_sq[k] for k in self.eta_terms)

    @property
    def term_norms(self):
        return {k: float(np.sqrt(v.sum())) for k, v in self.term_sq.items()}

    @property
    def eta(self):
        return float(np.sqrt(self.per_triangle_sq.sum()))

    @property
    def total_bound(self):
        """Estimator plus all data terms (the full reliability sum)."""
        norms = self.term_norms
        extra = sum(v for k, v in norms.items() if k not in self.eta_terms)
        return self.eta + extra


@dataclass
class MarkedSet:
    indices: np.ndarray
    achieved_fraction: float


def average_cr(u_cr):
    """Nodal averaging of a Crouzeix-Raviart function onto P1 vertices.

    Each vertex receives the arithmetic mean of the traces of the adjacent
    triangles; boundary vertices are treated like interior ones.
    """
    mesh = u_cr.mesh
    traces = u_cr.vertex_traces()
    sums = np.zeros(mesh.num_vertices)
    counts = np.zeros(mesh.num_vertices)
    np.add.at(sums, mesh.triangles.ravel(), traces.ravel())
    np.add.at(counts, mesh.triangles.ravel(), 1.0)
    return sums / np.maximum(counts, 1.0)


def grad_p1(mesh, nodal):
    """Broken gradient of a P1 nodal function, shape (T, 2)."""
    vals = nodal[mesh.triangles]
    return np.einsum("tk,tkd->td", vals, mesh.grad_bary())


def _affine_sq_l2(mesh, value_at_mids):
    """Elementwise int_T |w|^2 for affine w given at the 3 edge midpoints."""
    return mesh.area / 3.0 * np.einsum("tqd,tqd->t", value_at_mids, value_at_mids)


def estimate_mixed(mesh, mixed, u_cr_tilde, coeffs, pw, delta=None):
    """Residual estimator for the mixed solution.

    Terms per triangle: osc ||(1-Pi0)(f - gamma u_M)||, volume
    ||h_T (A_h^-1 p_M + u_M b*_h)||, nonconformity
    ||A_h^-1 p_M + u_M b*_h - grad v|| with v = -average(u~_CR), and
    coefficient terms ||(A^-1 - A_h^-1) p_M|| and ||u_M (b* - b*_h)||.
    ``delta`` additionally reports the h^delta-weighted nonconformity
    diagnostic (regularity-refined bound); never used for marking.
    """
    if mixed.mesh is not mesh or u_cr_tilde.mesh is not mesh or pw.mesh is not mesh:
        raise MeshMismatch("estimator inputs live on different meshes")
    pv = mesh.triangle_vertices()
    mids = 0.5 * (pv + np.roll(pv, -1, axis=1))  # (T, 3, 2)

    # oscillation of f - gamma u_M against its centroid value, degree 5
    pts = quadrature.physical_points(pv, quadrature.DEGREE5)
    x, y = pts[..., 0].ravel(), pts[..., 1].ravel()
    g = np.asarray(coeffs.f(x, y), dtype=float).reshape(pts.shape[:2]) - np.asarray(
        coeffs.gamma(x, y), dtype=float
    ).reshape(pts.shape[:2]) * mixed.u[:, None]
    cx, cy = mesh.centroid[:, 0], mesh.centroid[:, 1]
    g0 = (
        np.asarray(coeffs.f(cx, cy), dtype=float).ravel()
        - np.asarray(coeffs.gamma(cx, cy), dtype=float).ravel() * mixed.u
    )
    osc_sq = mesh.area * (((g - g0[:, None]) ** 2) @ quadrature.DEGREE5[1])

    # r = A_h^-1 p_M + u_M b*_h, affine per triangle; exact on edge midpoints
    p_at_mids = mixed.flux_at(mids)
    r = (
        np.einsum("tde,tqe->tqd", pw.a_h_inv, p_at_mids)
        + (mixed.u[:, None] * pw.b_star_h)[:, None, :]
    )
    volume_sq = mesh.h_t**2 * _affine_sq_l2(mesh, r)

    v_nodal = -average_cr(u_cr_tilde)
    gv = grad_p1(mesh, v_nodal)
    nonconf_sq = _affine_sq_l2(mesh, r - gv[:, None, :])

    # coefficient approximation terms, degree-2 rule on the midpoints
    xm, ym = mids[..., 0].ravel(), mids[..., 1].ravel()
    a_pts = np.asarray(coeffs.a(xm, ym), dtype=float).reshape(-1, 3, 2, 2)
    a_inv_pts = np.linalg.inv(a_pts)
    diff_a = np.einsum(
        "tqde,tqe->tqd", a_inv_pts - pw.a_h_inv[:, None, :, :], p_at_mids
    )
    coeff_a_sq = _affine_sq_l2(mesh, diff_a)

    b_pts = np.asarray(coeffs.b(xm, ym), dtype=float).reshape(-1, 3, 2)
    b_star_pts = np.einsum("tqde,tqe->tqd", a_inv_pts, b_pts)
    diff_b = mixed.u[:, None, None] * (b_star_pts - pw.b_star_h[:, None, :])
    coeff_b_sq = _affine_sq_l2(mesh, diff_b)

    resid = pw.f_h - pw.gamma_h * mixed.u
    diagnostics = {
        "norm_h2_fh": float(np.sqrt(np.sum(mesh.area * (mesh.h_t**2 * pw.f_h) ** 2))),
        "norm_h_resid": float(np.sqrt(np.sum(mesh.area * (mesh.h_t * resid) ** 2))),
    }
    if delta is not None:
        diagnostics["norm_hdelta_nonconf"] = float(
            np.sqrt(np.sum(mesh.h_t ** (2.0 * delta) * nonconf_sq))
        )
    return EstimatorReport(
        mesh=mesh,
        term_sq={
            "osc": osc_sq,
            "volume": volume_sq,
            "nonconformity": nonconf_sq,
            "coeff_a": coeff_a_sq,
            "coeff_b": coeff_b_sq,
        },
        eta_terms=("volume", "nonconformity"),
        diagnostics=diagnostics,
    )


def estimate_nc(mesh, u_cr, coeffs):
    """Explicit residual estimator for the plain nonconforming solution.

    Volume term ||h_T (f - gamma u_CR - div p_CR)|| plus the interior-edge
    normal jump term ||h_E^(1/2) [p_CR] . nu_E||, each edge contribution
    split half-half onto its two triangles. The broken flux uses the
    centroid coefficient values, p_CR = -(A_h grad u_CR + u_CR b_h), whose
    elementwise divergence is -b_h . grad u_CR.
    """
    if u_cr.mesh is not mesh:
        raise MeshMismatch("solution lives on a different mesh")
    pw = project_p0(coeffs, mesh)
    grads = u_cr.gradients()
    pv = mesh.triangle_vertices()

    pts = quadrature.physical_points(pv, quadrature.DEGREE5)
    x, y = pts[..., 0].ravel(), pts[..., 1].ravel()
    bary = quadrature.DEGREE5[0]
    traces = u_cr.vertex_traces()
    u_at = np.einsum("qk,tk->tq", bary, traces)
    fv = np.asarray(coeffs.f(x, y), dtype=float).reshape(u_at.shape)
    gv = np.asarray(coeffs.gamma(x, y), dtype=float).reshape(u_at.shape)
    div_p = -np.einsum("td,td->t", pw.b_h, grads)
    resid = fv - gv * u_at - div_p[:, None]
    volume_sq = mesh.h_t**2 * mesh.area * ((resid**2) @ quadrature.DEGREE5[1])

    # normal jumps of the affine broken flux, 2-point Gauss per edge (exact)
    inner = mesh.interior_edges
    tp, tm = mesh.edge_tris[inner, 0], mesh.edge_tris[inner, 1]
    nu = mesh.edge_normal[inner]
    va = mesh.vertices[mesh.edges[inner, 0]]
    vb = mesh.vertices[mesh.edges[inner, 1]]
    jump_sq_edge = np.zeros(len(inner))
    for s, w in zip(*quadrature.GAUSS2_1D):
        pt = (1 - s) * va + s * vb
        val_p = _p_cr_at(pw, grads, u_cr, tp, pt)
        val_m = _p_cr_at(pw, grads, u_cr, tm, pt)
        jump = np.einsum("ed,ed->e", val_p - val_m, nu)
        jump_sq_edge += w * jump**2
    h_e = mesh.edge_length[inner]
    jump_sq_edge *= h_e * h_e  # h_E weight times edge measure |E|

    jump_sq = np.zeros(mesh.num_triangles)
    np.add.at(jump_sq, tp, 0.5 * jump_sq_edge)
    np.add.at(jump_sq, tm, 0.5 * jump_sq_edge)
    return EstimatorReport(
        mesh=mesh, term_sq={"volume": volume_sq, "jump": jump_sq}
    )


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _p_cr_at(pw, grads, u_cr, tris, points):
    """-(A_h grad u_CR + u_CR b_h) on the given triangles at (E, 2) points."""
    mesh = u_cr.mesh
    pv = mesh.vertices[mesh.triangles[tris]]
    det = _cross2(pv[:, 1] - pv[:, 0], pv[:, 2] - pv[:, 0])
    l1 = _cross2(points - pv[:, 0], pv[:, 2] - pv[:, 0]) / det
    l2 = _cross2(pv[:, 1] - pv[:, 0], points - pv[:, 0]) / det
    lam = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
    u_val = np.einsum("ek,ek->e", lam, u_cr.vertex_traces()[tris])
    return -(
        np.einsum("eij,ej->ei", pw.a_h[tris], grads[tris])
        + u_val[:, None] * pw.b_h[tris]
    )


def dorfler_mark(eta_sq_per_triangle, theta):
    """Greedy bulk marking: smallest prefix of the descending-sorted
    contributions reaching the theta fraction; ties broken by index."""
    if not (0.0 < theta <= 1.0):
        raise BadTheta(f"theta must lie in (0, 1], got {theta}")
    eta_sq = np.asarray(eta_sq_per_triangle, dtype=float)
    total = eta_sq.sum()
    if total <= 0.0:
        return MarkedSet(indices=np.empty(0, dtype=int), achieved_fraction=1.0)
    order = np.lexsort((np.arange(len(eta_sq)), -eta_sq))
    accum = np.cumsum(eta_sq[order])
    k = int(np.searchsorted(accum, theta * total - 1e-14 * total)) + 1
    chosen = order[:k]
    return MarkedSet(
        indices=np.sort(chosen),
        achieved_fraction=float(accum[k - 1] / total),
    )


def adaptive_loop(
    instance,
    theta=0.5,
    max_ndof=50000,
    mode="adaptive",
    start_mesh=None,
    on_level=None,
):
    """SOLVE / ESTIMATE / MARK / REFINE until the dof budget is exhausted.

    On every level the mixed solution is obtained by reconstruction from
    the modified nonconforming solve and cross-checked against the direct
    saddle-point solve; disagreement beyond EQUIVALENCE_TOL aborts. A
    singular factorization ends the run early with the partial history
    recorded (indefinite problems on coarse meshes).
    """
    if mode not in ("adaptive", "uniform"):
        raise ValueError(f"mode must be 'adaptive' or 'uniform', got {mode!r}")
    mesh = start_mesh if start_mesh is not None else instance.start_mesh()
    history = bench.ConvergenceHistory(
        problem=instance.name, mode=mode, theta=theta, params=dict(instance.params)
    )
    level = 0
    while mesh.ndof_mixed <= max_ndof:
        try:
            pw = project_p0(instance.field, mesh)
            mixed, u_tilde = solve_mixed_via_equivalence(
                mesh, pw, u_dirichlet=instance.field.u_dirichlet
            )
            direct = solve_mixed_direct(
                mesh, pw, u_dirichlet=instance.field.u_dirichlet
            )
        except SingularMatrix as exc:
            history.failure = f"SingularMatrix at level {level}: {exc}"
            break
        rel_p, rel_u = equivalence_residual(direct, mixed)
        if max(rel_p, rel_u) > EQUIVALENCE_TOL:
            raise EquivalenceViolation(
                f"level {level}: routes differ by ({rel_p:.2e}, {rel_u:.2e})"
            )
        report = estimate_mixed(mesh, mixed, u_tilde, instance.field, pw)
        record = bench.LevelRecord(
            level=level,
            ndof=mesh.ndof_mixed,
            eta=report.eta,
            equivalence=(rel_p, rel_u),
        )
        if instance.exact is not None:
            record.e_u, record.e_p, record.e_div = bench.error_norms(
                mixed, instance, mesh
            )
        record.finalize()
        history.records.append(record)
        if on_level is not None:
            on_level(mesh, mixed, u_tilde, report, record)
        if mode == "uniform":
            mesh = uniform_red_refine(mesh)
        else:
            marked = dorfler_mark(report.per_triangle_sq, theta)
            if len(marked.indices) == 0:
                break  # estimator vanished; nothing to refine
            mesh = rgb_refine(mesh, marked.indices)
        level += 1
    if len(history.records) >= 2:
        bench.convergence_rate(history)
    return history
