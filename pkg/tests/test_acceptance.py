"""Acceptance gate: every numbered criterion as a dedicated test.

Each test prints one ``[criterion N] ... PASS/FAIL`` line. The expensive
benchmark runs are shared session fixtures; per-level diagnostics (the
equivalence cross-check and the elementwise divergence identity) are
collected while the runs execute.
"""

import itertools
import time

import numpy as np
import pytest

from afem.adapt import adaptive_loop, dorfler_mark, estimate_mixed
from afem.assembly import assemble_ncfem
from afem.mesh import build_mesh
from afem.problem import (
    CoefficientField,
    benchmark,
    constant_matrix,
    constant_scalar,
    constant_vector,
    lshape_start_mesh,
    project_p0,
    s_of_t,
)
from afem.refine import uniform_red_refine
from afem.solver import solve_mixed_via_equivalence, solve_ncfem

from oracles import (
    cr_local_stiffness,
    integrate_triangle,
    random_spd_matrix,
    random_triangle,
)

REF_UNIFORM_N = [68, 256, 992, 3904, 15488, 61696]
REF_UNIFORM_EU = [0.16656920, 0.08258681, 0.04098066, 0.02034316, 0.01011251, 0.00503450]
REF_UNIFORM_EP = [0.26578962, 0.19505767, 0.12772995, 0.08188794, 0.05215656, 0.03310369]
REF_UNIFORM_ETA = [1.01064602, 0.52572088, 0.27713363, 0.14883131, 0.08185377, 0.04621899]


def report(num, name, passed, detail=""):
    print(f"\n[criterion {num}] {name}: {'PASS' if passed else 'FAIL'} {detail}")
    assert passed, f"criterion {num} ({name}): {detail}"


class RunDiag:
    def __init__(self, history, div_resid, seconds):
        self.history = history
        self.div_resid = div_resid
        self.seconds = seconds


def run_with_diagnostics(instance, mode, theta, max_ndof):
    div_resid = []

    def spy(mesh, mixed, u_tilde, est_report, record):
        pw = project_p0(instance.field, mesh)
        target = pw.f_h - pw.gamma_h * mixed.u
        scale = max(1.0, float(np.abs(target).max()))
        div_resid.append(float(np.abs(mixed.div() - target).max()) / scale)

    start = time.perf_counter()
    history = adaptive_loop(
        instance, theta=theta, max_ndof=max_ndof, mode=mode, on_level=spy
    )
    return RunDiag(history, div_resid, time.perf_counter() - start)


@pytest.fixture(scope="module")
def uniform_lshape():
    return run_with_diagnostics(benchmark("lshape"), "uniform", 0.5, 65000)


@pytest.fixture(scope="module")
def adaptive_lshape():
    return run_with_diagnostics(benchmark("lshape"), "adaptive", 0.5, 55000)


@pytest.fixture(scope="module")
def uniform_crack():
    return run_with_diagnostics(benchmark("crack"), "uniform", 0.5, 35000)


@pytest.fixture(scope="module")
def adaptive_crack():
    return run_with_diagnostics(benchmark("crack"), "adaptive", 0.5, 50000)


@pytest.fixture(scope="module")
def eigen_runs():
    out = {}
    for gamma in (8.0, 9.63, 9.64):
        out[gamma] = run_with_diagnostics(
            benchmark("eigen_sweep", gamma=gamma), "uniform", 0.5, 16000
        )
    return out


def all_runs(*diags):
    for diag in diags:
        if isinstance(diag, dict):
            yield from diag.values()
        else:
            yield diag


def test_criterion_1_dof_counts(uniform_lshape):
    t0 = time.perf_counter()
    mesh = lshape_start_mesh()
    counted = []
    for _ in range(6):
        counted.append(mesh.ndof_mixed)
        mesh = uniform_red_refine(mesh)
    count_seconds = time.perf_counter() - t0
    ndofs = [r.ndof for r in uniform_lshape.history.records]
    ok = (
        counted == REF_UNIFORM_N
        and ndofs == REF_UNIFORM_N
        and count_seconds < 1.0
        and uniform_lshape.seconds < 60.0
    )
    report(
        1, "dof-count reproduction", ok,
        f"counted={counted}, solved={ndofs}, "
        f"count {count_seconds:.2f}s, run {uniform_lshape.seconds:.1f}s",
    )


def test_criterion_2_equivalence(
    uniform_lshape, adaptive_lshape, uniform_crack, adaptive_crack, eigen_runs
):
    worst = 0.0
    levels = 0
    for diag in all_runs(
        uniform_lshape, adaptive_lshape, uniform_crack, adaptive_crack, eigen_runs
    ):
        for rec in diag.history.records:
            worst = max(worst, *rec.equivalence)
            levels += 1
    report(
        2, "equivalence of the two mixed routes", worst <= 1e-8,
        f"max relative discrepancy {worst:.2e} over {levels} levels",
    )


def test_criterion_3_divergence_identity(
    uniform_lshape, adaptive_lshape, uniform_crack, adaptive_crack, eigen_runs
):
    worst = 0.0
    for diag in all_runs(
        uniform_lshape, adaptive_lshape, uniform_crack, adaptive_crack, eigen_runs
    ):
        if diag.div_resid:
            worst = max(worst, max(diag.div_resid))
    report(
        3, "elementwise divergence identity", worst <= 1e-12,
        f"max scaled residual {worst:.2e}",
    )


def test_criterion_4_uniform_lshape(uniform_lshape):
    recs = uniform_lshape.history.records
    rate_p = [recs[-2].rate_p, recs[-1].rate_p]
    rate_u = [recs[-2].rate_u, recs[-1].rate_u]
    rates_ok = all(0.29 <= r <= 0.37 for r in rate_p) and all(
        0.47 <= r <= 0.53 for r in rate_u
    )
    abs_ok = True
    details = []
    for rec, eu, ep, eta in zip(recs, REF_UNIFORM_EU, REF_UNIFORM_EP, REF_UNIFORM_ETA):
        for got, ref, tag in ((rec.e_u, eu, "e_u"), (rec.e_p, ep, "e_p"),
                              (rec.eta, eta, "eta")):
            rel = abs(got - ref) / ref
            if rel > 0.20:
                abs_ok = False
                details.append(f"{tag}@{rec.ndof}: {got:.6f} vs {ref:.6f}")
    report(
        4, "uniform L-shape reference values", rates_ok and abs_ok,
        f"CR(e_p)={[f'{r:.4f}' for r in rate_p]}, "
        f"CR(e_u)={[f'{r:.4f}' for r in rate_u]}"
        + (f", deviations: {details}" if details else ", all values within 20%"),
    )


def test_criterion_5_adaptive_lshape(uniform_lshape, adaptive_lshape):
    recs = adaptive_lshape.history.records
    rates = [r.rate_p for r in recs if r.ndof > 5000 and not np.isnan(r.rate_p)]
    mean_rate = float(np.mean(rates))
    uni_final = uniform_lshape.history.records[-1]
    ada_final = recs[-1]
    ratio = uni_final.e_p / ada_final.e_p
    ok = 0.43 <= mean_rate <= 0.57 and ratio >= 2.0
    report(
        5, "adaptive L-shape rates and gain", ok,
        f"mean CR(e_p)={mean_rate:.4f} over Ndof>5000, "
        f"e_p uniform@{uni_final.ndof} / adaptive@{ada_final.ndof} = {ratio:.2f}",
    )


def test_criterion_6_crack_rates(uniform_crack, adaptive_crack):
    uni = uniform_crack.history.records
    ada = adaptive_crack.history.records
    uni_rate = uni[-1].rate_p
    ada_rates = [r.rate_p for r in ada if r.ndof > 5000 and not np.isnan(r.rate_p)]
    ada_mean = float(np.mean(ada_rates))
    ok = 0.20 <= uni_rate <= 0.30 and 0.43 <= ada_mean <= 0.57
    report(
        6, "crack benchmark rates", ok,
        f"uniform CR(e_p)={uni_rate:.4f}, adaptive mean CR(e_p)={ada_mean:.4f}",
    )


def test_criterion_7_efficiency_index(
    uniform_lshape, adaptive_lshape, uniform_crack, adaptive_crack
):
    values = []
    for diag in (uniform_lshape, adaptive_lshape, uniform_crack, adaptive_crack):
        for rec in diag.history.records:
            if rec.ndof >= 1000:
                values.append(rec.efficiency)
    in_range = [1.5 <= v <= 4.5 for v in values]
    in_core = [2.0 <= v <= 3.5 for v in values]
    ok = all(in_range) and sum(in_core) > len(values) / 2
    report(
        7, "efficiency index windows", ok,
        f"eta/e_p over {len(values)} levels: min {min(values):.3f}, "
        f"max {max(values):.3f}, in [1.5,4.5]: {sum(in_range)}, "
        f"in [2,3.5]: {sum(in_core)}",
    )


def test_criterion_8_eigen_sweep_sensitivity(eigen_runs):
    base = eigen_runs[8.0].history.records
    details = []
    coarse_ok = True
    shrink_ok = True
    for gamma in (9.63, 9.64):
        recs = eigen_runs[gamma].history.records
        n = min(len(base), len(recs))
        gaps = [recs[k].eta / base[k].eta for k in range(n)]
        details.append(f"gamma={gamma}: gaps={[f'{g:.2f}' for g in gaps]}")
        if gaps[0] < 5.0:
            coarse_ok = False
        if any(b > a for a, b in zip(gaps, gaps[1:])):
            shrink_ok = False
    report(
        8, "eigen-sweep sensitivity (coarse 5x gap, shrinking)",
        coarse_ok and shrink_ok, "; ".join(details),
    )


def test_criterion_9_property_suites():
    failures = []

    # patch tests to 1e-10
    square = build_mesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
    )
    field = CoefficientField(
        a=constant_matrix(np.eye(2)),
        b=constant_vector((0.0, 0.0)),
        gamma=constant_scalar(0.0),
        f=constant_scalar(0.0),
        u_dirichlet=lambda x, y: np.asarray(x, dtype=float),
    )
    pw = project_p0(field, square)
    mixed, _ = solve_mixed_via_equivalence(square, pw, u_dirichlet=field.u_dirichlet)
    if np.abs(mixed.u - square.centroid[:, 0]).max() > 1e-10:
        failures.append("mixed patch test u")
    flux = mixed.flux_at(square.centroid[:, None, :])[:, 0, :]
    if np.abs(flux - [-1.0, 0.0]).max() > 1e-10:
        failures.append("mixed patch test p")
    cr_field = CoefficientField(
        a=constant_matrix(np.eye(2)),
        b=constant_vector((0.0, 0.0)),
        gamma=constant_scalar(0.0),
        f=constant_scalar(0.0),
        u_dirichlet=lambda x, y: np.asarray(x, dtype=float)
        + np.asarray(y, dtype=float),
    )
    sol = solve_ncfem(uniform_red_refine(square), cr_field)
    mesh = sol.mesh
    if np.abs(sol.edge_values - mesh.edge_mid.sum(axis=1)).max() > 1e-10:
        failures.append("CR patch test")

    # Doerfler minimality, exhaustive for n <= 12
    rng = np.random.default_rng(12)
    for n in range(1, 13):
        eta_sq = rng.uniform(0, 1, n)
        theta = rng.uniform(0.1, 1.0)
        marked = dorfler_mark(eta_sq, theta)
        target = theta * eta_sq.sum()
        best = min(
            len(sub)
            for k in range(n + 1)
            for sub in itertools.combinations(range(n), k)
            if eta_sq[list(sub)].sum() >= target - 1e-12
        )
        if len(marked.indices) != best:
            failures.append(f"doerfler minimality n={n}")
            break

    # local CR stiffness against the quadrature oracle to 1e-13
    for _ in range(10):
        tri = random_triangle(rng)
        a = random_spd_matrix(rng)
        b = rng.uniform(-2, 2, 2)
        gamma = rng.uniform(-3, 3)
        m1 = build_mesh(tri, np.array([[0, 1, 2]]))
        system = assemble_ncfem(
            m1,
            CoefficientField(
                a=constant_matrix(a),
                b=constant_vector(b),
                gamma=constant_scalar(gamma),
                f=constant_scalar(0.0),
                u_dirichlet=constant_scalar(0.0),
            ),
        )
        te = m1.triangle_edges[0]
        local = system.matrix.toarray()[np.ix_(te, te)]
        oracle = cr_local_stiffness(tri, a, b, gamma)
        if np.abs(local - oracle).max() > 1e-13 * np.abs(oracle).max():
            failures.append("CR stiffness oracle")
            break

    # s_of_t against the quadrature oracle on 100 random SPD instances
    for _ in range(100):
        tri = random_triangle(rng)
        a_inv = np.linalg.inv(random_spd_matrix(rng))
        c = tri.mean(axis=0)

        def integrand(x, y):
            dx, dy = x - c[0], y - c[1]
            return (
                a_inv[0, 0] * dx**2
                + (a_inv[0, 1] + a_inv[1, 0]) * dx * dy
                + a_inv[1, 1] * dy**2
            )

        expected = integrate_triangle(integrand, tri, order=8)
        if abs(s_of_t(tri, a_inv) - expected) > 1e-13 * abs(expected):
            failures.append("s_of_t oracle")
            break

    # estimator vanishes on the zero problem
    zero_field = CoefficientField(
        a=constant_matrix(np.eye(2)),
        b=constant_vector((0.0, 0.0)),
        gamma=constant_scalar(0.0),
        f=constant_scalar(0.0),
        u_dirichlet=constant_scalar(0.0),
    )
    mesh = lshape_start_mesh()
    pw0 = project_p0(zero_field, mesh)
    mixed0, u0 = solve_mixed_via_equivalence(mesh, pw0)
    if estimate_mixed(mesh, mixed0, u0, zero_field, pw0).eta != 0.0:
        failures.append("estimator zero problem")

    report(
        9, "property suites", not failures,
        "all sub-checks green" if not failures else f"failed: {failures}",
    )
