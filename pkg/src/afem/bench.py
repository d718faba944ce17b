"""Error norms, convergence rates, experiment orchestration, CSV output.

Rates follow the dof-based definition CR(e) = log(e_prev/e_cur) /
log(N_cur/N_prev). Error integrals use the degree-5 rule with three levels
of dyadic subdivision on triangles touching the singular vertex, which
under-resolves nothing at the four-digit level the tables need.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import quadrature
from .errors import ConfigError, InsufficientLevels, NoExactSolution

SINGULAR_QUAD_DEPTH = 3

CSV_HEADER = "level,ndof,e_u,rate_u,e_p,rate_p,e_div,eta,rate_eta,c_rel,efficiency"


@dataclass
class LevelRecord:
    level: int
    ndof: int
    e_u: float = math.nan
    e_p: float = math.nan
    e_div: float = math.nan
    eta: float = math.nan
    rate_u: float = math.nan
    rate_p: float = math.nan
    rate_eta: float = math.nan
    c_rel: float = math.nan
    efficiency: float = math.nan
    equivalence: tuple = (math.nan, math.nan)

    def finalize(self):
        """Fill the derived ratio columns from the primary ones."""
        if not math.isnan(self.e_p) and self.eta > 0:
            h_div = math.hypot(self.e_p, self.e_div)
            self.c_rel = (h_div + self.e_u) / self.eta
            self.efficiency = self.eta / self.e_p
        return self


@dataclass
class ConvergenceHistory:
    problem: str = ""
    mode: str = ""
    theta: float = math.nan
    params: dict = field(default_factory=dict)
    records: List[LevelRecord] = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def ndofs(self):
        return [r.ndof for r in self.records]

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self):
        lines = [CSV_HEADER]
        for r in self.records:
            cells = [str(r.level), str(r.ndof)] + [
                _fmt(v)
                for v in (
                    r.e_u, r.rate_u, r.e_p, r.rate_p, r.e_div,
                    r.eta, r.rate_eta, r.c_rel, r.efficiency,
                )
            ]
            lines.append(",".join(cells))
        if self.failure:
            lines.append(f"# aborted: {self.failure}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError("unrecognized convergence CSV header")
        hist = cls()
        for ln in lines[1:]:
            if ln.startswith("#"):
                hist.failure = ln.lstrip("# ").removeprefix("aborted: ")
                continue
            cells = ln.split(",")
            vals = [_parse(c) for c in cells[2:]]
            hist.records.append(
                LevelRecord(
                    level=int(cells[0]),
                    ndof=int(cells[1]),
                    e_u=vals[0], rate_u=vals[1], e_p=vals[2], rate_p=vals[3],
                    e_div=vals[4], eta=vals[5], rate_eta=vals[6],
                    c_rel=vals[7], efficiency=vals[8],
                )
            )
        return hist

    def summary_table(self):
        """Aligned text table mirroring the convergence tables."""
        cols = ["N", "e_u", "CR(e_u)", "e_p", "CR(e_p)", "eta", "CR(eta)",
                "C_rel", "eta/e_p"]
        rows = []
        for r in self.records:
            rows.append([
                str(r.ndof), _tab(r.e_u), _tab(r.rate_u), _tab(r.e_p),
                _tab(r.rate_p), _tab(r.eta), _tab(r.rate_eta),
                _tab(r.c_rel), _tab(r.efficiency),
            ])
        widths = [max(len(c), *(len(row[i]) for row in rows)) if rows else len(c)
                  for i, c in enumerate(cols)]
        out = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
        for row in rows:
            out.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        if self.failure:
            out.append(f"aborted: {self.failure}")
        return "\n".join(out)


def _fmt(v):
    return "" if (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _parse(cell):
    return math.nan if cell == "" else float(cell)


def _tab(v):
    return "-" if (isinstance(v, float) and math.isnan(v)) else f"{v:.8f}"


def _singular_mask(mesh, point, tol=1e-12):
    if point is None:
        return np.zeros(mesh.num_triangles, dtype=bool)
    pv = mesh.triangle_vertices()
    return (np.abs(pv - np.asarray(point)).max(axis=2) < tol).any(axis=1)


def _rotate_singular_first(verts, point):
    """Reorder each triangle so the singular vertex is local vertex 0."""
    out = verts.copy()
    hit = np.abs(verts - np.asarray(point)).max(axis=2) < 1e-12
    for m in range(len(verts)):
        k = int(np.argmax(hit[m]))
        out[m] = np.roll(verts[m], -k, axis=0)
    return out


def _split_integrate(fn, mesh, singular_point):
    """Elementwise integrals of fn with dyadic refinement at the singularity."""
    verts = mesh.triangle_vertices()
    vals = np.zeros(mesh.num_triangles)
    sing = _singular_mask(mesh, singular_point)
    reg = ~sing
    if reg.any():
        vals[reg] = quadrature.integrate(fn, verts[reg], mesh.area[reg])
    if sing.any():
        rot = _rotate_singular_first(verts[sing], singular_point)
        vals[sing] = quadrature.integrate_dyadic(
            fn, rot, mesh.area[sing], SINGULAR_QUAD_DEPTH
        )
    return vals


def error_norms(mixed, instance, mesh):
    """L2 errors (e_u, e_p, e_div) of a mixed solution against the exact one.

    e_div compares the elementwise divergence f_h - gamma_h u_M with the
    analytic div p = f - gamma u.
    """
    if instance.exact is None:
        raise NoExactSolution(f"benchmark {instance.name!r} has no exact solution")
    return tuple(
        float(np.sqrt(_per_element(mesh, mixed, instance, which).sum()))
        for which in ("u", "p", "div")
    )


def _per_element(mesh, mixed, instance, which):
    ex = instance.exact
    cf = instance.field
    verts = mesh.triangle_vertices()
    sing = _singular_mask(mesh, instance.singular_point)
    out = np.zeros(mesh.num_triangles)

    def block(idx, tri_verts, areas, dyadic):
        consts = mixed.flux_const[idx]
        slopes = mixed.flux_slope[idx]
        u_m = mixed.u[idx]
        div_m = 2.0 * slopes
        m = len(idx)

        def integrand(x, y):
            per = np.size(x) // m
            if which == "u":
                return (ex.u(x, y) - np.repeat(u_m, per)) ** 2
            if which == "p":
                pts = np.stack([x, y], axis=-1)
                p_m = np.repeat(consts, per, axis=0) + np.repeat(slopes, per)[
                    :, None
                ] * pts
                diff = ex.p(x, y) - p_m
                return np.einsum("nd,nd->n", diff, diff)
            div_exact = cf.f(x, y) - cf.gamma(x, y) * ex.u(x, y)
            return (div_exact - np.repeat(div_m, per)) ** 2

        if dyadic:
            return quadrature.integrate_dyadic(
                integrand, tri_verts, areas, SINGULAR_QUAD_DEPTH
            )
        return quadrature.integrate(integrand, tri_verts, areas)

    reg = np.flatnonzero(~sing)
    if len(reg):
        out[reg] = block(reg, verts[reg], mesh.area[reg], dyadic=False)
    sng = np.flatnonzero(sing)
    if len(sng):
        rot = _rotate_singular_first(verts[sng], instance.singular_point)
        out[sng] = block(sng, rot, mesh.area[sng], dyadic=True)
    return out


def convergence_rate(history):
    """Fill the CR(e) columns: log(e_prev/e_cur) / log(N_cur/N_prev)."""
    if len(history.records) < 2:
        raise InsufficientLevels("need at least two levels for rates")
    for prev, cur in zip(history.records, history.records[1:]):
        growth = math.log(cur.ndof / prev.ndof)
        for err, rate in (("e_u", "rate_u"), ("e_p", "rate_p"), ("eta", "rate_eta")):
            e0, e1 = getattr(prev, err), getattr(cur, err)
            if e0 > 0 and e1 > 0 and not (math.isnan(e0) or math.isnan(e1)):
                setattr(cur, rate, math.log(e0 / e1) / growth)
    return history


def sensitivity_event(history):
    """Flag the near-eigenvalue signatures of a reaction sweep run: a
    singular factorization, an estimator that grows under refinement, or a
    coarse-level estimator spike."""
    if history.failure:
        return history.failure
    etas = [r.eta for r in history.records]
    if len(etas) >= 2 and etas[-1] > etas[0]:
        return (
            f"large-error: estimator grew under refinement"
            f" ({etas[0]:.3g} -> {etas[-1]:.3g})"
        )
    if len(etas) >= 2 and etas[0] >= 5.0 * etas[1]:
        return f"large-error: coarse-level estimator spike ({etas[0]:.3g} vs {etas[1]:.3g})"
    return None


# -- experiment orchestration ------------------------------------------------


@dataclass
class ExperimentConfig:
    problem: str
    mode: str = "uniform"
    theta: float = 0.5
    max_ndof: int = 50000
    gamma: Optional[float] = None  # eigen_sweep only; None runs the default grid
    out: str = "."
    mesh_path: Optional[str] = None
    dump_systems: bool = False

    def validate(self):
        if self.problem not in ("lshape", "crack", "eigen_sweep"):
            from .problem import _REGISTRY

            if self.problem not in _REGISTRY:
                raise ConfigError(f"unknown problem {self.problem!r}")
        if self.mode not in ("uniform", "adaptive"):
            raise ConfigError(f"mode must be uniform|adaptive, got {self.mode!r}")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if self.max_ndof < 1:
            raise ConfigError("max-ndof must be positive")
        if self.gamma is not None and not math.isfinite(self.gamma):
            raise ConfigError("gamma must be finite")
        return self


@dataclass
class ExperimentResult:
    histories: dict
    csv_paths: list
    events: dict
    exit_code: int


def run_experiment(config, echo=print):
    """Execute one experiment configuration and emit CSV plus tables.

    Returns an :class:`ExperimentResult`; exit_code 2 flags a run that hit
    a singular factorization (partial CSV still written).
    """
    import os

    from . import adapt
    from .mesh import read_mesh_file
    from .problem import DEFAULT_GAMMA_SWEEP, benchmark

    config.validate()
    os.makedirs(config.out, exist_ok=True)
    start_mesh = None
    if config.mesh_path:
        start_mesh = read_mesh_file(config.mesh_path)

    if config.problem == "eigen_sweep":
        gammas = [config.gamma] if config.gamma is not None else list(
            DEFAULT_GAMMA_SWEEP
        )
    else:
        gammas = [None]

    histories = {}
    events = {}
    csv_paths = []
    singular = False
    for g in gammas:
        params = {} if g is None else {"gamma": g}
        instance = benchmark(config.problem, **params)
        on_level = (
            _system_dumper(config.out, instance) if config.dump_systems else None
        )
        hist = adapt.adaptive_loop(
            instance,
            theta=config.theta,
            max_ndof=config.max_ndof,
            mode=config.mode,
            start_mesh=start_mesh,
            on_level=on_level,
        )
        key = config.problem if g is None else f"{config.problem}_gamma{g:g}"
        histories[key] = hist
        event = sensitivity_event(hist) if config.problem == "eigen_sweep" else (
            hist.failure
        )
        if event:
            events[key] = event
        singular = singular or bool(hist.failure)
        path = os.path.join(config.out, f"{key}_{config.mode}.csv")
        with open(path, "w") as fh:
            fh.write(hist.to_csv())
        csv_paths.append(path)
        with open(path[:-4] + ".gp", "w") as fh:
            fh.write(_gnuplot_script(os.path.basename(path)))
        echo(f"== {key} ({config.mode}, theta={config.theta}) ==")
        echo(hist.summary_table())
        if event:
            echo(f"event: {event}")
        echo("")

    if config.problem == "eigen_sweep":
        path = os.path.join(config.out, f"eigen_sweep_{config.mode}_combined.csv")
        with open(path, "w") as fh:
            fh.write(_combined_sweep_csv(histories))
        csv_paths.append(path)

    return ExperimentResult(
        histories=histories,
        csv_paths=csv_paths,
        events=events,
        exit_code=2 if singular else 0,
    )


def _gnuplot_script(csv_name):
    """Companion gnuplot script: convergence history on log-log axes."""
    stem = csv_name[:-4]
    return (
        "set datafile separator ','\n"
        "set logscale xy\n"
        "set xlabel 'Ndof'\n"
        "set key bottom left\n"
        f"set title '{stem}'\n"
        f"plot '{csv_name}' using 2:3 with linespoints title 'e_u', \\\n"
        f"     '{csv_name}' using 2:5 with linespoints title 'e_p', \\\n"
        f"     '{csv_name}' using 2:8 with linespoints title 'eta', \\\n"
        f"     '{csv_name}' using 2:10 with linespoints title 'C_rel'\n"
    )


def _combined_sweep_csv(histories):
    """One row per level: ndof plus the estimator of every sweep value.

    The exact solution of the sweep problem is unknown, so the C_rel
    columns of the figures are replaced by the estimator columns here.
    """
    keys = sorted(histories)
    depth = max(len(histories[k].records) for k in keys)
    header = ["level", "ndof"] + [f"eta_{k.split('gamma')[-1]}" for k in keys]
    lines = [",".join(header)]
    for lev in range(depth):
        ndof = ""
        cells = []
        for k in keys:
            recs = histories[k].records
            if lev < len(recs):
                ndof = str(recs[lev].ndof)
                cells.append(_fmt(recs[lev].eta))
            else:
                cells.append("")
        lines.append(",".join([str(lev), ndof] + cells))
    return "\n".join(lines) + "\n"


def _system_dumper(out_dir, instance):
    """on_level callback writing both assembled systems per level."""
    import os

    from .assembly import assemble_mixed_direct, assemble_modified_ncfem
    from .problem import project_p0

    sysdir = os.path.join(out_dir, "systems")
    os.makedirs(sysdir, exist_ok=True)

    def dump(mesh, mixed, u_tilde, report, record):
        pw = project_p0(instance.field, mesh)
        u_d = instance.field.u_dirichlet
        assemble_modified_ncfem(mesh, pw, u_dirichlet=u_d).dump_triplets(
            os.path.join(sysdir, f"level{record.level}_modified_nc.txt")
        )
        assemble_mixed_direct(mesh, pw, u_dirichlet=u_d).dump_triplets(
            os.path.join(sysdir, f"level{record.level}_mixed.txt")
        )

    return dump
