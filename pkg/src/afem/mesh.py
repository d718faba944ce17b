"""Triangulations of polygonal (possibly slit) domains.

Conventions
-----------
* triangles are vertex index triples listed counterclockwise;
* local edge k of a triangle is the edge opposite local vertex k;
* the canonical form of an edge is (min index, max index) and its unit
  normal nu_E is the canonical direction rotated 90 degrees
  counterclockwise, so jumps across interior edges are orientation-free;
* slit domains duplicate the vertices along the slit, which keeps every
  boundary edge in exactly one triangle.

A Triangulation is immutable after construction; refinement (see
:mod:`afem.refine`) always returns a new mesh.
"""

import numpy as np

from .errors import DanglingBoundaryTag, HangingNode, NonPositiveArea

_STRICT_SCAN_LIMIT = 2000  # O(V*E) overlap scan only for small meshes


class Triangulation:
    """Conforming triangle mesh with cached geometry.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counterclockwise
    edges : (E, 2) int array, canonical orientation (min, max)
    triangle_edges : (T, 3) int array, edge opposite local vertex k
    triangle_edge_signs : (T, 3) int array, +1 where the triangle's outward
        normal on that edge coincides with the canonical nu_E
    edge_tris : (E, 2) int array, [T_plus, T_minus] with -1 when absent;
        T_plus is the triangle whose outward normal is nu_E
    boundary_edges : (K,) int array of edge indices
    edge_tags : (E,) int array, boundary tag or -1 for interior edges
    green_flag : (T,) int array, 0 plain, 1 green child, 2 blue child
    area, h_t, centroid : per-triangle geometry
    edge_length, edge_mid, edge_normal : per-edge geometry
    """

    def __init__(self, vertices, triangles, edge_tags, green_flag=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        t = self.triangles
        v = self.vertices

        # signed areas; reject clockwise or degenerate triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        scale = max(float(np.abs(v).max()), 1.0)
        if np.any(signed <= 1e-14 * scale**2):
            bad = int(np.argmin(signed))
            raise NonPositiveArea(
                f"triangle {bad} has signed area {signed[bad]:.3e}"
            )
        self.area = signed

        # unique edges; local edge k is opposite local vertex k
        raw = np.stack(
            [t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1
        )  # (T, 3, 2) traversal order
        lo = raw.min(axis=2)
        hi = raw.max(axis=2)
        pairs = np.stack([lo, hi], axis=2).reshape(-1, 2)
        self.edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            bad = int(np.argmax(counts))
            raise HangingNode(
                f"edge {tuple(self.edges[bad])} belongs to {counts[bad]} triangles"
            )
        self.triangle_edges = inverse.reshape(-1, 3)
        # +1 iff the triangle traverses the edge from higher to lower index
        self.triangle_edge_signs = np.where(
            raw[:, :, 0] > raw[:, :, 1], 1, -1
        ).astype(np.int64)

        ne = len(self.edges)
        self.edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        tri_ids = np.repeat(np.arange(len(t)), 3)
        side = np.where(self.triangle_edge_signs.ravel() > 0, 0, 1)
        self.edge_tris[inverse, side] = tri_ids
        # two triangles on one edge must traverse it in opposite directions;
        # a missing side here means overlapping (same-orientation) triangles
        both = counts == 2
        if np.any((self.edge_tris[both] < 0).any(axis=1)):
            bad = np.flatnonzero(both)[
                int(np.argmax((self.edge_tris[both] < 0).any(axis=1)))
            ]
            raise HangingNode(
                f"edge {tuple(self.edges[bad])} is traversed twice in the"
                " same direction (overlapping triangles)"
            )

        self.boundary_edges = np.flatnonzero(counts == 1)
        self.edge_tags = np.full(ne, -1, dtype=np.int64)
        self.edge_tags[self.boundary_edges] = 0
        if edge_tags:
            self._apply_tags(edge_tags)

        self.green_flag = (
            np.zeros(len(t), dtype=np.int64)
            if green_flag is None
            else np.asarray(green_flag, dtype=np.int64)
        )

        # geometry cache
        self.centroid = v[t].mean(axis=1)
        ev = v[self.edges[:, 1]] - v[self.edges[:, 0]]
        self.edge_length = np.hypot(ev[:, 0], ev[:, 1])
        self.edge_mid = 0.5 * (v[self.edges[:, 0]] + v[self.edges[:, 1]])
        self.edge_normal = (
            np.stack([-ev[:, 1], ev[:, 0]], axis=1) / self.edge_length[:, None]
        )
        self.h_t = self.edge_length[self.triangle_edges].max(axis=1)
        self._rgb = None  # refinement bookkeeping, set by afem.refine

    def _apply_tags(self, edge_tags):
        lookup = {
            (int(a), int(b)): i
            for i, (a, b) in enumerate(self.edges[self.boundary_edges])
        }
        for (a, b), tag in edge_tags.items():
            key = (min(a, b), max(a, b))
            if key not in lookup:
                raise DanglingBoundaryTag(
                    f"tagged edge {key} is not a boundary edge"
                )
            self.edge_tags[self.boundary_edges[lookup[key]]] = tag

    # -- basic queries ----------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def interior_edges(self):
        return np.flatnonzero(self.edge_tags < 0)

    @property
    def ndof_mixed(self):
        """Unknowns of the mixed system: all edge fluxes plus all triangles."""
        return self.num_edges + self.num_triangles

    def triangle_vertices(self):
        """Vertex coordinates per triangle, shape (T, 3, 2)."""
        return self.vertices[self.triangles]

    def grad_bary(self):
        """Gradients of the barycentric coordinate functions, shape (T, 3, 2).

        grad lambda_k = rot_{-90}(P_{k+1} - P_{k+2}) / (2|T|), indices cyclic.
        """
        pv = self.triangle_vertices()
        out = np.empty_like(pv)
        for k in range(3):
            d = pv[:, (k + 1) % 3] - pv[:, (k + 2) % 3]
            out[:, k, 0] = d[:, 1]
            out[:, k, 1] = -d[:, 0]
        return out / (2.0 * self.area)[:, None, None]

    def min_angle(self):
        """Smallest interior angle over all triangles, in radians."""
        pv = self.triangle_vertices()
        worst = np.inf
        for k in range(3):
            a = pv[:, (k + 1) % 3] - pv[:, k]
            b = pv[:, (k + 2) % 3] - pv[:, k]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.hypot(a[:, 0], a[:, 1]) * np.hypot(b[:, 0], b[:, 1])
            )
            worst = min(worst, np.arccos(np.clip(cosang, -1.0, 1.0)).min())
        return float(worst)

    def boundary_tag_of(self, edge_index):
        return int(self.edge_tags[edge_index])


def build_mesh(vertices, triangles, boundary_spec=None, strict=None):
    """Assemble and validate a :class:`Triangulation`.

    boundary_spec, when given, lists ``(i, j, tag)`` for boundary edges;
    untagged boundary edges default to tag 0. Entries that do not match an
    actual boundary edge raise :class:`DanglingBoundaryTag`.

    strict toggles the O(V*E) vertex-on-edge overlap scan; by default it
    runs for meshes up to a few thousand triangles and whenever the mesh
    carries no duplicated (slit) vertices.
    """
    tags = {}
    if boundary_spec:
        for i, j, tag in boundary_spec:
            tags[(min(int(i), int(j)), max(int(i), int(j)))] = int(tag)
    tri_arr = np.asarray(triangles, dtype=np.int64)
    nv = len(np.asarray(vertices))
    if tri_arr.size and (tri_arr.min() < 0 or tri_arr.max() >= nv):
        raise ValueError(
            f"triangle references vertex {int(tri_arr.max())} but only"
            f" {nv} vertices given"
        )
    mesh = Triangulation(vertices, tri_arr, tags)
    if strict is None:
        strict = mesh.num_triangles <= _STRICT_SCAN_LIMIT
    if strict:
        _scan_for_hanging_nodes(mesh)
    return mesh


def _scan_for_hanging_nodes(mesh):
    """Flag vertices lying strictly inside an edge (partial overlap).

    Skipped for slit meshes (coordinate-duplicated vertices make a purely
    geometric scan ambiguous); topological checks still apply there.
    """
    v = mesh.vertices
    rounded = np.round(v, 12)
    if len(np.unique(rounded, axis=0)) < len(v):
        return
    a = v[mesh.edges[:, 0]]
    b = v[mesh.edges[:, 1]]
    ab = b - a  # (E, 2)
    ll = np.einsum("ij,ij->i", ab, ab)
    scale = max(float(np.abs(v).max()), 1.0)
    for k in range(len(v)):
        ap = v[k] - a
        t = np.einsum("ij,ij->i", ap, ab) / ll
        cross = np.abs(ap[:, 0] * ab[:, 1] - ap[:, 1] * ab[:, 0])
        on_edge = (cross <= 1e-12 * scale**2) & (t > 1e-12) & (t < 1 - 1e-12)
        if np.any(on_edge):
            e = int(np.flatnonzero(on_edge)[0])
            raise HangingNode(
                f"vertex {k} lies inside edge {tuple(mesh.edges[e])}"
            )


# -- plain-text mesh files -------------------------------------------------


def write_mesh_file(mesh, path):
    """Write the plain-text mesh format.

    Header ``vertices N / triangles M / boundary K`` followed by N vertex
    lines ``x y``, M triangle lines ``i j k`` and K boundary lines
    ``i j tag`` (0-based indices, ``#`` comments).
    """
    lines = [
        f"vertices {mesh.num_vertices} / triangles {mesh.num_triangles}"
        f" / boundary {len(mesh.boundary_edges)}"
    ]
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    for e in mesh.boundary_edges:
        i, j = mesh.edges[e]
        lines.append(f"{i} {j} {int(mesh.edge_tags[e])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh_file(path_or_file):
    """Read the plain-text mesh format written by :func:`write_mesh_file`."""
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].replace("/", " ")
        tokens.extend(line.split())
    pos = 0

    def expect(word):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != word:
            raise ValueError(f"mesh file: expected {word!r} in header")
        pos += 1
        val = int(tokens[pos])
        pos += 1
        return val

    nv = expect("vertices")
    nt = expect("triangles")
    nb = expect("boundary")
    need = 2 * nv + 3 * nt + 3 * nb
    if len(tokens) - pos != need:
        raise ValueError(
            f"mesh file: expected {need} data tokens, found {len(tokens) - pos}"
        )
    data = tokens[pos:]
    verts = np.array(data[: 2 * nv], dtype=float).reshape(nv, 2)
    ofs = 2 * nv
    tris = np.array(data[ofs : ofs + 3 * nt], dtype=int).reshape(nt, 3)
    ofs += 3 * nt
    bnd = np.array(data[ofs:], dtype=int).reshape(nb, 3)
    return build_mesh(verts, tris, [tuple(row) for row in bnd])
