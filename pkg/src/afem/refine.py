"""Uniform red refinement and adaptive red-green-blue refinement.

The adaptive scheme keeps, next to the published conforming mesh, a
*skeleton* of triangles produced by red refinements only (each similar to
one of the initial triangles). Green and blue bisections exist solely as a
conforming closure of the skeleton against the set of split edges and are
recomputed from scratch after every refinement step. Marking a green or
blue child therefore rolls back to its skeleton parent, which is then
red-refined -- the rule that keeps minimum angles bounded over arbitrarily
many adaptive levels.
"""

import numpy as np

from .errors import InvalidMark
from .mesh import build_mesh


def uniform_red_refine(mesh):
    """Split every triangle into four similar children via edge midpoints."""
    nv = mesh.num_vertices
    new_vertices = np.vstack([mesh.vertices, mesh.edge_mid])
    mid = nv + mesh.triangle_edges  # (T, 3) midpoint of edge opposite vertex k
    t = mesh.triangles
    children = np.concatenate(
        [
            np.stack([t[:, 0], mid[:, 2], mid[:, 1]], axis=1),
            np.stack([mid[:, 2], t[:, 1], mid[:, 0]], axis=1),
            np.stack([mid[:, 1], mid[:, 0], t[:, 2]], axis=1),
            np.stack([mid[:, 0], mid[:, 1], mid[:, 2]], axis=1),
        ]
    )
    spec = []
    for e in mesh.boundary_edges:
        a, b = mesh.edges[e]
        m = nv + e
        tag = mesh.edge_tags[e]
        spec.append((a, m, tag))
        spec.append((m, b, tag))
    return build_mesh(new_vertices, children, spec, strict=False)


class _RgbState:
    """Skeleton connectivity behind a published mesh."""

    def __init__(self, skeleton, split, parent_of, midpoints, tags):
        self.skeleton = skeleton      # list of vertex triples (CCW)
        self.split = split            # set of canonical skeleton edge pairs
        self.parent_of = parent_of    # published triangle -> skeleton index
        self.midpoints = midpoints    # canonical edge pair -> vertex index
        self.tags = tags              # canonical boundary edge pair -> tag


def _edge(a, b):
    return (a, b) if a < b else (b, a)


def _tri_edges(tri):
    v0, v1, v2 = tri
    return (_edge(v1, v2), _edge(v2, v0), _edge(v0, v1))


def _fresh_state(mesh):
    tags = {}
    for e in mesh.boundary_edges:
        a, b = mesh.edges[e]
        tags[_edge(int(a), int(b))] = int(mesh.edge_tags[e])
    skeleton = [tuple(int(v) for v in tri) for tri in mesh.triangles]
    return _RgbState(
        skeleton, set(), np.arange(mesh.num_triangles), {}, tags
    )


def rgb_refine(mesh, marked):
    """Red-refine the marked triangles and close with green/blue bisections.

    marked is any iterable of published triangle indices. Marked green or
    blue children are first coarsened back to their skeleton parent, which
    is then red-refined. The closure rule is: a skeleton triangle with all
    three edges split becomes red, two split edges give a blue triple, one
    gives a green pair. Iterated until no closure child would carry a
    hanging node.
    """
    marked = sorted({int(i) for i in marked})
    if marked and (marked[0] < 0 or marked[-1] >= mesh.num_triangles):
        raise InvalidMark(f"marked indices must lie in [0, {mesh.num_triangles})")
    if not marked:
        return mesh

    state = mesh._rgb if mesh._rgb is not None else _fresh_state(mesh)
    skeleton = state.skeleton
    midpoints = dict(state.midpoints)
    tags = dict(state.tags)
    vertices = [tuple(p) for p in np.asarray(mesh.vertices)]

    red = {int(state.parent_of[i]) for i in marked}

    # closure to a fixed point: any skeleton triangle whose prospective
    # green/blue child would contain a split half-edge is promoted to red,
    # as is any triangle with all three edges split
    while True:
        split_now = set(state.split)
        for s in red:
            split_now.update(_tri_edges(skeleton[s]))
        grew = False
        for idx, tri in enumerate(skeleton):
            if idx in red:
                continue
            edges = _tri_edges(tri)
            present = [e for e in edges if e in split_now]
            promote = len(present) == 3
            if not promote:
                for e in present:
                    m = midpoints.get(e)
                    if m is None:
                        continue  # split this round; halves cannot exist yet
                    if (
                        _edge(e[0], m) in split_now
                        or _edge(e[1], m) in split_now
                    ):
                        promote = True
                        break
            if promote:
                red.add(idx)
                grew = True
        if not grew:
            break

    def midpoint(e):
        m = midpoints.get(e)
        if m is None:
            a, b = e
            m = len(vertices)
            vertices.append(
                (
                    0.5 * (vertices[a][0] + vertices[b][0]),
                    0.5 * (vertices[a][1] + vertices[b][1]),
                )
            )
            midpoints[e] = m
            tag = tags.get(e)
            if tag is not None:
                tags[_edge(a, m)] = tag
                tags[_edge(m, b)] = tag
        return m

    new_skeleton = []
    for idx, tri in enumerate(skeleton):
        if idx not in red:
            new_skeleton.append(tri)
            continue
        v0, v1, v2 = tri
        m0 = midpoint(_edge(v1, v2))
        m1 = midpoint(_edge(v2, v0))
        m2 = midpoint(_edge(v0, v1))
        new_skeleton.extend(
            [(v0, m2, m1), (m2, v1, m0), (m1, m0, v2), (m0, m1, m2)]
        )

    # prune the split set to edges still owned by some skeleton triangle
    alive = set()
    for tri in new_skeleton:
        alive.update(_tri_edges(tri))
    new_split = split_now & alive

    published = []
    flags = []
    parents = []

    def emit(tri, flag, parent):
        published.append(tri)
        flags.append(flag)
        parents.append(parent)

    coords = np.asarray(vertices)
    for parent, tri in enumerate(new_skeleton):
        splits = [e in new_split for e in _tri_edges(tri)]
        n = sum(splits)
        if n == 0:
            emit(tri, 0, parent)
        elif n == 1:
            k = splits.index(True)
            v = tri[k]
            a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
            m = midpoints[_edge(a, b)]
            emit((v, a, m), 1, parent)
            emit((v, m, b), 1, parent)
        elif n == 2:
            k = splits.index(False)  # unsplit edge is opposite vertex k
            vc = tri[k]  # shared vertex of the two split edges
            va, vb = tri[(k + 1) % 3], tri[(k + 2) % 3]
            ma = midpoints[_edge(vb, vc)]  # on edge opposite va
            mb = midpoints[_edge(vc, va)]  # on edge opposite vb
            emit((mb, ma, vc), 2, parent)
            # split the quad (va, vb, ma, mb) along its shorter diagonal
            d1 = np.hypot(*(coords[va] - coords[ma]))
            d2 = np.hypot(*(coords[vb] - coords[mb]))
            if d1 <= d2:
                emit((va, vb, ma), 2, parent)
                emit((va, ma, mb), 2, parent)
            else:
                emit((va, vb, mb), 2, parent)
                emit((vb, ma, mb), 2, parent)
        else:  # pragma: no cover - promoted to red above
            raise AssertionError("triply split triangle escaped promotion")

    # the tag map spans all generations; keep only currently existing edges
    published_edges = set()
    for tri in published:
        published_edges.update(_tri_edges(tri))
    spec = [
        (a, b, tag) for (a, b), tag in tags.items() if (a, b) in published_edges
    ]
    new_mesh = build_mesh(coords, np.array(published), spec, strict=False)
    new_mesh.green_flag[:] = flags
    new_mesh._rgb = _RgbState(
        new_skeleton, new_split, np.array(parents), midpoints, tags
    )
    return new_mesh
