"""Quadrature rules on triangles and edges.

All triangle rules are stored in barycentric coordinates with weights
normalized to sum to one, so that

    integral_T g dx  ~=  |T| * sum_k w_k g(x_k),   x_k = sum_i bary[k,i] P_i.

The edge-midpoint rule is exact for quadratic polynomials and is the rule
used inside element integrals; the 7-point rule has degree 5 and serves
data oscillation and error norms.
"""

import numpy as np

# midpoints of the three edges, exact through degree 2
EDGE_MID = (
    np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]),
    np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
)

_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_W1, _W2 = 0.132394152788506, 0.125939180544827

# classical 7-point rule, exact through degree 5
DEGREE5 = (
    np.array(
        [
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [_A1, _B1, _B1],
            [_B1, _A1, _B1],
            [_B1, _B1, _A1],
            [_A2, _B2, _B2],
            [_B2, _A2, _B2],
            [_B2, _B2, _A2],
        ]
    ),
    np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2]),
)

# 2-point Gauss rule on [0,1], exact through degree 3 (edge integrals)
GAUSS2_1D = (
    np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]),
    np.array([0.5, 0.5]),
)


def physical_points(verts, rule):
    """Map barycentric rule points onto a batch of triangles.

    verts: (M, 3, 2) vertex coordinates; returns (M, Q, 2).
    """
    bary = rule[0]
    return np.einsum("qi,mid->mqd", bary, verts)


def integrate(fn, verts, areas, rule=DEGREE5):
    """Integrate ``fn(x, y) -> (M, Q)-compatible array`` over a triangle batch.

    fn receives flattened coordinate arrays and must evaluate pointwise.
    Returns the (M,) vector of element integrals.
    """
    pts = physical_points(verts, rule)
    m, q = pts.shape[0], pts.shape[1]
    vals = np.asarray(fn(pts[..., 0].ravel(), pts[..., 1].ravel()))
    vals = vals.reshape(m, q)
    return areas * (vals @ rule[1])


def integrate_dyadic(fn, verts, areas, depth, rule=DEGREE5):
    """Element integrals with dyadic subdivision toward local vertex 0.

    Each triangle is split through its edge midpoints; the child containing
    vertex 0 is recursed ``depth`` more times while the remaining three
    children use the plain rule. Used for integrands with a point
    singularity at vertex 0.
    """
    if depth == 0:
        return integrate(fn, verts, areas, rule)
    v0, v1, v2 = verts[:, 0], verts[:, 1], verts[:, 2]
    m01 = 0.5 * (v0 + v1)
    m12 = 0.5 * (v1 + v2)
    m20 = 0.5 * (v2 + v0)
    quarter = 0.25 * areas
    total = np.zeros(len(verts))
    for child in (
        np.stack([m01, v1, m12], axis=1),
        np.stack([m20, m12, v2], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ):
        total += integrate(fn, child, quarter, rule)
    corner = np.stack([v0, m01, m20], axis=1)
    return total + integrate_dyadic(fn, corner, quarter, depth - 1, rule)
