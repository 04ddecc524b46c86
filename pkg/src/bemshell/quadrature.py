"""Quadrature rules on parametric knot-span cells.

Regular tensor-product Gauss-Legendre rules, singular rules built by fanning
triangles from the collocation preimage and applying a Duffy transform (the
transform's jacobian is proportional to the distance from the singular point
and cancels a 1/r kernel), and near-singular rules by uniform cell
subdivision until the subcell diameter drops below twice the separation
distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NearSingularOverflowError

__all__ = [
    "QuadratureRule",
    "SingularRule",
    "gauss_legendre",
    "cell_rule",
    "map_rule",
    "singular_rule",
    "near_singular_depth",
    "subdivided_rule",
    "near_singular_rule",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Planar quadrature rule: points (n, 2) and positive weights (n,).

    Regular rules live on the reference cell [0,1]^2 with unit weight sum;
    singular and near-singular rules are returned directly in knot-span
    coordinates with weights summing to the span area.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    @property
    def n(self):
        return self.weights.size

    def integrate(self, f):
        """Apply the rule to f(points) -> values of shape (n, ...)."""
        vals = np.asarray(f(self.points))
        return np.tensordot(self.weights, vals, axes=(0, 0))


@dataclass(frozen=True)
class SingularRule(QuadratureRule):
    """Duffy rule clustered toward the collocation preimage ``s0``."""

    s0: tuple = (0.0, 0.0)


_GAUSS_CACHE = {}


def gauss_legendre(order):
    """1D Gauss-Legendre rule on [0, 1], exact through degree 2*order - 1."""
    if not 1 <= order <= 64:
        raise ValueError(f"order must be in [1, 64], got {order}")
    if order not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GAUSS_CACHE[order] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS_CACHE[order]


def cell_rule(order_u, order_v):
    """Tensor-product rule on the reference cell [0,1]^2."""
    xu, wu = gauss_legendre(order_u)
    xv, wv = gauss_legendre(order_v)
    pts = np.column_stack(
        [np.repeat(xu, order_v), np.tile(xv, order_u)]
    )
    wts = (wu[:, None] * wv[None, :]).ravel()
    return QuadratureRule(pts, wts)


def map_rule(rule, cell):
    """Affine image of a reference rule on cell (u0, u1, v0, v1)."""
    u0, u1, v0, v1 = cell
    pts = np.empty_like(rule.points)
    pts[:, 0] = u0 + (u1 - u0) * rule.points[:, 0]
    pts[:, 1] = v0 + (v1 - v0) * rule.points[:, 1]
    return QuadratureRule(pts, rule.weights * ((u1 - u0) * (v1 - v0)))


def singular_rule(cell, s0, order=12, metric=None):
    """Rule on ``cell`` concentrated at the interior/boundary point ``s0``.

    The cell is split into the triangles spanned by ``s0`` and the cell
    edges (up to 4; fewer when ``s0`` sits on an edge or corner).  Each
    triangle carries a tensor Gauss rule under the Duffy map

        x(t, q) = s0 + t ((1-q) (A - s0) + q (B - s0)),

    whose jacobian 2*area*t vanishes linearly at ``s0``.

    Parameters
    ----------
    metric : pair of float, optional
        Physical lengths of a unit parametric step in u and v.  The
        triangle aspect that drives base bisection must be judged in
        physical space; a surface parameterized anisotropically would
        otherwise bisect to great depth (or too little) for no reason.
    """
    u0, u1, v0, v1 = cell
    s0 = np.asarray(s0, dtype=float)
    if not (u0 - 1e-12 <= s0[0] <= u1 + 1e-12 and v0 - 1e-12 <= s0[1] <= v1 + 1e-12):
        raise ValueError(f"singular point {s0} outside cell {cell}")
    scale = np.ones(2) if metric is None else np.asarray(metric, dtype=float)
    if not np.all(scale > 0.0):
        raise ValueError(f"metric scales must be positive, got {scale}")
    corners = np.array([[u0, v0], [u1, v0], [u1, v1], [u0, v1]]) * scale
    s0s = s0 * scale
    area_cell = (u1 - u0) * (v1 - v0) * scale[0] * scale[1]
    tris = []
    for k in range(4):
        _collect_fan_triangles(s0s, corners[k], corners[(k + 1) % 4], area_cell, tris)
    xg, wg = gauss_legendre(order)
    t = np.repeat(xg, order)
    q = np.tile(xg, order)
    wtq = (wg[:, None] * wg[None, :]).ravel()
    pts_all = []
    wts_all = []
    for A, B, two_area in tris:
        A = A / scale
        B = B / scale
        two_area /= scale[0] * scale[1]
        direction = (1.0 - q)[:, None] * (A - s0) + q[:, None] * (B - s0)
        pts_all.append(s0 + t[:, None] * direction)
        wts_all.append(wtq * two_area * t)
    return SingularRule(
        np.concatenate(pts_all), np.concatenate(wts_all), s0=(s0[0], s0[1])
    )


def _collect_fan_triangles(s0, A, B, area_cell, out, depth=0):
    """Fan triangle (s0, A, B), base-bisected until its aspect is moderate.

    High-aspect triangles (collocation point skimming an edge it does not
    lie on) spoil the Duffy rule's accuracy in the angular direction;
    bisecting the base restores it while keeping the area sum exact.
    """
    ra, rb = A - s0, B - s0
    two_area = abs(ra[0] * rb[1] - ra[1] * rb[0])
    if two_area < 1e-12 * area_cell:
        return  # s0 on this edge: degenerate triangle contributes nothing
    height = two_area / np.linalg.norm(B - A)
    reach = max(np.linalg.norm(ra), np.linalg.norm(rb))
    if reach > 3.0 * height and depth < 8:
        M = 0.5 * (A + B)
        _collect_fan_triangles(s0, A, M, area_cell, out, depth + 1)
        _collect_fan_triangles(s0, M, B, area_cell, out, depth + 1)
    else:
        out.append((A, B, two_area))


def near_singular_depth(cell, d, max_depth=12):
    """Uniform subdivision depth bringing subcell diameters below ``2 d``."""
    if d <= 0.0:
        raise ValueError("near-singular distance must be positive")
    u0, u1, v0, v1 = cell
    diam = math.hypot(u1 - u0, v1 - v0)
    depth = 0
    while diam / (1 << depth) >= 2.0 * d:
        depth += 1
        if depth > max_depth:
            raise NearSingularOverflowError(
                f"subdivision depth exceeded {max_depth} for distance {d:g}; "
                "collocation point pathologically close to a non-owning element"
            )
    return depth


def subdivided_rule(cell, depth, order=4):
    """Tensor rule on a 2^depth x 2^depth uniform split of ``cell``."""
    u0, u1, v0, v1 = cell
    nsub = 1 << depth
    base = cell_rule(order, order)
    bu = np.linspace(u0, u1, nsub + 1)
    bv = np.linspace(v0, v1, nsub + 1)
    du = (u1 - u0) / nsub
    dv = (v1 - v0) / nsub
    # all subcells share scaled weights; only the offsets differ
    pu = bu[:-1, None] + du * base.points[None, :, 0]
    pv = bv[:-1, None] + dv * base.points[None, :, 1]
    pts = np.empty((nsub * nsub * base.n, 2))
    wts = np.empty(nsub * nsub * base.n)
    wsub = base.weights * (du * dv)
    idx = 0
    for iu in range(nsub):
        for iv in range(nsub):
            pts[idx : idx + base.n, 0] = pu[iu]
            pts[idx : idx + base.n, 1] = pv[iv]
            wts[idx : idx + base.n] = wsub
            idx += base.n
    return QuadratureRule(pts, wts)


def near_singular_rule(cell, d, order=4, max_depth=12):
    """Subdivided tensor rule for a collocation point at distance ``d``.

    Splits ``cell`` uniformly until the subcell diameter is below ``2 d``
    (distances measured in the same parametric proxy units as the cell),
    then lays a tensor Gauss rule on every subcell.
    """
    return subdivided_rule(cell, near_singular_depth(cell, d, max_depth), order)
