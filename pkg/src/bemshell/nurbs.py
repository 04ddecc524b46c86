"""Single-patch NURBS surfaces: basis evaluation, differential geometry,
Greville collocation abscissae, uniform refinement and a plain-text exchange
format.

Basis values and derivatives are computed with the stable triangular
(de Boor style) scheme; everything is vectorized over arrays of parametric
points so that assembly loops stay in numpy.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CollocationDegeneracyError,
    DegenerateGeometryError,
    DomainError,
)

__all__ = [
    "KnotVector",
    "NurbsPatch",
    "BasisSpan",
    "SurfaceFrame",
    "make_flat_patch",
    "make_disk_patch",
    "read_patch",
    "write_patch",
    "parse_patch",
    "format_patch",
]


class KnotVector:
    """Open (clamped) knot vector of a given degree.

    Parameters
    ----------
    knots : array_like
        Nondecreasing knot values; first and last value repeated exactly
        ``degree + 1`` times.
    degree : int
        Polynomial degree ``p >= 0``.
    """

    __slots__ = ("knots", "degree")

    def __init__(self, knots, degree):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1:
            raise ValueError("knot vector must be one-dimensional")
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        if np.any(np.diff(knots) < 0.0):
            raise ValueError("knots must be nondecreasing")
        n = knots.size - degree - 1
        if n < degree + 1:
            raise ValueError(
                f"too few knots for degree {degree}: need at least "
                f"{2 * (degree + 1)}, got {knots.size}"
            )
        p1 = degree + 1
        if not (np.all(knots[:p1] == knots[0]) and np.all(knots[-p1:] == knots[-1])):
            raise ValueError("knot vector must be open (clamped)")
        if knots[p1] == knots[0] or knots[-p1 - 1] == knots[-1]:
            raise ValueError("end knots repeated more than degree + 1 times")
        # Interior multiplicity check: at most p+1 repetitions anywhere.
        values, counts = np.unique(knots, return_counts=True)
        if np.any(counts > p1):
            raise ValueError("a knot is repeated more than degree + 1 times")
        self.knots = knots
        self.degree = degree

    @property
    def n(self):
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def start(self):
        return self.knots[0]

    @property
    def end(self):
        return self.knots[-1]

    def span_breaks(self):
        """Distinct knot values (element boundaries in this direction)."""
        return np.unique(self.knots)

    def find_span(self, s):
        """Index i with knots[i] <= s < knots[i+1] (left-closed convention).

        The right endpoint is clamped to the last nonempty span.  Accepts
        scalars or arrays.
        """
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < self.knots[0]) or np.any(s_arr > self.knots[-1]):
            raise DomainError(
                f"parameter outside knot range [{self.knots[0]}, {self.knots[-1]}]"
            )
        span = np.searchsorted(self.knots, s_arr, side="right") - 1
        span = np.clip(span, self.degree, self.n - 1)
        if np.isscalar(s) or s_arr.ndim == 0:
            return int(span)
        return span.astype(int)

    def basis(self, s, nderiv=0):
        """Nonzero basis values and derivatives at parametric points.

        Parameters
        ----------
        s : array_like
            Points inside the knot range (scalar or 1D array).
        nderiv : int
            Highest derivative order (0, 1 or 2).

        Returns
        -------
        span : int ndarray
            Span index per point.
        ders : ndarray, shape (npts, nderiv + 1, degree + 1)
            ``ders[:, k, j]`` is the k-th derivative of the j-th nonzero
            basis function.
        """
        if nderiv < 0 or nderiv > 2:
            raise ValueError("nderiv must be 0, 1 or 2")
        scalar = np.isscalar(s) or np.asarray(s).ndim == 0
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        span = np.atleast_1d(self.find_span(s_arr))
        ders = _ders_basis(self.knots, self.degree, span, s_arr, nderiv)
        if scalar:
            return int(span[0]), ders[0]
        return span, ders

    def greville(self, dedup_delta=1e-3, min_gap=1e-10):
        """Greville abscissae: averages of ``degree`` consecutive knots.

        Duplicate abscissae (interior knot multiplicity >= degree) are
        perturbed symmetrically into the adjacent spans by ``dedup_delta``
        times the local span length; abscissae still closer than
        ``min_gap`` times the knot range afterwards raise
        :class:`CollocationDegeneracyError`.
        """
        p = self.degree
        if p == 0:
            pts = 0.5 * (self.knots[:-1] + self.knots[1:])
        else:
            # mean of knots[i+1 .. i+p] for i = 0 .. n-1
            csum = np.concatenate(([0.0], np.cumsum(self.knots)))
            pts = (csum[p + 1 : p + 1 + self.n] - csum[1 : 1 + self.n]) / p
        rng = self.knots[-1] - self.knots[0]
        pts = pts.copy()
        i = 0
        while i < pts.size - 1:
            j = i
            while j + 1 < pts.size and abs(pts[j + 1] - pts[i]) < 1e-14 * rng:
                j += 1
            if j > i:
                t = pts[i]
                left = self.knots[self.knots < t - 1e-14 * rng]
                right = self.knots[self.knots > t + 1e-14 * rng]
                span_l = t - left[-1] if left.size else 0.0
                span_r = right[0] - t if right.size else 0.0
                # Spread the group symmetrically around t, staying in range.
                offsets = np.linspace(-1.0, 1.0, j - i + 1)
                for k, off in enumerate(offsets):
                    d = dedup_delta * (span_r if off > 0 else span_l)
                    pts[i + k] = t + off * d
            i = j + 1
        if np.any(np.diff(pts) < min_gap * rng):
            raise CollocationDegeneracyError(
                "Greville abscissae remain collapsed after perturbation"
            )
        return pts

    def insert_knot(self, t):
        """Return (new KnotVector, alphas, span) for single-knot insertion."""
        if not (self.knots[0] < t < self.knots[-1]):
            raise ValueError("knot to insert must lie strictly inside the range")
        k = self.find_span(t)
        new_knots = np.insert(self.knots, k + 1, t)
        p = self.degree
        idx = np.arange(k - p + 1, k + 1)
        alphas = (t - self.knots[idx]) / (self.knots[idx + p] - self.knots[idx])
        return KnotVector(new_knots, p), alphas, k

    def __repr__(self):
        return f"KnotVector(degree={self.degree}, n={self.n})"


def _ders_basis(knots, p, span, s, nderiv):
    """Triangular-scheme basis derivatives, vectorized over points.

    Returns array of shape (npts, nderiv + 1, p + 1).
    """
    npts = s.size
    ndu = np.empty((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.empty((npts, p + 1))
    right = np.empty((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = s - knots[span + 1 - j]
        right[:, j] = knots[span + j] - s
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, nderiv + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    if nderiv == 0:
        return ders

    a = np.zeros((npts, 2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:, 0, :] = 0.0
        a[:, 0, 0] = 1.0
        for k in range(1, nderiv + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1

    fac = float(p)
    for k in range(1, nderiv + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return ders


@dataclass
class BasisSpan:
    """Nonzero basis functions at one parametric point.

    For a univariate evaluation ``span`` is an int and arrays have length
    ``p + 1``; for a bivariate (rational) evaluation ``span`` is a pair and
    arrays have length ``(p0 + 1) * (p1 + 1)``.  ``indices`` holds the flat
    global numbers of the contributing control points.
    """

    span: object
    indices: np.ndarray
    values: np.ndarray
    first: np.ndarray | None = None  # (2, nloc) for surfaces, (nloc,) for curves
    second: np.ndarray | None = None  # (3, nloc) surface order: uu, uv, vv


@dataclass
class SurfaceFrame:
    """Pointwise geometry bundle of a parameterized surface."""

    x: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    x_uu: np.ndarray
    x_uv: np.ndarray
    x_vv: np.ndarray
    metric: np.ndarray  # 2x2 first fundamental form
    curvature: np.ndarray  # 2x2 second fundamental form
    jac: float  # sqrt(det metric), area element


class NurbsPatch:
    """Single-patch NURBS surface in 3D.

    Parameters
    ----------
    kv_u, kv_v : KnotVector
        Knot vectors of the two parametric directions.
    control_net : array_like, shape (n0, n1, 3)
        Control point grid; the flat index of point ``(i0, i1)`` is
        ``i0 * n1 + i1``.
    weights : array_like, shape (n0, n1), optional
        Strictly positive weights; all ones by default (plain B-spline).
    allow_degenerate : bool
        Permit coincident control points / vanishing surface Jacobian
        (needed only for the disk oracle geometry).
    """

    def __init__(self, kv_u, kv_v, control_net, weights=None, allow_degenerate=False):
        self.kv_u = kv_u
        self.kv_v = kv_v
        net = np.asarray(control_net, dtype=float)
        if net.shape != (kv_u.n, kv_v.n, 3):
            raise ValueError(
                f"control net shape {net.shape} does not match knot vectors "
                f"({kv_u.n}, {kv_v.n}, 3)"
            )
        if weights is None:
            w = np.ones((kv_u.n, kv_v.n))
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (kv_u.n, kv_v.n):
                raise ValueError("weights shape does not match control net")
            if np.any(w <= 0.0):
                raise ValueError("weights must be strictly positive")
        self.control_net = net
        self.weights = w
        self.allow_degenerate = bool(allow_degenerate)
        if not allow_degenerate:
            self._reject_poles()

    def _reject_poles(self):
        # Coincident neighbours along a full grid line indicate a polar
        # (degenerate) parameterization; cheap necessary check only.
        net = self.control_net
        for axis in (0, 1):
            line = np.moveaxis(net, axis, 0).reshape(net.shape[axis], -1, 3)
            if line.shape[0] >= 2:
                d = np.linalg.norm(np.diff(line, axis=0), axis=-1)
                collapsed = np.all(d < 1e-14, axis=0)
                if np.any(collapsed):
                    raise DegenerateGeometryError(
                        "control net contains a collapsed (pole) line; pass "
                        "allow_degenerate=True only for oracle geometries"
                    )

    # -- sizes ---------------------------------------------------------

    @property
    def shape(self):
        return (self.kv_u.n, self.kv_v.n)

    @property
    def n_points(self):
        return self.kv_u.n * self.kv_v.n

    @property
    def n_local(self):
        return (self.kv_u.degree + 1) * (self.kv_v.degree + 1)

    @property
    def points_flat(self):
        """Control points as an (n_points, 3) array, flat index i0*n1+i1."""
        return self.control_net.reshape(-1, 3)

    def bbox(self):
        pts = self.points_flat
        return pts.min(axis=0), pts.max(axis=0)

    def diameter(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def cells(self):
        """Nonempty knot-span rectangles as an array (ncell, 4) of
        (u0, u1, v0, v1), ordered u-major."""
        bu = self.kv_u.span_breaks()
        bv = self.kv_v.span_breaks()
        out = []
        for iu in range(bu.size - 1):
            for iv in range(bv.size - 1):
                out.append((bu[iu], bu[iu + 1], bv[iv], bv[iv + 1]))
        return np.array(out)

    # -- basis ---------------------------------------------------------

    def basis_batch(self, pts, nderiv=2):
        """Rational basis values/derivatives at many parametric points.

        Parameters
        ----------
        pts : ndarray, shape (npts, 2)
        nderiv : int
            0, 1 or 2.

        Returns
        -------
        cols : int ndarray (npts, nloc)
            Flat control-point indices of the nonzero functions.
        R : ndarray (npts, nloc)
        dR : ndarray (npts, 2, nloc) or None
        d2R : ndarray (npts, 3, nloc) or None
            Second derivatives ordered (uu, uv, vv).
        """
        pts = np.asarray(pts, dtype=float)
        su, sv = pts[:, 0], pts[:, 1]
        span_u, du = self.kv_u.basis(su, nderiv)
        span_v, dv = self.kv_v.basis(sv, nderiv)
        span_u = np.atleast_1d(span_u)
        span_v = np.atleast_1d(span_v)
        p0, p1 = self.kv_u.degree, self.kv_v.degree
        n1 = self.kv_v.n
        iu = span_u[:, None] - p0 + np.arange(p0 + 1)[None, :]
        iv = span_v[:, None] - p1 + np.arange(p1 + 1)[None, :]
        cols = (iu[:, :, None] * n1 + iv[:, None, :]).reshape(pts.shape[0], -1)
        wloc = self.weights.reshape(-1)[cols]

        def outer(a, b):
            return (a[:, :, None] * b[:, None, :]).reshape(pts.shape[0], -1)

        B = outer(du[:, 0], dv[:, 0])
        A = wloc * B
        W = A.sum(axis=1, keepdims=True)
        R = A / W
        if nderiv == 0:
            return cols, R, None, None

        Bu = outer(du[:, 1], dv[:, 0])
        Bv = outer(du[:, 0], dv[:, 1])
        Au, Av = wloc * Bu, wloc * Bv
        Wu = Au.sum(axis=1, keepdims=True)
        Wv = Av.sum(axis=1, keepdims=True)
        Ru = (Au - R * Wu) / W
        Rv = (Av - R * Wv) / W
        dR = np.stack([Ru, Rv], axis=1)
        if nderiv == 1:
            return cols, R, dR, None

        Buu = outer(du[:, 2], dv[:, 0])
        Buv = outer(du[:, 1], dv[:, 1])
        Bvv = outer(du[:, 0], dv[:, 2])
        Auu, Auv, Avv = wloc * Buu, wloc * Buv, wloc * Bvv
        Wuu = Auu.sum(axis=1, keepdims=True)
        Wuv = Auv.sum(axis=1, keepdims=True)
        Wvv = Avv.sum(axis=1, keepdims=True)
        Ruu = (Auu - R * Wuu - 2.0 * Ru * Wu) / W
        Ruv = (Auv - R * Wuv - Ru * Wv - Rv * Wu) / W
        Rvv = (Avv - R * Wvv - 2.0 * Rv * Wv) / W
        d2R = np.stack([Ruu, Ruv, Rvv], axis=1)
        return cols, R, dR, d2R

    def basis_at(self, s, nderiv=2):
        """Bivariate rational :class:`BasisSpan` at a single point."""
        s = np.asarray(s, dtype=float)
        cols, R, dR, d2R = self.basis_batch(s[None, :], nderiv)
        return BasisSpan(
            span=(self.kv_u.find_span(s[0]), self.kv_v.find_span(s[1])),
            indices=cols[0],
            values=R[0],
            first=None if dR is None else dR[0],
            second=None if d2R is None else d2R[0],
        )

    # -- geometry ------------------------------------------------------

    def evaluate_batch(self, pts, nderiv=2):
        """Surface point and parametric derivatives at many points.

        Returns a dict with keys ``x`` (npts, 3) and, per requested order,
        ``xu``, ``xv`` and ``xuu``, ``xuv``, ``xvv``.
        """
        cols, R, dR, d2R = self.basis_batch(pts, nderiv)
        P = self.points_flat[cols]  # (npts, nloc, 3)
        out = {"x": np.einsum("pn,pnd->pd", R, P)}
        if nderiv >= 1:
            out["xu"] = np.einsum("pn,pnd->pd", dR[:, 0], P)
            out["xv"] = np.einsum("pn,pnd->pd", dR[:, 1], P)
        if nderiv >= 2:
            out["xuu"] = np.einsum("pn,pnd->pd", d2R[:, 0], P)
            out["xuv"] = np.einsum("pn,pnd->pd", d2R[:, 1], P)
            out["xvv"] = np.einsum("pn,pnd->pd", d2R[:, 2], P)
        return out

    def point(self, s):
        return self.evaluate_batch(np.asarray(s, float)[None, :], nderiv=0)["x"][0]

    def frame(self, s):
        """Full :class:`SurfaceFrame` at a parametric point.

        Raises
        ------
        DegenerateGeometryError
            If the tangents are (numerically) parallel at ``s``.
        """
        ev = self.evaluate_batch(np.asarray(s, float)[None, :], nderiv=2)
        g1, g2 = ev["xu"][0], ev["xv"][0]
        cr = np.cross(g1, g2)
        ncr = np.linalg.norm(cr)
        if ncr <= 1e-14 * np.linalg.norm(g1) * np.linalg.norm(g2):
            raise DegenerateGeometryError(f"degenerate parameterization at s={s}")
        g3 = cr / ncr
        metric = np.array([[g1 @ g1, g1 @ g2], [g1 @ g2, g2 @ g2]])
        x_uu, x_uv, x_vv = ev["xuu"][0], ev["xuv"][0], ev["xvv"][0]
        curvature = np.array(
            [[x_uu @ g3, x_uv @ g3], [x_uv @ g3, x_vv @ g3]]
        )
        return SurfaceFrame(
            x=ev["x"][0],
            g1=g1,
            g2=g2,
            g3=g3,
            x_uu=x_uu,
            x_uv=x_uv,
            x_vv=x_vv,
            metric=metric,
            curvature=curvature,
            jac=ncr,
        )

    def greville_points(self):
        """Parametric Greville grid, shape (n_points, 2), flat order i0*n1+i1."""
        gu = self.kv_u.greville()
        gv = self.kv_v.greville()
        uu, vv = np.meshgrid(gu, gv, indexing="ij")
        return np.column_stack([uu.ravel(), vv.ravel()])

    def closest_point(self, x, grid=48, iters=12):
        """Parametric preimage of the surface point nearest to x.

        Seeds a Gauss-Newton projection from the best point of a coarse
        parametric grid; iterates s += (J^T J)^{-1} J^T (x - x(s)) with
        clamping to the knot ranges.  Returns (s, distance).
        """
        x = np.asarray(x, dtype=float)
        gu = np.linspace(self.kv_u.start, self.kv_u.end, grid)
        gv = np.linspace(self.kv_v.start, self.kv_v.end, grid)
        uu, vv = np.meshgrid(gu, gv, indexing="ij")
        pts = np.column_stack([uu.ravel(), vv.ravel()])
        xs = self.evaluate_batch(pts, nderiv=0)["x"]
        s = pts[np.argmin(np.linalg.norm(xs - x, axis=1))].copy()
        lo = np.array([self.kv_u.start, self.kv_v.start])
        hi = np.array([self.kv_u.end, self.kv_v.end])
        for _ in range(iters):
            ev = self.evaluate_batch(s[None, :], nderiv=1)
            r = x - ev["x"][0]
            J = np.column_stack([ev["xu"][0], ev["xv"][0]])
            JtJ = J.T @ J
            if np.linalg.det(JtJ) < 1e-14 * max(JtJ[0, 0] * JtJ[1, 1], 1e-300):
                break  # degenerate corner; grid seed is the best available
            step = np.linalg.solve(JtJ, J.T @ r)
            s_new = np.clip(s + step, lo, hi)
            if np.linalg.norm(s_new - s) < 1e-14 * np.linalg.norm(hi - lo):
                s = s_new
                break
            s = s_new
        dist = float(np.linalg.norm(x - self.point(s)))
        return s, dist

    # -- updates -------------------------------------------------------

    def displace(self, u_flat):
        """New patch with control points moved by a 3n coefficient vector."""
        disp = np.asarray(u_flat, dtype=float).reshape(self.kv_u.n, self.kv_v.n, 3)
        return NurbsPatch(
            self.kv_u,
            self.kv_v,
            self.control_net + disp,
            self.weights,
            allow_degenerate=True,
        )

    def insert_knot_u(self, t):
        kv_new, alphas, k = self.kv_u.insert_knot(t)
        p = self.kv_u.degree
        hw = np.concatenate(
            [self.weights[:, :, None] * self.control_net, self.weights[:, :, None]],
            axis=2,
        )
        n0 = self.kv_u.n
        out = np.empty((n0 + 1, self.kv_v.n, 4))
        out[: k - p + 1] = hw[: k - p + 1]
        out[k + 1 :] = hw[k:]
        for j, i in enumerate(range(k - p + 1, k + 1)):
            a = alphas[j]
            out[i] = a * hw[i] + (1.0 - a) * hw[i - 1]
        return NurbsPatch(
            kv_new,
            self.kv_v,
            out[:, :, :3] / out[:, :, 3:4],
            out[:, :, 3],
            allow_degenerate=self.allow_degenerate,
        )

    def insert_knot_v(self, t):
        return self.swap_directions().insert_knot_u(t).swap_directions()

    def swap_directions(self):
        return NurbsPatch(
            self.kv_v,
            self.kv_u,
            np.transpose(self.control_net, (1, 0, 2)),
            self.weights.T,
            allow_degenerate=self.allow_degenerate,
        )

    def refine_uniform(self, times=1):
        """Split every nonempty knot span at its midpoint, ``times`` times."""
        patch = self
        for _ in range(times):
            for t in _midpoints(patch.kv_u):
                patch = patch.insert_knot_u(t)
            for t in _midpoints(patch.kv_v):
                patch = patch.insert_knot_v(t)
        return patch

    def __repr__(self):
        return (
            f"NurbsPatch(degrees=({self.kv_u.degree}, {self.kv_v.degree}), "
            f"net={self.shape[0]}x{self.shape[1]})"
        )


def _midpoints(kv):
    b = kv.span_breaks()
    return 0.5 * (b[:-1] + b[1:])


def make_flat_patch(length, width, degree_u=3, degree_v=3, nel_u=1, nel_v=1,
                    origin=(0.0, 0.0, 0.0)):
    """Flat rectangular patch in the z=0 plane, uniform open knot vectors.

    The u direction runs along ``length`` (x), v along ``width`` (y).
    Control points are placed at Greville-like uniform parameters so the
    geometry map is exactly linear in (x, y).
    """
    kv_u = _uniform_kv(degree_u, nel_u)
    kv_v = _uniform_kv(degree_v, nel_v)
    gu = kv_u.greville()
    gv = kv_v.greville()
    net = np.zeros((kv_u.n, kv_v.n, 3))
    ox, oy, oz = origin
    net[:, :, 0] = ox + length * gu[:, None]
    net[:, :, 1] = oy + width * gv[None, :]
    net[:, :, 2] = oz
    return NurbsPatch(kv_u, kv_v, net)


def _uniform_kv(degree, nel):
    interior = np.linspace(0.0, 1.0, nel + 1)[1:-1]
    knots = np.concatenate(
        [np.zeros(degree + 1), interior, np.ones(degree + 1)]
    )
    return KnotVector(knots, degree)


def make_disk_patch(radius, center=(0.0, 0.0, 0.0)):
    """Exact flat disk as a single biquadratic rational patch.

    The four boundary curves are exact 90-degree arcs (corner control
    points on the circle at 45-degree positions, edge midpoints at the
    tangent intersections with weight sqrt(2)/2); the interior point is the
    homogeneous Coons average.  The parameterization degenerates at the
    four parametric corners where adjacent arcs meet tangentially, so the
    patch carries the allow_degenerate flag; quadrature points stay in the
    interior where the map is regular.
    """
    kv = _uniform_kv(2, 1)
    s = math.sqrt(2.0) / 2.0 * radius
    t = math.sqrt(2.0) * radius
    net = np.zeros((3, 3, 3))
    net[:, :, 0] = [[-s, -t, -s], [0.0, 0.0, 0.0], [s, t, s]]
    net[:, :, 1] = [[-s, 0.0, s], [-t, 0.0, t], [-s, 0.0, s]]
    net += np.asarray(center, dtype=float)
    w = math.sqrt(2.0) / 2.0
    weights = np.array(
        [[1.0, w, 1.0], [w, math.sqrt(2.0) - 1.0, w], [1.0, w, 1.0]]
    )
    return NurbsPatch(kv, kv, net, weights, allow_degenerate=True)


# -- plain-text patch format ------------------------------------------
#
#   # comments and blank lines are skipped
#   <degree_u> <degree_v>
#   <num_knots_u>
#   <knots_u ...>                (whitespace separated, may span lines)
#   <num_knots_v>
#   <knots_v ...>
#   <n0> <n1>
#   x y z w                      (n0*n1 lines, i0-major: i1 fastest)


def format_patch(patch):
    """Serialize a patch to the plain-text grammar documented above."""
    buf = io.StringIO()
    buf.write(f"{patch.kv_u.degree} {patch.kv_v.degree}\n")
    for kv in (patch.kv_u, patch.kv_v):
        buf.write(f"{kv.knots.size}\n")
        buf.write(" ".join(repr(float(k)) for k in kv.knots) + "\n")
    n0, n1 = patch.shape
    buf.write(f"{n0} {n1}\n")
    for i0 in range(n0):
        for i1 in range(n1):
            x, y, z = (float(c) for c in patch.control_net[i0, i1])
            w = float(patch.weights[i0, i1])
            buf.write(f"{x!r} {y!r} {z!r} {w!r}\n")
    return buf.getvalue()


def parse_patch(text, allow_degenerate=False):
    """Parse the plain-text patch grammar; inverse of :func:`format_patch`."""
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    it = iter(tokens)

    def take(k):
        return [next(it) for _ in range(k)]

    try:
        pu, pv = (int(t) for t in take(2))
        nk_u = int(next(it))
        kv_u = KnotVector([float(t) for t in take(nk_u)], pu)
        nk_v = int(next(it))
        kv_v = KnotVector([float(t) for t in take(nk_v)], pv)
        n0, n1 = (int(t) for t in take(2))
        rows = np.array([float(t) for t in take(4 * n0 * n1)]).reshape(n0, n1, 4)
    except StopIteration:
        raise ValueError("truncated patch text") from None
    return NurbsPatch(
        kv_u, kv_v, rows[:, :, :3], rows[:, :, 3], allow_degenerate=allow_degenerate
    )


def write_patch(path, patch):
    with open(path, "w") as fh:
        fh.write(format_patch(patch))


def read_patch(path, allow_degenerate=False):
    with open(path) as fh:
        return parse_patch(fh.read(), allow_degenerate=allow_degenerate)
