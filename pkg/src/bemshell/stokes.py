"""Collocated single-layer Stokes BEM on a NURBS surface.

The traction density f on the current surface solves the first-kind system
Dc f = Mc v, collocated at the images of the Greville abscissae.  The
damping operator exposed to the shell is C(u) = M_u D_c^{-1} M_c, where Mu
is the pseudo mass matrix on the current configuration, so applying C to
velocity coefficients directly yields generalized forces in the reference
test space.

Assembly splits into a parametric part (rules, basis values, Mc and the
singular-rule tables, all independent of the control net) cached once per
patch parameterization, and a geometric part (surface points, jacobians,
kernel values, factorization) redone per configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import get_lapack_funcs

from .errors import (
    BemSingularError,
    DegenerateGeometryError,
    NearSingularOverflowError,
    NearSurfaceError,
)
from .quadrature import (
    cell_rule,
    map_rule,
    near_singular_depth,
    near_singular_rule,
    singular_rule,
    subdivided_rule,
)

__all__ = [
    "BemQuadConfig",
    "BemSystem",
    "DampingOperator",
    "BemAssembler",
    "stokeslet",
    "stresslet",
    "assemble_bem",
    "damping_action",
    "damping_matrix",
    "offsurface_velocity",
    "dump_system",
]

_EYE3 = np.eye(3)


def stokeslet(r, eta):
    """Free-space Stokes velocity Green's function.

    Parameters
    ----------
    r : array_like, shape (..., 3)
        Evaluation point minus source point.
    eta : float
        Dynamic viscosity (Pa s).

    Returns
    -------
    ndarray, shape (..., 3, 3)
        S_ab = (r_a r_b / |r|^3 + delta_ab / |r|) / (8 pi eta).
    """
    r = np.asarray(r, dtype=float)
    nr = np.linalg.norm(r, axis=-1)
    if np.any(nr == 0.0):
        raise BemSingularError("stokeslet evaluated at zero separation")
    inv = 1.0 / nr
    S = r[..., :, None] * r[..., None, :] * (inv**3)[..., None, None]
    S += _EYE3 * inv[..., None, None]
    S /= 8.0 * math.pi * eta
    return S


def stresslet(r):
    """Free-space Stokes stress Green's function.

    T_abc = -(3 / 4 pi) r_a r_b r_c / |r|^5; carried for the general
    representation formula even though the no-slip coupling removes its
    surface term from the integral equation.
    """
    r = np.asarray(r, dtype=float)
    nr = np.linalg.norm(r, axis=-1)
    if np.any(nr == 0.0):
        raise BemSingularError("stresslet evaluated at zero separation")
    scale = -3.0 / (4.0 * math.pi) / nr**5
    return (
        r[..., :, None, None]
        * r[..., None, :, None]
        * r[..., None, None, :]
        * scale[..., None, None, None]
    )


@dataclass(frozen=True)
class BemQuadConfig:
    """Quadrature orders and the near-singular trigger.

    ``near_factor`` compares the collocation point's distance to an
    element's bounding box against the element diameter.
    """

    regular_order: int = 4
    singular_order: int = 12
    near_order: int = 4
    near_factor: float = 2.0


class _ElementTable:
    """Per-cell parametric data shared by Mc/Mu/Dc assembly."""

    def __init__(self, patch, config):
        cells = patch.cells()
        rule = cell_rule(config.regular_order, config.regular_order)
        nq = rule.n
        ncell = cells.shape[0]
        nloc = patch.n_local
        self.cells = cells
        self.weights = np.empty((ncell, nq))
        self.cols = np.empty((ncell, nloc), dtype=int)
        self.R = np.empty((ncell, nq, nloc))
        self.dRu = np.empty((ncell, nq, nloc))
        self.dRv = np.empty((ncell, nq, nloc))
        for e, cellbox in enumerate(cells):
            mapped = map_rule(rule, cellbox)
            cols, R, dR, _ = patch.basis_batch(mapped.points, nderiv=1)
            self.cols[e] = cols[0]
            self.R[e] = R
            self.dRu[e] = dR[:, 0]
            self.dRv[e] = dR[:, 1]
            self.weights[e] = mapped.weights

    def geometry(self, points_flat):
        """Surface points and area jacobians at all regular rule points."""
        P = points_flat[self.cols]  # (ncell, nloc, 3)
        y = self.R @ P
        g1 = self.dRu @ P
        g2 = self.dRv @ P
        jac = np.linalg.norm(np.cross(g1, g2), axis=-1)
        if np.any(jac <= 0.0):
            raise DegenerateGeometryError(
                "vanishing surface jacobian at a regular quadrature point"
            )
        return y, jac


class _PointSet:
    """Cached basis data for an arbitrary batch of parametric points."""

    __slots__ = ("cols", "R", "dRu", "dRv", "weights")

    def __init__(self, patch, pts, weights):
        cols, R, dR, _ = patch.basis_batch(pts, nderiv=1)
        self.cols = cols[0]
        self.R = R
        self.dRu = dR[:, 0]
        self.dRv = dR[:, 1]
        self.weights = weights

    def geometry(self, points_flat):
        P = points_flat[self.cols]
        y = self.R @ P
        g1 = self.dRu @ P
        g2 = self.dRv @ P
        jac = np.linalg.norm(np.cross(g1, g2), axis=-1)
        if np.any(jac <= 0.0):
            raise DegenerateGeometryError(
                "vanishing surface jacobian at a singular-rule point"
            )
        return y, jac


def _min_quad_distance(x, xq_e):
    """Distance proxy: nearest regular quadrature point of one element.

    A bounding-box distance degenerates to zero on curved patches where
    boxes of non-owning elements overlap the collocation point; the
    quadrature skeleton keeps a positive floor tied to actual separation.
    """
    return np.linalg.norm(xq_e - x, axis=-1).min()


@dataclass
class BemSystem:
    """Assembled collocation system on one surface configuration."""

    eta: float
    collocation_points: np.ndarray  # (n, 3)
    Mc: sp.csr_matrix  # 3n x 3n
    Mu: sp.csr_matrix  # 3n x 3n
    Dc: np.ndarray  # 3n x 3n dense
    lu: tuple  # scipy lu_factor output
    rcond: float

    def solve_tractions(self, vcoef):
        """Traction coefficients f with Dc f = Mc vcoef."""
        return sla.lu_solve(self.lu, self.Mc @ np.asarray(vcoef, dtype=float))


class DampingOperator:
    """Action and materialization of C(u) = M_u D_c^{-1} M_c."""

    def __init__(self, system):
        self.system = system
        self._matrix = None

    @property
    def shape(self):
        n = self.system.Mc.shape[0]
        return (n, n)

    def action(self, vcoef):
        return self.system.Mu @ self.system.solve_tractions(vcoef)

    def matrix(self):
        """Dense C, materialized column by column and cached."""
        if self._matrix is None:
            Mc = self.system.Mc.toarray()
            F = sla.lu_solve(self.system.lu, Mc)
            self._matrix = np.asarray(self.system.Mu @ F)
        return self._matrix

    def force_resultant(self, vcoef):
        """Net fluid force on the body for surface velocity ``vcoef`` (N).

        The single-layer density f is the force density the surface exerts
        on the fluid; the body feels the reaction, hence the sign flip.
        """
        g = self.action(vcoef)
        return -g.reshape(-1, 3).sum(axis=0)


class BemAssembler:
    """Reusable assembler: parametric tables built once, geometry per call."""

    def __init__(self, patch, eta, config=None):
        if eta <= 0.0:
            raise ValueError("viscosity must be positive")
        self.patch = patch
        self.eta = float(eta)
        self.config = config or BemQuadConfig()
        self.table = _ElementTable(patch, self.config)
        self.colloc_params = patch.greville_points()
        self.n = patch.n_points
        self._near_sets = {}  # (cell index, depth) -> _PointSet, parametric
        self._build_mc()
        self._build_singular_tables()

    def _build_mc(self):
        pts = self.colloc_params
        cols, R, _, _ = self.patch.basis_batch(pts, nderiv=0)
        n = self.n
        rows = np.repeat(3 * np.arange(n), 3 * R.shape[1])
        rows = rows + np.tile(np.repeat([0, 1, 2], R.shape[1]), n)
        ccols = (3 * cols[:, None, :] + np.array([0, 1, 2])[None, :, None]).reshape(
            n, -1
        )
        vals = np.tile(R[:, None, :], (1, 3, 1)).reshape(n, -1)
        self.Mc = sp.csr_matrix(
            (vals.ravel(), (rows, ccols.ravel())), shape=(3 * n, 3 * n)
        )
        row_sums = np.asarray(self.Mc.sum(axis=1)).ravel()
        if not np.allclose(row_sums, 1.0, atol=1e-10):
            raise BemSingularError("collocation rows violate partition of unity")

    def _build_singular_tables(self):
        """Duffy rules for every (collocation point, containing cell) pair."""
        cells = self.table.cells
        tol_u = 1e-12 * (cells[:, 1].max() - cells[:, 0].min())
        tol_v = 1e-12 * (cells[:, 3].max() - cells[:, 2].min())
        self.singular = {}
        order = self.config.singular_order
        for i, (gu, gv) in enumerate(self.colloc_params):
            inside = (
                (cells[:, 0] - tol_u <= gu)
                & (gu <= cells[:, 1] + tol_u)
                & (cells[:, 2] - tol_v <= gv)
                & (gv <= cells[:, 3] + tol_v)
            )
            for e in np.nonzero(inside)[0]:
                u0, u1, v0, v1 = cells[e]
                s0 = (min(max(gu, u0), u1), min(max(gv, v0), v1))
                # reference-surface metric at the cell center steers the
                # Duffy aspect bisection in physical rather than
                # parametric space
                ev = self.patch.evaluate_batch(
                    np.array([[0.5 * (u0 + u1), 0.5 * (v0 + v1)]]), nderiv=1
                )
                metric = (np.linalg.norm(ev["xu"][0]), np.linalg.norm(ev["xv"][0]))
                rule = singular_rule(cells[e], s0, order, metric=metric)
                self.singular[(i, e)] = _PointSet(self.patch, rule.points, rule.weights)

    def assemble(self, displacement=None):
        """Build the BemSystem for the reference or a displaced control net."""
        if displacement is None:
            current = self.patch
        else:
            current = self.patch.displace(displacement)
        P = current.points_flat
        xq, jac = self.table.geometry(P)
        xc = current.evaluate_batch(self.colloc_params, nderiv=0)["x"]

        Mu = self._assemble_mu(jac)
        Dc = self._assemble_dc(current, P, xq, jac, xc)
        lu = sla.lu_factor(Dc)
        umin = np.abs(np.diag(lu[0])).min()
        if umin < 1e-14 * np.abs(Dc).max():
            worst = int(np.argmin(np.abs(np.diag(lu[0])))) // 3
            raise BemSingularError(
                "single-layer matrix numerically singular",
                collocation_index=worst,
                point=xc[worst],
            )
        rcond = _rcond_estimate(Dc, lu)
        return BemSystem(
            eta=self.eta,
            collocation_points=xc,
            Mc=self.Mc,
            Mu=Mu,
            Dc=Dc,
            lu=lu,
            rcond=rcond,
        )

    def _assemble_mu(self, jac):
        n = self.n
        t = self.table
        wj = t.weights * jac
        scalar = np.zeros((n, n))
        blocks = np.einsum("eqi,eq,eqj->eij", t.R, wj, t.R)
        for e in range(t.cells.shape[0]):
            scalar[np.ix_(t.cols[e], t.cols[e])] += blocks[e]
        return sp.kron(sp.csr_matrix(scalar), sp.eye(3), format="csr")

    def _near_pointset(self, e, depth):
        key = (e, depth)
        if key not in self._near_sets:
            rule = subdivided_rule(self.table.cells[e], depth, self.config.near_order)
            self._near_sets[key] = _PointSet(self.patch, rule.points, rule.weights)
        return self._near_sets[key]

    def _assemble_dc(self, current, P, xq, jac, xc):
        n = self.n
        t = self.table
        cfg = self.config
        Dc = np.zeros((3 * n, 3 * n))
        ncell = t.cells.shape[0]
        # element extents and collocation distances off the quadrature skeleton
        diam_phys = np.linalg.norm(xq.max(axis=1) - xq.min(axis=1), axis=1)
        diam_par = np.hypot(
            t.cells[:, 1] - t.cells[:, 0], t.cells[:, 3] - t.cells[:, 2]
        )
        dmin = np.linalg.norm(
            xc[None, :, None, :] - xq[:, None, :, :], axis=-1
        ).min(axis=2)
        geom_cache = {}
        for e in range(ncell):
            col3 = (3 * t.cols[e][:, None] + np.arange(3)).ravel()
            wj = t.weights[e] * jac[e]
            regular_rows = []
            for i in range(n):
                if (i, e) in self.singular:
                    ps = self.singular[(i, e)]
                    y, jq = ps.geometry(P)
                    self._add_block(Dc, ps, y, jq, i, xc[i])
                    continue
                d = dmin[e, i]
                if d < cfg.near_factor * diam_phys[e]:
                    d_par = d * diam_par[e] / diam_phys[e]
                    depth = near_singular_depth(t.cells[e], d_par)
                    if depth == 0:
                        regular_rows.append(i)
                        continue
                    ps = self._near_pointset(e, depth)
                    if (e, depth) not in geom_cache:
                        geom_cache[(e, depth)] = ps.geometry(P)
                    y, jq = geom_cache[(e, depth)]
                    self._add_block(Dc, ps, y, jq, i, xc[i])
                else:
                    regular_rows.append(i)
            if regular_rows:
                idx = np.array(regular_rows)
                r = xc[idx][:, None, :] - xq[e][None, :, :]
                S = stokeslet(r, self.eta)  # (ni, nq, 3, 3)
                Sw = S * wj[None, :, None, None]
                # sum_q S[i,q,a,b] R[q,n] as one (i*9, q) @ (q, n) product
                block = Sw.transpose(0, 2, 3, 1).reshape(-1, wj.size) @ t.R[e]
                block = block.reshape(idx.size, 3, 3, -1).transpose(0, 1, 3, 2)
                rows3 = (3 * idx[:, None] + np.arange(3)).ravel()
                Dc[np.ix_(rows3, col3)] += block.reshape(idx.size * 3, -1)
        return Dc

    def _add_block(self, Dc, ps, y, jq, i, x_i):
        S = stokeslet(x_i[None, :] - y, self.eta)  # (nq, 3, 3)
        Sw = S * (ps.weights * jq)[:, None, None]
        block = (ps.R.T @ Sw.reshape(-1, 9)).reshape(-1, 3, 3)
        col3 = (3 * ps.cols[:, None] + np.arange(3)).ravel()
        Dc[3 * i : 3 * i + 3, col3] += block.transpose(1, 0, 2).reshape(3, -1)


def _rcond_estimate(Dc, lu):
    gecon = get_lapack_funcs(("gecon",), (Dc,))[0]
    anorm = np.linalg.norm(Dc, 1)
    rcond, info = gecon(lu[0], anorm, norm="1")
    if info != 0:
        raise BemSingularError("condition estimation failed")
    return float(rcond)


def assemble_bem(patch, eta, config=None):
    """One-shot assembly on ``patch`` (already in its current configuration)."""
    return BemAssembler(patch, eta, config).assemble()


def damping_action(op, vcoef):
    return op.action(vcoef)


def damping_matrix(op):
    return op.matrix()


def offsurface_velocity(x, fcoef, patch, eta, config=None):
    """Single-layer velocity at a point x off the surface (m/s).

    Raises
    ------
    NearSurfaceError
        If x is within 1e-8 patch diameters of the surface, or so close
        that the near-singular subdivision cannot resolve the kernel.
    """
    cfg = config or BemQuadConfig()
    x = np.asarray(x, dtype=float)
    fcoef = np.asarray(fcoef, dtype=float).reshape(-1, 3)
    table = _ElementTable(patch, cfg)
    P = patch.points_flat
    xq, jac = table.geometry(P)
    s_star, dist = patch.closest_point(x)
    if dist < 1e-8 * patch.diameter():
        raise NearSurfaceError(f"evaluation point within {dist:g} m of the surface")
    diam_phys = np.linalg.norm(xq.max(axis=1) - xq.min(axis=1), axis=1)
    diam_par = np.hypot(
        table.cells[:, 1] - table.cells[:, 0], table.cells[:, 3] - table.cells[:, 2]
    )
    v = np.zeros(3)
    for e in range(table.cells.shape[0]):
        d = _min_quad_distance(x, xq[e])
        u0, u1, v0, v1 = table.cells[e]
        if u0 <= s_star[0] <= u1 and v0 <= s_star[1] <= v1:
            # element under the projection foot: use the true separation
            d = min(d, dist)
        if d < cfg.near_factor * diam_phys[e]:
            d_par = d * diam_par[e] / diam_phys[e]
            try:
                rule = near_singular_rule(table.cells[e], d_par, cfg.near_order)
            except NearSingularOverflowError as exc:
                raise NearSurfaceError(
                    f"evaluation point {dist:g} m from the surface is too close "
                    "for accurate quadrature"
                ) from exc
            ps = _PointSet(patch, rule.points, rule.weights)
            y, jq = ps.geometry(P)
            fq = ps.R @ fcoef[ps.cols]
            wj = ps.weights * jq
        else:
            y = xq[e]
            fq = table.R[e] @ fcoef[table.cols[e]]
            wj = table.weights[e] * jac[e]
        S = stokeslet(x[None, :] - y, eta)
        v += np.einsum("qab,q,qb->a", S, wj, fq)
    return v


def dump_system(system, prefix, tractions=None):
    """Matrix-market text dump of Dc, Mc, Mu (and optional tractions)."""
    from scipy.io import mmwrite

    mmwrite(f"{prefix}_dc.mtx", sp.coo_matrix(system.Dc))
    mmwrite(f"{prefix}_mc.mtx", sp.coo_matrix(system.Mc))
    mmwrite(f"{prefix}_mu.mtx", sp.coo_matrix(system.Mu))
    if tractions is not None:
        mmwrite(f"{prefix}_tractions.mtx", np.asarray(tractions).reshape(-1, 1))
    return prefix
