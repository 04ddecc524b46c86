"""Rotation-free Kirchhoff-Love shell on a single NURBS patch.

St.Venant-Kirchhoff material with the standard plane-stress reduction.
Membrane strain is the change of the first fundamental form, bending
strain the change of the second; both live in the covariant basis of the
reference surface and the through-thickness direction is integrated out
analytically.  Internal forces are the exact gradient of the discrete
strain energy and the tangent stiffness its Hessian, built from the
analytic first and second variations of the strains with respect to
control-point displacements.

Conventions
-----------
Global DOF ordering is control-point major: DOF 3*a + i is component i
of control point a (flat index, second parametric index fastest).  The
internal force P satisfies P = dE/du, so the equations of motion read
M u'' + C u' + P(u) - F = 0.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    DomainError,
    ElementDegeneracyError,
    StepFailureError,
)
from .quadrature import cell_rule, gauss_legendre, map_rule

__all__ = [
    "ShellMaterial",
    "BoundarySpec",
    "StrainState",
    "BodyLoad",
    "SurfaceLoad",
    "EdgeLoad",
    "ReferenceGeometry",
    "ShellSystem",
    "plane_stress_tensor",
    "strains",
    "stress_resultants",
    "strain_variations",
    "strain_second_variations",
    "internal_forces",
    "stiffness",
    "strain_energy",
    "mass_matrix",
    "external_load",
    "apply_constraints",
    "expand_constrained",
    "solve_static",
    "dump_state",
]

# Levi-Civita symbol, used for cross products with basis vectors.
_EPS3 = np.zeros((3, 3, 3))
_EPS3[0, 1, 2] = _EPS3[1, 2, 0] = _EPS3[2, 0, 1] = 1.0
_EPS3[0, 2, 1] = _EPS3[2, 1, 0] = _EPS3[1, 0, 2] = -1.0

_EDGES = ("umin", "umax", "vmin", "vmax")
_CONDITIONS = ("free", "hinged", "clamped")


@dataclass(frozen=True)
class ShellMaterial:
    """St.Venant-Kirchhoff shell material.

    Parameters
    ----------
    E : float
        Young's modulus (Pa).
    nu : float
        Poisson ratio, 0 <= nu < 0.5.
    rho : float
        Density (kg/m^3).
    h : float
        Shell thickness (m).
    """

    E: float
    nu: float
    rho: float
    h: float

    def __post_init__(self):
        if not self.E > 0:
            raise DomainError(f"Young's modulus must be positive, got {self.E}")
        if not 0.0 <= self.nu < 0.5:
            raise DomainError(f"Poisson ratio must be in [0, 0.5), got {self.nu}")
        if not self.rho > 0:
            raise DomainError(f"density must be positive, got {self.rho}")
        if not self.h > 0:
            raise DomainError(f"thickness must be positive, got {self.h}")

    @property
    def lame_lambda(self):
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def lame_mu(self):
        return self.E / (2.0 * (1.0 + self.nu))


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary condition per patch edge: free, hinged or clamped.

    Hinged constrains the displacement DOFs of the edge control-point
    row; clamped additionally constrains the adjacent row, which fixes
    the surface tangent plane along the edge.
    """

    umin: str = "free"
    umax: str = "free"
    vmin: str = "free"
    vmax: str = "free"

    def __post_init__(self):
        for edge in _EDGES:
            cond = getattr(self, edge)
            if cond not in _CONDITIONS:
                raise ConfigError(
                    f"unknown condition {cond!r} on edge {edge!r}; "
                    f"expected one of {_CONDITIONS}"
                )

    def constrained_points(self, shape):
        """Indices of constrained control points for a (n0, n1) net."""
        n0, n1 = shape
        rows = {
            "umin": lambda k: k * n1 + np.arange(n1),
            "umax": lambda k: (n0 - 1 - k) * n1 + np.arange(n1),
            "vmin": lambda k: np.arange(n0) * n1 + k,
            "vmax": lambda k: np.arange(n0) * n1 + (n1 - 1 - k),
        }
        idx = []
        for edge in _EDGES:
            cond = getattr(self, edge)
            depth = {"free": 0, "hinged": 1, "clamped": 2}[cond]
            n_rows = n0 if edge in ("umin", "umax") else n1
            if depth >= n_rows:
                raise ConfigError(f"edge {edge!r} condition spans the whole net")
            for k in range(depth):
                idx.append(rows[edge](k))
        if not idx:
            return np.empty(0, dtype=int)
        return np.unique(np.concatenate(idx))


@dataclass(frozen=True)
class StrainState:
    """Strains and stress resultants at one surface point.

    eps is the covariant membrane strain (dimensionless), kap the
    covariant bending strain (1/m).  n_res (N/m) and m_res (N) are the
    contravariant force and moment resultants; they are None until
    computed by stress_resultants.
    """

    eps: np.ndarray
    kap: np.ndarray
    n_res: np.ndarray = None
    m_res: np.ndarray = None


@dataclass(frozen=True)
class BodyLoad:
    """Volumetric force density (N/m^3), integrated through the thickness."""

    vector: tuple

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(np.asarray(self.vector, float)))
        if len(self.vector) != 3:
            raise ConfigError("body load vector must have 3 components")


@dataclass(frozen=True)
class SurfaceLoad:
    """Surface force density (N/m^2), dead load on the reference surface."""

    vector: tuple

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(np.asarray(self.vector, float)))
        if len(self.vector) != 3:
            raise ConfigError("surface load vector must have 3 components")


@dataclass(frozen=True)
class EdgeLoad:
    """Line force density (N/m) on one patch edge of the reference surface."""

    edge: str
    vector: tuple

    def __post_init__(self):
        if self.edge not in _EDGES:
            raise ConfigError(
                f"unknown edge {self.edge!r}; expected one of {_EDGES}"
            )
        object.__setattr__(self, "vector", tuple(np.asarray(self.vector, float)))
        if len(self.vector) != 3:
            raise ConfigError("edge load vector must have 3 components")


def plane_stress_tensor(mat, Gcontra):
    """Plane-stress material tensor C^{abgd} on a contravariant metric.

    C^{abgd} = lb G^{ab} G^{gd} + mu (G^{ag} G^{bd} + G^{ad} G^{bg})
    with lb = 2*lambda*mu/(lambda + 2*mu), the Lame constants of the
    bulk material.  Batched over any leading axes of Gcontra.

    Parameters
    ----------
    mat : ShellMaterial
    Gcontra : ndarray, shape (..., 2, 2)
        Contravariant surface metric, SPD.

    Returns
    -------
    ndarray, shape (..., 2, 2, 2, 2)
    """
    lam, mu = mat.lame_lambda, mat.lame_mu
    lb = 2.0 * lam * mu / (lam + 2.0 * mu)
    G = np.asarray(Gcontra, dtype=float)
    return (
        lb * np.einsum("...ab,...gd->...abgd", G, G)
        + mu * np.einsum("...ag,...bd->...abgd", G, G)
        + mu * np.einsum("...ad,...bg->...abgd", G, G)
    )


def strains(ref_frame, cur_frame):
    """Membrane and bending strains between two frames at one point.

    eps = (g - G)/2 and kap = B - b, with (G, B) from ref_frame and
    (g, b) from cur_frame.  Both frames must be evaluated at the same
    parametric point.
    """
    eps = 0.5 * (cur_frame.metric - ref_frame.metric)
    kap = ref_frame.curvature - cur_frame.curvature
    return StrainState(eps=eps, kap=kap)


def stress_resultants(mat, Chat, strain):
    """Normal-force and moment resultants n = h C:eps, m = h^3/12 C:kap."""
    n_res = mat.h * np.einsum("...abgd,...gd->...ab", Chat, strain.eps)
    m_res = mat.h**3 / 12.0 * np.einsum("...abgd,...gd->...ab", Chat, strain.kap)
    return StrainState(eps=strain.eps, kap=strain.kap, n_res=n_res, m_res=m_res)


def _normal_data(g1, g2):
    """Unnormalized normal, its length and the unit normal; batched."""
    gt3 = np.cross(g1, g2)
    lg3 = np.linalg.norm(gt3, axis=-1)
    scale = np.linalg.norm(g1, axis=-1) * np.linalg.norm(g2, axis=-1)
    if np.any(lg3 <= 1e-14 * np.maximum(scale, 1e-300)):
        raise ElementDegeneracyError(
            "degenerate tangent plane at a shell quadrature point"
        )
    return gt3, lg3, gt3 / lg3[..., None]


def strain_variations(g1, g2, xab, dN, d2N):
    """First variations of eps and kap w.r.t. local control-point DOFs.

    All arguments are evaluated at one surface point on the current
    configuration and may carry identical leading batch axes.

    Parameters
    ----------
    g1, g2 : ndarray, shape (..., 3)
        Current covariant tangent vectors.
    xab : ndarray, shape (..., 2, 2, 3)
        Current second-derivative vectors x_{,ab}.
    dN : ndarray, shape (..., 2, nloc)
        First parametric derivatives of the supported basis functions.
    d2N : ndarray, shape (..., 2, 2, nloc)
        Second parametric derivatives, indexed [a, b].

    Returns
    -------
    deps, dkap : ndarray, shape (..., 2, 2, nloc, 3)
        Variations indexed [alpha, beta, a, i] for DOF (a, i).
    """
    data = _variation_data(g1, g2, xab, dN, d2N)
    return data["deps"], data["dkap"]


def _variation_data(g1, g2, xab, dN, d2N):
    """First-variation chain with the auxiliary normal quantities.

    Returns a dict carrying deps/dkap plus the intermediates (dgt3, dlg,
    dg3, gt3, lg3, g3) that the factored stiffness assembly reuses.
    """
    g1 = np.asarray(g1, float)
    g2 = np.asarray(g2, float)
    gt3, lg3, g3 = _normal_data(g1, g2)
    g_stack = np.stack([g1, g2], axis=-2)

    # g_{ab},I = N,a^a e_i . g_b + N,b^a e_i . g_a
    t = np.einsum("...xa,...yi->...xyai", dN, g_stack)
    dg = t + np.swapaxes(t, -4, -3)
    deps = 0.5 * dg

    # gt3,I = N,1^a (e_i x g2) + N,2^a (g1 x e_i)
    e_x_g2 = np.einsum("kim,...m->...ik", _EPS3, g2)
    g1_x_e = np.einsum("ikm,...m->...ik", _EPS3, g1)
    dgt3 = np.einsum("...a,...ik->...aik", dN[..., 0, :], e_x_g2) + np.einsum(
        "...a,...ik->...aik", dN[..., 1, :], g1_x_e
    )
    # lg3,I = g3 . gt3,I ; g3,I = (gt3,I - lg3,I g3)/lg3
    dlg = np.einsum("...aik,...k->...ai", dgt3, g3)
    dg3 = (dgt3 - dlg[..., None] * g3[..., None, None, :]) / lg3[
        ..., None, None, None
    ]

    # b_{ab},I = x_{,ab},I . g3 + x_{,ab} . g3,I
    db = np.einsum("...xya,...i->...xyai", d2N, g3) + np.einsum(
        "...xyk,...aik->...xyai", xab, dg3
    )
    return {
        "deps": deps,
        "dkap": -db,
        "dgt3": dgt3,
        "dlg": dlg,
        "dg3": dg3,
        "gt3": gt3,
        "lg3": lg3,
        "g3": g3,
    }


def strain_second_variations(g1, g2, xab, dN, d2N):
    """Second variations of eps and kap w.r.t. local control-point DOFs.

    Same arguments as strain_variations.  Returns the full tensors;
    the factored forms used by the assembly avoid materializing them.

    Returns
    -------
    d2eps, d2kap : ndarray, shape (..., 2, 2, nloc, 3, nloc, 3)
        Variations indexed [alpha, beta, a, i, b, j], symmetric under
        (a, i) <-> (b, j).
    """
    g1 = np.asarray(g1, float)
    g2 = np.asarray(g2, float)
    gt3, lg3, g3 = _normal_data(g1, g2)
    eye = np.eye(3)

    # g_{ab},IJ = (N,a^a N,b^b + N,b^a N,a^b) delta_ij
    t = np.einsum("...xa,...yb->...xyab", dN, dN)
    d2g = t + np.swapaxes(t, -4, -3)
    d2eps = 0.5 * np.einsum("...xyab,ij->...xyaibj", d2g, eye)

    # gt3,IJ = A_ab eps_kij with A antisymmetric in (a, b)
    A = np.einsum("...a,...b->...ab", dN[..., 0, :], dN[..., 1, :])
    A = A - np.swapaxes(A, -2, -1)
    d2gt3 = np.einsum("...ab,kij->...aibjk", A, _EPS3)

    e_x_g2 = np.einsum("kim,...m->...ik", _EPS3, g2)
    g1_x_e = np.einsum("ikm,...m->...ik", _EPS3, g1)
    dgt3 = np.einsum("...a,...ik->...aik", dN[..., 0, :], e_x_g2) + np.einsum(
        "...a,...ik->...aik", dN[..., 1, :], g1_x_e
    )
    dlg = np.einsum("...aik,...k->...ai", dgt3, g3)
    dg3 = (dgt3 - dlg[..., None] * g3[..., None, None, :]) / lg3[
        ..., None, None, None
    ]

    inv = 1.0 / lg3[..., None, None, None, None]
    d2lg = inv * (
        np.einsum("...aibjk,...k->...aibj", d2gt3, gt3)
        + np.einsum("...aik,...bjk->...aibj", dgt3, dgt3)
        - np.einsum("...ai,...bj->...aibj", dlg, dlg)
    )
    d2g3 = inv[..., None] * (
        d2gt3 - np.einsum("...aibj,...k->...aibjk", d2lg, g3)
    ) + inv[..., None] ** 2 * (
        2.0 * np.einsum("...ai,...bj,...k->...aibjk", dlg, dlg, g3)
        - np.einsum("...ai,...bjk->...aibjk", dlg, dgt3)
        - np.einsum("...bj,...aik->...aibjk", dlg, dgt3)
    )

    # b_{ab},IJ = x_{,ab},I . g3,J + x_{,ab},J . g3,I + x_{,ab} . g3,IJ
    t1 = np.einsum("...xya,...bji->...xyaibj", d2N, dg3)
    d2b = (
        t1
        + np.moveaxis(t1, (-4, -3, -2, -1), (-2, -1, -4, -3))
        + np.einsum("...xyk,...aibjk->...xyaibj", xab, d2g3)
    )
    return d2eps, -d2b


class ReferenceGeometry:
    """Immutable per-quadrature-point cache of the reference surface.

    Holds, for every knot-span element and Gauss point: the supported
    basis values with first and second parametric derivatives, the
    reference tangents, unit normal, metric (both kinds), curvature
    coefficients and area jacobian, plus the plane-stress material
    tensor evaluated on the reference metric.
    """

    def __init__(self, patch, material, order=None):
        self.patch = patch
        self.material = material
        if order is None:
            order = max(patch.kv_u.degree, patch.kv_v.degree) + 1
        self.order = order
        cells = patch.cells()
        self.cells = cells
        rules = [map_rule(cell_rule(order, order), c) for c in cells]
        self.qp = np.stack([r.points for r in rules])  # (nel, nq, 2)
        self.qw = np.stack([r.weights for r in rules])  # (nel, nq)
        nel, nq = self.qw.shape

        cols, N, dN, d2N = [], [], [], []
        for e in range(nel):
            c, R, dR, d2R = patch.basis_batch(self.qp[e], nderiv=2)
            # interior Gauss points of one cell share the same support
            cols.append(c[0])
            N.append(R)
            dN.append(dR)
            d2N.append(d2R)
        self.cols = np.stack(cols)  # (nel, nloc)
        self.N = np.stack(N)  # (nel, nq, nloc)
        self.dN = np.stack(dN)  # (nel, nq, 2, nloc)
        d2N = np.stack(d2N)  # (nel, nq, 3, nloc) ordered uu, uv, vv
        # symmetric (2, 2) layout for the variation formulas
        self.d2N = d2N[:, :, [[0, 1], [1, 2]], :]  # (nel, nq, 2, 2, nloc)

        P = patch.points_flat
        Ploc = P[self.cols]  # (nel, nloc, 3)
        self.G1 = np.einsum("eqn,enk->eqk", self.dN[:, :, 0], Ploc)
        self.G2 = np.einsum("eqn,enk->eqk", self.dN[:, :, 1], Ploc)
        self.Xab = np.einsum("eqxyn,enk->eqxyk", self.d2N, Ploc)
        Gt3 = np.cross(self.G1, self.G2)
        self.jac = np.linalg.norm(Gt3, axis=-1)
        scale = np.linalg.norm(self.G1, axis=-1) * np.linalg.norm(self.G2, axis=-1)
        if np.any(self.jac <= 1e-14 * np.maximum(scale, 1e-300)):
            raise DegenerateGeometryError(
                "reference surface is degenerate at a quadrature point"
            )
        self.G3 = Gt3 / self.jac[..., None]
        Gs = np.stack([self.G1, self.G2], axis=-2)
        self.Gab = np.einsum("eqxk,eqyk->eqxy", Gs, Gs)
        self.Gcontra = np.linalg.inv(self.Gab)
        self.Bab = np.einsum("eqxyk,eqk->eqxy", self.Xab, self.G3)
        self.dA = self.qw * self.jac
        self.Chat = plane_stress_tensor(material, self.Gcontra)
        for arr in (
            self.qp, self.qw, self.cols, self.N, self.dN, self.d2N,
            self.G1, self.G2, self.Xab, self.jac, self.G3, self.Gab,
            self.Gcontra, self.Bab, self.dA, self.Chat,
        ):
            arr.setflags(write=False)

    @property
    def n_elements(self):
        return self.cells.shape[0]


class ShellSystem:
    """Shell patch + material + boundary conditions + quadrature cache."""

    def __init__(self, patch, material, boundary=None, quad_order=None):
        self.patch = patch
        self.material = material
        self.boundary = boundary or BoundarySpec()
        self.ref = ReferenceGeometry(patch, material, order=quad_order)
        self.n_dofs = 3 * patch.n_points
        pts = self.boundary.constrained_points(patch.shape)
        self.constrained_dofs = (3 * pts[:, None] + np.arange(3)).ravel()
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        self.free_dofs = np.flatnonzero(mask)
        if self.free_dofs.size == 0:
            raise ConfigError("boundary conditions constrain every DOF")
        # global DOF indices per element, (nel, 3*nloc)
        self.gdof = (3 * self.ref.cols[:, :, None] + np.arange(3)).reshape(
            self.ref.cols.shape[0], -1
        )

    def _zero_constrained(self, u):
        u = np.asarray(u, dtype=float).reshape(self.n_dofs).copy()
        u[self.constrained_dofs] = 0.0
        return u

    def _current_kinematics(self, u):
        """Tangents, second derivatives and strain state at all qps."""
        ref = self.ref
        P = self.patch.points_flat + u.reshape(-1, 3)
        Ploc = P[ref.cols]
        g1 = np.einsum("eqn,enk->eqk", ref.dN[:, :, 0], Ploc)
        g2 = np.einsum("eqn,enk->eqk", ref.dN[:, :, 1], Ploc)
        xab = np.einsum("eqxyn,enk->eqxyk", ref.d2N, Ploc)
        gt3, lg3, g3 = _normal_data(g1, g2)
        gs = np.stack([g1, g2], axis=-2)
        gab = np.einsum("eqxk,eqyk->eqxy", gs, gs)
        bab = np.einsum("eqxyk,eqk->eqxy", xab, g3)
        eps = 0.5 * (gab - ref.Gab)
        kap = ref.Bab - bab
        n = self.material.h * np.einsum("eqabgd,eqgd->eqab", ref.Chat, eps)
        m = (
            self.material.h**3
            / 12.0
            * np.einsum("eqabgd,eqgd->eqab", ref.Chat, kap)
        )
        return g1, g2, xab, g3, gt3, lg3, eps, kap, n, m

    def point_displacement(self, s, u):
        """Displacement field value at a parametric point."""
        u = np.asarray(u, dtype=float).reshape(-1, 3)
        span = self.patch.basis_at(np.asarray(s, float), nderiv=0)
        return span.values @ u[span.indices]

    def strains_at(self, s, u):
        """StrainState with resultants at one parametric point."""
        s = np.asarray(s, dtype=float)
        u = self._zero_constrained(u)
        ref_frame = self.patch.frame(s)
        cur_frame = self.patch.displace(u.reshape(-1, 3)).frame(s)
        st = strains(ref_frame, cur_frame)
        Chat = plane_stress_tensor(
            self.material, np.linalg.inv(ref_frame.metric)
        )
        return stress_resultants(self.material, Chat, st)




def assemble_forces(system, u, want_stiffness=True):
    """Internal force vector and optionally the tangent stiffness.

    Shares the kinematic intermediates between P and K, which matters in
    Newton loops.  P is the exact gradient of strain_energy and K its
    Hessian.  The geometric stiffness contracts the stress resultants
    into the factored second-variation terms, so the large 6-index
    tensors of strain_second_variations are never materialized; a test
    pins this assembly against that reference implementation.

    Returns
    -------
    (P, K) : K is None when want_stiffness is False.
    """
    ref = system.ref
    mat = system.material
    u = system._zero_constrained(u)
    g1, g2, xab, g3, gt3, lg3, eps, kap, n, m = system._current_kinematics(u)
    data = _variation_data(g1, g2, xab, ref.dN, ref.d2N)
    deps, dkap = data["deps"], data["dkap"]

    w = ref.dA
    Pel = np.einsum(
        "eq,eqxy,eqxyai->eai", w, n, deps, optimize=True
    ) + np.einsum("eq,eqxy,eqxyai->eai", w, m, dkap, optimize=True)
    P = np.zeros(system.n_dofs)
    np.add.at(P, system.gdof, Pel.reshape(Pel.shape[0], -1))
    if not want_stiffness:
        return P, None

    dgt3, dlg, dg3 = data["dgt3"], data["dlg"], data["dg3"]
    nel, nloc = ref.cols.shape
    nq = w.shape[1]
    ndl = 3 * nloc
    dN1 = ref.dN[:, :, 0]
    dN2 = ref.dN[:, :, 1]
    inv = 1.0 / lg3

    # The 6-index contractions are written as batched matrix products
    # over flattened (quadrature, strain-component) axes; einsum cannot
    # dispatch them to BLAS because every operand shares the batch axes.

    # material part: h (C:deps_J):deps_I + h^3/12 (C:dkap_J):dkap_I
    deps_f = deps.reshape(nel, nq, 4, ndl)
    dkap_f = dkap.reshape(nel, nq, 4, ndl)
    Chat_f = ref.Chat.reshape(nel, nq, 4, 4)
    dn = mat.h * (Chat_f @ deps_f)
    dm = (mat.h**3 / 12.0) * (Chat_f @ dkap_f)
    wq = w[:, :, None, None]
    Kel = deps_f.transpose(0, 3, 1, 2).reshape(nel, ndl, nq * 4) @ (
        wq * dn
    ).reshape(nel, nq * 4, ndl)
    Kel += dkap_f.transpose(0, 3, 1, 2).reshape(nel, ndl, nq * 4) @ (
        wq * dm
    ).reshape(nel, nq * 4, ndl)

    # geometric bending: m : kap,IJ = -(T + T^t + mx . g3,IJ)
    mx = np.einsum("eqxy,eqxyk->eqk", m, xab)
    c = np.einsum("eqk,eqk->eq", mx, g3)
    md2N = np.einsum("eqxy,eqxya->eqa", m, ref.d2N)
    emx = np.einsum("kij,eqk->eqij", _EPS3, mx)
    egt = np.einsum("kij,eqk->eqij", _EPS3, gt3)
    mx_dgt3 = np.einsum("eqk,eqaik->eqai", mx, dgt3)
    A = np.einsum("eqa,eqb->eqab", dN1, dN2)
    A = A - np.swapaxes(A, -2, -1)

    T = (w[:, :, None] * md2N).transpose(0, 2, 1) @ dg3.reshape(
        nel, nq, nloc * 9
    )
    T = T.reshape(nel, nloc, nloc, 3, 3)  # [a, b, j, i]
    T = T.transpose(0, 1, 4, 2, 3).reshape(nel, ndl, ndl)
    Kel -= T + T.transpose(0, 2, 1)
    # mx . g3,IJ, assembled from the factored pieces of a3_rs
    Af = A.reshape(nel, nq, nloc * nloc)
    ci2 = w * c * inv**2
    G = (ci2[:, :, None] * Af).transpose(0, 2, 1) @ egt.reshape(nel, nq, 9)
    G -= ((w * inv)[:, :, None] * Af).transpose(0, 2, 1) @ emx.reshape(
        nel, nq, 9
    )
    G = G.reshape(nel, nloc, nloc, 3, 3)  # [a, b, i, j]
    Kel += G.transpose(0, 1, 3, 2, 4).reshape(nel, ndl, ndl)

    Df = dgt3.reshape(nel, nq, ndl, 3)
    Kel += Df.transpose(0, 2, 1, 3).reshape(nel, ndl, nq * 3) @ (
        ci2[:, :, None, None] * Df
    ).transpose(0, 1, 3, 2).reshape(nel, nq * 3, ndl)

    dlg_f = dlg.reshape(nel, nq, ndl)
    lhs = dlg_f.transpose(0, 2, 1)
    Kel -= 3.0 * (lhs @ (ci2[:, :, None] * dlg_f))
    T = lhs @ ((w * inv**2)[:, :, None] * mx_dgt3.reshape(nel, nq, ndl))
    Kel += T + T.transpose(0, 2, 1)

    # geometric membrane: n : eps,IJ = (n^{xy} N,x^a N,y^b) delta_ij
    ndN = np.einsum("eqxy,eqxa->eqya", n, ref.dN)
    Sm = (w[:, :, None, None] * ndN).transpose(0, 3, 1, 2).reshape(
        nel, nloc, nq * 2
    ) @ ref.dN.reshape(nel, nq * 2, nloc)
    Kv = Kel.reshape(nel, nloc, 3, nloc, 3)
    Kv += Sm[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]

    K = np.zeros((system.n_dofs, system.n_dofs))
    gdof = system.gdof
    np.add.at(K, (gdof[:, :, None], gdof[:, None, :]), Kel)
    return P, K


def internal_forces(system, u):
    """Internal force vector P = dE/du (N), full-length (3n,)."""
    return assemble_forces(system, u, want_stiffness=False)[0]


def residual_noise_gauge(system):
    """Roundoff floor of the assembled internal-force norm (N).

    The strains are differences of O(1) metric quantities, so they carry
    an absolute noise of machine epsilon that the membrane stiffness E h
    amplifies into the force (bending noise passes through E h^3/12 and
    the second-derivative magnitudes).  Summing absolute quadrature
    contributions of the strain variations bounds the amplification; no
    assembled residual can resolve below this level, so Newton loops may
    accept there.
    """
    ref = system.ref
    mat = system.material
    deps, dkap = strain_variations(ref.G1, ref.G2, ref.Xab, ref.dN, ref.d2N)
    scale_m = mat.E * mat.h
    scale_b = mat.E * mat.h**3 / 12.0
    Tel = np.einsum(
        "eq,eqxyai->eai",
        ref.dA,
        scale_m * np.abs(deps) + scale_b * np.abs(dkap),
    )
    T = np.zeros(system.n_dofs)
    np.add.at(T, system.gdof, Tel.reshape(Tel.shape[0], -1))
    return np.finfo(float).eps * np.linalg.norm(T[system.free_dofs])


def stiffness(system, u):
    """Tangent stiffness K = dP/du, dense symmetric (3n, 3n)."""
    return assemble_forces(system, u, want_stiffness=True)[1]


def strain_energy(system, u):
    """Discrete strain energy E(u) (J)."""
    ref = system.ref
    u = system._zero_constrained(u)
    _, _, _, _, _, _, eps, kap, n, m = system._current_kinematics(u)
    dens = 0.5 * (
        np.einsum("eqxy,eqxy->eq", n, eps) + np.einsum("eqxy,eqxy->eq", m, kap)
    )
    return float(np.sum(ref.dA * dens))


def mass_matrix(system):
    """Consistent mass M = rho h int Phi.Phi dA, sparse SPD (3n, 3n).

    Built on the reference configuration; block structure is the scalar
    control-point mass replicated over the three components.
    """
    ref = system.ref
    n_cp = system.patch.n_points
    blocks = np.einsum(
        "eq,eqa,eqb->eab", ref.dA, ref.N, ref.N, optimize=True
    ) * (system.material.rho * system.material.h)
    nel, nloc = ref.cols.shape
    rows = np.repeat(ref.cols, nloc, axis=1).ravel()
    cols = np.tile(ref.cols, (1, nloc)).ravel()
    scalar = sp.coo_matrix(
        (blocks.ravel(), (rows, cols)), shape=(n_cp, n_cp)
    ).tocsr()
    return sp.kron(scalar, sp.identity(3), format="csr")


def _edge_rule(patch, edge, order):
    """1D quadrature points/weights along a patch edge, as 2D points."""
    along = patch.kv_v if edge in ("umin", "umax") else patch.kv_u
    fixed = {
        "umin": patch.kv_u.start,
        "umax": patch.kv_u.end,
        "vmin": patch.kv_v.start,
        "vmax": patch.kv_v.end,
    }[edge]
    xg, wg = gauss_legendre(order)
    pts, wts = [], []
    breaks = np.unique(along.knots)
    for a, b in zip(breaks[:-1], breaks[1:]):
        pts.append(a + (b - a) * xg)
        wts.append((b - a) * wg)
    t = np.concatenate(pts)
    w = np.concatenate(wts)
    if edge in ("umin", "umax"):
        s = np.column_stack([np.full_like(t, fixed), t])
        tang_axis = 1
    else:
        s = np.column_stack([t, np.full_like(t, fixed)])
        tang_axis = 0
    return s, w, tang_axis


def external_load(system, loads):
    """Consistent load vector for body, surface and edge dead loads.

    Parameters
    ----------
    loads : load spec or list of load specs
        BodyLoad (N/m^3, multiplied by the thickness), SurfaceLoad
        (N/m^2) and EdgeLoad (N/m) instances.

    Returns
    -------
    ndarray, shape (3n,)
        Reference-configuration consistent load vector (N).
    """
    if isinstance(loads, (BodyLoad, SurfaceLoad, EdgeLoad)):
        loads = [loads]
    ref = system.ref
    F = np.zeros(system.n_dofs)
    area_vec = np.zeros(3)
    for load in loads:
        if isinstance(load, BodyLoad):
            area_vec += system.material.h * np.asarray(load.vector)
        elif isinstance(load, SurfaceLoad):
            area_vec += np.asarray(load.vector)
        elif isinstance(load, EdgeLoad):
            s, w, tang_axis = _edge_rule(
                system.patch, load.edge, system.ref.order
            )
            cols, R, dR, _ = system.patch.basis_batch(s, nderiv=1)
            P = system.patch.points_flat[cols]
            tang = np.einsum("qn,qnk->qk", dR[:, tang_axis, :], P)
            line_jac = np.linalg.norm(tang, axis=-1)
            Floc = np.einsum(
                "q,qa,i->qai", w * line_jac, R, np.asarray(load.vector)
            )
            np.add.at(F.reshape(-1, 3), cols, Floc)
        else:
            raise ConfigError(f"unknown load spec {load!r}")
    if np.any(area_vec != 0.0):
        Floc = np.einsum("eq,eqa,i->eai", ref.dA, ref.N, area_vec)
        np.add.at(F.reshape(-1, 3), ref.cols, Floc)
    return F


def apply_constraints(system, A):
    """Remove constrained DOFs from a vector or square matrix."""
    free = system.free_dofs
    A = np.asarray(A)
    if A.ndim == 1:
        return A[free]
    if A.ndim == 2:
        return A[np.ix_(free, free)]
    raise ConfigError("apply_constraints expects a vector or a square matrix")


def expand_constrained(system, u_free):
    """Scatter a reduced vector back to full length with zeros."""
    u = np.zeros(system.n_dofs)
    u[system.free_dofs] = np.asarray(u_free, dtype=float)
    return u


def solve_static(system, F, u0=None, rel_tol=1e-8, abs_tol=1e-12,
                 max_iter=30, n_steps=1):
    """Static equilibrium P(u) = F by Newton's method with load stepping.

    Parameters
    ----------
    F : ndarray, shape (3n,)
        Full-length external load vector.
    n_steps : int
        Number of proportional load increments.

    Returns
    -------
    ndarray, shape (3n,)
        Full displacement vector (zeros on constrained DOFs).

    Raises
    ------
    StepFailureError
        If Newton fails to converge within max_iter at any load level.
    """
    F = np.asarray(F, dtype=float)
    u = system._zero_constrained(u0 if u0 is not None else np.zeros(system.n_dofs))
    free = system.free_dofs
    for step in range(1, n_steps + 1):
        Fs = F * (step / n_steps)
        ref_norm = None
        for it in range(max_iter + 1):
            P, K = assemble_forces(system, u)
            r = (P - Fs)[free]
            rn = np.linalg.norm(r)
            if ref_norm is None:
                ref_norm = rn
            if rn <= abs_tol or rn <= rel_tol * ref_norm:
                break
            if it == max_iter:
                raise StepFailureError(
                    f"static Newton stalled at load step {step}/{n_steps}: "
                    f"|r| = {rn:.3e}"
                )
            du = sla.solve(K[np.ix_(free, free)], -r, assume_a="sym")
            u[free] += du
            # The assembled residual has a roundoff floor: strain noise of
            # order eps_mach is amplified by the membrane stiffness E h, so
            # for bending-dominated states |r| may stagnate well above
            # rel_tol * |F|.  Once the increment is at roundoff relative to
            # the solution the iteration is only chasing that noise; this
            # cannot hide divergence since |du| >= |r| / |K|.
            if np.linalg.norm(du) <= 1e-10 * np.linalg.norm(u[free]):
                break
    return u


def dump_state(system, u, prefix):
    """Write P and K at state u in Matrix Market format.

    Creates <prefix>_P.mtx and <prefix>_K.mtx.
    """
    from scipy.io import mmwrite

    P, K = assemble_forces(system, u)
    mmwrite(f"{prefix}_P", P[:, None])
    mmwrite(f"{prefix}_K", K)
    return [f"{prefix}_P.mtx", f"{prefix}_K.mtx"]
