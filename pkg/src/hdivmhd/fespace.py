"""Discrete spaces: BDM_k velocity, continuous vector P_k magnetic field, P_{k-1} pressure.

All spaces expose the same evaluation surface::

    space.cell_dofs              (ne, nloc) global DOF indices
    space.evaluate(cells, pts)   values (N, nq, nloc, 3) and gradients (N, nq, nloc, 3, 3)

where ``pts`` are reference-tet coordinates, either shared (nq, 3) or per cell
(N, nq, 3).  Gradients are indexed [component, derivative].  The pressure space
is scalar: values (N, nq, nloc), gradients are not needed.

BDM basis functions are Piola images (1/det J) J p of monomial vectors on the
reference tet, recombined per cell so that the cell's DOF matrix is the
identity.  The DOFs are face normal moments against an orthonormal basis of
P_k on each physical face (plus, for k = 2, moments against the six Whitney
edge functions), all built from the face's own geometry and the fixed normal
n_f, so both neighbours see the same functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .mesh import LOCAL_EDGES, LOCAL_FACES, DegenerateElementError, TetMesh
from .quadrature import map_to_face, tet_rule, tri_rule

VectorField = Callable[[np.ndarray], np.ndarray]


class UnsupportedDegreeError(ValueError):
    pass


class UnsupportedGeometryError(ValueError):
    pass


def _check_k(k: int) -> int:
    if k not in (1, 2):
        raise UnsupportedDegreeError(f"degree k={k} unsupported (k must be 1 or 2)")
    return k


def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    out = []
    for total in range(degree + 1):
        if dim == 2:
            out += [(total - b, b) for b in range(total + 1)]
        else:
            for a in range(total, -1, -1):
                for b in range(total - a, -1, -1):
                    out.append((a, b, total - a - b))
    return np.array(out, dtype=int)


def eval_monomials(x: np.ndarray, exps: np.ndarray, grad: bool = False):
    """Monomials x**exps at points x (..., d) -> (..., nm); gradients (..., nm, d)."""
    x = np.asarray(x, dtype=float)
    d = exps.shape[1]
    maxp = int(exps.max(initial=0))
    pw = np.ones(x.shape + (maxp + 1,))
    for p in range(1, maxp + 1):
        pw[..., p] = pw[..., p - 1] * x
    # pw[..., i, p] = x_i ** p
    vals = np.ones(x.shape[:-1] + (len(exps),))
    for i in range(d):
        vals = vals * pw[..., i, :][..., exps[:, i]]
    if not grad:
        return vals
    grads = np.empty(x.shape[:-1] + (len(exps), d))
    for r in range(d):
        g = np.ones(x.shape[:-1] + (len(exps),))
        for i in range(d):
            if i == r:
                e = exps[:, i]
                g = g * np.where(e > 0, e, 0) * pw[..., i, :][..., np.maximum(e - 1, 0)]
            else:
                g = g * pw[..., i, :][..., exps[:, i]]
        grads[..., r] = g
    return vals, grads


@dataclass(frozen=True, eq=False)
class Geometry:
    """Affine maps x = v0 + J xhat for every tet."""

    v0: np.ndarray
    J: np.ndarray
    Jinv: np.ndarray
    det: np.ndarray

    @classmethod
    def of(cls, mesh: TetMesh) -> "Geometry":
        J = mesh.jacobians()
        det = np.linalg.det(J)
        if np.any(det <= 1e-14 * mesh.h_E ** 3):
            raise DegenerateElementError(f"tet {int(np.argmin(det))} has singular Jacobian")
        return cls(mesh.vertices[mesh.tets[:, 0]], J, np.linalg.inv(J), det)

    def to_reference(self, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.einsum("nij,nqj->nqi", self.Jinv[cells], x - self.v0[cells][:, None, :])

    def to_physical(self, cells: np.ndarray, xhat: np.ndarray) -> np.ndarray:
        if xhat.ndim == 2:
            return self.v0[cells][:, None, :] + np.einsum("nij,qj->nqi", self.J[cells], xhat)
        return self.v0[cells][:, None, :] + np.einsum("nij,nqj->nqi", self.J[cells], xhat)


_GEOMETRY_CACHE: dict[int, tuple[TetMesh, Geometry]] = {}


def geometry(mesh: TetMesh) -> Geometry:
    hit = _GEOMETRY_CACHE.get(id(mesh))
    if hit is not None and hit[0] is mesh:
        return hit[1]
    g = Geometry.of(mesh)
    _GEOMETRY_CACHE[id(mesh)] = (mesh, g)
    return g


def barycentric(xhat: np.ndarray) -> np.ndarray:
    return np.concatenate([1.0 - xhat.sum(axis=-1, keepdims=True), xhat], axis=-1)


_REF_BARY_GRAD = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def face_points(mesh: TetMesh, faces: np.ndarray, degree: int):
    """Physical quadrature points/weights on faces plus their face-local (s, t) coords."""
    rule = tri_rule(degree)
    pts, w = map_to_face(rule, mesh.vertices[mesh.face_vertices[faces]])
    return pts, w, rule.points


def _ref_triangle_orthonormal(k: int) -> np.ndarray:
    """Coefficients R with q_l = sum_m R[l, m] s^a t^b orthonormal on the reference triangle."""
    exps = monomial_exponents(2, k)
    rule = tri_rule(2 * k)
    V = eval_monomials(rule.points, exps)
    G = V.T @ (rule.weights[:, None] * V)
    L = np.linalg.cholesky(G)
    return np.linalg.inv(L)


def _ref_tet_orthonormal(k: int) -> np.ndarray:
    exps = monomial_exponents(3, k)
    rule = tet_rule(2 * k)
    V = eval_monomials(rule.points, exps)
    G = V.T @ (rule.weights[:, None] * V)
    return np.linalg.inv(np.linalg.cholesky(G))


# ------------------------------------------------------------------ BDM_k


@dataclass(eq=False)
class BdmVelocitySpace:
    mesh: TetMesh
    k: int
    coeffs: np.ndarray = field(repr=False)  # (ne, nprime, nloc)

    n_components = 3

    @property
    def n_face_dofs(self) -> int:
        return (self.k + 1) * (self.k + 2) // 2

    @property
    def n_interior_dofs(self) -> int:
        return 6 if self.k == 2 else 0

    @property
    def n_local(self) -> int:
        return 4 * self.n_face_dofs + self.n_interior_dofs

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_faces * self.n_face_dofs + self.mesh.n_tets * self.n_interior_dofs

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        nfd, nid = self.n_face_dofs, self.n_interior_dofs
        face = (self.mesh.tet_faces[:, :, None] * nfd + np.arange(nfd)).reshape(self.mesh.n_tets, -1)
        inner = self.mesh.n_faces * nfd + np.arange(self.mesh.n_tets)[:, None] * nid + np.arange(nid)
        return np.concatenate([face, inner], axis=1)

    @property
    def orientation_signs(self) -> np.ndarray:
        return self.mesh.tet_face_sign

    def face_dofs(self, faces) -> np.ndarray:
        faces = np.atleast_1d(faces)
        return (faces[:, None] * self.n_face_dofs + np.arange(self.n_face_dofs)).ravel()

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        return self.face_dofs(self.mesh.boundary_faces)

    @cached_property
    def _exps(self) -> np.ndarray:
        return monomial_exponents(3, self.k)

    def face_moment_basis(self, faces: np.ndarray, st: np.ndarray) -> np.ndarray:
        """Orthonormal P_k(f) functions at face-local coords st (nq, 2) -> (nF, nq, nfd)."""
        R = _ref_triangle_orthonormal(self.k)
        q = eval_monomials(st, monomial_exponents(2, self.k)) @ R.T
        scale = 1.0 / np.sqrt(2.0 * self.mesh.face_area[faces])
        return scale[:, None, None] * q[None]

    def prime_values(self, xhat: np.ndarray, grad: bool = True):
        """Reference monomial vectors: values (..., nprime, 3), grads (..., nprime, 3, 3)."""
        nm = len(self._exps)
        out = eval_monomials(xhat, self._exps, grad=grad)
        mv, mg = out if grad else (out, None)
        shape = xhat.shape[:-1]
        vals = np.zeros(shape + (3 * nm, 3))
        for c in range(3):
            vals[..., c * nm:(c + 1) * nm, c] = mv
        if not grad:
            return vals, None
        grads = np.zeros(shape + (3 * nm, 3, 3))
        for c in range(3):
            grads[..., c * nm:(c + 1) * nm, c, :] = mg
        return vals, grads

    def piola_prime(self, cells: np.ndarray, xhat: np.ndarray, grad: bool = True):
        """Piola-mapped prime basis: (N, nq, nprime, 3) and (N, nq, nprime, 3, 3)."""
        g = geometry(self.mesh)
        J = g.J[cells] / g.det[cells][:, None, None]
        pv, pg = self.prime_values(xhat, grad)
        shared = xhat.ndim == 2
        vals = np.einsum("nij,qmj->nqmi" if shared else "nij,nqmj->nqmi", J, pv)
        if not grad:
            return vals, None
        JpG = np.einsum("nij,qmjr->nqmir" if shared else "nij,nqmjr->nqmir", J, pg)
        grads = np.einsum("nqmir,nrl->nqmil", JpG, g.Jinv[cells])
        return vals, grads

    def evaluate(self, cells: np.ndarray, xhat: np.ndarray, grad: bool = True):
        cells = np.asarray(cells)
        pv, pg = self.piola_prime(cells, xhat, grad)
        C = self.coeffs[cells]
        vals = np.einsum("nqmi,nmk->nqki", pv, C)
        if not grad:
            return vals, None
        return vals, np.einsum("nqmil,nmk->nqkil", pg, C)

    def dof_matrix(self, cells: np.ndarray, funcs: Callable, degree: int | None = None) -> np.ndarray:
        """Apply the local DOF functionals of ``cells`` to a family of functions.

        ``funcs(cells_rep, xhat)`` returns values (N, nq, nfun, 3) at per-cell
        reference points.  Result has shape (N, nloc, nfun).
        """
        mesh, k = self.mesh, self.k
        degree = 2 * k if degree is None else degree
        g = geometry(mesh)
        cells = np.asarray(cells)
        N = len(cells)
        nfd = self.n_face_dofs
        rows = []
        for j in range(4):
            faces = mesh.tet_faces[cells, j]
            x, w, st = face_points(mesh, faces, degree)
            xhat = g.to_reference(cells, x)
            vals = funcs(cells, xhat)
            vn = np.einsum("nqmi,ni->nqm", vals, mesh.face_normal[faces])
            q = self.face_moment_basis(faces, st)
            rows.append(np.einsum("nq,nql,nqm->nlm", w, q, vn))
        if self.n_interior_dofs:
            rule = tet_rule(degree)
            xhat = np.broadcast_to(rule.points, (N,) + rule.points.shape)
            vals = funcs(cells, xhat)
            wh = whitney(cells, xhat, g)
            wq = rule.weights * g.det[cells][:, None]
            rows.append(np.einsum("nq,nqli,nqmi->nlm", wq, wh, vals))
        return np.concatenate(rows, axis=1)

    def divergence(self, cells: np.ndarray, xhat: np.ndarray) -> np.ndarray:
        _, gr = self.evaluate(cells, xhat)
        return np.einsum("nqkii->nqk", gr)


def whitney(cells: np.ndarray, xhat: np.ndarray, g: Geometry) -> np.ndarray:
    """Lowest-order first-kind edge functions in physical coordinates: (N, nq, 6, 3)."""
    lam = barycentric(xhat)
    glam = np.einsum("aj,nji->nai", _REF_BARY_GRAD, g.Jinv[cells])  # (N, 4, 3)
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    return (lam[..., a, None] * glam[:, None, b, :] - lam[..., b, None] * glam[:, None, a, :])


def build_velocity_space(mesh: TetMesh, k: int) -> BdmVelocitySpace:
    k = _check_k(k)
    space = BdmVelocitySpace(mesh, k, np.empty(0))
    cells = np.arange(mesh.n_tets)
    D = space.dof_matrix(cells, lambda c, x: space.piola_prime(c, x, grad=False)[0])
    space.coeffs = np.linalg.inv(D)
    return space


def eval_velocity_basis(space: BdmVelocitySpace, tet: int, xhat: np.ndarray):
    """Basis values (nq, nloc, 3) and gradients (nq, nloc, 3, 3) of one tet at reference points."""
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    v, g = space.evaluate(np.array([tet]), xhat)
    return v[0], g[0]


def bdm_interpolate(space: BdmVelocitySpace, fn: VectorField, degree: int = 14) -> np.ndarray:
    """Canonical BDM interpolant: the DOF functionals applied to a smooth field."""
    mesh = space.mesh
    coef = np.empty(space.n_dofs)
    faces = np.arange(mesh.n_faces)
    x, w, st = face_points(mesh, faces, degree)
    vn = np.einsum("fqi,fi->fq", fn(x), mesh.face_normal)
    q = space.face_moment_basis(faces, st)
    coef[: mesh.n_faces * space.n_face_dofs] = np.einsum("fq,fql,fq->fl", w, q, vn).ravel()
    if space.n_interior_dofs:
        g = geometry(mesh)
        cells = np.arange(mesh.n_tets)
        rule = tet_rule(degree)
        xhat = np.broadcast_to(rule.points, (len(cells),) + rule.points.shape)
        vals = fn(g.to_physical(cells, rule.points))
        wh = whitney(cells, xhat, g)
        wq = rule.weights * g.det[:, None]
        coef[mesh.n_faces * space.n_face_dofs:] = np.einsum(
            "nq,nqli,nqi->nl", wq, wh, vals).ravel()
    return coef


def boundary_normal_moments(space: BdmVelocitySpace, fn: VectorField, degree: int = 14) -> np.ndarray:
    """Face normal moments of ``fn`` on boundary faces, ordered like ``space.boundary_dofs``."""
    faces = space.mesh.boundary_faces
    x, w, st = face_points(space.mesh, faces, degree)
    vn = np.einsum("fqi,fi->fq", fn(x), space.mesh.face_normal[faces])
    q = space.face_moment_basis(faces, st)
    return np.einsum("fq,fql,fq->fl", w, q, vn).ravel()


# ------------------------------------------------------------ vector P_k


@dataclass(eq=False)
class LagrangeMagneticSpace:
    mesh: TetMesh
    k: int
    node_coords: np.ndarray = field(repr=False)
    cell_nodes: np.ndarray = field(repr=False)  # (ne, nnodes_loc)
    constrained_nodes: np.ndarray = field(repr=False)
    constrained_axes: np.ndarray = field(repr=False)

    n_components = 3

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @property
    def n_local(self) -> int:
        return 3 * self.cell_nodes.shape[1]

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        return (3 * self.cell_nodes[:, :, None] + np.arange(3)).reshape(self.mesh.n_tets, -1)

    @property
    def constrained_dofs(self) -> np.ndarray:
        return 3 * self.constrained_nodes + self.constrained_axes

    def scalar_basis(self, cells: np.ndarray, xhat: np.ndarray):
        """Scalar shape functions (..., nq, nn) and physical gradients (N, nq, nn, 3)."""
        lam = barycentric(xhat)
        glam = np.einsum("aj,nji->nai", _REF_BARY_GRAD, geometry(self.mesh).Jinv[cells])
        if xhat.ndim == 2:
            lam = np.broadcast_to(lam, (len(cells),) + lam.shape)
        if self.k == 1:
            N = lam
            G = np.broadcast_to(glam[:, None], lam.shape + (3,))
        else:
            a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
            Nv = lam * (2.0 * lam - 1.0)
            Ne = 4.0 * lam[..., a] * lam[..., b]
            N = np.concatenate([Nv, Ne], axis=-1)
            Gv = (4.0 * lam - 1.0)[..., None] * glam[:, None]
            Ge = 4.0 * (lam[..., a, None] * glam[:, None, b] + lam[..., b, None] * glam[:, None, a])
            G = np.concatenate([Gv, Ge], axis=-2)
        return N, G

    def evaluate(self, cells: np.ndarray, xhat: np.ndarray, grad: bool = True):
        cells = np.asarray(cells)
        N, G = self.scalar_basis(cells, xhat)
        nn = N.shape[-1]
        eye = np.eye(3)
        vals = (N[..., :, None, None] * eye).reshape(N.shape[:-1] + (3 * nn, 3))
        if not grad:
            return vals, None
        grads = (G[..., :, None, None, :] * eye[:, :, None]).reshape(G.shape[:-2] + (3 * nn, 3, 3))
        return vals, grads


def build_magnetic_space(mesh: TetMesh, k: int, tol: float = 1e-10) -> LagrangeMagneticSpace:
    k = _check_k(k)
    if k == 1:
        coords = mesh.vertices
        cell_nodes = mesh.tets.copy()
        face_nodes = mesh.face_vertices
    else:
        edges, tet_edges = mesh.edges()
        nv = mesh.n_vertices
        coords = np.concatenate([mesh.vertices, 0.5 * mesh.vertices[edges].sum(axis=1)])
        cell_nodes = np.concatenate([mesh.tets, nv + tet_edges], axis=1)
        # edges of each face, located through the owner tet's local edge table
        owner = mesh.face_owner
        local = np.array([[3, 4, 5], [1, 2, 5], [0, 2, 4], [0, 1, 3]])  # edges of local face j
        j = np.argmax(mesh.tet_faces[owner] == np.arange(mesh.n_faces)[:, None], axis=1)
        face_edges = tet_edges[owner[:, None], local[j]]
        face_nodes = np.concatenate([mesh.face_vertices, nv + face_edges], axis=1)

    nodes, axes = [], []
    for f in mesh.boundary_faces:
        n = mesh.face_normal[f]
        axis = int(np.argmax(np.abs(n)))
        if abs(abs(n[axis]) - 1.0) > tol:
            raise UnsupportedGeometryError(
                f"boundary face {f} with normal {n.tolist()} is not axis-aligned")
        nodes.append(face_nodes[f])
        axes.append(np.full(face_nodes.shape[1], axis))
    if nodes:
        pairs = np.unique(np.stack([np.concatenate(nodes), np.concatenate(axes)], axis=1), axis=0)
    else:
        pairs = np.zeros((0, 2), dtype=int)
    return LagrangeMagneticSpace(mesh, k, coords, cell_nodes, pairs[:, 0], pairs[:, 1])


def nodal_interpolate_magnetic(space: LagrangeMagneticSpace, fn: VectorField) -> np.ndarray:
    return np.asarray(fn(space.node_coords), dtype=float).reshape(-1)


def magnetic_constraint_values(space: LagrangeMagneticSpace, fn: VectorField | None) -> np.ndarray:
    if fn is None:
        return np.zeros(len(space.constrained_nodes))
    vals = fn(space.node_coords[space.constrained_nodes])
    return vals[np.arange(len(vals)), space.constrained_axes]


# ------------------------------------------------------------ P_{k-1}


@dataclass(eq=False)
class PressureSpace:
    mesh: TetMesh
    k: int

    @property
    def degree(self) -> int:
        return self.k - 1

    @property
    def n_local(self) -> int:
        d = self.degree
        return (d + 1) * (d + 2) * (d + 3) // 6

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_tets * self.n_local

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        return np.arange(self.n_dofs).reshape(self.mesh.n_tets, self.n_local)

    def evaluate(self, cells: np.ndarray, xhat: np.ndarray, grad: bool = False):
        cells = np.asarray(cells)
        R = _ref_tet_orthonormal(self.degree)
        q = eval_monomials(xhat, monomial_exponents(3, self.degree)) @ R.T
        scale = 1.0 / np.sqrt(geometry(self.mesh).det[cells])
        if xhat.ndim == 2:
            return scale[:, None, None] * q[None], None
        return scale[:, None, None] * q, None

    @cached_property
    def mean_functional(self) -> np.ndarray:
        """Vector m with m . coeffs = integral of p_h over the domain."""
        rule = tet_rule(max(self.degree, 1))
        q, _ = self.evaluate(np.arange(self.mesh.n_tets), rule.points)
        det = geometry(self.mesh).det
        return np.einsum("q,nqk->nk", rule.weights, q * det[:, None, None]).ravel()


def build_pressure_space(mesh: TetMesh, k: int) -> PressureSpace:
    return PressureSpace(mesh, _check_k(k))


def l2_project_pressure(space: PressureSpace, fn: Callable, degree: int = 14) -> np.ndarray:
    g = geometry(space.mesh)
    cells = np.arange(space.mesh.n_tets)
    rule = tet_rule(degree)
    q, _ = space.evaluate(cells, rule.points)
    vals = fn(g.to_physical(cells, rule.points))
    return np.einsum("q,n,nqk,nq->nk", rule.weights, g.det, q, vals).ravel()


@dataclass(frozen=True, eq=False)
class FESpaceTriple:
    velocity: BdmVelocitySpace
    pressure: PressureSpace
    magnetic: LagrangeMagneticSpace

    @property
    def mesh(self) -> TetMesh:
        return self.velocity.mesh

    @property
    def k(self) -> int:
        return self.velocity.k


def build_spaces(mesh: TetMesh, k: int) -> FESpaceTriple:
    return FESpaceTriple(build_velocity_space(mesh, k), build_pressure_space(mesh, k),
                         build_magnetic_space(mesh, k))
