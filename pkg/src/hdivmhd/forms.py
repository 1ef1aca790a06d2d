"""Element and face assembly of the bilinear forms and load vectors.

Every ``assemble_*`` function returns a ``scipy.sparse.coo_matrix`` (the raw
triplets, duplicates not yet summed) and, where data enters, a right-hand side
vector.  Matrix entry (i, j) is form(trial_j, test_i).

Work is split in chunks of cells or faces.  Chunks are mapped through an
optional thread pool and their triplets concatenated in chunk order, so serial
and parallel assembly give identical triplet streams.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fespace import FESpaceTriple, face_points, geometry
from .mms import AdvectionFields, BoundaryData, curl_from_grad
from .quadrature import tet_rule

SCHEMES = ("mfStab", "fStab")
FORM_VARIANTS = ("full", "simplified")


@dataclass(frozen=True)
class PhysicalParams:
    sigma_s: float = 1.0
    sigma_m: float = 1.0
    nu_s: float = 1.0
    nu_m: float = 1.0

    def __post_init__(self):
        for name in ("sigma_s", "sigma_m", "nu_s", "nu_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class StabParams:
    mu_a: float = 10.0
    mu_c: float = 1.0
    mu_j1: float = 5.0
    mu_j2: float = 0.01
    scheme: str = "mfStab"
    form_variant: str = "full"

    def __post_init__(self):
        if not self.mu_a > 0:
            raise ValueError("mu_a must be positive")
        for name in ("mu_c", "mu_j1", "mu_j2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.form_variant not in FORM_VARIANTS:
            raise ValueError(f"form_variant must be one of {FORM_VARIANTS}")

    @classmethod
    def defaults(cls, k: int, **overrides) -> "StabParams":
        base = dict(mu_a=10.0 if k == 1 else 20.0, mu_c=1.0, mu_j1=5.0, mu_j2=0.01)
        base.update(overrides)
        return cls(**base)


def sym(g: np.ndarray) -> np.ndarray:
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)] or [slice(0, 0)]


@dataclass
class CellData:
    cells: np.ndarray
    x: np.ndarray  # (N, nq, 3)
    w: np.ndarray  # (N, nq) physical weights
    V: np.ndarray
    gV: np.ndarray
    W: np.ndarray
    gW: np.ndarray
    P: np.ndarray


@dataclass
class FaceData:
    faces: np.ndarray
    x: np.ndarray  # (F, nq, 3)
    w: np.ndarray  # (F, nq)
    n: np.ndarray  # (F, 3)
    h: np.ndarray  # (F,)
    dofs: np.ndarray  # (F, nloc) or (F, 2 nloc) velocity DOFs
    jump: np.ndarray  # (F, nq, nd, 3)
    avg: np.ndarray
    gjump: np.ndarray  # (F, nq, nd, 3, 3)
    gavg: np.ndarray


class Discretization:
    """Spaces plus cached quadrature data for one mesh and one quadrature degree."""

    def __init__(self, spaces: FESpaceTriple, degree: int | None = None,
                 face_degree: int | None = None, chunk_size: int = 512, workers: int = 1):
        self.spaces = spaces
        k = spaces.k
        self.degree = 2 * k + 2 if degree is None else degree
        self.face_degree = 2 * k + 2 if face_degree is None else face_degree
        self.chunk_size = chunk_size
        self.workers = workers

    @property
    def mesh(self):
        return self.spaces.mesh

    @property
    def V(self):
        return self.spaces.velocity

    @property
    def W(self):
        return self.spaces.magnetic

    @property
    def Q(self):
        return self.spaces.pressure

    def map(self, fn: Callable, n: int) -> list:
        parts = _chunks(n, self.chunk_size)
        if self.workers > 1 and len(parts) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, parts))
        return [fn(s) for s in parts]

    @cached_property
    def cell_data(self) -> CellData:
        return self.cell_data_for(np.arange(self.mesh.n_tets), self.degree)

    def cell_data_for(self, cells: np.ndarray, degree: int) -> CellData:
        g = geometry(self.mesh)
        rule = tet_rule(degree)
        x = g.to_physical(cells, rule.points)
        w = g.det[cells][:, None] * rule.weights
        V, gV = self.V.evaluate(cells, rule.points)
        W, gW = self.W.evaluate(cells, rule.points)
        P, _ = self.Q.evaluate(cells, rule.points)
        return CellData(cells, x, w, V, gV, W, gW, P)

    @cached_property
    def interior(self) -> FaceData:
        return self.face_data_for(self.mesh.interior_faces, self.face_degree)

    @cached_property
    def boundary(self) -> FaceData:
        return self.face_data_for(self.mesh.boundary_faces, self.face_degree)

    def face_data_for(self, faces: np.ndarray, degree: int) -> FaceData:
        mesh, V = self.mesh, self.V
        g = geometry(mesh)
        x, w, _ = face_points(mesh, faces, degree)
        own = mesh.face_owner[faces]
        vo, go = V.evaluate(own, g.to_reference(own, x))
        nb = mesh.face_neighbor[faces]
        if len(faces) and np.all(nb >= 0):
            vn, gn = V.evaluate(nb, g.to_reference(nb, x))
            dofs = np.concatenate([V.cell_dofs[own], V.cell_dofs[nb]], axis=1)
            jump = np.concatenate([vo, -vn], axis=2)
            avg = 0.5 * np.concatenate([vo, vn], axis=2)
            gjump = np.concatenate([go, -gn], axis=2)
            gavg = 0.5 * np.concatenate([go, gn], axis=2)
        elif np.all(nb < 0):
            dofs, jump, avg, gjump, gavg = V.cell_dofs[own], vo, vo, go, go
        else:
            raise ValueError("face batch mixes interior and boundary faces")
        return FaceData(faces, x, w, mesh.face_normal[faces], mesh.face_h[faces], dofs,
                        jump, avg, gjump, gavg)


# ----------------------------------------------------------------- triplets


def _coo(blocks: list[tuple[np.ndarray, np.ndarray, np.ndarray]], shape) -> sp.coo_matrix:
    rows = np.concatenate([r for r, _, _ in blocks]) if blocks else np.zeros(0, int)
    cols = np.concatenate([c for _, c, _ in blocks]) if blocks else np.zeros(0, int)
    vals = np.concatenate([v for _, _, v in blocks]) if blocks else np.zeros(0)
    return sp.coo_matrix((vals, (rows, cols)), shape=shape)


def _local(row_dofs: np.ndarray, col_dofs: np.ndarray, local: np.ndarray):
    r = np.broadcast_to(row_dofs[:, :, None], local.shape)
    c = np.broadcast_to(col_dofs[:, None, :], local.shape)
    return r.ravel(), c.ravel(), local.ravel()


def _cell_forms(disc: Discretization, kernel: Callable, row_space, col_space):
    cd = disc.cell_data

    def work(s):
        return _local(row_space.cell_dofs[cd.cells[s]], col_space.cell_dofs[cd.cells[s]],
                      kernel(cd, s))

    return _coo(disc.map(work, len(cd.cells)), (row_space.n_dofs, col_space.n_dofs))


def _face_forms(disc: Discretization, fd: FaceData, kernel: Callable):
    def work(s):
        return _local(fd.dofs[s], fd.dofs[s], kernel(fd, s))

    return _coo(disc.map(work, len(fd.faces)), (disc.V.n_dofs, disc.V.n_dofs))


# ------------------------------------------------------------------- forms


def assemble_mass(disc: Discretization, space: str, weight: float = 1.0) -> sp.coo_matrix:
    """weight * (phi_j, phi_i) for space in {'velocity', 'magnetic', 'pressure'}."""
    if space == "velocity":
        return _cell_forms(disc, lambda cd, s: weight * np.einsum(
            "nq,nqai,nqbi->nab", cd.w[s], cd.V[s], cd.V[s]), disc.V, disc.V)
    if space == "magnetic":
        return _cell_forms(disc, lambda cd, s: weight * np.einsum(
            "nq,nqai,nqbi->nab", cd.w[s], cd.W[s], cd.W[s]), disc.W, disc.W)
    if space == "pressure":
        return _cell_forms(disc, lambda cd, s: weight * np.einsum(
            "nq,nqa,nqb->nab", cd.w[s], cd.P[s], cd.P[s]), disc.Q, disc.Q)
    raise ValueError(f"unknown space {space!r}")


def assemble_fluid_diffusion(disc: Discretization, params: PhysicalParams, stab: StabParams,
                             g_u: Callable | None = None, load_degree: int | None = None):
    """nu_S * a^S_h with SIP face terms on all faces; Nitsche lifting of g_u into the rhs."""
    nu, mu = params.nu_s, stab.mu_a
    vol = _cell_forms(disc, lambda cd, s: nu * np.einsum(
        "nq,nqaij,nqbij->nab", cd.w[s], sym(cd.gV[s]), sym(cd.gV[s])), disc.V, disc.V)

    def face_kernel(fd, s):
        en = np.einsum("fqaij,fj->fqai", sym(fd.gavg[s]), fd.n[s])
        J = fd.jump[s]
        cons = np.einsum("fq,fqbi,fqai->fab", fd.w[s], en, J)
        pen = np.einsum("fq,f,fqbi,fqai->fab", fd.w[s], mu / fd.h[s], J, J)
        return nu * (pen - cons - np.swapaxes(cons, 1, 2))

    inner = _face_forms(disc, disc.interior, face_kernel)
    bnd = _face_forms(disc, disc.boundary, face_kernel)
    A = _coo_sum([vol, inner, bnd])
    rhs = np.zeros(disc.V.n_dofs)
    if g_u is not None:
        deg = disc.face_degree if load_degree is None else load_degree
        fd = disc.face_data_for(disc.mesh.boundary_faces, deg)
        g = g_u(fd.x)
        en = np.einsum("fqaij,fj->fqai", sym(fd.gavg), fd.n)
        loc = nu * (np.einsum("fq,f,fqi,fqai->fa", fd.w, mu / fd.h, g, fd.jump)
                    - np.einsum("fq,fqi,fqai->fa", fd.w, g, en))
        np.add.at(rhs, fd.dofs.ravel(), loc.ravel())
    return A, rhs


def assemble_fluid_convection(disc: Discretization, fields: AdvectionFields, stab: StabParams):
    """c_h: volume advection, centred interior flux and upwind jump penalty."""
    cd = disc.cell_data
    chi_v = fields.chi(cd.x)

    def vol_kernel(cd, s):
        adv = np.einsum("nqbij,nqj->nqbi", cd.gV[s], chi_v[s])
        return np.einsum("nq,nqbi,nqai->nab", cd.w[s], adv, cd.V[s])

    vol = _cell_forms(disc, vol_kernel, disc.V, disc.V)
    fd = disc.interior
    chin = np.einsum("fqi,fi->fq", fields.chi(fd.x), fd.n)
    if stab.form_variant == "full":
        upw = np.abs(chin)
    else:
        upw = np.broadcast_to(np.abs(chin).max(axis=1, initial=0.0)[:, None], chin.shape)

    def face_kernel(fd, s):
        J, A = fd.jump[s], fd.avg[s]
        centred = np.einsum("fq,fq,fqbi,fqai->fab", fd.w[s], chin[s], J, A)
        pen = np.einsum("fq,fq,fqbi,fqai->fab", fd.w[s], upw[s], J, J)
        return stab.mu_c * pen - centred

    return _coo_sum([vol, _face_forms(disc, fd, face_kernel)])


def assemble_cip(disc: Discretization, fields: AdvectionFields, stab: StabParams):
    """J_h on interior faces; an empty matrix for fStab."""
    n = disc.V.n_dofs
    if stab.scheme == "fStab":
        return sp.coo_matrix((n, n))
    fd = disc.interior
    th = fields.theta(fd.x)
    th2 = np.einsum("fqi,fqi->fq", th, th)
    th2max = th2.max(axis=1, initial=0.0)

    def full(fd, s):
        J, GJ, w = fd.jump[s], fd.gjump[s], fd.w[s]
        tJ = np.einsum("fqi,fqai->fqa", th[s], J)
        # (T x a).(T x b) = |T|^2 a.b - (T.a)(T.b)
        cross = (np.einsum("fq,fq,fqbi,fqai->fab", w, th2[s], J, J)
                 - np.einsum("fq,fqb,fqa->fab", w, tJ, tJ))
        GT = np.einsum("fqaij,fqj->fqai", GJ, th[s])
        grad = np.einsum("fq,f,fqbi,fqai->fab", w, fd.h[s] ** 2, GT, GT)
        return stab.mu_j1 * cross + stab.mu_j2 * grad

    def simplified(fd, s):
        J, GJ, w = fd.jump[s], fd.gjump[s], fd.w[s]
        jj = np.einsum("fq,fqbi,fqai->fab", w, J, J)
        gg = np.einsum("fq,fqbij,fqaij->fab", w, GJ, GJ)
        return th2max[s, None, None] * (stab.mu_j1 * jj + stab.mu_j2 * (fd.h[s] ** 2)[:, None, None] * gg)

    return _face_forms(disc, fd, full if stab.form_variant == "full" else simplified)


def assemble_magnetic(disc: Discretization, params: PhysicalParams) -> sp.coo_matrix:
    """nu_M * [(curl B, curl H) + (div B, div H)]."""
    def kernel(cd, s):
        g = cd.gW[s]
        curl = curl_from_grad(g)
        div = np.einsum("nqaii->nqa", g)
        return params.nu_m * (np.einsum("nq,nqai,nqbi->nab", cd.w[s], curl, curl)
                              + np.einsum("nq,nqa,nqb->nab", cd.w[s], div, div))

    return _cell_forms(disc, kernel, disc.W, disc.W)


def assemble_coupling(disc: Discretization, fields: AdvectionFields) -> sp.coo_matrix:
    """D with D[i_v, j_H] = d(H_j, v_i) = (curl H_j x Theta, v_i)."""
    cd = disc.cell_data
    th = fields.theta(cd.x)

    def kernel(cd, s):
        curl = curl_from_grad(cd.gW[s])
        cxt = np.cross(curl, th[s][:, :, None, :])
        return np.einsum("nq,nqbi,nqai->nab", cd.w[s], cxt, cd.V[s])

    return _cell_forms(disc, kernel, disc.V, disc.W)


def assemble_divergence(disc: Discretization) -> sp.coo_matrix:
    """Bdiv with Bdiv[i_q, j_v] = (div v_j, q_i)."""
    def kernel(cd, s):
        div = np.einsum("nqbii->nqb", cd.gV[s])
        return np.einsum("nq,nqa,nqb->nab", cd.w[s], cd.P[s], div)

    return _cell_forms(disc, kernel, disc.Q, disc.V)


def _coo_sum(mats: list[sp.coo_matrix]) -> sp.coo_matrix:
    shape = mats[0].shape
    return sp.coo_matrix((np.concatenate([m.data for m in mats]),
                          (np.concatenate([m.row for m in mats]),
                           np.concatenate([m.col for m in mats]))), shape=shape)


# ------------------------------------------------------------------- loads


def _volume_load(disc: Discretization, space, fn: Callable, degree: int) -> np.ndarray:
    g = geometry(disc.mesh)
    rule = tet_rule(degree)
    out = np.zeros(space.n_dofs)

    def work(s):
        cells = np.arange(disc.mesh.n_tets)[s]
        vals, _ = space.evaluate(cells, rule.points, grad=False)
        x = g.to_physical(cells, rule.points)
        w = g.det[cells][:, None] * rule.weights
        return cells, np.einsum("nq,nqi,nqai->na", w, fn(x), vals)

    for cells, loc in disc.map(work, disc.mesh.n_tets):
        np.add.at(out, space.cell_dofs[cells].ravel(), loc.ravel())
    return out


def assemble_load(disc: Discretization, f: Callable | None, G: Callable | None,
                  data: BoundaryData | None = None, params: PhysicalParams | None = None,
                  degree: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(f, v_i) and (G, H_i) plus the magnetic boundary terms.

    The induction equation tested with H and integrated by parts leaves
    int_{dOmega} [nu_M (j x n) + n x (g_u x Theta)] . H, which vanishes only
    under homogeneous data; it is added whenever ``data`` supplies j / g_u.
    """
    deg = max(2 * disc.spaces.k + 2, 12) if degree is None else degree
    rhs_u = _volume_load(disc, disc.V, f, deg) if f is not None else np.zeros(disc.V.n_dofs)
    rhs_B = _volume_load(disc, disc.W, G, deg) if G is not None else np.zeros(disc.W.n_dofs)
    if data is not None and (data.j is not None or (data.g_u is not None and data.theta is not None)):
        mesh, W = disc.mesh, disc.W
        faces = mesh.boundary_faces
        x, w, _ = face_points(mesh, faces, deg)
        n = mesh.face_normal[faces][:, None, :]
        flux = np.zeros_like(x)
        if data.j is not None:
            nu_m = 1.0 if params is None else params.nu_m
            flux += nu_m * np.cross(data.j(x), n)
        if data.g_u is not None and data.theta is not None:
            flux += np.cross(n, np.cross(data.g_u(x), data.theta(x)))
        own = mesh.face_owner[faces]
        vals, _ = W.evaluate(own, geometry(mesh).to_reference(own, x), grad=False)
        loc = np.einsum("fq,fqi,fqai->fa", w, flux, vals)
        np.add.at(rhs_B, W.cell_dofs[own].ravel(), loc.ravel())
    return rhs_u, rhs_B


def dump_coo(matrix: sp.spmatrix) -> str:
    """Coordinate text dump, one 'row col value' line per stored entry."""
    m = sp.coo_matrix(matrix)
    return "".join(f"{r} {c} {v!r}\n" for r, c, v in zip(m.row.tolist(), m.col.tolist(), m.data.tolist()))
