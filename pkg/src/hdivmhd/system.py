"""Global block system [u; p; B; lambda], constraint elimination and direct solve."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import forms
from .fespace import (FESpaceTriple, boundary_normal_moments, geometry,
                      magnetic_constraint_values)
from .forms import Discretization, PhysicalParams, StabParams
from .mms import AdvectionFields, BoundaryData
from .quadrature import tet_rule


class SingularSystemError(RuntimeError):
    pass


class BlockConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProblemData:
    """Sources and boundary data for one solve."""

    f: Callable | None = None
    G: Callable | None = None
    boundary: BoundaryData = field(default_factory=BoundaryData.homogeneous)


@dataclass
class BlockSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraints: dict[int, float]
    offsets: dict[str, tuple[int, int]]
    blocks: dict[str, sp.spmatrix] = field(default_factory=dict, repr=False)
    t_assemble: float = 0.0
    coords: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def block(self, name: str) -> slice:
        a, b = self.offsets[name]
        return slice(a, b)


@dataclass(frozen=True)
class Solution:
    u: np.ndarray
    p: np.ndarray
    B: np.ndarray
    multiplier: float
    residual: float
    fill: float
    t_solve: float = 0.0


def _cached(cache: dict | None, key, build: Callable):
    if cache is None:
        return build()
    if key not in cache:
        cache[key] = build()
    return cache[key]


def assemble_system(spaces: FESpaceTriple, params: PhysicalParams, stab: StabParams,
                    fields: AdvectionFields, data: ProblemData | None = None,
                    disc: Discretization | None = None, load_degree: int | None = None,
                    workers: int = 1, cache: dict | None = None) -> BlockSystem:
    """Assemble the full block system.

    ``cache`` may be shared between calls that differ only in sigma, nu and the
    sources; operators are then assembled once.  Viscous forms are always
    built at unit viscosity and scaled, so cached and uncached runs agree bitwise.
    """
    t0 = time.perf_counter()
    data = ProblemData() if data is None else data
    if disc is None:
        disc = _cached(cache, "disc", lambda: Discretization(spaces, workers=workers))
    V, Q, W = spaces.velocity, spaces.pressure, spaces.magnetic
    nu_, np_, nB = V.n_dofs, Q.n_dofs, W.n_dofs
    unit = replace(params, nu_s=1.0, nu_m=1.0)

    Mu = params.sigma_s * _cached(cache, "mass_u", lambda: forms.assemble_mass(disc, "velocity", 1.0).tocsr())
    AS1, nitsche1 = _cached(cache, ("a_S", stab.mu_a), lambda: forms.assemble_fluid_diffusion(
        disc, unit, stab, data.boundary.g_u, load_degree))
    AS, rhs_nitsche = params.nu_s * AS1.tocsr(), params.nu_s * nitsche1
    C = _cached(cache, ("c_h", stab.mu_c), lambda: forms.assemble_fluid_convection(disc, fields, stab))
    Jh = _cached(cache, ("J_h", stab.scheme, stab.form_variant, stab.mu_j1, stab.mu_j2),
                 lambda: forms.assemble_cip(disc, fields, stab))
    MB = params.sigma_m * _cached(cache, "mass_B", lambda: forms.assemble_mass(disc, "magnetic", 1.0).tocsr())
    AM = params.nu_m * _cached(cache, "a_M", lambda: forms.assemble_magnetic(disc, unit).tocsr())
    D = _cached(cache, "D", lambda: forms.assemble_coupling(disc, fields))
    Bdiv = _cached(cache, "Bdiv", lambda: forms.assemble_divergence(disc))
    rhs_u, rhs_B = forms.assemble_load(disc, data.f, data.G, data.boundary, params, load_degree)

    Auu = (Mu.tocsr() + AS.tocsr() + C.tocsr() + Jh.tocsr())
    ABB = MB.tocsr() + AM.tocsr()
    D = D.tocsr()
    Bdiv = Bdiv.tocsr()
    m = sp.csr_matrix(Q.mean_functional[:, None])
    for name, blk, shape in (("uu", Auu, (nu_, nu_)), ("BB", ABB, (nB, nB)),
                             ("uB", D, (nu_, nB)), ("pu", Bdiv, (np_, nu_))):
        if blk.shape != shape:
            raise BlockConsistencyError(f"block {name} has shape {blk.shape}, expected {shape}")

    A = sp.bmat([[Auu, Bdiv.T, -D, None],
                 [Bdiv, None, None, m],
                 [D.T, None, ABB, None],
                 [None, m.T, None, None]], format="csr")
    n = nu_ + np_ + nB + 1
    if A.shape != (n, n):
        raise BlockConsistencyError(f"system has shape {A.shape}, expected {(n, n)}")
    rhs = np.concatenate([rhs_u + rhs_nitsche, np.zeros(np_), rhs_B, [0.0]])

    offsets = {"u": (0, nu_), "p": (nu_, nu_ + np_), "B": (nu_ + np_, n - 1), "lambda": (n - 1, n)}
    constraints: dict[int, float] = {}
    bdofs = V.boundary_dofs
    if data.boundary.g_u is not None:
        bvals = boundary_normal_moments(V, data.boundary.g_u)
    else:
        bvals = np.zeros(len(bdofs))
    constraints.update(zip(bdofs.tolist(), bvals.tolist()))
    cvals = magnetic_constraint_values(W, data.boundary.g_B)
    constraints.update(zip((offsets["B"][0] + W.constrained_dofs).tolist(), cvals.tolist()))
    blocks = {"mass_u": Mu, "a_S": AS, "c_h": C, "J_h": Jh, "mass_B": MB, "a_M": AM,
              "D": D, "Bdiv": Bdiv}
    return BlockSystem(A, rhs, constraints, offsets, blocks, time.perf_counter() - t0,
                       dof_coordinates(spaces))


def apply_constraints(system: BlockSystem, order: np.ndarray | None = None) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric elimination: fixed rows/columns zeroed, unit diagonal, data moved to the rhs.

    ``order`` permutes the sequence in which constrained DOFs are processed;
    the result does not depend on it.
    """
    A = system.matrix.tocsr()
    n = A.shape[0]
    dofs = np.fromiter(system.constraints.keys(), dtype=np.int64, count=len(system.constraints))
    vals = np.fromiter(system.constraints.values(), dtype=float, count=len(system.constraints))
    if order is not None:
        dofs, vals = dofs[order], vals[order]
    g = np.zeros(n)
    g[dofs] = vals
    fixed = np.zeros(n, dtype=bool)
    fixed[dofs] = True
    rhs = system.rhs - A @ g
    keep = sp.diags((~fixed).astype(float))
    Ac = (keep @ A @ keep + sp.diags(fixed.astype(float))).tocsr()
    Ac.eliminate_zeros()
    rhs[fixed] = g[fixed]
    return Ac, rhs


def solve(system: BlockSystem, coords: np.ndarray | None = None) -> Solution:
    """Direct solve; ``coords`` (one point per unknown) enables a nested-dissection ordering."""
    A, b = apply_constraints(system)
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    if len(empty):
        raise SingularSystemError(f"zero row {int(empty[0])} after constraint elimination")
    t0 = time.perf_counter()
    x, fill = _lu_solve(A, b, system.coords if coords is None else coords)
    t_solve = time.perf_counter() - t0
    res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), np.finfo(float).tiny))
    o = system.offsets
    return Solution(x[slice(*o["u"])].copy(), x[slice(*o["p"])].copy(), x[slice(*o["B"])].copy(),
                    float(x[-1]), res, fill, t_solve)


def dof_coordinates(spaces: FESpaceTriple) -> np.ndarray:
    """A representative point per unknown of [u; p; B]; the multiplier is excluded."""
    V, Q, W = spaces.velocity, spaces.pressure, spaces.magnetic
    mesh = V.mesh
    fc = mesh.vertices[mesh.face_vertices].mean(axis=1)
    cc = mesh.vertices[mesh.tets].mean(axis=1)
    return np.concatenate([np.repeat(fc, V.n_face_dofs, axis=0),
                           np.repeat(cc, V.n_interior_dofs, axis=0),
                           np.repeat(cc, Q.n_local, axis=0),
                           np.repeat(W.node_coords, 3, axis=0)])


def nested_dissection(A: sp.spmatrix, coords: np.ndarray, leaf: int = 800) -> np.ndarray:
    """Fill-reducing permutation by recursive coordinate bisection of the matrix graph.

    Rows beyond ``len(coords)`` (dense multiplier rows) are ordered last.
    """
    n = len(coords)
    G = abs(A[:n, :n]).tocsr()
    G = (G + G.T).tocsr()
    G.data[:] = 1.0
    parts: list[np.ndarray] = []

    def split(idx: np.ndarray) -> None:
        if len(idx) <= leaf:
            parts.append(idx)
            return
        x = coords[idx]
        axis = int(np.argmax(np.ptp(x, axis=0)))
        left = x[:, axis] <= np.median(x[:, axis])
        if left.all() or not left.any():
            left = np.arange(len(idx)) < len(idx) // 2
        L, R = idx[left], idx[~left]
        cut = G[L][:, R]
        sl = np.asarray(cut.sum(axis=1)).ravel() > 0
        sr = np.asarray(cut.sum(axis=0)).ravel() > 0
        if sl.sum() <= sr.sum():
            sep, L = L[sl], L[~sl]
        else:
            sep, R = R[sr], R[~sr]
        split(L)
        split(R)
        parts.append(sep)

    split(np.arange(n))
    return np.concatenate(parts + [np.arange(n, A.shape[0])]).astype(np.int64)


def _factor(A: sp.csc_matrix, permc: str, thresh: float):
    try:
        return spla.splu(A, permc_spec=permc, diag_pivot_thresh=thresh,
                         options=dict(SymmetricMode=permc == "NATURAL"))
    except RuntimeError as err:
        raise SingularSystemError(f"sparse LU failed: {err}") from None


def _lu_solve(A: sp.spmatrix, b: np.ndarray, coords: np.ndarray | None = None,
              tol: float = 1e-10) -> tuple[np.ndarray, float]:
    A = A.tocsr()
    attempts = [("COLAMD", 1.0)]
    if coords is not None:
        attempts.insert(0, ("NATURAL", 0.01))
    bnorm = max(np.linalg.norm(b), np.finfo(float).tiny)
    for permc, thresh in attempts:
        perm = nested_dissection(A, coords) if permc == "NATURAL" else np.arange(A.shape[0])
        P = A[perm][:, perm].tocsc()
        lu = _factor(P, permc, thresh)
        diag = np.abs(lu.U.diagonal())
        tiny = diag <= 1e-14 * diag.max(initial=1.0)
        if np.any(tiny):
            err = SingularSystemError(f"near-zero pivot at index {int(perm[np.flatnonzero(tiny)[0]])}")
            continue
        bp = b[perm]
        y = lu.solve(bp)
        # one step of iterative refinement
        y += lu.solve(bp - P @ y)
        x = np.empty_like(y)
        x[perm] = y
        fill = (lu.L.nnz + lu.U.nnz) / max(A.nnz, 1)
        if np.linalg.norm(A @ x - b) <= tol * bnorm:
            return x, fill
        err = SingularSystemError(f"residual {np.linalg.norm(A @ x - b) / bnorm:.3e} above {tol:g}")
    raise err


def solve_dense_check(A, b) -> np.ndarray:
    """Reference solve for small systems (tests)."""
    x, _ = _lu_solve(sp.csr_matrix(A), np.asarray(b, dtype=float), tol=np.inf)
    return x


def check_discrete_divergence(u: np.ndarray, spaces: FESpaceTriple, degree: int | None = None) -> float:
    """max over tets of ||div u_h||_{L2(E)}."""
    V = spaces.velocity
    mesh = V.mesh
    rule = tet_rule(2 * V.k if degree is None else degree)
    cells = np.arange(mesh.n_tets)
    div = V.divergence(cells, rule.points)
    d = np.einsum("nqk,nk->nq", div, u[V.cell_dofs])
    w = geometry(mesh).det[:, None] * rule.weights
    return float(np.sqrt(np.max(np.sum(w * d * d, axis=1))))


def dump_solution(sol: Solution) -> str:
    out = []
    for name, vec in (("u", sol.u), ("p", sol.p), ("B", sol.B), ("lambda", np.array([sol.multiplier]))):
        out.append(f"# {name} {len(vec)}")
        out += [repr(float(v)) for v in vec]
    return "\n".join(out) + "\n"
