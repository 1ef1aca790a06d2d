"""Error norms, seminorms of discrete fields, regime diagnostics and convergence rates.

Everything here is evaluated pointwise at quadrature points from coefficient
vectors, independently of the assembled matrices, so it doubles as an oracle
for the forms.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .fespace import FESpaceTriple, face_points, geometry
from .forms import PhysicalParams, StabParams, sym
from .mesh import TetMesh
from .mms import AdvectionFields, curl_from_grad
from .quadrature import tet_rule

CHUNK = 256


def _chunks(n):
    return [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]


def eval_field(space, coef: np.ndarray, cells: np.ndarray, xhat: np.ndarray, grad: bool = True):
    vals, grads = space.evaluate(cells, xhat, grad=grad)
    c = coef[space.cell_dofs[cells]]
    v = np.einsum("nqki,nk->nqi", vals, c)
    if not grad:
        return v, None
    return v, np.einsum("nqkij,nk->nqij", grads, c)


def eval_pressure(space, coef, cells, xhat):
    vals, _ = space.evaluate(cells, xhat)
    return np.einsum("nqk,nk->nq", vals, coef[space.cell_dofs[cells]])


def face_traces(space, coef: np.ndarray, faces: np.ndarray, degree: int):
    """Owner/neighbour traces and gradients of a velocity field on a batch of faces.

    Returns x, w, (v_owner, g_owner), (v_neighbor, g_neighbor) with the
    neighbour pair None for boundary faces.
    """
    mesh = space.mesh
    g = geometry(mesh)
    x, w, _ = face_points(mesh, faces, degree)
    own = mesh.face_owner[faces]
    vo = eval_field(space, coef, own, g.to_reference(own, x))
    nb = mesh.face_neighbor[faces]
    vn = None
    if len(nb) and nb.min() >= 0:
        vn = eval_field(space, coef, nb, g.to_reference(nb, x))
    return x, w, vo, vn


@dataclass
class JumpData:
    """Jumps of a velocity error on all faces, split interior / boundary."""

    w_int: np.ndarray
    x_int: np.ndarray
    n_int: np.ndarray
    h_int: np.ndarray
    jump_int: np.ndarray
    gjump_int: np.ndarray
    w_bnd: np.ndarray
    h_bnd: np.ndarray
    jump_bnd: np.ndarray


def velocity_jumps(space, coef: np.ndarray, degree: int, g_u: Callable | None = None) -> JumpData:
    """Jumps of e = u - u_h: interior [e] = -[u_h]; boundary [e] = g_u - u_h."""
    mesh = space.mesh
    fi, fb = mesh.interior_faces, mesh.boundary_faces
    parts = {"w": [], "x": [], "j": [], "gj": []}
    for s in _chunks(len(fi)):
        x, w, (vo, go), (vn, gn) = face_traces(space, coef, fi[s], degree)
        parts["w"].append(w)
        parts["x"].append(x)
        parts["j"].append(-(vo - vn))
        parts["gj"].append(-(go - gn))
    x, w, (vo, _), _ = face_traces(space, coef, fb, degree)
    jb = (g_u(x) if g_u is not None else 0.0) - vo
    cat = {k: (np.concatenate(v) if v else np.zeros((0,))) for k, v in parts.items()}
    return JumpData(cat["w"], cat["x"], mesh.face_normal[fi], mesh.face_h[fi], cat["j"], cat["gj"],
                    w, mesh.face_h[fb], jb)


def penalty_jump_sq(jd: JumpData) -> float:
    """sum over all faces of h_f^{-1} ||[e]||_f^2."""
    return float(np.einsum("fq,f,fqi,fqi->", jd.w_int, 1.0 / jd.h_int, jd.jump_int, jd.jump_int)
                 + np.einsum("fq,f,fqi,fqi->", jd.w_bnd, 1.0 / jd.h_bnd, jd.jump_bnd, jd.jump_bnd))


def upw_seminorm_sq(jd: JumpData, fields: AdvectionFields, stab: StabParams) -> float:
    chin = np.abs(np.einsum("fqi,fi->fq", fields.chi(jd.x_int), jd.n_int))
    if stab.form_variant == "simplified":
        chin = np.broadcast_to(chin.max(axis=1, initial=0.0)[:, None], chin.shape)
    return float(stab.mu_c * np.einsum("fq,fq,fqi,fqi->", jd.w_int, chin, jd.jump_int, jd.jump_int))


def cip_seminorm_sq(jd: JumpData, fields: AdvectionFields, stab: StabParams) -> float:
    th = fields.theta(jd.x_int)
    if stab.form_variant == "simplified":
        t2 = np.einsum("fqi,fqi->fq", th, th).max(axis=1, initial=0.0)
        jj = np.einsum("fq,fqi,fqi->f", jd.w_int, jd.jump_int, jd.jump_int)
        gg = np.einsum("fq,fqij,fqij->f", jd.w_int, jd.gjump_int, jd.gjump_int)
        return float(np.sum(t2 * (stab.mu_j1 * jj + stab.mu_j2 * jd.h_int ** 2 * gg)))
    cr = np.cross(th, jd.jump_int)
    gt = np.einsum("fqij,fqj->fqi", jd.gjump_int, th)
    return float(stab.mu_j1 * np.einsum("fq,fqi,fqi->", jd.w_int, cr, cr)
                 + stab.mu_j2 * np.einsum("fq,f,fqi,fqi->", jd.w_int, jd.h_int ** 2, gt, gt))


@dataclass
class VolumeNorms:
    u_l2: float = 0.0
    u_grad: float = 0.0
    u_eps: float = 0.0
    u_div: float = 0.0
    p_l2: float = 0.0
    B_l2: float = 0.0
    B_grad: float = 0.0
    B_curl: float = 0.0
    B_div: float = 0.0


def volume_norms_sq(spaces: FESpaceTriple, u=None, p=None, B=None, exact=None,
                    degree: int = 8) -> VolumeNorms:
    """Squared volume norms of (exact - discrete); pass exact=None for the discrete field itself.

    Discrete coefficient vectors set to None are treated as zero.
    """
    mesh = spaces.mesh
    g = geometry(mesh)
    rule = tet_rule(degree)
    acc = VolumeNorms()
    for s in _chunks(mesh.n_tets):
        cells = np.arange(mesh.n_tets)[s]
        w = g.det[cells][:, None] * rule.weights
        x = g.to_physical(cells, rule.points)
        if u is not None or exact is not None:
            if u is not None:
                v, gv = eval_field(spaces.velocity, u, cells, rule.points)
            else:
                v, gv = np.zeros(x.shape), np.zeros(x.shape + (3,))
            if exact is not None:
                v, gv = exact.u(x) - v, exact.grad_u(x) - gv
            else:
                v, gv = -v, -gv
            acc.u_l2 += np.einsum("nq,nqi,nqi->", w, v, v)
            acc.u_grad += np.einsum("nq,nqij,nqij->", w, gv, gv)
            ev = sym(gv)
            acc.u_eps += np.einsum("nq,nqij,nqij->", w, ev, ev)
            dv = np.einsum("nqii->nq", gv)
            acc.u_div += np.einsum("nq,nq,nq->", w, dv, dv)
        if p is not None or exact is not None:
            ph = eval_pressure(spaces.pressure, p, cells, rule.points) if p is not None else 0.0
            ep = (exact.p(x) if exact is not None else 0.0) - ph
            ep = np.broadcast_to(ep, w.shape)
            acc.p_l2 += np.einsum("nq,nq,nq->", w, ep, ep)
        if B is not None or exact is not None:
            if B is not None:
                b, gb = eval_field(spaces.magnetic, B, cells, rule.points)
            else:
                b, gb = np.zeros(x.shape), np.zeros(x.shape + (3,))
            if exact is not None:
                b, gb = exact.B(x) - b, exact.grad_B(x) - gb
            else:
                b, gb = -b, -gb
            acc.B_l2 += np.einsum("nq,nqi,nqi->", w, b, b)
            acc.B_grad += np.einsum("nq,nqij,nqij->", w, gb, gb)
            cb = curl_from_grad(gb)
            acc.B_curl += np.einsum("nq,nqi,nqi->", w, cb, cb)
            db = np.einsum("nqii->nq", gb)
            acc.B_div += np.einsum("nq,nq,nq->", w, db, db)
    return acc


@dataclass
class ErrorReport:
    err_u_L2: float
    err_u_H1: float
    err_u_S: float
    err_u_upw: float
    err_u_cip: float
    err_u_stab: float
    err_u_1h: float
    err_p_L2: float
    err_B_L2: float
    err_B_H1: float
    err_B_M: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def compute_errors(solution, exact, spaces: FESpaceTriple, params: PhysicalParams,
                   stab: StabParams, fields: AdvectionFields, degree: int | None = None,
                   g_u: Callable | None = None) -> ErrorReport:
    """All error norms of (exact - discrete).

    ``solution`` needs attributes u, p, B.  The boundary jump of the velocity
    error is g_u - u_h with g_u the exact velocity unless given explicitly.
    """
    k = spaces.k
    degree = max(2 * k + 4, 8) if degree is None else degree
    vol = volume_norms_sq(spaces, solution.u, solution.p, solution.B, exact, degree)
    jd = velocity_jumps(spaces.velocity, solution.u, 2 * k + 4,
                        exact.u if g_u is None else g_u)
    pen = penalty_jump_sq(jd)
    upw = upw_seminorm_sq(jd, fields, stab)
    cip = cip_seminorm_sq(jd, fields, stab)
    s2 = params.sigma_s * vol.u_l2 + params.nu_s * vol.u_eps + params.nu_s * stab.mu_a * pen
    one_h = vol.u_l2 + vol.u_eps + stab.mu_a * pen
    return ErrorReport(
        err_u_L2=float(np.sqrt(vol.u_l2)),
        err_u_H1=float(np.sqrt(vol.u_grad)),
        err_u_S=float(np.sqrt(s2)),
        err_u_upw=float(np.sqrt(upw)),
        err_u_cip=float(np.sqrt(cip)),
        err_u_stab=float(np.sqrt(s2 + upw + cip)),
        err_u_1h=float(np.sqrt(one_h)),
        err_p_L2=float(np.sqrt(vol.p_l2)),
        err_B_L2=float(np.sqrt(vol.B_l2)),
        err_B_H1=float(np.sqrt(vol.B_grad)),
        err_B_M=float(np.sqrt(params.sigma_m * vol.B_l2 + params.nu_m * vol.B_grad)),
    )


def velocity_norm_1h(spaces: FESpaceTriple, u: np.ndarray, mu_a: float) -> float:
    """||u_h||_{1,h} of a discrete velocity (boundary jump = trace)."""
    k = spaces.k
    vol = volume_norms_sq(spaces, u=u, degree=2 * k)
    jd = velocity_jumps(spaces.velocity, u, 2 * k + 2)
    return float(np.sqrt(vol.u_l2 + vol.u_eps + mu_a * penalty_jump_sq(jd)))


# -------------------------------------------------------------- diagnostics


@dataclass
class RegimeDiagnostics:
    lambda_S: float
    lambda_M: float
    terms_S: dict[str, float]
    terms_M: dict[str, float]

    @property
    def dominant_S(self) -> str:
        return max(self.terms_S, key=self.terms_S.get)

    @property
    def dominant_M(self) -> str:
        return max(self.terms_M, key=self.terms_M.get)


def regime_diagnostics(params: PhysicalParams, stab: StabParams, fields: AdvectionFields,
                       mesh: TetMesh, degree: int = 6) -> RegimeDiagnostics:
    """Lambda_S and Lambda_M; face L-infinity norms are maxima over quadrature points."""
    h = float(mesh.h_E.max())
    fi = mesh.interior_faces
    if len(fi):
        x, _, _ = face_points(mesh, fi, degree)
        chin = float(np.abs(np.einsum("fqi,fi->fq", fields.chi(x), mesh.face_normal[fi])).max())
        th2 = float(np.einsum("fqi,fqi->fq", fields.theta(x), fields.theta(x)).max())
    else:
        chin = th2 = 0.0
    terms_S = {
        "reaction": params.sigma_s * h * h,
        "convection": chin * h,
        "magnetic_convection": th2 * h,
        "diffusion": params.nu_s * (1.0 + stab.mu_a + 1.0 / stab.mu_a),
    }
    terms_M = {"reaction": params.sigma_m * h * h, "diffusion": params.nu_m}
    return RegimeDiagnostics(float(np.sqrt(max(terms_S.values()))),
                             float(np.sqrt(max(terms_M.values()))), terms_S, terms_M)


# ---------------------------------------------------------------- rates


@dataclass
class RateTable:
    pairwise: dict[str, list[float]]
    least_squares: dict[str, float]


def convergence_rates(levels: Sequence[tuple[float, dict[str, float] | ErrorReport]]) -> RateTable:
    """Pairwise log-log rates between consecutive levels and the least-squares slope.

    ``levels`` is a sequence of (h, errors) with strictly decreasing h.
    """
    if len(levels) < 2:
        raise ValueError("need at least two mesh levels")
    hs = np.array([h for h, _ in levels], dtype=float)
    if np.any(np.diff(hs) >= 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    reps = [e.as_dict() if isinstance(e, ErrorReport) else dict(e) for _, e in levels]
    pairwise, lsq = {}, {}
    for key in reps[0]:
        es = np.array([r[key] for r in reps], dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            pr = np.log(es[:-1] / es[1:]) / np.log(hs[:-1] / hs[1:])
            pairwise[key] = [float(v) for v in pr]
            if np.all(es > 0):
                lsq[key] = float(np.polyfit(np.log(hs), np.log(es), 1)[0])
            else:
                lsq[key] = float("nan")
    return RateTable(pairwise, lsq)
