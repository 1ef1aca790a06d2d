import numpy as np
import pytest
import scipy.sparse as sp

from hdivmhd.analysis import eval_field, upw_seminorm_sq, velocity_jumps
from hdivmhd.fespace import bdm_interpolate, face_points, geometry, nodal_interpolate_magnetic
from hdivmhd.forms import (Discretization, PhysicalParams, StabParams, assemble_cip,
                           assemble_coupling, assemble_divergence, assemble_fluid_convection,
                           assemble_fluid_diffusion, assemble_load, assemble_magnetic,
                           assemble_mass, dump_coo)
from hdivmhd.mms import AdvectionFields, BoundaryData, exact_solution
from hdivmhd.quadrature import tet_rule
from hdivmhd.system import ProblemData, assemble_system

ex = exact_solution()
FIELDS = AdvectionFields.bind(ex)


@pytest.fixture(scope="module")
def disc(spaces2):
    return Discretization(spaces2)


@pytest.fixture(scope="module")
def fine_disc(spaces2):
    return Discretization(spaces2, degree=16, face_degree=18)


def dense(m):
    return sp.coo_matrix(m).toarray()


def assert_symmetric(m, tol=1e-12):
    A = dense(m)
    assert np.abs(A - A.T).max() <= tol * max(np.abs(A).max(), 1.0)


def cube_integral(fn, n=10):
    t, w = np.polynomial.legendre.leggauss(n)
    t, w = 0.5 * (t + 1), 0.5 * w
    X = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
    return float(np.dot(np.einsum("i,j,k->ijk", w, w, w).ravel(), fn(X)))


def test_symmetric_forms(disc):
    stab = StabParams.defaults(disc.spaces.k)
    for space in ("velocity", "magnetic", "pressure"):
        assert_symmetric(assemble_mass(disc, space))
    assert_symmetric(assemble_fluid_diffusion(disc, PhysicalParams(nu_s=0.3), stab)[0])
    assert_symmetric(assemble_magnetic(disc, PhysicalParams(nu_m=0.7)))
    assert_symmetric(assemble_cip(disc, FIELDS, stab))
    with pytest.raises(ValueError):
        assemble_mass(disc, "vorticity")


def test_mass_reproduces_volume(disc):
    W = disc.W
    e = nodal_interpolate_magnetic(W, lambda x: np.broadcast_to([1.0, 2.0, 2.0], x.shape))
    assert e @ (dense(assemble_mass(disc, "magnetic")) @ e) == pytest.approx(9.0, rel=1e-12)
    v = bdm_interpolate(disc.V, lambda x: np.broadcast_to([0.0, 3.0, 0.0], x.shape))
    assert v @ (dense(assemble_mass(disc, "velocity")) @ v) == pytest.approx(9.0, rel=1e-12)


def test_sip_on_constant_field(disc):
    # epsilon(v) = 0 and interior jumps vanish; only the boundary penalty survives
    mesh = disc.mesh
    c = np.array([1.0, -2.0, 0.5])
    v = bdm_interpolate(disc.V, lambda x: np.broadcast_to(c, x.shape))
    nu, mu = 0.4, 7.0
    A, _ = assemble_fluid_diffusion(disc, PhysicalParams(nu_s=nu), StabParams(mu_a=mu))
    fb = mesh.boundary_faces
    expected = nu * mu * c @ c * np.sum(mesh.face_area[fb] / mesh.face_h[fb])
    assert v @ (dense(A) @ v) == pytest.approx(expected, rel=1e-12)


def test_sip_on_linear_field(disc):
    mesh = disc.mesh
    G = np.array([[0.3, 1.0, 0.0], [0.0, -0.1, 2.0], [0.5, 0.0, -0.2]])
    fn = lambda x: x @ G.T  # noqa: E731
    v = bdm_interpolate(disc.V, fn)
    nu, mu = 1.0, 10.0
    A, _ = assemble_fluid_diffusion(disc, PhysicalParams(nu_s=nu), StabParams(mu_a=mu))
    E = 0.5 * (G + G.T)
    fb = mesh.boundary_faces
    x, w, _ = face_points(mesh, fb, 4)
    n = mesh.face_normal[fb]
    vals = fn(x)
    cons = np.einsum("fq,fqi,ij,fj->", w, vals, E, n)
    pen = np.einsum("fq,f,fqi,fqi->", w, 1.0 / mesh.face_h[fb], vals, vals)
    expected = nu * (np.sum(E * E) - 2 * cons + mu * pen)
    assert v @ (dense(A) @ v) == pytest.approx(expected, rel=1e-11)


def test_convection_energy_identity(fine_disc):
    """c_h(v, v) equals the upwind seminorm when chi is solenoidal and tangential."""
    V = fine_disc.V
    stab = StabParams.defaults(V.k, mu_c=1.3)
    C = dense(assemble_fluid_convection(fine_disc, FIELDS, stab))
    rng = np.random.default_rng(3)
    for v in (bdm_interpolate(V, ex.u), rng.standard_normal(V.n_dofs)):
        jd = velocity_jumps(V, v, 18)
        oracle = upw_seminorm_sq(jd, FIELDS, stab)
        assert v @ C @ v == pytest.approx(oracle, rel=1e-9, abs=1e-9)


def test_convection_without_penalty_is_skew(fine_disc):
    C = dense(assemble_fluid_convection(fine_disc, FIELDS, StabParams(mu_c=0.0)))
    assert np.abs(C + C.T).max() <= 1e-9 * np.abs(C).max()


@pytest.mark.parametrize("variant", ["full", "simplified"])
def test_cip_positive_semidefinite(disc, variant):
    J = dense(assemble_cip(disc, FIELDS, StabParams(form_variant=variant)))
    lam = np.linalg.eigvalsh(0.5 * (J + J.T))
    assert lam.min() >= -1e-12 * lam.max()
    assert lam.max() > 0


def test_cip_zero_cases(disc):
    assert assemble_cip(disc, FIELDS, StabParams(scheme="fStab")).nnz == 0
    zero = AdvectionFields.bind(ex, theta="zero")
    assert np.abs(dense(assemble_cip(disc, zero, StabParams()))).max() == 0.0
    J = assemble_cip(disc, FIELDS, StabParams(mu_j1=0.0, mu_j2=0.0))
    assert np.abs(dense(J)).max() == 0.0


def test_cip_vanishes_on_smooth_fields(disc):
    # jumps of a globally polynomial field are zero
    v = bdm_interpolate(disc.V, lambda x: np.stack([x[..., 1], x[..., 2], x[..., 0]], -1))
    J = dense(assemble_cip(disc, FIELDS, StabParams()))
    assert abs(v @ J @ v) <= 1e-12


def test_simplified_forms_dominate_full(disc):
    full = StabParams(form_variant="full")
    simp = StabParams(form_variant="simplified")
    dJ = dense(assemble_cip(disc, FIELDS, simp)) - dense(assemble_cip(disc, FIELDS, full))
    assert np.linalg.eigvalsh(0.5 * (dJ + dJ.T)).min() >= -1e-10 * np.abs(dJ).max()
    dC = dense(assemble_fluid_convection(disc, FIELDS, simp)) - dense(assemble_fluid_convection(disc, FIELDS, full))
    assert np.abs(dC - dC.T).max() <= 1e-12 * np.abs(dC).max()
    assert np.linalg.eigvalsh(0.5 * (dC + dC.T)).min() >= -1e-10 * np.abs(dC).max()
    assert np.abs(dC).max() > 0


def test_magnetic_form_on_linear_field(disc):
    W = disc.W
    H = nodal_interpolate_magnetic(W, lambda x: np.stack([x[..., 1], 0 * x[..., 0], 0 * x[..., 0]], -1))
    A = dense(assemble_magnetic(disc, PhysicalParams(nu_m=0.25)))
    # curl H = (0, 0, -1), div H = 0, |Omega| = 1
    assert H @ A @ H == pytest.approx(0.25, rel=1e-12)
    G = nodal_interpolate_magnetic(W, lambda x: np.stack([x[..., 0], x[..., 1], x[..., 2]], -1))
    assert G @ A @ G == pytest.approx(0.25 * 9, rel=1e-12)


def test_coupling_against_pointwise_oracle(disc):
    V, W = disc.V, disc.W
    mesh = disc.mesh
    D = dense(assemble_coupling(disc, FIELDS))
    v = bdm_interpolate(V, ex.u)
    H = nodal_interpolate_magnetic(W, ex.B)
    g = geometry(mesh)
    rule = tet_rule(disc.degree)
    cells = np.arange(mesh.n_tets)
    vv, _ = eval_field(V, v, cells, rule.points, grad=False)
    _, gH = eval_field(W, H, cells, rule.points)
    curl = np.stack([gH[..., 2, 1] - gH[..., 1, 2], gH[..., 0, 2] - gH[..., 2, 0],
                     gH[..., 1, 0] - gH[..., 0, 1]], -1)
    x = g.to_physical(cells, rule.points)
    w = g.det[:, None] * rule.weights
    oracle = np.einsum("nq,nqi,nqi->", w, np.cross(curl, FIELDS.theta(x)), vv)
    assert v @ D @ H == pytest.approx(oracle, rel=1e-11)


def test_divergence_form(disc):
    Bd = dense(assemble_divergence(disc))
    Q = disc.Q
    v = bdm_interpolate(disc.V, lambda x: np.stack([x[..., 0] ** disc.spaces.k, 0 * x[..., 0],
                                                    0 * x[..., 0]], -1))
    # (div v, 1) = int_{x=1} v.n = 1
    assert Q.mean_functional @ Bd @ v == pytest.approx(1.0, rel=1e-12)
    assert Bd.shape == (Q.n_dofs, disc.V.n_dofs)


def test_load_against_tensor_quadrature(disc):
    f = lambda x: np.stack([x[..., 0] * x[..., 1], np.ones(x.shape[:-1]), x[..., 2] ** 2], -1)  # noqa: E731
    G = lambda x: np.stack([x[..., 2], x[..., 0] ** 2, -x[..., 1]], -1)  # noqa: E731
    vfn = lambda x: np.stack([x[..., 1], 1 + 0 * x[..., 0], -x[..., 2]], -1)  # noqa: E731
    ru, rB = assemble_load(disc, f, G)
    v = bdm_interpolate(disc.V, vfn)
    H = nodal_interpolate_magnetic(disc.W, vfn)
    oracle = cube_integral(lambda x: np.einsum("qi,qi->q", f(x), vfn(x)))
    assert ru @ v == pytest.approx(oracle, rel=1e-12)
    oracle = cube_integral(lambda x: np.einsum("qi,qi->q", G(x), vfn(x)))
    assert rB @ H == pytest.approx(oracle, rel=1e-12)


def test_natural_flux_term(disc):
    # j = (1, 0, 0), H = (0, 0, y): only the face y = 1 contributes, with (j x n) . H = 1
    data = BoundaryData(g_u=None, g_B=None, j=lambda x: np.broadcast_to([1.0, 0.0, 0.0], x.shape))
    _, rB = assemble_load(disc, None, None, data, PhysicalParams(nu_m=2.0))
    H = nodal_interpolate_magnetic(disc.W, lambda x: np.stack([0 * x[..., 0], 0 * x[..., 0], x[..., 1]], -1))
    assert rB @ H == pytest.approx(2.0, rel=1e-12)


def test_parallel_assembly_identical(spaces2_k1):
    serial = Discretization(spaces2_k1, chunk_size=7)
    par = Discretization(spaces2_k1, chunk_size=7, workers=3)
    stab = StabParams()
    for build in (lambda d: assemble_cip(d, FIELDS, stab),
                  lambda d: assemble_fluid_convection(d, FIELDS, stab),
                  lambda d: assemble_fluid_diffusion(d, PhysicalParams(), stab)[0],
                  lambda d: assemble_coupling(d, FIELDS)):
        a, b = build(serial), build(par)
        np.testing.assert_array_equal(a.row, b.row)
        np.testing.assert_array_equal(a.col, b.col)
        np.testing.assert_array_equal(a.data, b.data)
    f, _ = assemble_load(serial, ex.u, ex.B)
    g, _ = assemble_load(par, ex.u, ex.B)
    np.testing.assert_array_equal(f, g)


def test_schemes_differ_exactly_by_cip(spaces2_k1):
    params = PhysicalParams(nu_s=1e-3)
    mf = assemble_system(spaces2_k1, params, StabParams(scheme="mfStab"), FIELDS)
    fs = assemble_system(spaces2_k1, params, StabParams(scheme="fStab"), FIELDS)
    diff = (mf.matrix - fs.matrix).toarray()
    u = mf.block("u")
    np.testing.assert_allclose(diff[u, u], dense(mf.blocks["J_h"]), atol=1e-14)
    diff[u, u] = 0.0
    assert np.abs(diff).max() == 0.0


def test_dump_coo_format():
    m = sp.coo_matrix(([1.5, -2.0], ([0, 2], [1, 0])), shape=(3, 3))
    assert dump_coo(m) == "0 1 1.5\n2 0 -2.0\n"
    assert dump_coo(sp.coo_matrix((2, 2))) == ""


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        PhysicalParams(nu_s=0.0)
    with pytest.raises(ValueError):
        StabParams(mu_a=0.0)
    with pytest.raises(ValueError):
        StabParams(mu_j1=-1.0)
    with pytest.raises(ValueError):
        StabParams(scheme="SUPG")
    with pytest.raises(ValueError):
        StabParams(form_variant="lumped")
    assert StabParams.defaults(2).mu_a == 20.0
