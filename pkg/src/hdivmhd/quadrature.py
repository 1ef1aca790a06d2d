"""Quadrature on the reference tetrahedron and triangle.

Rules are collapsed (conical product) Gauss-Jacobi rules: the simplex is the
image of the unit cube under the Duffy map, and the Jacobian of that map is
absorbed into Jacobi weights, so every rule has positive weights and interior
points.  Reference tetrahedron: x, y, z >= 0, x + y + z <= 1 (volume 1/6).
Reference triangle: s, t >= 0, s + t <= 1 (area 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 30


class UnsupportedDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    exactness_degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)


def _gauss_jacobi01(m: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi nodes/weights on [0, 1] for the weight (1 - s)**alpha."""
    t, w = roots_jacobi(m, alpha, 0.0)
    return 0.5 * (1.0 + t), w / 2.0 ** (alpha + 1)


def _check_degree(degree: int) -> int:
    degree = int(degree)
    if degree < 0 or degree > MAX_DEGREE:
        raise UnsupportedDegreeError(
            f"quadrature degree {degree} outside supported range 0..{MAX_DEGREE}"
        )
    return degree


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> QuadRule:
    degree = _check_degree(degree)
    m = max(1, (degree + 2) // 2)
    a, wa = _gauss_jacobi01(m, 2)
    b, wb = _gauss_jacobi01(m, 1)
    c, wc = _gauss_jacobi01(m, 0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
    x = A
    y = B * (1.0 - A)
    z = C * (1.0 - A) * (1.0 - B)
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    pts.setflags(write=False)
    w = W.ravel().copy()
    w.setflags(write=False)
    return QuadRule(pts, w, degree)


@lru_cache(maxsize=None)
def tri_rule(degree: int) -> QuadRule:
    degree = _check_degree(degree)
    m = max(1, (degree + 2) // 2)
    a, wa = _gauss_jacobi01(m, 1)
    b, wb = _gauss_jacobi01(m, 0)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = wa[:, None] * wb[None, :]
    pts = np.stack([A.ravel(), (B * (1.0 - A)).ravel()], axis=1)
    pts.setflags(write=False)
    w = W.ravel().copy()
    w.setflags(write=False)
    return QuadRule(pts, w, degree)


def monomial_integral(exponents: tuple[int, ...]) -> float:
    """Exact integral of prod x_i**a_i over the reference simplex of matching dimension."""
    d = len(exponents)
    num = 1
    for a in exponents:
        num *= factorial(a)
    return num / factorial(sum(exponents) + d)


def map_to_tet(rule: QuadRule, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a tet rule onto one or many physical tetrahedra.

    ``vertices`` has shape (4, 3) or (n, 4, 3); returned points are (..., nq, 3)
    and weights (..., nq), scaled by |det J|.
    """
    v = np.asarray(vertices, dtype=float)
    J = np.stack([v[..., 1, :] - v[..., 0, :], v[..., 2, :] - v[..., 0, :],
                  v[..., 3, :] - v[..., 0, :]], axis=-1)
    pts = v[..., None, 0, :] + np.einsum("...ij,qj->...qi", J, rule.points)
    det = np.abs(np.linalg.det(J))
    return pts, det[..., None] * rule.weights


def map_to_face(rule: QuadRule, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a triangle rule onto physical triangles in 3D; weights scale by 2*area."""
    v = np.asarray(vertices, dtype=float)
    e1 = v[..., 1, :] - v[..., 0, :]
    e2 = v[..., 2, :] - v[..., 0, :]
    pts = (v[..., None, 0, :] + rule.points[:, 0, None] * e1[..., None, :]
           + rule.points[:, 1, None] * e2[..., None, :])
    two_area = np.linalg.norm(np.cross(e1, e2), axis=-1)
    return pts, two_area[..., None] * rule.weights


def validate_rule(rule: QuadRule, rtol: float = 1e-12) -> float:
    """Largest relative monomial error of ``rule`` up to its exactness degree."""
    d = rule.dim
    worst = 0.0
    for total in range(rule.exactness_degree + 1):
        for exps in _exponents(d, total):
            approx = np.dot(rule.weights, np.prod(rule.points ** np.array(exps), axis=1))
            exact = monomial_integral(exps)
            worst = max(worst, abs(approx - exact) / exact)
    if worst > rtol:
        raise AssertionError(f"rule of degree {rule.exactness_degree} fails: {worst:.2e}")
    return worst


def _exponents(dim: int, total: int):
    if dim == 1:
        yield (total,)
        return
    for a in range(total, -1, -1):
        for rest in _exponents(dim - 1, total - a):
            yield (a,) + rest
