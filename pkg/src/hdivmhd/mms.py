"""Manufactured solution on the unit cube with closed-form derivatives.

    u = ( sin(pi x) cos(pi y) cos(pi z),
          sin(pi y) cos(pi z) cos(pi x),
         -2 sin(pi z) cos(pi x) cos(pi y) )
    B = ( sin(pi y), sin(pi z), sin(pi x) )
    p = sin x + sin y - 2 sin z

The third velocity component carries -2 so that div u = 0 exactly, which the
advection binding chi = u relies on.  All evaluators take points of shape
(..., 3) and return arrays with the trailing shape of the quantity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

PI = np.pi

Field = Callable[[np.ndarray], np.ndarray]


def _scs(x):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    return (np.sin(PI * X), np.sin(PI * Y), np.sin(PI * Z),
            np.cos(PI * X), np.cos(PI * Y), np.cos(PI * Z))


def curl_from_grad(g: np.ndarray) -> np.ndarray:
    """curl of a vector field from its Jacobian g[..., component, derivative]."""
    return np.stack([g[..., 2, 1] - g[..., 1, 2],
                     g[..., 0, 2] - g[..., 2, 0],
                     g[..., 1, 0] - g[..., 0, 1]], axis=-1)


class ExactSolution:
    """Closed-form evaluators for (u, p, B) and the derivatives the forcing needs."""

    @staticmethod
    def u(x):
        sx, sy, sz, cx, cy, cz = _scs(x)
        return np.stack([sx * cy * cz, sy * cz * cx, -2.0 * sz * cx * cy], axis=-1)

    @staticmethod
    def grad_u(x):
        sx, sy, sz, cx, cy, cz = _scs(x)
        g = np.empty(np.shape(x)[:-1] + (3, 3))
        g[..., 0, 0] = PI * cx * cy * cz
        g[..., 0, 1] = -PI * sx * sy * cz
        g[..., 0, 2] = -PI * sx * cy * sz
        g[..., 1, 0] = -PI * sy * cz * sx
        g[..., 1, 1] = PI * cy * cz * cx
        g[..., 1, 2] = -PI * sy * sz * cx
        g[..., 2, 0] = 2.0 * PI * sz * sx * cy
        g[..., 2, 1] = 2.0 * PI * sz * cx * sy
        g[..., 2, 2] = -2.0 * PI * cz * cx * cy
        return g

    @staticmethod
    def div_u(x):
        return np.einsum("...ii->...", ExactSolution.grad_u(x))

    @classmethod
    def laplacian_u(cls, x):
        # every component is a product of sin/cos(pi .) factors
        return -3.0 * PI ** 2 * cls.u(x)

    @classmethod
    def div_eps_u(cls, x):
        # div eps(u) = (lap u + grad div u) / 2 and div u = 0
        return 0.5 * cls.laplacian_u(x)

    @staticmethod
    def p(x):
        return np.sin(x[..., 0]) + np.sin(x[..., 1]) - 2.0 * np.sin(x[..., 2])

    @staticmethod
    def grad_p(x):
        return np.stack([np.cos(x[..., 0]), np.cos(x[..., 1]), -2.0 * np.cos(x[..., 2])], axis=-1)

    @staticmethod
    def B(x):
        sx, sy, sz, *_ = _scs(x)
        return np.stack([sy, sz, sx], axis=-1)

    @staticmethod
    def grad_B(x):
        _, _, _, cx, cy, cz = _scs(x)
        g = np.zeros(np.shape(x)[:-1] + (3, 3))
        g[..., 0, 1] = PI * cy
        g[..., 1, 2] = PI * cz
        g[..., 2, 0] = PI * cx
        return g

    @staticmethod
    def curl_B(x):
        _, _, _, cx, cy, cz = _scs(x)
        return -PI * np.stack([cz, cx, cy], axis=-1)

    @classmethod
    def curl_curl_B(cls, x):
        return PI ** 2 * cls.B(x)


def exact_solution() -> ExactSolution:
    return ExactSolution()


def _zero_vec(x):
    return np.zeros(np.shape(x)[:-1] + (3,))


def _zero_grad(x):
    return np.zeros(np.shape(x)[:-1] + (3, 3))


@dataclass(frozen=True)
class AdvectionFields:
    chi: Field
    theta: Field
    grad_chi: Field = _zero_grad
    grad_theta: Field = _zero_grad
    name: str = "custom"

    @classmethod
    def bind(cls, exact: ExactSolution, chi: str = "u", theta: str = "B") -> "AdvectionFields":
        """chi in {'u', 'zero'}, theta in {'B', 'zero'}."""
        options_chi = {"u": (exact.u, exact.grad_u), "zero": (_zero_vec, _zero_grad)}
        options_theta = {"B": (exact.B, exact.grad_B), "zero": (_zero_vec, _zero_grad)}
        try:
            c, gc = options_chi[chi]
            t, gt = options_theta[theta]
        except KeyError as err:
            raise ValueError(f"unknown advection binding {err.args[0]!r}") from None
        return cls(c, t, gc, gt, name=f"chi={chi},theta={theta}")

    @classmethod
    def zero(cls) -> "AdvectionFields":
        return cls(_zero_vec, _zero_vec, name="zero")


def forcing(params, exact: ExactSolution, fields: AdvectionFields | None = None):
    """Momentum and induction sources (f, G) consistent with the exact solution.

    f = sigma_S u - nu_S div eps(u) + (grad u) chi + Theta x curl B - grad p
    G = sigma_M B + nu_M curl curl B - curl(u x Theta)
    """
    fields = AdvectionFields.bind(exact) if fields is None else fields

    def f(x):
        return (params.sigma_s * exact.u(x) - params.nu_s * exact.div_eps_u(x)
                + np.einsum("...ij,...j->...i", exact.grad_u(x), fields.chi(x))
                + np.cross(fields.theta(x), exact.curl_B(x)) - exact.grad_p(x))

    def G(x):
        u, th = exact.u(x), fields.theta(x)
        gu, gth = exact.grad_u(x), fields.grad_theta(x)
        div_th = np.einsum("...ii->...", gth)
        div_u = np.einsum("...ii->...", gu)
        curl_u_x_th = (u * div_th[..., None] - th * div_u[..., None]
                       + np.einsum("...ij,...j->...i", gu, th)
                       - np.einsum("...ij,...j->...i", gth, u))
        return params.sigma_m * exact.B(x) + params.nu_m * exact.curl_curl_B(x) - curl_u_x_th

    return f, G


@dataclass(frozen=True)
class BoundaryData:
    """Data lifted onto the discrete problem on the boundary.

    g_u: velocity trace (tangential part enters weakly, normal part via DOFs)
    g_B: magnetic field, sampled component-wise at constrained boundary nodes
    j:   curl B, entering the natural term nu_M (j x n) . H
    theta: advective field, for the trace term (n x (g_u x Theta)) . H
    """

    g_u: Field | None
    g_B: Field | None
    j: Field | None
    theta: Field | None = None

    @classmethod
    def homogeneous(cls) -> "BoundaryData":
        return cls(None, None, None, None)


def boundary_data(exact: ExactSolution, fields: AdvectionFields | None = None) -> BoundaryData:
    fields = AdvectionFields.bind(exact) if fields is None else fields
    return BoundaryData(exact.u, exact.B, exact.curl_B, fields.theta)
