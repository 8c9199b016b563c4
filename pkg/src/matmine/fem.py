"""Shared trilinear hexahedron machinery for the total-Lagrangian solvers.

Element type is the 8-node brick with 2x2x2 Gauss quadrature.  All routines
are vectorized over elements; connectivity-dependent scatter/gather is left
to the callers (the voxel homogenizer wraps node indices periodically, the
macro solver does not).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import tensors

# local corner coordinates, VTK hexahedron ordering
CORNERS = np.array([
    [-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0],
])

_g = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = CORNERS * _g
GAUSS_WEIGHTS = np.ones(8)


def shape_functions(xi):
    """Trilinear shape values at local coordinates xi, shape (...,8)."""
    xi = np.asarray(xi, dtype=float)
    return 0.125 * np.prod(1.0 + xi[..., None, :] * CORNERS, axis=-1)


def _shape_gradients_local(points):
    """dN/dxi at the given local points, shape (n_pts, 8, 3)."""
    pts = np.asarray(points, dtype=float)
    grads = np.empty((len(pts), 8, 3))
    for q, xi in enumerate(pts):
        for a, c in enumerate(CORNERS):
            f = 1.0 + xi * c
            grads[q, a] = 0.125 * np.array([
                c[0] * f[1] * f[2],
                f[0] * c[1] * f[2],
                f[0] * f[1] * c[2],
            ])
    return grads

SHAPE_GRADS_LOCAL = _shape_gradients_local(GAUSS_POINTS)


def element_gradients(coords):
    """Reference shape gradients and weighted volumes per quadrature point.

    Parameters
    ----------
    coords : (E, 8, 3) reference node coordinates per element.

    Returns
    -------
    dNdX : (E, 8, 8, 3) gradients (element, gauss point, node, direction).
    wdet : (E, 8) quadrature weight times Jacobian determinant.
    """
    coords = np.asarray(coords, dtype=float)
    # J[e,q,i,j] = d X_j / d xi_i
    J = np.einsum("qai,eaj->eqij", SHAPE_GRADS_LOCAL, coords)
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0.0):
        raise ValueError("element with non-positive Jacobian (check node order)")
    Jinv = np.linalg.inv(J)
    dNdX = np.einsum("qai,eqij->eqaj", SHAPE_GRADS_LOCAL, Jinv)
    return dNdX, detJ * GAUSS_WEIGHTS


def deformation_gradients(u_elem, dNdX):
    """F = 1 + du/dX per quadrature point from element displacements.

    ``u_elem`` has shape (E, 8, 3) (element-gathered displacements).
    """
    F = np.einsum("eai,eqaj->eqij", u_elem, dNdX)
    F += np.eye(3)
    return F


def internal_forces(P, dNdX, wdet, conn, n_nodes):
    """Assemble nodal internal forces from nominal stresses.

    ``conn`` holds global node ids (E, 8); repeated ids accumulate, which is
    what periodic wrapping relies on.  Returns (n_nodes, 3).
    """
    f_elem = np.einsum("eq,eqij,eqaj->eai", wdet, P, dNdX)
    f = np.zeros((n_nodes, 3))
    np.add.at(f, conn.reshape(-1), f_elem.reshape(-1, 3))
    return f


def volume_average(field, wdet):
    """Volume average of a per-quadrature-point field (E, q, ...)."""
    vol = wdet.sum()
    return np.einsum("eq,eq...->...", wdet, field) / vol


def nominal_stress_operator(F, T, tangent_mandel):
    """Two-point tangent A_iJkL = dP_iJ/dF_kL from T and the material tangent.

    ``tangent_mandel`` is 4 d^2psi/dCdC as (...,6,6); the geometric term
    delta_ik T_JL is included.
    """
    Cfull = tensors.mandel_to_tensor4(tangent_mandel)
    A = np.einsum("...im,...kn,...mjnl->...ijkl", F, F, Cfull, optimize=True)
    A += np.einsum("ik,...jl->...ijkl", np.eye(3), T)
    return A


def tangent_matrix(A, dNdX, wdet, conn, n_nodes):
    """Assemble the global stiffness as CSR from per-point tangents A."""
    Ke = np.einsum("eq,eqaj,eqijkl,eqbl->eaibk", wdet, dNdX, A, dNdX,
                   optimize=True)
    E = conn.shape[0]
    dofs = (3 * conn[:, :, None] + np.arange(3)[None, None, :]).reshape(E, 24)
    rows = np.repeat(dofs, 24, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 24)).reshape(-1)
    K = sp.coo_matrix((Ke.reshape(E, 24, 24).reshape(-1), (rows, cols)),
                      shape=(3 * n_nodes, 3 * n_nodes))
    return K.tocsr()
