"""Finite-strain tensor kinematics and invariant algebra.

All operations accept batched input: a "tensor" argument may have shape
``(3, 3)`` or ``(..., 3, 3)`` with arbitrary leading dimensions, and scalar
results then have the leading shape ``(...)``.

Fourth-order tensors with minor symmetries travel as 6x6 matrices in the
orthonormal symmetric (Mandel) basis

    E_a in { e1 x e1, e2 x e2, e3 x e3,
             (e2 x e3 + e3 x e2)/sqrt(2),
             (e1 x e3 + e3 x e1)/sqrt(2),
             (e1 x e2 + e2 x e1)/sqrt(2) },

so that double contractions become plain matrix-vector products and major
symmetry of a fourth-order tensor is symmetry of its 6x6 matrix.  Component
order is (11, 22, 33, 23, 13, 12) with sqrt(2) weights on the shear slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirection, NonPositiveJacobian, NotPositiveDefinite

SQRT2 = np.sqrt(2.0)

# Mandel slot -> (row, col) of the symmetric 3x3 tensor, plus basis weights.
MANDEL_ROWS = np.array([0, 1, 2, 1, 0, 0])
MANDEL_COLS = np.array([0, 1, 2, 2, 2, 1])
MANDEL_WEIGHTS = np.array([1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2])

# Orthonormal basis tensors E_a, shape (6, 3, 3).
_BASIS = np.zeros((6, 3, 3))
for _a, (_i, _j) in enumerate(zip(MANDEL_ROWS, MANDEL_COLS)):
    if _i == _j:
        _BASIS[_a, _i, _j] = 1.0
    else:
        _BASIS[_a, _i, _j] = _BASIS[_a, _j, _i] = 1.0 / SQRT2

IDENTITY = np.eye(3)

# Invariant slot order used across the package.
INVARIANT_NAMES_TRANSVERSE = ("I1", "I2", "I3", "I4", "I5", "I3inv")
INVARIANT_NAMES_ISOTROPIC = ("I1", "I2", "I3", "I3inv")


def sym(A):
    """Symmetric part (A + A^T)/2, batched."""
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def sym_to_mandel(A):
    """Map a symmetric (...,3,3) tensor to its (...,6) Mandel vector."""
    A = np.asarray(A, dtype=float)
    return A[..., MANDEL_ROWS, MANDEL_COLS] * MANDEL_WEIGHTS


def mandel_to_sym(v):
    """Inverse of :func:`sym_to_mandel`."""
    v = np.asarray(v, dtype=float)
    return np.einsum("...a,aij->...ij", v, _BASIS)


def tensor4_to_mandel(T):
    """Map a minor-symmetric (...,3,3,3,3) tensor to its (...,6,6) matrix."""
    T = np.asarray(T, dtype=float)
    M = T[..., MANDEL_ROWS[:, None], MANDEL_COLS[:, None],
          MANDEL_ROWS[None, :], MANDEL_COLS[None, :]]
    return M * (MANDEL_WEIGHTS[:, None] * MANDEL_WEIGHTS[None, :])


def mandel_to_tensor4(M):
    """Inverse of :func:`tensor4_to_mandel` (minor symmetries restored)."""
    M = np.asarray(M, dtype=float)
    return np.einsum("...ab,aij,bkl->...ijkl", M, _BASIS, _BASIS)


def jacobian(F, check=True):
    """det F, raising :class:`NonPositiveJacobian` when any det <= 0."""
    J = np.linalg.det(np.asarray(F, dtype=float))
    if check and np.any(J <= 0.0):
        raise NonPositiveJacobian(f"min det F = {np.min(J):g}")
    return J


def right_cauchy_green(F):
    """C = F^T F, batched."""
    F = np.asarray(F, dtype=float)
    return np.einsum("...ki,...kj->...ij", F, F)


def structural_tensor(a):
    """Rank-one structural tensor M = a x a for a (unit-normalized) direction."""
    a = np.asarray(a, dtype=float)
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise DegenerateDirection("direction has (near-)zero length")
    a = a / n
    return np.outer(a, a)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Clustered eigendecomposition of a symmetric positive definite tensor.

    ``eigenvalues`` holds the distinct (cluster-averaged) eigenvalues in
    descending order, ``multiplicities`` their cluster sizes (summing to 3),
    and ``projectors`` the corresponding orthogonal eigenprojectors, so that
    ``sum(lam[b] * P[b]) == C`` and ``sum(P[b]) == I``.
    """

    eigenvalues: np.ndarray
    multiplicities: tuple
    projectors: np.ndarray

    @property
    def n_distinct(self):
        return len(self.multiplicities)

    def reconstruct(self):
        return np.einsum("b,bij->ij", self.eigenvalues, self.projectors)


def spectral_decomposition(C, cluster_tol=1e-8):
    """Eigenvalues and projectors of a single SPD 3x3 tensor.

    Eigenvalues whose relative gap (against the largest eigenvalue) is at
    most ``cluster_tol`` are merged into one cluster; the projector of a
    cluster is the sum of its eigenvector dyads, which is stable even when
    the individual eigenvectors are not.
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (3, 3):
        raise ValueError("spectral_decomposition expects a single 3x3 tensor")
    if not np.allclose(C, C.T, rtol=0.0, atol=1e-10 * max(1.0, abs(C).max())):
        raise NotPositiveDefinite("tensor is not symmetric")
    lam, vecs = np.linalg.eigh(C)
    if lam[0] <= 0.0:
        raise NotPositiveDefinite(f"min eigenvalue = {lam[0]:g}")
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    scale = lam[0]

    clusters = [[0]]
    for i in (1, 2):
        if lam[i - 1] - lam[i] <= cluster_tol * scale:
            clusters[-1].append(i)
        else:
            clusters.append([i])

    values = np.array([lam[c].mean() for c in clusters])
    mults = tuple(len(c) for c in clusters)
    projectors = np.stack([
        sum(np.outer(vecs[:, i], vecs[:, i]) for i in c) for c in clusters
    ])
    return SpectralDecomposition(values, mults, projectors)


def _check_spdish(C, I3):
    # Cheap admissibility guard for hot paths: SPD implies positive trace
    # and determinant.  Full eigenvalue checks live in the test suite.
    tr = np.trace(np.asarray(C), axis1=-2, axis2=-1)
    if np.any(I3 <= 0.0) or np.any(tr <= 0.0):
        raise NotPositiveDefinite("C fails the positive trace/determinant guard")


def invariants(C, M=None, check=True):
    """Invariant coordinates of C (and a structural tensor M, if given).

    Parameters
    ----------
    C : (...,3,3) right Cauchy-Green tensor(s).
    M : (3,3) or (...,3,3) structural tensor, or None for the isotropic set.

    Returns
    -------
    (...,6) array ordered (I1, I2, I3, I4, I5, 1/I3) when M is given,
    (...,4) array ordered (I1, I2, I3, 1/I3) otherwise, where

        I1 = tr C,  I2 = (tr^2 C - tr C^2)/2,  I3 = det C,
        I4 = M : C, I5 = M : C^2.

    The reciprocal 1/I3 is carried as an explicit extra coordinate: it
    steers compression response and is treated as independent downstream.
    """
    C = np.asarray(C, dtype=float)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    trC2 = np.einsum("...ij,...ji->...", C, C)
    I2 = 0.5 * (I1 * I1 - trC2)
    I3 = np.linalg.det(C)
    if check:
        _check_spdish(C, I3)
    if M is None:
        return np.stack([I1, I2, I3, 1.0 / I3], axis=-1)
    M = np.asarray(M, dtype=float)
    I4 = np.einsum("...ij,...ij->...", M, C)
    Csq = np.einsum("...ik,...kj->...ij", C, C)
    I5 = np.einsum("...ij,...ij->...", M, Csq)
    return np.stack([I1, I2, I3, I4, I5, 1.0 / I3], axis=-1)


def invariants_from_stretches(stretches, multiplicities=None):
    """Isotropic invariants (I1, I2, I3) from principal stretches of F.

    ``stretches`` are the distinct principal stretches lambda_b (not squared)
    with optional multiplicities; useful for cross-checking spectral paths.
    """
    lam = np.asarray(stretches, dtype=float)
    nu = np.ones_like(lam) if multiplicities is None \
        else np.asarray(multiplicities, dtype=float)
    lam2 = lam * lam
    I1 = np.sum(nu * lam2, axis=-1)
    I2 = 0.5 * (I1**2 - np.sum(nu * lam2**2, axis=-1))
    # Account for multiplicity in the product: det C = prod lam^(2 nu).
    I3 = np.prod(lam2**nu, axis=-1)
    return np.stack([I1, I2, I3], axis=-1)


def invariant_gradients(C, M=None):
    """d I_k / d C for the invariant set of :func:`invariants`.

    Returns shape (..., k, 3, 3) with k = 6 (transverse) or 4 (isotropic),
    slots aligned with the output of :func:`invariants`.  All gradients are
    symmetric second-order tensors.
    """
    C = np.asarray(C, dtype=float)
    I3 = np.linalg.det(C)
    Cinv = np.linalg.inv(C)
    eye = np.broadcast_to(IDENTITY, C.shape)
    I1 = np.trace(C, axis1=-2, axis2=-1)

    G1 = eye
    G2 = I1[..., None, None] * eye - C
    G3 = I3[..., None, None] * Cinv
    G3r = -Cinv / I3[..., None, None]
    if M is None:
        return np.stack([np.ascontiguousarray(G1), G2, G3, G3r], axis=-3)
    M = np.broadcast_to(np.asarray(M, dtype=float), C.shape)
    G4 = M
    MC = np.einsum("...ik,...kj->...ij", M, C)
    G5 = MC + np.swapaxes(MC, -1, -2)
    return np.stack([np.ascontiguousarray(G1), G2, G3,
                     np.ascontiguousarray(G4), G5, G3r], axis=-3)


def _dyad44(A, B):
    """A_ij B_kl, batched."""
    return np.einsum("...ij,...kl->...ijkl", A, B)


def _symdyad44(A, B):
    """(A_ik B_jl + A_il B_jk)/2, batched."""
    return 0.5 * (np.einsum("...ik,...jl->...ijkl", A, B)
                  + np.einsum("...il,...jk->...ijkl", A, B))


def invariant_hessians(C, M=None):
    """d^2 I_k / dC dC in the Mandel basis, shape (..., k, 6, 6).

    Slots align with :func:`invariants`; every matrix is symmetric (major
    symmetry of the underlying fourth-order tensor).
    """
    C = np.asarray(C, dtype=float)
    I3 = np.linalg.det(C)[..., None, None, None, None]
    Cinv = np.linalg.inv(C)
    eye = np.broadcast_to(IDENTITY, C.shape)

    H1 = np.zeros(C.shape + (3, 3))
    H2 = _dyad44(eye, eye) - _symdyad44(eye, eye)
    inv_dyad = _dyad44(Cinv, Cinv)
    inv_sym = _symdyad44(Cinv, Cinv)
    H3 = I3 * (inv_dyad - inv_sym)
    H3r = (inv_dyad + inv_sym) / I3
    if M is None:
        stack = np.stack([H1, H2, H3, H3r], axis=-5)
    else:
        M = np.broadcast_to(np.asarray(M, dtype=float), C.shape)
        H4 = np.zeros(C.shape + (3, 3))
        H5 = 0.5 * (np.einsum("...ik,jl->...ijkl", M, IDENTITY)
                    + np.einsum("...il,jk->...ijkl", M, IDENTITY)
                    + np.einsum("ik,...jl->...ijkl", IDENTITY, M)
                    + np.einsum("il,...jk->...ijkl", IDENTITY, M))
        stack = np.stack([H1, H2, H3, H4, H5, H3r], axis=-5)
    return tensor4_to_mandel(stack)


def cross_matrix(n):
    """Skew matrix [n]_x with [n]_x v = n x v."""
    n = np.asarray(n, dtype=float)
    return np.array([[0.0, -n[2], n[1]],
                     [n[2], 0.0, -n[0]],
                     [-n[1], n[0], 0.0]])


def rotation_aligning(a, b, tol=1e-10):
    """Proper rotation Q with Q a = b for unit directions a, b (Rodrigues).

    Degenerate cases: when the angle between a and b is below ``tol`` the
    identity is returned; when it is within ``tol`` of pi (antiparallel
    directions) the rotation is 180 degrees about the coordinate axis most
    orthogonal to b, projected into b's orthogonal plane.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateDirection("cannot align a zero-length direction")
    a = a / na
    b = b / nb
    c = np.cross(a, b)
    s = np.linalg.norm(c)
    angle = np.arctan2(s, np.dot(a, b))
    if angle < tol:
        return np.eye(3)
    if np.pi - angle < tol:
        k = int(np.argmin(np.abs(b)))
        n = np.zeros(3)
        n[k] = 1.0
        n -= np.dot(n, b) * b
        n /= np.linalg.norm(n)
        return 2.0 * np.outer(n, n) - np.eye(3)
    n = c / s
    nn = np.outer(n, n)
    return nn + np.cos(angle) * (np.eye(3) - nn) + np.sin(angle) * cross_matrix(n)


def rotation_about(axis, angle):
    """Proper rotation by ``angle`` (radians) about the ``axis`` direction."""
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        raise DegenerateDirection("cannot rotate about a zero-length axis")
    n = axis / norm
    nn = np.outer(n, n)
    return nn + np.cos(angle) * (np.eye(3) - nn) + np.sin(angle) * cross_matrix(n)
