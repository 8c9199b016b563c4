"""Hyperelastic constitutive models: compressible Ogden phases and the
analytic fiber-reinforced oracle used as the default microscale stand-in.

Stress measure throughout is the second Piola-Kirchhoff tensor T = 2 dpsi/dC;
the nominal (first Piola-Kirchhoff) stress follows as P = F T with the first
index spatial.  Units: stresses and moduli in kPa, lengths dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensors
from .errors import InvalidMaterialParameters, NonPositiveJacobian


def bulk_from_shear(shear_modulus, poisson_ratio):
    """Bulk-like penalty modulus kappa = 2 G (1 + nu) / (3 (1 - 2 nu))."""
    return 2.0 * shear_modulus * (1.0 + poisson_ratio) / (3.0 * (1.0 - 2.0 * poisson_ratio))


@dataclass(frozen=True)
class OgdenParameters:
    """Parameters of a compressible Ogden model.

    Each term must satisfy (alpha_p < -1 or alpha_p >= 2) and
    mu_p * alpha_p > 0, which together make the initial shear modulus
    G = sum(mu_p alpha_p) / 2 positive and keep the model polyconvex on the
    isochoric part; kappa > 0 scales the volumetric penalty
    kappa/4 (J^2 - 2 ln J - 1).
    """

    mu: tuple
    alpha: tuple
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "kappa", float(self.kappa))
        if len(self.mu) == 0 or len(self.mu) != len(self.alpha):
            raise InvalidMaterialParameters("mu and alpha must be equally sized, non-empty")
        for m, a in zip(self.mu, self.alpha):
            if not (a < -1.0 or a >= 2.0):
                raise InvalidMaterialParameters(f"exponent {a} in the excluded band (-1, 2)")
            if m * a <= 0.0:
                raise InvalidMaterialParameters(f"term mu={m}, alpha={a} has mu*alpha <= 0")
        if self.kappa <= 0.0:
            raise InvalidMaterialParameters("kappa must be positive")

    @property
    def initial_shear_modulus(self):
        return 0.5 * sum(m * a for m, a in zip(self.mu, self.alpha))


# Phase presets for the fiber-reinforced rubber composite benchmark.
# Matrix: three-term Ogden, G = 100 kPa, nu = 0.44.
MATRIX_RUBBER = OgdenParameters(mu=(-26.62, 29.04, 0.0098),
                                alpha=(-5.0, 2.3, 12.0),
                                kappa=bulk_from_shear(100.0, 0.44))
# Fibers: one-term Ogden (neo-Hookean), G = 1000 kPa, nu = 0.40.
FIBER_STIFF = OgdenParameters(mu=(1000.0,), alpha=(2.0,),
                              kappa=bulk_from_shear(1000.0, 0.40))


def _ogden_split(C):
    """Squared principal stretches, stretches and J from C, batched."""
    lam2 = np.linalg.eigvalsh(np.asarray(C, dtype=float))
    if np.any(lam2[..., 0] <= 0.0):
        raise NonPositiveJacobian("C has a non-positive eigenvalue")
    lam = np.sqrt(lam2)
    J = lam[..., 0] * lam[..., 1] * lam[..., 2]
    return lam2, lam, J


def ogden_energy_from_C(C, params: OgdenParameters):
    """Strain energy density as a function of C, batched over leading dims."""
    _, lam, J = _ogden_split(C)
    lam_iso = lam * J[..., None] ** (-1.0 / 3.0)
    dev = 0.0
    for m, a in zip(params.mu, params.alpha):
        dev = dev + (m / a) * (np.sum(lam_iso**a, axis=-1) - 3.0)
    vol = 0.25 * params.kappa * (J * J - 2.0 * np.log(J) - 1.0)
    return dev + vol


def ogden_energy(F, params: OgdenParameters):
    """Strain energy density from the deformation gradient (det F > 0)."""
    tensors.jacobian(F)
    return ogden_energy_from_C(tensors.right_cauchy_green(F), params)


def _ogden_coefficients(lam2, lam, J, params, multiplicities=None):
    """Per-eigenvalue stress coefficients of the principal-stretch form.

    ``multiplicities`` weights the inner sum over stretches when ``lam``
    holds only the distinct (clustered) values; with three simple entries it
    is omitted.  Treating every eigenvalue as simple is algebraically
    identical to the clustered evaluation: equal stretches receive equal
    coefficients and their dyads sum to the cluster projector.
    """
    nu = 1.0 if multiplicities is None else np.asarray(multiplicities, dtype=float)
    lam_iso = lam * J[..., None] ** (-1.0 / 3.0)
    coeff = np.zeros_like(lam)
    for m, a in zip(params.mu, params.alpha):
        pw = lam_iso**a
        coeff = coeff + m * (pw - np.sum(nu * pw, axis=-1, keepdims=True) / 3.0)
    coeff = coeff + 0.5 * params.kappa * (J * J - 1.0)[..., None]
    return coeff / lam2


def ogden_stress_from_C(C, params: OgdenParameters):
    """Second Piola-Kirchhoff stress T(C), batched over leading dims."""
    C = np.asarray(C, dtype=float)
    lam2, vecs = np.linalg.eigh(C)
    if np.any(lam2[..., 0] <= 0.0):
        raise NonPositiveJacobian("C has a non-positive eigenvalue")
    lam = np.sqrt(lam2)
    J = lam[..., 0] * lam[..., 1] * lam[..., 2]
    coeff = _ogden_coefficients(lam2, lam, J, params)
    return np.einsum("...b,...ib,...jb->...ij", coeff, vecs, vecs)


def ogden_stress(F, params: OgdenParameters, cluster_tol=1e-8):
    """Second Piola-Kirchhoff stress for one deformation gradient.

    Evaluates the principal-stretch form over the clustered eigenprojectors
    of C, which stays stable at (near-)coalescent stretches.
    """
    J = float(tensors.jacobian(F))
    C = tensors.right_cauchy_green(F)
    dec = tensors.spectral_decomposition(C, cluster_tol=cluster_tol)
    lam2 = dec.eigenvalues
    lam = np.sqrt(lam2)
    coeff = _ogden_coefficients(lam2, lam, np.asarray(J), params,
                                multiplicities=dec.multiplicities)
    return np.einsum("b,bij->ij", coeff, dec.projectors)


@dataclass(frozen=True)
class OracleParameters:
    """Analytic stand-in for a homogenized fiber-reinforced microstructure.

    An Ogden matrix augmented with a quadratic fiber-stretch penalty
    0.5 * fiber_stiffness * (I4 - 1)^2 along ``fiber_axis`` (the microscale
    frame's preferred direction).
    """

    matrix: OgdenParameters = MATRIX_RUBBER
    fiber_axis: tuple = (0.0, 0.0, 1.0)
    fiber_stiffness: float = 450.0

    def __post_init__(self):
        if self.fiber_stiffness <= 0.0:
            raise InvalidMaterialParameters("fiber_stiffness must be positive")
        axis = np.asarray(self.fiber_axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise InvalidMaterialParameters("fiber_axis must have nonzero length")
        object.__setattr__(self, "fiber_axis", tuple(axis / n))

    @property
    def structural_tensor(self):
        return tensors.structural_tensor(self.fiber_axis)


def oracle_energy_from_C(C, oracle: OracleParameters, M=None):
    M = oracle.structural_tensor if M is None else M
    I4 = np.einsum("ij,...ij->...", M, np.asarray(C, dtype=float))
    fiber = 0.5 * oracle.fiber_stiffness * (I4 - 1.0) ** 2
    return ogden_energy_from_C(C, oracle.matrix) + fiber


def oracle_stress_from_C(C, oracle: OracleParameters, M=None):
    """T = 2 dpsi/dC of the oracle: Ogden part plus 2 c (I4 - 1) M."""
    M = oracle.structural_tensor if M is None else M
    I4 = np.einsum("ij,...ij->...", M, np.asarray(C, dtype=float))
    fiber = 2.0 * oracle.fiber_stiffness * (I4 - 1.0)[..., None, None] * M
    return ogden_stress_from_C(C, oracle.matrix) + fiber


def oracle_energy(F, oracle: OracleParameters):
    tensors.jacobian(F)
    return oracle_energy_from_C(tensors.right_cauchy_green(F), oracle)


def oracle_stress(F, oracle: OracleParameters):
    tensors.jacobian(F)
    return oracle_stress_from_C(tensors.right_cauchy_green(F), oracle)


def oracle_nominal_stress(F, oracle: OracleParameters):
    """P = F T, the work pair of F, batched."""
    F = np.asarray(F, dtype=float)
    tensors.jacobian(F)
    T = oracle_stress_from_C(tensors.right_cauchy_green(F), oracle)
    return np.einsum("...ik,...kj->...ij", F, T)


def stress_tangent_fd(stress_from_C, C, h=1e-6):
    """Mandel tangent 2 dT/dC of a stress routine by central differences.

    ``stress_from_C`` maps (...,3,3) -> (...,3,3).  The step is scaled by
    tr(C)/3 per sample; the result is symmetrized, which a thermodynamically
    consistent stress guarantees up to the FD error.  This is the documented
    default tangent for the microscale phases, whose principal-stretch form
    has no convenient closed-form fourth-order derivative.
    """
    C = np.asarray(C, dtype=float)
    scale = h * np.trace(C, axis1=-2, axis2=-1)[..., None, None] / 3.0
    cols = []
    for a in range(6):
        dC = scale * tensors.mandel_to_sym(np.eye(6)[a])
        Tp = tensors.sym_to_mandel(stress_from_C(C + dC))
        Tm = tensors.sym_to_mandel(stress_from_C(C - dC))
        cols.append((Tp - Tm) / (2.0 * scale[..., 0, 0][..., None]))
    dT_dC = np.stack(cols, axis=-1)
    # tangent C = 4 d^2 psi/dCdC = 2 dT/dC, symmetrized
    tang = 2.0 * dT_dC
    return 0.5 * (tang + np.swapaxes(tang, -1, -2))
