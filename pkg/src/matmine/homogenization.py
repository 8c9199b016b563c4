"""Microscale oracle: controlled load paths and voxel RVE homogenization.

Two levels of fidelity share this module.  For constitutive sampling we drive
a single material point along mixed-control load paths (some deformation
gradient entries prescribed, the rest found so the conjugate nominal stress
components vanish).  For audits of the averaging itself we solve a periodic
first-order homogenization problem on a voxelized representative volume and
check the macrohomogeneity (average-work) identity and the scatter of
apparent properties across realizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import data, fem, materials, tensors
from .errors import MatmineError, NewtonDivergence, ZeroMean

AXIS_NAMES = ("x1", "x2", "x3")


# ---------------------------------------------------------------------------
# mixed-control material point driver

@dataclass(frozen=True)
class LoadCase:
    """Mixed control at a material point.

    ``values`` holds the fully ramped deformation gradient entries where
    ``prescribed`` is True; on the remaining entries the nominal stress is
    required to vanish and the deformation is free.
    """

    name: str
    values: np.ndarray
    prescribed: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "prescribed",
                           np.asarray(self.prescribed, dtype=bool))
        if self.values.shape != (3, 3) or self.prescribed.shape != (3, 3):
            raise ValueError("load case needs 3x3 values and mask")


def uniaxial_case(axis, stretch):
    mask = np.ones((3, 3), dtype=bool)
    mask[np.arange(3) != axis, np.arange(3) != axis] = False
    values = np.eye(3)
    values[axis, axis] = stretch
    kind = "tension" if stretch >= 1.0 else "compression"
    return LoadCase(f"uniaxial-{kind}-{AXIS_NAMES[axis]}", values, mask)


def equibiaxial_case(axis_a, axis_b, stretch):
    free = 3 - axis_a - axis_b
    mask = np.ones((3, 3), dtype=bool)
    mask[free, free] = False
    values = np.eye(3)
    values[axis_a, axis_a] = stretch
    values[axis_b, axis_b] = stretch
    kind = "tension" if stretch >= 1.0 else "compression"
    return LoadCase(
        f"equibiaxial-{kind}-{AXIS_NAMES[axis_a]}{AXIS_NAMES[axis_b]}",
        values, mask)


def shear_case(row, col, amount):
    values = np.eye(3)
    values[row, col] = amount
    return LoadCase(f"simple-shear-{AXIS_NAMES[row]}{AXIS_NAMES[col]}",
                    values, np.ones((3, 3), dtype=bool))


def initial_load_suite(tension=1.6, biax_tension=1.3, compression=0.7,
                       biax_compression=0.85, shear=0.5):
    """The 18 seed paths: 4 axial families over all axes plus 6 shears."""
    cases = []
    for k in range(3):
        cases.append(uniaxial_case(k, tension))
    for a, b in ((0, 1), (0, 2), (1, 2)):
        cases.append(equibiaxial_case(a, b, biax_tension))
    for k in range(3):
        cases.append(uniaxial_case(k, compression))
    for a, b in ((0, 1), (0, 2), (1, 2)):
        cases.append(equibiaxial_case(a, b, biax_compression))
    for r, c in ((0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)):
        cases.append(shear_case(r, c, shear))
    return cases


@dataclass
class MaterialPath:
    """Deformation/stress history of one driven material point."""

    name: str
    t: np.ndarray
    F: np.ndarray
    P: np.ndarray


def drive_material_point(stress, case: LoadCase, n_steps=12,
                         force_scale=None, rel_tol=1e-9, max_iterations=40):
    """Follow a mixed-control path with Newton iteration on the free entries.

    ``stress`` maps a deformation gradient to the nominal stress.  The path
    ramps the prescribed entries linearly from the identity in ``n_steps``
    increments (the returned history includes the undeformed state).  Free
    entries warm start from the previous converged step.
    """
    if force_scale is None:
        force_scale = materials.MATRIX_RUBBER.initial_shear_modulus
    tol = rel_tol * force_scale
    free = ~case.prescribed
    free_idx = np.argwhere(free)

    t_hist = np.linspace(0.0, 1.0, n_steps + 1)
    F_hist = np.empty((n_steps + 1, 3, 3))
    P_hist = np.empty((n_steps + 1, 3, 3))
    F = np.eye(3)
    for k, t in enumerate(t_hist):
        F = F.copy()
        F[case.prescribed] = (np.eye(3) + t * (case.values - np.eye(3)))[case.prescribed]
        if free_idx.size:
            F = _solve_free_entries(stress, F, free_idx, tol, max_iterations,
                                    case.name, t)
        F_hist[k] = F
        P_hist[k] = stress(F)
    return MaterialPath(case.name, t_hist, F_hist, P_hist)


def _solve_free_entries(stress, F, free_idx, tol, max_iterations, name, t):
    rows, cols = free_idx[:, 0], free_idx[:, 1]
    F = F.copy()

    def residual(Fc):
        return stress(Fc)[rows, cols]

    r = residual(F)
    for _ in range(max_iterations):
        if np.max(np.abs(r)) <= tol:
            return F
        J = np.empty((len(rows), len(rows)))
        for j, (i, jj) in enumerate(free_idx):
            h = 1e-7 * max(1.0, abs(F[i, jj]))
            Fp = F.copy(); Fp[i, jj] += h
            Fm = F.copy(); Fm[i, jj] -= h
            J[:, j] = (residual(Fp) - residual(Fm)) / (2.0 * h)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence(
                f"singular Jacobian on path {name} at t={t:g}") from exc
        norm0 = np.linalg.norm(r)
        alpha = 1.0
        while True:
            Ftry = F.copy()
            Ftry[rows, cols] += alpha * dx
            try:
                r_try = residual(Ftry)
            except (MatmineError, FloatingPointError):
                r_try = None
            if r_try is not None and np.linalg.norm(r_try) < norm0:
                F, r = Ftry, r_try
                break
            alpha *= 0.5
            if alpha < 2.0 ** -10:
                raise NewtonDivergence(
                    f"line search stalled on path {name} at t={t:g}")
    if np.max(np.abs(r)) <= tol:
        return F
    raise NewtonDivergence(
        f"no convergence in {max_iterations} iterations on path {name} "
        f"at t={t:g} (|r|={np.max(np.abs(r)):.3e}, tol={tol:.3e})")


def generate_initial_data(oracle: materials.OracleParameters = None,
                          n_steps=12, cases=None, stress=None):
    """Run the seed suite through the oracle and collect (F, P) tuples.

    ``stress`` overrides the nominal stress map (defaults to the analytic
    oracle built from ``oracle``).
    """
    if cases is None:
        cases = initial_load_suite()
    if stress is None:
        if oracle is None:
            oracle = materials.OracleParameters()
        stress = lambda F: materials.oracle_nominal_stress(F, oracle)
    records = []
    for pid, case in enumerate(cases):
        path = drive_material_point(stress, case, n_steps=n_steps)
        for k in range(len(path.t)):
            records.append((path.F[k], path.P[k], f"init:{case.name}",
                            0, pid, k, path.t[k]))
    return data.from_records(records)


# ---------------------------------------------------------------------------
# voxel RVE with periodic fluctuations

@dataclass
class VoxelRVE:
    """Cubic voxel grid of two-phase hyperelastic material.

    ``phase`` is an (n, n, n) integer array selecting into ``phases`` per
    voxel; ``edge`` is the physical cube edge length.  Node fluctuations are
    periodic, so opposite faces share nodes and the grid has n**3 distinct
    nodes for n**3 elements.
    """

    phase: np.ndarray
    phases: tuple
    edge: float = 1.0
    fiber_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        self.phase = np.asarray(self.phase, dtype=int)
        n = self.phase.shape[0]
        if self.phase.shape != (n, n, n):
            raise ValueError("phase array must be a cube")
        if self.phase.min() < 0 or self.phase.max() >= len(self.phases):
            raise ValueError("phase index out of range")

    @property
    def n(self):
        return self.phase.shape[0]


def homogeneous_rve(n, params=None, edge=1.0):
    if params is None:
        params = materials.MATRIX_RUBBER
    return VoxelRVE(np.zeros((n, n, n), dtype=int), (params,), edge)


def layered_rve(n, fraction, phases=None, axis=2, edge=1.0):
    """Two-phase laminate: the first round(fraction*n) slabs get phase 1."""
    if phases is None:
        phases = (materials.MATRIX_RUBBER, materials.FIBER_STIFF)
    phase = np.zeros((n, n, n), dtype=int)
    n1 = int(round(fraction * n))
    sl = [slice(None)] * 3
    sl[axis] = slice(0, n1)
    phase[tuple(sl)] = 1
    return VoxelRVE(phase, phases, edge)


def fiber_rve(n, volume_fraction, seed, phases=None, edge=1.0):
    """Random stiff columns along x3.

    Each of the n*n columns is stiff with probability ``volume_fraction``
    independently, so the realized fraction fluctuates and the fluctuation
    shrinks as the cell grows.
    """
    if phases is None:
        phases = (materials.MATRIX_RUBBER, materials.FIBER_STIFF)
    rng = np.random.default_rng(seed)
    picks = rng.random(n * n) < volume_fraction
    phase = np.zeros((n, n, n), dtype=int)
    phase.reshape(n * n, n)[picks, :] = 1
    return VoxelRVE(phase, phases, edge)


def _voxel_topology(rve: VoxelRVE):
    """Node coordinates (unwrapped, per element) and wrapped connectivity."""
    n = rve.n
    h = rve.edge / n
    base = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n),
                                indexing="ij"), axis=-1).reshape(-1, 3)
    # local corner offsets in the same order as fem.CORNERS
    offs = ((fem.CORNERS + 1.0) / 2.0).astype(int)
    corner_idx = base[:, None, :] + offs[None, :, :]
    coords = corner_idx * h
    wrapped = corner_idx % n
    conn = (wrapped[..., 0] * n + wrapped[..., 1]) * n + wrapped[..., 2]
    return coords.astype(float), conn


@dataclass
class VoxelSolution:
    """Converged periodic cell problem at one macroscopic deformation."""

    F_bar: np.ndarray
    P_bar: np.ndarray
    psi_bar: float
    F_qp: np.ndarray
    P_qp: np.ndarray
    psi_qp: np.ndarray
    wdet: np.ndarray
    u_tilde: np.ndarray
    iterations: int


class VoxelHomogenizer:
    """Periodic finite element cell solver on a voxel grid.

    The total deformation is the macroscopic affine map plus a periodic
    fluctuation; sharing wrapped node ids enforces periodicity exactly and
    one node is pinned to remove the rigid translation.
    """

    def __init__(self, rve: VoxelRVE, rel_tol=1e-9, max_iterations=25):
        self.rve = rve
        self.rel_tol = rel_tol
        self.max_iterations = max_iterations
        coords, conn = _voxel_topology(rve)
        self.conn = conn
        self.n_nodes = rve.n ** 3
        self.dNdX, self.wdet = fem.element_gradients(coords)
        self.coords = coords
        self.phase_qp = np.repeat(rve.phase.reshape(-1), 8).reshape(-1, 8)
        self.M = tensors.structural_tensor(rve.fiber_axis)
        h = rve.edge / rve.n
        scale = max(p.initial_shear_modulus for p in rve.phases)
        self.force_tol = rel_tol * scale * h * h
        free = np.ones(3 * self.n_nodes, dtype=bool)
        free[:3] = False
        self.free = free

    def _phase_stress(self, C):
        T = np.empty_like(C)
        for pid, params in enumerate(self.rve.phases):
            mask = self.phase_qp == pid
            if np.any(mask):
                T[mask] = materials.ogden_stress_from_C(C[mask], params)
        return T

    def _phase_energy(self, C):
        psi = np.empty(C.shape[:-2])
        for pid, params in enumerate(self.rve.phases):
            mask = self.phase_qp == pid
            if np.any(mask):
                psi[mask] = materials.ogden_energy_from_C(C[mask], params)
        return psi

    def _phase_tangent(self, C):
        tang = np.empty(C.shape[:-2] + (6, 6))
        for pid, params in enumerate(self.rve.phases):
            mask = self.phase_qp == pid
            if np.any(mask):
                stress = lambda Cb: materials.ogden_stress_from_C(Cb, params)
                tang[mask] = materials.stress_tangent_fd(stress, C[mask])
        return tang

    def _kinematics(self, F_bar, u_tilde):
        u_aff = self.coords @ (F_bar - np.eye(3)).T
        u_elem = u_aff + u_tilde[self.conn]
        return fem.deformation_gradients(u_elem, self.dNdX)

    def solve(self, F_bar, n_steps=1, u_tilde=None):
        """Equilibrate the cell at F_bar, ramping in ``n_steps`` increments."""
        F_bar = np.asarray(F_bar, dtype=float)
        if u_tilde is None:
            u_tilde = np.zeros((self.n_nodes, 3))
        else:
            u_tilde = u_tilde.copy()
        iterations = 0
        for k in range(1, n_steps + 1):
            F_k = np.eye(3) + (k / n_steps) * (F_bar - np.eye(3))
            u_tilde, it = self._newton(F_k, u_tilde)
            iterations += it
        return self._package(F_bar, u_tilde, iterations)

    def _newton(self, F_bar, u_tilde):
        for it in range(self.max_iterations):
            F = self._kinematics(F_bar, u_tilde)
            C = tensors.right_cauchy_green(F)
            T = self._phase_stress(C)
            P = F @ T
            f = fem.internal_forces(P, self.dNdX, self.wdet, self.conn,
                                    self.n_nodes)
            res = np.linalg.norm(f.reshape(-1)[self.free], ord=np.inf)
            if res <= self.force_tol:
                return u_tilde, it
            A = fem.nominal_stress_operator(F, T, self._phase_tangent(C))
            K = fem.tangent_matrix(A, self.dNdX, self.wdet, self.conn,
                                   self.n_nodes)
            du = np.zeros(3 * self.n_nodes)
            du[self.free] = spla.spsolve(
                K[self.free][:, self.free].tocsc(), -f.reshape(-1)[self.free])
            u_tilde = u_tilde + du.reshape(-1, 3)
        raise NewtonDivergence(
            f"cell problem: no convergence in {self.max_iterations} "
            f"iterations (|f|={res:.3e}, tol={self.force_tol:.3e})")

    def _package(self, F_bar, u_tilde, iterations):
        F = self._kinematics(F_bar, u_tilde)
        C = tensors.right_cauchy_green(F)
        T = self._phase_stress(C)
        P = F @ T
        psi = self._phase_energy(C)
        return VoxelSolution(
            F_bar=F_bar,
            P_bar=fem.volume_average(P, self.wdet),
            psi_bar=float(fem.volume_average(psi, self.wdet)),
            F_qp=F, P_qp=P, psi_qp=psi,
            wdet=self.wdet, u_tilde=u_tilde, iterations=iterations)

    def path(self, F_bar, n_steps):
        """Solutions at every increment of a ramp to F_bar (incl. start)."""
        F_bar = np.asarray(F_bar, dtype=float)
        u_tilde = np.zeros((self.n_nodes, 3))
        out = [self._package(np.eye(3), u_tilde, 0)]
        for k in range(1, n_steps + 1):
            F_k = np.eye(3) + (k / n_steps) * (F_bar - np.eye(3))
            u_tilde, it = self._newton(F_k, u_tilde.copy())
            out.append(self._package(F_k, u_tilde, it))
        return out


# ---------------------------------------------------------------------------
# averaging audits

def work_rate_mismatch(prev: VoxelSolution, curr: VoxelSolution):
    """Relative gap between macro and averaged micro incremental work.

    With rates replaced by increments between two converged states, the
    average-work identity says P_bar : dF_bar matches the volume average of
    P : dF.  Returns |gap| / |macro work increment|.
    """
    dF_bar = curr.F_bar - prev.F_bar
    macro = np.tensordot(curr.P_bar, dF_bar, axes=2)
    micro = float(fem.volume_average(
        np.einsum("eqij,eqij->eq", curr.P_qp, curr.F_qp - prev.F_qp),
        curr.wdet))
    return abs(macro - micro) / max(abs(macro), 1e-300)


def path_energy_mismatch(solutions):
    """Relative gap between the averaged energy and the work integral.

    Trapezoid-integrates P_bar : dF_bar along a list of converged states and
    compares with the change of the averaged energy density.
    """
    work = 0.0
    for a, b in zip(solutions[:-1], solutions[1:]):
        dF = b.F_bar - a.F_bar
        work += 0.5 * (np.tensordot(a.P_bar, dF, axes=2)
                       + np.tensordot(b.P_bar, dF, axes=2))
    dpsi = solutions[-1].psi_bar - solutions[0].psi_bar
    return abs(work - dpsi) / max(abs(dpsi), 1e-300)


def chi_squared(values):
    """Scatter statistic sum((a_i - mean)^2) / mean over realizations."""
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    if abs(mean) < 1e-300:
        raise ZeroMean("scatter statistic undefined for zero-mean samples")
    return float(np.sum((values - mean) ** 2) / mean)


def apparent_stiffness_samples(n, volume_fraction, seeds, stretch=1.1,
                               axis=2, edge=1.0, phases=None):
    """Axial apparent stress of random fiber cells, one per seed.

    Every realization is stretched uniaxially (fully prescribed diagonal
    stretch along ``axis``) and the conjugate component of the averaged
    nominal stress is recorded.
    """
    F_bar = np.eye(3)
    F_bar[axis, axis] = stretch
    out = []
    for seed in seeds:
        rve = fiber_rve(n, volume_fraction, seed, phases=phases, edge=edge)
        hom = VoxelHomogenizer(rve)
        sol = hom.solve(F_bar, n_steps=2)
        out.append(sol.P_bar[axis, axis])
    return np.array(out)


def rve_size_study(sizes, volume_fraction, n_realizations, seed=0, **kw):
    """Chi-squared of the apparent axial stress versus voxel cell size."""
    root = np.random.default_rng(seed)
    out = {}
    for n in sizes:
        seeds = root.integers(0, 2 ** 31, size=n_realizations)
        out[int(n)] = chi_squared(
            apparent_stiffness_samples(n, volume_fraction, seeds, **kw))
    return out
