"""Closed-loop data mining: detect unknown states, query the oracle, retrain.

One loop iteration trains a surrogate on the current dataset, runs the
macroscopic problem with it, maps every quadrature-point deformation history
into invariant space and hunts for states that are not represented in the
dataset yet.  Detected histories are rotated into the microscale frame,
deduplicated and handed to the oracle; the answers enlarge the dataset for
the next iteration.  The loop ends when a completed macro solve contains
nothing new.
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from . import data, homogenization, macro, materials, surrogate, tensors, training
from .errors import FirstStepDivergence, MatmineError, MaxIterationsExceeded

log = logging.getLogger(__name__)

REPORT_VERSION = "loop-report-v1"


# ---------------------------------------------------------------------------
# invariant-space set operations

def coordinate_ranges(values):
    """Per-coordinate spread of a set of vectors, for range normalization."""
    values = np.asarray(values, dtype=float)
    return values.max(axis=0) - values.min(axis=0)


def distinct_mask(candidates, existing, ranges, tol, chunk=4_000_000):
    """True per candidate row if it is far from every existing row.

    Distance is the range-normalized Chebyshev metric: the largest
    per-coordinate difference divided by that coordinate's spread.  Zero
    spreads fall back to plain absolute differences, so a coordinate that is
    constant across the dataset still vetoes closeness when it moves.  A
    candidate is distinct when its distance to every existing row exceeds
    ``tol`` strictly.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    existing = np.asarray(existing, dtype=float)
    if existing.size == 0:
        return np.ones(len(candidates), dtype=bool)
    existing = np.atleast_2d(existing)
    ranges = np.asarray(ranges, dtype=float)
    ranges = np.where(ranges > 0.0, ranges, 1.0)
    out = np.empty(len(candidates), dtype=bool)
    rows_per_chunk = max(1, chunk // max(1, existing.shape[0] * existing.shape[1]))
    for start in range(0, len(candidates), rows_per_chunk):
        block = candidates[start:start + rows_per_chunk]
        d = np.abs(block[:, None, :] - existing[None, :, :]) / ranges
        out[start:start + rows_per_chunk] = d.max(axis=2).min(axis=1) > tol
    return out


def filter_candidates(candidates, existing, ranges, tol):
    """Greedy dedup in index order; returns indices of admitted rows.

    A row is admitted when it is distinct from the existing set and from
    every row admitted before it, so the output set has no internal pair
    within ``tol`` either.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    pool = np.asarray(existing, dtype=float)
    if pool.size == 0:
        pool = np.zeros((0, candidates.shape[1]))
    pool = np.atleast_2d(pool)
    # distinctness against the static pool is vectorized; admitted rows are
    # few, so they are rechecked per candidate
    static_ok = distinct_mask(candidates, pool, ranges, tol)
    kept = []
    admitted = []
    for idx in range(len(candidates)):
        if pool.shape[0] and not static_ok[idx]:
            continue
        if admitted and not distinct_mask(
                candidates[idx:idx + 1], np.array(admitted), ranges, tol)[0]:
            continue
        kept.append(idx)
        admitted.append(candidates[idx])
    return kept


@dataclass
class DetectedPath:
    """A quadrature-point history flagged as containing unknown states.

    ``last_step`` is the largest step index whose invariant image was
    distinct; the stored series runs from the undeformed state up to and
    including that step.
    """

    point_id: int
    last_step: int
    t: np.ndarray
    F: np.ndarray


def detect_new_paths(dataset: data.DataSet, paths, times, macro_fiber_axis,
                     rve_fiber_axis=(0.0, 0.0, 1.0), eps=0.05, ranges=None):
    """Find quadrature-point histories with states absent from the dataset.

    ``paths`` is (n_points, n_steps+1, 3, 3) from the macro solve (step 0
    undeformed).  Each path is scanned from its final state backwards; the
    first distinct state found truncates the path there, and all states of
    the truncated path join the comparison set for later points, so a state
    is only ever claimed once per sweep.  Ranges for the normalized metric
    are frozen from the dataset (pass ``ranges`` to override).
    """
    known = dataset.invariant_values(rve_fiber_axis)
    if ranges is None:
        ranges = coordinate_ranges(known)
    M = tensors.structural_tensor(macro_fiber_axis)
    paths = np.asarray(paths, dtype=float)
    n_points, n_states = paths.shape[:2]
    C = tensors.right_cauchy_green(paths.reshape(-1, 3, 3))
    path_inv = tensors.invariants(C.reshape(n_points, n_states, 3, 3), M)

    detected = []
    for p in range(n_points):
        fresh = distinct_mask(path_inv[p], known, ranges, eps)
        hits = np.nonzero(fresh[1:])[0]
        if hits.size == 0:
            continue
        n = int(hits[-1]) + 1
        detected.append(DetectedPath(p, n, np.asarray(times)[:n + 1].copy(),
                                     paths[p, :n + 1].copy()))
        known = np.concatenate([known, path_inv[p, 1:n + 1]])
    return detected


def rotate_to_microscale(F_series, macro_fiber_axis, rve_fiber_axis):
    """Re-express deformation histories in the microscale frame.

    The rotation takes the macroscopic fiber direction onto the microscale
    one; deformations transform as F -> Q F Q^T, which preserves the
    invariant image by construction.
    """
    Q = tensors.rotation_aligning(macro_fiber_axis, rve_fiber_axis)
    return np.einsum("ik,...kl,jl->...ij", Q, np.asarray(F_series, dtype=float), Q)


# ---------------------------------------------------------------------------
# microscale oracles

class AnalyticOracle:
    """Closed-form homogenized response; the fast stand-in for cell solves."""

    name = "analytic"

    def __init__(self, params: materials.OracleParameters = None):
        self.params = params if params is not None else materials.OracleParameters()

    def evaluate_path(self, F_series):
        return materials.oracle_nominal_stress(F_series, self.params)

    def evaluate_states(self, F_batch):
        return materials.oracle_nominal_stress(F_batch, self.params)


class VoxelOracle:
    """Periodic voxel cell solves, warm started along each history."""

    name = "voxel"

    def __init__(self, rve: homogenization.VoxelRVE, substeps=2):
        self.rve = rve
        self.substeps = substeps

    def evaluate_path(self, F_series):
        # a fresh homogenizer per call keeps concurrent path jobs independent
        homogenizer = homogenization.VoxelHomogenizer(self.rve)
        F_series = np.asarray(F_series, dtype=float)
        out = np.empty_like(F_series)
        u = None
        for k, F in enumerate(F_series):
            sol = homogenizer.solve(F, n_steps=self.substeps, u_tilde=u)
            u = sol.u_tilde
            out[k] = sol.P_bar
        return out

    def evaluate_states(self, F_batch):
        homogenizer = homogenization.VoxelHomogenizer(self.rve)
        F_batch = np.asarray(F_batch, dtype=float)
        out = np.empty_like(F_batch)
        for k, F in enumerate(F_batch):
            out[k] = homogenizer.solve(F, n_steps=max(2, self.substeps)).P_bar
        return out


class ModelOracle:
    """A trained surrogate posing as the oracle (synthetic ground truth)."""

    name = "model"

    def __init__(self, model: surrogate.SurrogateModel, fiber_axis=(0.0, 0.0, 1.0)):
        self.model = model
        self.M = tensors.structural_tensor(fiber_axis)

    def evaluate_path(self, F_series):
        return surrogate.model_nominal_stress(self.model, F_series, self.M)

    evaluate_states = evaluate_path


def initial_dataset(oracle=None, eps_filter=0.01, n_steps=12, cases=None,
                    rve_fiber_axis=(0.0, 0.0, 1.0), stress=None):
    """Drive the initial load suite and dedup it into the starting dataset.

    The raw suite shares its undeformed state across all paths and its
    gentler load levels crowd together, so the same greedy filter used for
    mined data thins it here; ranges come from the raw suite itself.
    ``oracle``/``stress`` pass through to the material-point driver.
    """
    raw = homogenization.generate_initial_data(oracle, n_steps=n_steps,
                                               cases=cases, stress=stress)
    inv = raw.invariant_values(rve_fiber_axis)
    kept = filter_candidates(inv, np.zeros((0, inv.shape[1])),
                             coordinate_ranges(inv), eps_filter)
    return raw.subset(kept)


def _evaluate_series(oracle, F_series):
    """Oracle along one history, with the undeformed start prepended."""
    F_path = np.concatenate([np.eye(3)[None], F_series])
    return oracle.evaluate_path(F_path)[1:]


def enrich(dataset: data.DataSet, detected, oracle, macro_fiber_axis,
           rve_fiber_axis=(0.0, 0.0, 1.0), eps_filter=0.01, iteration=1,
           source="mined", ranges=None, threads=1):
    """Evaluate the oracle on deduplicated detected states.

    Every detected history is rotated to the microscale frame; its states
    (the undeformed step excluded, the dataset holds it already) are filtered
    greedily in canonical order (path id, then step) against the dataset's
    invariant image and against each other, and only admitted states go to
    the oracle.  Histories whose oracle evaluation fails are skipped with a
    warning.  Returns (new tuples, pre-filter candidate count).
    """
    M_rve = tensors.structural_tensor(rve_fiber_axis)
    known = dataset.invariant_values(rve_fiber_axis)
    if ranges is None:
        ranges = coordinate_ranges(known)

    series = []
    meta = []
    for path in detected:
        F_rve = rotate_to_microscale(path.F, macro_fiber_axis, rve_fiber_axis)
        series.append(F_rve)
        for k in range(1, path.last_step + 1):
            meta.append((len(series) - 1, k, path.point_id, path.t[k]))
    if not meta:
        return data.DataSet(), 0

    cand_F = np.stack([series[s][k] for s, k, _, _ in meta])
    cand_inv = tensors.invariants(tensors.right_cauchy_green(cand_F), M_rve)
    kept = filter_candidates(cand_inv, known, ranges, eps_filter)

    by_series = {}
    for idx in kept:
        by_series.setdefault(meta[idx][0], []).append(idx)
    jobs = [(s, idxs, series[s][[meta[i][1] for i in idxs]])
            for s, idxs in sorted(by_series.items())]

    if threads > 1 and len(jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda job: _try_series(oracle, job[2]), jobs))
    else:
        results = [_try_series(oracle, job[2]) for job in jobs]

    records = []
    for (s, idxs, F_kept), P_path in zip(jobs, results):
        if P_path is None:
            continue
        for i, F, P in zip(idxs, F_kept, P_path):
            _, k, pid, t = meta[i]
            records.append((F, P, source, iteration, pid, k, t))
    return data.from_records(records), len(meta)


def _try_series(oracle, F_series):
    try:
        return _evaluate_series(oracle, F_series)
    except MatmineError as exc:
        log.warning("oracle failed on a mined history, skipping it: %s", exc)
        return None


# ---------------------------------------------------------------------------
# the loop

@dataclass
class LoopConfig:
    """Knobs of the outer mining loop.

    ``eps_detect`` flags unknown states, ``eps_filter`` dedups admitted ones;
    the filter tolerance must be the tighter of the two so every detection
    contributes at least one tuple.
    """

    eps_detect: float = 0.05
    eps_filter: float = 0.01
    n_max: int = 20
    inner_repeats: int = 5
    rve_fiber_axis: tuple = (0.0, 0.0, 1.0)
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.eps_filter < self.eps_detect < 1.0:
            raise ValueError("need 0 < eps_filter < eps_detect < 1")
        if self.n_max < 1 or self.inner_repeats < 1:
            raise ValueError("n_max and inner_repeats must be at least 1")


@dataclass
class IterationReport:
    iteration: int
    dataset_size: int
    training_seed: int
    training_loss: float
    holdout_loss: float
    repeats: int
    t_end: float
    t_goal: float
    completed: bool
    detected_paths: int
    candidate_states: int
    new_tuples: int


@dataclass
class LoopResult:
    converged: bool
    iterations: list
    model: surrogate.SurrogateModel
    dataset: data.DataSet
    final_training_seed: int
    final_state: object = None  # MacroState of the last solve, when one exists

    def report_dict(self):
        return {
            "version": REPORT_VERSION,
            "converged": self.converged,
            "n_iterations": len(self.iterations),
            "final_training_seed": self.final_training_seed,
            "iterations": [vars(r).copy() for r in self.iterations],
        }

    def save_report(self, path):
        with open(path, "w") as fh:
            json.dump(self.report_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _derived_seed(base, iteration, repeat):
    # deterministic per (iteration, repeat); folded to a plain int so it can
    # be stored in reports and replayed
    return int(np.random.SeedSequence((base, iteration, repeat)).generate_state(1)[0])


def run_loop(problem: macro.MacroProblem, oracle, initial_data: data.DataSet,
             train_config: training.TrainingConfig,
             loop_config: LoopConfig = None, out_dir=None):
    """Run the full mine-train-solve cycle until nothing new is found.

    Iterations proceed as: train on the current dataset, solve the macro
    problem, detect unknown states.  An iteration whose solve dies early
    without detecting anything is retried with a fresh training seed, up to
    ``inner_repeats`` attempts.  The loop converges when a full-ramp solve
    yields no detections; exceeding ``n_max`` iterations or stalling raises
    :class:`MaxIterationsExceeded` with the partial result attached as
    ``exc.result``.  With ``out_dir`` set, the model, dataset and report are
    rewritten after every iteration, so an aborted run can resume from disk.
    """
    lc = loop_config if loop_config is not None else LoopConfig()
    dataset = initial_data
    reports = []
    converged = False
    result = None

    for iteration in range(1, lc.n_max + 1):
        detected = []
        state = None
        repeats = 0
        for repeat in range(lc.inner_repeats):
            repeats = repeat + 1
            seed_used = _derived_seed(train_config.seed, iteration, repeat)
            cfg = replace(train_config, seed=seed_used)
            model, train_report = training.train(dataset, cfg,
                                                 fiber_axis=lc.rve_fiber_axis)
            try:
                state = macro.solve_macro(problem.mesh, problem.bcs, model,
                                          problem.fiber_axis, problem.n_steps)
            except FirstStepDivergence as exc:
                log.warning("macro solve diverged on the first step "
                            "(iteration %d, repeat %d): %s",
                            iteration, repeat + 1, exc)
                state = None
                detected = []
                continue
            paths, times = macro.collect_deformations(state)
            detected = detect_new_paths(dataset, paths, times,
                                        problem.fiber_axis,
                                        lc.rve_fiber_axis, lc.eps_detect)
            if state.completed or detected:
                break
        t_end = state.t_end if state is not None else 0.0
        completed = state is not None and state.completed

        new_rows, n_candidates = data.DataSet(), 0
        if detected:
            new_rows, n_candidates = enrich(
                dataset, detected, oracle, problem.fiber_axis,
                lc.rve_fiber_axis, lc.eps_filter, iteration,
                source=f"mined:{problem.name}", threads=lc.threads)
        reports.append(IterationReport(
            iteration=iteration, dataset_size=int(len(dataset)),
            training_seed=int(seed_used),
            training_loss=float(train_report.train_loss),
            holdout_loss=float(train_report.test_loss), repeats=repeats,
            t_end=float(t_end), t_goal=1.0, completed=bool(completed),
            detected_paths=len(detected), candidate_states=int(n_candidates),
            new_tuples=int(len(new_rows))))

        if completed and not detected:
            converged = True
        if len(new_rows):
            dataset = dataset.merged_with(new_rows)
        result = LoopResult(converged, reports, model, dataset, seed_used,
                            final_state=state)
        if out_dir is not None:
            write_artifacts(result, out_dir)
        if converged:
            return result
        if not detected and not completed:
            exc = MaxIterationsExceeded(
                f"stalled in iteration {iteration}: no completed solve and "
                f"nothing detected after {repeats} training repeats")
            exc.result = result
            raise exc

    exc = MaxIterationsExceeded(
        f"no convergence within {lc.n_max} loop iterations")
    exc.result = result
    raise exc


def write_artifacts(result: LoopResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    surrogate.save_model(result.model, os.path.join(out_dir, "model.json"))
    data.save_kbase(result.dataset, os.path.join(out_dir, "kbase.txt"))
    result.save_report(os.path.join(out_dir, "loop_report.json"))


# ---------------------------------------------------------------------------
# validation against the oracle

def validate_coverage(model: surrogate.SurrogateModel, dataset: data.DataSet,
                      paths, times, oracle, macro_fiber_axis,
                      rve_fiber_axis=(0.0, 0.0, 1.0), tol=0.05):
    """Probe the surrogate against the oracle outside the dataset's coverage.

    Every quadrature-point state of the final solve (undeformed step
    excluded) is rotated to the microscale frame and compared against the
    dataset in the space of the six independent deformation-tensor
    components, range-normalized Chebyshev metric: states within ``tol`` of
    a stored tuple are covered and skipped (their oracle answers already
    exist).  Uncovered states get fresh oracle evaluations, and the
    surrogate's predictions are scored against them with per-state relative
    Frobenius errors.  When the dataset covers everything, all states are
    probed instead so the report is never empty.

    Returns a summary dict plus the raw per-state arrays for scatter plots.
    """
    del times
    paths = np.asarray(paths, dtype=float)
    F_states = paths[:, 1:].reshape(-1, 3, 3)
    F_rve = rotate_to_microscale(F_states, macro_fiber_axis, rve_fiber_axis)
    C_rve = tensors.sym_to_mandel(tensors.right_cauchy_green(F_rve))
    C_data = tensors.sym_to_mandel(tensors.right_cauchy_green(dataset.F))
    ranges = coordinate_ranges(C_data)
    uncovered = distinct_mask(C_rve, C_data, ranges, tol)

    complete = not uncovered.any()
    F_probe = F_rve if complete else F_rve[uncovered]
    M = tensors.structural_tensor(rve_fiber_axis)
    P_oracle = oracle.evaluate_states(F_probe)
    P_model = surrogate.model_nominal_stress(model, F_probe, M)
    norm_oracle = np.linalg.norm(P_oracle.reshape(len(F_probe), -1), axis=1)
    norm_model = np.linalg.norm(P_model.reshape(len(F_probe), -1), axis=1)
    err = np.linalg.norm((P_model - P_oracle).reshape(len(F_probe), -1), axis=1)
    nonzero = norm_oracle > 0.0
    rel = err[nonzero] / norm_oracle[nonzero]
    rel_all = np.full(len(F_probe), np.inf)
    rel_all[nonzero] = rel
    return {
        "n_states": int(len(F_states)),
        "n_uncovered": 0 if complete else int(len(F_probe)),
        "coverage_complete": bool(complete),
        "n_compared": int(nonzero.sum()),
        "rel_mean": float(rel.mean()) if rel.size else 0.0,
        "rel_p95": float(np.percentile(rel, 95.0)) if rel.size else 0.0,
        "rel_max": float(rel.max()) if rel.size else 0.0,
        "scatter": np.column_stack([norm_oracle, norm_model, rel_all]),
    }
