import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matmine import data, macro, materials, mining, surrogate, tensors, training
from matmine.errors import (CorruptRecord, FormatVersionMismatch, MatmineError,
                            MaxIterationsExceeded)

import helpers
import oracles

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def rng0(seed):
    return np.random.default_rng(seed)


def random_walk_paths(rng, n_paths, n_steps, spread=0.08):
    """Deformation histories as products of near-identity increments."""
    paths = np.empty((n_paths, n_steps + 1, 3, 3))
    for p in range(n_paths):
        F = np.eye(3)
        paths[p, 0] = F
        for k in range(1, n_steps + 1):
            F = (np.eye(3) + rng.uniform(-spread, spread, (3, 3))) @ F
            paths[p, k] = F
    return paths


def random_dataset(rng, m, spread=0.3):
    F = np.stack([oracles.random_defgrad(rng, spread) for _ in range(m)])
    return data.DataSet(F, np.zeros_like(F), ["init"] * m,
                        np.zeros(m, dtype=int), np.arange(m),
                        np.zeros(m, dtype=int), np.zeros(m))


# --- metric and filter against the quadratic references ------------------------


def test_distinct_mask_matches_reference_rowwise():
    rng = rng0(40)
    existing = rng.normal(size=(35, 6))
    cand = rng.normal(size=(25, 6))
    ranges = mining.coordinate_ranges(existing)
    ranges[3] = 0.0  # exercises the absolute-difference fallback
    got = mining.distinct_mask(cand, existing, ranges, 0.4)
    want = [oracles.chebyshev_distinct_bruteforce(c, existing, ranges, 0.4)
            for c in cand]
    assert got.tolist() == want
    assert got.any() and not got.all()


def test_detection_matches_reverse_scan_reference():
    rng = rng0(41)
    ds = random_dataset(rng, 60)
    paths = random_walk_paths(rng, 50, 5)
    times = np.linspace(0.0, 1.0, 6)

    detected = mining.detect_new_paths(ds, paths, times, E1, E3, eps=0.05)

    known = ds.invariant_values(E3)
    ranges = mining.coordinate_ranges(known)
    M = tensors.structural_tensor(E1)
    path_inv = [tensors.invariants(tensors.right_cauchy_green(p), M)
                for p in paths]
    want = oracles.detect_bruteforce(path_inv, list(known), ranges, 0.05)

    assert [(d.point_id, d.last_step) for d in detected] == want
    assert 0 < len(detected) < 50
    for d in detected:
        np.testing.assert_array_equal(d.F, paths[d.point_id, :d.last_step + 1])
        np.testing.assert_array_equal(d.t, times[:d.last_step + 1])


def test_detection_ignores_covered_paths():
    rng = rng0(42)
    paths = random_walk_paths(rng, 4, 5)
    F_rows = mining.rotate_to_microscale(paths[:, 1:].reshape(-1, 3, 3), E1, E3)
    m = len(F_rows)
    ds = data.DataSet(F_rows, np.zeros_like(F_rows), ["init"] * m,
                      np.zeros(m, dtype=int), np.arange(m),
                      np.zeros(m, dtype=int), np.zeros(m))
    out = mining.detect_new_paths(ds, paths, np.linspace(0, 1, 6), E1, E3)
    assert out == []


def test_filter_matches_greedy_reference():
    rng = rng0(43)
    cand = rng.normal(size=(200, 6)) * np.array([3.0, 3.0, 1.0, 0.5, 2.0, 0.2])
    existing = rng.normal(size=(40, 6)) * np.array([3.0, 3.0, 1.0, 0.5, 2.0, 0.2])
    existing[:, 4] = 1.0  # zero range in one coordinate
    ranges = mining.coordinate_ranges(existing)
    for tol in (0.05, 0.2, 0.6):
        got = mining.filter_candidates(cand, existing, ranges, tol)
        assert got == oracles.filter_bruteforce(cand, existing, ranges, tol)
    # empty pool admits the first candidate unconditionally
    got = mining.filter_candidates(cand, [], ranges, 0.2)
    assert got == oracles.filter_bruteforce(cand, [], ranges, 0.2)
    assert got[0] == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_filter_postcondition_pairwise_distinct(seed):
    rng = rng0(seed)
    tol = float(rng.uniform(0.05, 0.5))
    cand = rng.normal(size=(rng.integers(1, 40), 4))
    existing = rng.normal(size=(int(rng.integers(0, 15)), 4))
    ranges = np.abs(rng.normal(size=4))
    kept = mining.filter_candidates(cand, existing, ranges, tol)
    admitted = cand[kept]
    for i, row in enumerate(admitted):
        others = np.concatenate([existing.reshape(-1, 4),
                                 np.delete(admitted, i, axis=0)])
        if len(others):
            assert mining.distinct_mask(row[None], others, ranges, tol)[0]
    # rejected rows are close to the final set (greedy admission is maximal)
    final = np.concatenate([existing.reshape(-1, 4), admitted])
    for i in range(len(cand)):
        if i not in kept and len(final):
            assert not mining.distinct_mask(cand[i][None], final, ranges, tol)[0]


# --- rotation and enrichment ----------------------------------------------------


def test_rotation_to_microscale_preserves_invariant_image():
    rng = rng0(44)
    F = np.stack([oracles.random_defgrad(rng) for _ in range(20)])
    F_rve = mining.rotate_to_microscale(F, E1, E3)
    inv_macro = tensors.invariants(tensors.right_cauchy_green(F),
                                   tensors.structural_tensor(E1))
    inv_rve = tensors.invariants(tensors.right_cauchy_green(F_rve),
                                 tensors.structural_tensor(E3))
    np.testing.assert_allclose(inv_rve, inv_macro, rtol=0, atol=1e-10)


def test_enrich_provenance_and_stresses():
    rng = rng0(45)
    ds = random_dataset(rng, 50)
    paths = random_walk_paths(rng, 8, 4, spread=0.12)
    times = np.linspace(0.0, 1.0, 5)
    detected = mining.detect_new_paths(ds, paths, times, E1, E3, eps=0.03)
    assert detected
    oracle = mining.AnalyticOracle()
    new, n_cand = mining.enrich(ds, detected, oracle, E1, E3,
                                eps_filter=0.01, iteration=3, source="mined:test")
    assert 0 < len(new) <= n_cand
    assert n_cand == sum(d.last_step for d in detected)
    assert set(new.source) == {"mined:test"}
    assert np.all(new.iteration == 3)
    point_ids = {d.point_id for d in detected}
    assert set(new.path_id.tolist()) <= point_ids
    for i in range(len(new)):
        d = next(d for d in detected if d.point_id == new.path_id[i])
        k = new.step[i]
        assert 1 <= k <= d.last_step
        assert new.t[i] == times[k]
        np.testing.assert_array_equal(
            new.F[i], mining.rotate_to_microscale(d.F[k], E1, E3))
        # analytic oracle answers are the closed form at the stored state
        np.testing.assert_allclose(
            new.P[i], materials.oracle_nominal_stress(new.F[i], oracle.params),
            rtol=1e-9, atol=1e-9)
    # mined tuples carry the same invariant image as their macro origins
    for i in range(len(new)):
        d = next(d for d in detected if d.point_id == new.path_id[i])
        inv_rve = tensors.invariants(
            tensors.right_cauchy_green(new.F[i]), tensors.structural_tensor(E3))
        inv_mac = tensors.invariants(
            tensors.right_cauchy_green(d.F[new.step[i]]),
            tensors.structural_tensor(E1))
        np.testing.assert_allclose(inv_rve, inv_mac, rtol=0, atol=1e-10)


def test_enrich_drops_duplicate_path_and_known_states():
    rng = rng0(46)
    ds = random_dataset(rng, 40)
    path = random_walk_paths(rng, 1, 4, spread=0.15)[0]
    times = np.linspace(0.0, 1.0, 5)
    twin = [mining.DetectedPath(0, 4, times, path),
            mining.DetectedPath(1, 4, times, path.copy())]
    oracle = mining.AnalyticOracle()
    new, _ = mining.enrich(ds, twin, oracle, E1, E3)
    assert len(new) > 0
    assert set(new.path_id.tolist()) == {0}  # the twin is filtered out entirely
    # resubmitting states the dataset now holds yields nothing
    grown = ds.merged_with(new)
    again, _ = mining.enrich(grown, [twin[0]], oracle, E1, E3)
    assert len(again) == 0


def test_enrich_skips_failing_oracle_paths():
    rng = rng0(47)
    ds = random_dataset(rng, 40)
    paths = random_walk_paths(rng, 3, 3, spread=0.15)
    times = np.linspace(0.0, 1.0, 4)
    detected = [mining.DetectedPath(p, 3, times, paths[p]) for p in range(3)]
    inner = mining.AnalyticOracle()
    target = mining.rotate_to_microscale(paths[1][1], E1, E3)

    class Flaky:
        def evaluate_path(self, F_series):
            if np.any(np.all(np.abs(F_series - target) < 1e-12, axis=(1, 2))):
                raise MatmineError("synthetic failure")
            return inner.evaluate_path(F_series)

    new, _ = mining.enrich(ds, detected, Flaky(), E1, E3)
    assert len(new) > 0
    assert 1 not in set(new.path_id.tolist())
    assert {0, 2} & set(new.path_id.tolist())


def test_enrich_runs_with_thread_pool():
    rng = rng0(48)
    ds = random_dataset(rng, 40)
    paths = random_walk_paths(rng, 6, 3, spread=0.15)
    times = np.linspace(0.0, 1.0, 4)
    detected = [mining.DetectedPath(p, 3, times, paths[p]) for p in range(6)]
    oracle = mining.AnalyticOracle()
    serial, n1 = mining.enrich(ds, detected, oracle, E1, E3, threads=1)
    pooled, n2 = mining.enrich(ds, detected, oracle, E1, E3, threads=4)
    assert n1 == n2
    np.testing.assert_array_equal(serial.F, pooled.F)
    np.testing.assert_array_equal(serial.P, pooled.P)
    assert serial.path_id.tolist() == pooled.path_id.tolist()


# --- initial dataset -------------------------------------------------------------


def test_initial_dataset_is_filtered_and_keeps_one_identity():
    raw = mining.initial_dataset(eps_filter=0.01, n_steps=6)
    full = mining.initial_dataset(eps_filter=1e-12, n_steps=6)
    assert 0 < len(raw) < len(full)
    identity_rows = np.flatnonzero(
        np.all(np.abs(raw.F - np.eye(3)) < 1e-14, axis=(1, 2)))
    assert len(identity_rows) == 1
    # post-filter property: no two tuples within the filter tolerance
    inv = raw.invariant_values(E3)
    ranges = mining.coordinate_ranges(full.invariant_values(E3))
    for i in range(len(raw)):
        assert mining.distinct_mask(inv[i][None], np.delete(inv, i, axis=0),
                                    ranges, 0.01)[0]


# --- the closed loop -------------------------------------------------------------


def _truth_model():
    bounds = surrogate.NormalizationBounds((2.0, 2.0, 0.0, 0.0),
                                           (4.0, 4.0, 2.0, 2.0))
    model = surrogate.SurrogateModel(
        anisotropy="isotropic", gate_weights=[120.0],
        input_weights=[[1.0, 1.0, 1.0]], reciprocal_weights=[4.0],
        biases=[0.0], energy_offset=0.0, bounds=bounds, growth_mode=True)
    return surrogate.fix_energy_offset(model)


def _bar_problem(stretch, n_steps):
    mesh = macro.box_mesh((2.0, 1.0, 1.0), (4, 2, 2))
    origin = np.where(np.linalg.norm(mesh.nodes, axis=1) < 1e-9)[0]
    on_y = np.where((np.abs(mesh.nodes[:, 0]) < 1e-9)
                    & (np.abs(mesh.nodes[:, 2]) < 1e-9))[0]
    mesh.node_sets["pin-origin"] = origin
    mesh.node_sets["pin-yline"] = on_y
    bcs = (macro.DisplacementRamp("x1min", (0.0, 0.0, 0.0),
                                  components=(True, False, False)),
           macro.DisplacementRamp("x1max", ((stretch - 1.0) * 2.0, 0.0, 0.0),
                                  components=(True, False, False)),
           macro.DisplacementRamp("pin-origin", (0.0, 0.0, 0.0),
                                  components=(False, True, True)),
           macro.DisplacementRamp("pin-yline", (0.0, 0.0, 0.0),
                                  components=(False, False, True)))
    return macro.MacroProblem("stretch-bar", mesh, bcs, fiber_axis=E1,
                              n_steps=n_steps)


@pytest.fixture(scope="module")
def synthetic_truth():
    truth = _truth_model()
    stress = lambda F: surrogate.model_nominal_stress(truth, F)
    initial = mining.initial_dataset(n_steps=8, stress=stress)
    return truth, initial


def _loop_setup(synthetic_truth, stretch=1.8):
    truth, initial = synthetic_truth
    problem = _bar_problem(stretch, n_steps=6)
    oracle = mining.ModelOracle(truth, E3)
    cfg = training.TrainingConfig(n_neurons=3, restarts=3, seed=5,
                                  growth_mode=True, anisotropy="isotropic",
                                  max_iterations=1500)
    return problem, oracle, cfg


def test_loop_closes_on_synthetic_truth(synthetic_truth, tmp_path):
    problem, oracle, cfg = _loop_setup(synthetic_truth)
    lc = mining.LoopConfig(n_max=6, inner_repeats=3)
    result = mining.run_loop(problem, oracle, synthetic_truth[1], cfg, lc,
                             out_dir=tmp_path / "run")
    assert result.converged
    assert len(result.iterations) <= 3
    last = result.iterations[-1]
    assert last.completed and last.t_end == pytest.approx(1.0)
    assert last.new_tuples == 0 and last.detected_paths == 0
    # the ramp passes beyond the initial suite, so iteration one must mine
    first = result.iterations[0]
    assert first.new_tuples > 0
    # dataset growth is monotone and the report mirrors it
    sizes = [r.dataset_size for r in result.iterations]
    assert sizes == sorted(sizes)
    assert len(result.dataset) == sizes[-1] + last.new_tuples
    # persisted artifacts exist and agree with the returned objects
    reloaded = data.load_kbase(tmp_path / "run" / "kbase.txt")
    assert len(reloaded) == len(result.dataset)
    model = surrogate.load_model(tmp_path / "run" / "model.json")
    np.testing.assert_array_equal(model.gate_weights,
                                  result.model.gate_weights)
    doc = json.loads((tmp_path / "run" / "loop_report.json").read_text())
    assert doc["converged"] is True
    assert doc["n_iterations"] == len(result.iterations)
    assert "wall" not in json.dumps(doc)
    # every mined tuple was distinct from the pre-loop dataset (soundness)
    initial = synthetic_truth[1]
    ranges = mining.coordinate_ranges(initial.invariant_values(E3))
    mined = result.dataset.subset(np.flatnonzero(result.dataset.iteration > 0))
    if len(mined):
        fresh = mining.distinct_mask(mined.invariant_values(E3),
                                     initial.invariant_values(E3),
                                     ranges, lc.eps_filter)
        assert fresh.all()


def test_loop_is_deterministic(synthetic_truth, tmp_path):
    problem, oracle, cfg = _loop_setup(synthetic_truth, stretch=1.7)
    lc = mining.LoopConfig(n_max=6, inner_repeats=3)
    a = mining.run_loop(problem, oracle, synthetic_truth[1], cfg, lc)
    b = mining.run_loop(problem, oracle, synthetic_truth[1], cfg, lc)
    assert a.report_dict() == b.report_dict()
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    surrogate.save_model(a.model, pa)
    surrogate.save_model(b.model, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_loop_raises_when_budget_exhausted(synthetic_truth):
    problem, oracle, cfg = _loop_setup(synthetic_truth)
    lc = mining.LoopConfig(n_max=1, inner_repeats=2)
    with pytest.raises(MaxIterationsExceeded) as err:
        mining.run_loop(problem, oracle, synthetic_truth[1], cfg, lc)
    partial = err.value.result
    assert not partial.converged
    assert len(partial.iterations) == 1
    assert partial.iterations[0].new_tuples > 0
    assert len(partial.dataset) > len(synthetic_truth[1])


def test_loop_config_validation():
    with pytest.raises(ValueError):
        mining.LoopConfig(eps_detect=0.01, eps_filter=0.05)
    with pytest.raises(ValueError):
        mining.LoopConfig(n_max=0)
    with pytest.raises(ValueError):
        mining.LoopConfig(inner_repeats=0)


def test_derived_seeds_are_stable_and_distinct():
    s = mining._derived_seed(0, 1, 0)
    assert s == mining._derived_seed(0, 1, 0)
    seen = {mining._derived_seed(0, i, r) for i in range(1, 5) for r in range(5)}
    assert len(seen) == 20


# --- validation ------------------------------------------------------------------


def test_validate_coverage_full_and_partial(synthetic_truth):
    truth, _ = synthetic_truth
    rng = rng0(49)
    paths = random_walk_paths(rng, 6, 4, spread=0.1)
    times = np.linspace(0.0, 1.0, 5)
    F_rows = mining.rotate_to_microscale(paths[:, 1:].reshape(-1, 3, 3), E1, E3)
    m = len(F_rows)
    covering = data.DataSet(F_rows, np.zeros_like(F_rows), ["init"] * m,
                            np.zeros(m, dtype=int), np.arange(m),
                            np.zeros(m, dtype=int), np.zeros(m))
    oracle = mining.ModelOracle(truth, E3)
    out = mining.validate_coverage(truth, covering, paths, times, oracle, E1, E3)
    assert out["n_uncovered"] == 0 and out["coverage_complete"]
    # complete coverage probes every state instead of reporting nothing
    assert out["n_compared"] == out["n_states"]
    assert out["rel_max"] == 0.0

    sparse = covering.subset(np.arange(3))
    out = mining.validate_coverage(truth, sparse, paths, times, oracle, E1, E3)
    assert out["n_uncovered"] > 0 and not out["coverage_complete"]
    assert out["scatter"].shape == (out["n_uncovered"], 3)
    # the surrogate IS the oracle here, so the scatter collapses onto zero
    assert out["rel_max"] == 0.0
    assert out["n_compared"] == out["n_uncovered"]


# --- knowledge-base files ---------------------------------------------------------


class TestKnowledgeBase:
    def _dataset(self, seed, m=12):
        rng = rng0(seed)
        F = np.stack([oracles.random_defgrad(rng) for _ in range(m)])
        P = rng.normal(size=(m, 3, 3)) * 40.0
        return data.DataSet(F, P, [f"mined:case-{i % 3}" for i in range(m)],
                            rng.integers(0, 4, m), rng.integers(0, 99, m),
                            rng.integers(0, 13, m), rng.random(m))

    def test_roundtrip_is_bit_exact(self, tmp_path):
        ds = self._dataset(50)
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        data.save_kbase(ds, p1)
        back = data.load_kbase(p1)
        data.save_kbase(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(ds.F, back.F)
        np.testing.assert_array_equal(ds.P, back.P)
        np.testing.assert_array_equal(ds.t, back.t)
        assert ds.source == back.source

    def test_concatenated_files_load_as_union(self, tmp_path):
        d1, d2 = self._dataset(51, 7), self._dataset(52, 5)
        p1, p2, cat = tmp_path / "a.txt", tmp_path / "b.txt", tmp_path / "c.txt"
        data.save_kbase(d1, p1)
        data.save_kbase(d2, p2)
        cat.write_bytes(p1.read_bytes() + p2.read_bytes())
        union = data.load_kbase(cat)
        assert len(union) == 12  # duplicates retained, IO never filters
        np.testing.assert_array_equal(union.F[:7], d1.F)
        np.testing.assert_array_equal(union.F[7:], d2.F)

    def test_header_only_file_is_empty_dataset(self, tmp_path):
        p = tmp_path / "empty.txt"
        p.write_text(f"# {data.KBASE_VERSION}\n")
        assert len(data.load_kbase(p)) == 0

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("# some-other-format-v9\n")
        with pytest.raises(FormatVersionMismatch):
            data.load_kbase(p)
        p.write_text("")
        with pytest.raises(FormatVersionMismatch):
            data.load_kbase(p)

    def test_corrupt_records_report_line_numbers(self, tmp_path):
        ds = self._dataset(53, 3)
        p = tmp_path / "broken.txt"
        data.save_kbase(ds, p)
        lines = p.read_text().splitlines()
        lines[3] = lines[3].rsplit(" ", 1)[0]  # drop one field from record 2
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptRecord) as err:
            data.load_kbase(p)
        assert err.value.line_no == 4

        lines = p.read_text().splitlines()
        parts = lines[2].split()
        parts[6] = "nan"
        lines[2] = " ".join(parts)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptRecord) as err:
            data.load_kbase(p)
        assert err.value.line_no == 3
