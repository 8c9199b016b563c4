#!/usr/bin/env python3
"""Mine the holed-cuboid problem until the dataset explains every state.

Drives the initial load suite through the oracle, then alternates training,
macro solves and oracle evaluations of whatever states the dataset cannot
explain yet.  After convergence the surrogate is scored against the oracle
on the converged solution.  Artifacts (model, knowledge base, loop report,
validation summary) land in --out.
"""

import argparse
import json
import os
import time

import numpy as np

from matmine import config, macro, mining


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out_cuboid", help="artifact directory")
    ap.add_argument("--config", default=None, help="INI file overriding defaults")
    ap.add_argument("--oracle", default="analytic", choices=("analytic", "voxel"))
    ap.add_argument("--n-max", type=int, default=10)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true",
                    help="3 restarts / 800 iterations instead of the defaults")
    args = ap.parse_args()

    overrides = {("geometry", "name"): "cuboid-hole",
                 ("oracle", "kind"): args.oracle,
                 ("loop", "n_max"): args.n_max,
                 ("loop", "threads"): args.threads,
                 ("training", "seed"): args.seed}
    if args.quick:
        overrides[("training", "restarts")] = 3
        overrides[("training", "max_iterations")] = 800
    rc = config.load_config(args.config, overrides)
    problem = config.make_problem(rc)
    oracle = config.make_oracle(rc)
    os.makedirs(args.out, exist_ok=True)

    t0 = time.perf_counter()
    initial = mining.initial_dataset(eps_filter=rc.loop.eps_filter,
                                     n_steps=rc.initial_steps,
                                     rve_fiber_axis=rc.loop.rve_fiber_axis,
                                     stress=config.make_initial_stress(rc))
    print(f"initial suite: {len(initial)} tuples "
          f"({time.perf_counter() - t0:.1f}s)")

    result = mining.run_loop(problem, oracle, initial, rc.training, rc.loop,
                             out_dir=args.out)
    print("iter  tuples  detected  admitted  t_end  holdout")
    for r in result.iterations:
        print(f"{r.iteration:4d}  {r.dataset_size:6d}  {r.detected_paths:8d}"
              f"  {r.new_tuples:8d}  {r.t_end:5.3f}  {r.holdout_loss:9.4g}")
    print(f"converged after {len(result.iterations)} iterations, "
          f"{len(result.dataset)} tuples, {time.perf_counter() - t0:.1f}s")

    paths, times = macro.collect_deformations(result.final_state)
    val = mining.validate_coverage(result.model, result.dataset, paths, times,
                                   oracle, problem.fiber_axis,
                                   rc.loop.rve_fiber_axis)
    scatter = val.pop("scatter")
    np.savetxt(os.path.join(args.out, "validation_scatter.txt"), scatter,
               fmt="%.17g", header="oracle_norm model_norm rel_error")
    with open(os.path.join(args.out, "validation.json"), "w") as fh:
        json.dump(val, fh, indent=1, sort_keys=True)
        fh.write("\n")
    macro.save_state(result.final_state, problem.mesh,
                     os.path.join(args.out, "state.npz"),
                     meta={"geometry": problem.name, "completed": True})
    print(f"validation over {val['n_compared']} states: "
          f"relative stress error mean {val['rel_mean']:.4g}, "
          f"p95 {val['rel_p95']:.4g}, max {val['rel_max']:.4g}")


if __name__ == "__main__":
    main()
