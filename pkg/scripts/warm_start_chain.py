#!/usr/bin/env python3
"""Reuse one geometry's mined data to warm-start the next.

Runs the holed cuboid from the initial suite, hands its knowledge base to
the torsion bar, then hands the union to the Cook membrane.  Each stage
prints how many loop iterations it needed; warm-started stages should need
few because most of their states are already explained.
"""

import argparse
import os
import time

from matmine import config, mining


STAGES = ("cuboid-hole", "torsion-bar", "cook-membrane")


def run_stage(name, dataset, args):
    overrides = {("geometry", "name"): name,
                 ("loop", "n_max"): args.n_max,
                 ("loop", "threads"): args.threads,
                 ("training", "seed"): args.seed}
    if args.quick:
        overrides[("training", "restarts")] = 3
        overrides[("training", "max_iterations")] = 800
    rc = config.load_config(args.config, overrides)
    problem = config.make_problem(rc)
    oracle = config.make_oracle(rc)
    if dataset is None:
        dataset = mining.initial_dataset(eps_filter=rc.loop.eps_filter,
                                         n_steps=rc.initial_steps,
                                         rve_fiber_axis=rc.loop.rve_fiber_axis,
                                         stress=config.make_initial_stress(rc))
        print(f"initial suite: {len(dataset)} tuples")
    out_dir = os.path.join(args.out, name)
    t0 = time.perf_counter()
    result = mining.run_loop(problem, oracle, dataset, rc.training, rc.loop,
                             out_dir=out_dir)
    mined = len(result.dataset) - len(dataset)
    print(f"{name}: {len(result.iterations)} iterations, "
          f"+{mined} tuples ({len(result.dataset)} total), "
          f"{time.perf_counter() - t0:.1f}s")
    return result.dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out_chain", help="artifact directory")
    ap.add_argument("--config", default=None, help="INI file overriding defaults")
    ap.add_argument("--n-max", type=int, default=10)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true",
                    help="3 restarts / 800 iterations instead of the defaults")
    args = ap.parse_args()

    dataset = None
    for name in STAGES:
        dataset = run_stage(name, dataset, args)


if __name__ == "__main__":
    main()
