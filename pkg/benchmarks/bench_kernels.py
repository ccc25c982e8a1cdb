"""Compare the numba and numpy kernel paths on realistic inputs.

    python3 benchmarks/bench_kernels.py [--samples 50000] [--repeat 5]

kNN queries come from a fitted predictor and the action table of a random
3-block scene; relaxed-cost inputs come from grounding mined operators on a
desk problem. Both paths are checked for agreement before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from biplan import kernels
from biplan.abstraction import ReferenceEncoder
from biplan.dynamics import N_FEATURES, fit_knn, query_table
from biplan.operators import mine, symbolize
from biplan.pddl import Grounding
from biplan.world import PhysicsConfig, collect_dataset, generate_problem, legal_actions


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=50_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    physics = PhysicsConfig(noise_sigma=0.01)
    data = collect_dataset(args.samples, seed=args.seed, physics=physics)
    model = fit_knn(data)
    problem = generate_problem(3, 2, args.seed, physics)
    state = problem.init
    feats, keys = query_table(state, legal_actions(state))
    q, qb = feats.reshape(-1, N_FEATURES), keys.ravel()
    knn_args = (model.train_x, model.train_y, model.starts, model.stops, q, qb, model.k)

    enc = ReferenceEncoder()
    ops = mine(symbolize(data, enc), enc)
    si, sg = enc.encode_problem(problem)
    task = Grounding(ops, 3, si, sg, enc.unary_names, enc.relation_names).task()
    true = ((np.uint64(task.init) >> np.arange(len(task.atoms), dtype=np.uint64)) & np.uint64(1)).astype(bool)
    rc_args = (true, *task.csr(), False)

    # warm-up compiles (or loads the cache) and checks agreement
    a, b = kernels.knn_regress_numba(*knn_args), kernels.knn_regress_numpy(*knn_args)
    assert np.allclose(a, b, atol=1e-12), "knn kernels disagree"
    a, b = kernels.relaxed_costs_numba(*rc_args), kernels.relaxed_costs_numpy(*rc_args)
    assert np.array_equal(a, b), "relaxed-cost kernels disagree"

    rows = [
        (f"knn_regress ({q.shape[0]} queries, {model.size} rows)",
         best_of(lambda: kernels.knn_regress_numba(*knn_args), args.repeat),
         best_of(lambda: kernels.knn_regress_numpy(*knn_args), args.repeat)),
        (f"relaxed_costs ({task.n_actions} actions, {len(task.atoms)} atoms)",
         best_of(lambda: kernels.relaxed_costs_numba(*rc_args), args.repeat * 20),
         best_of(lambda: kernels.relaxed_costs_numpy(*rc_args), args.repeat * 20)),
    ]
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for name, tn, tp in rows:
        print(f"{name:<{width}}  {tn * 1e3:10.3f}  {tp * 1e3:10.3f}  {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()
