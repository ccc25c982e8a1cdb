import os
import subprocess
import sys

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from biplan import kernels


def _knn_inputs(seed, rows, buckets, queries, k):
    rng = np.random.default_rng(seed)
    keys = np.sort(rng.integers(0, buckets, rows))
    x = np.round(rng.normal(size=(rows, 4)), 1)  # coarse grid forces exact matches and ties
    y = rng.normal(size=(rows, 3))
    starts = np.searchsorted(keys, np.arange(buckets), side="left")
    stops = np.searchsorted(keys, np.arange(buckets), side="right")
    q = np.round(rng.normal(size=(queries, 4)), 1)
    qb = rng.integers(-1, buckets, queries)
    return x, y, starts, stops, q, qb, k


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 200), st.integers(1, 6), st.integers(1, 40), st.integers(1, 7))
def test_knn_paths_agree(seed, rows, buckets, queries, k):
    args = _knn_inputs(seed, rows, buckets, queries, k)
    a = kernels.knn_regress_numba(*args)
    b = kernels.knn_regress_numpy(*args)
    assert np.allclose(a, b, atol=1e-12)
    assert not np.any(a[args[5] < 0])


def test_knn_exact_match_returns_mean():
    x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    y = np.array([[1.0], [3.0], [100.0]])
    args = (x, y, np.array([0]), np.array([3]), np.zeros((1, 2)), np.array([0]), 3)
    assert kernels.knn_regress_numba(*args)[0, 0] == 2.0
    assert kernels.knn_regress_numpy(*args)[0, 0] == 2.0


def test_knn_inverse_distance_weights():
    x = np.array([[1.0], [3.0]])
    y = np.array([[0.0], [4.0]])
    args = (x, y, np.array([0]), np.array([2]), np.zeros((1, 1)), np.array([0]), 2)
    # weights 1 and 1/3 give (0 + 4/3) / (4/3) = 1
    assert np.isclose(kernels.knn_regress_numba(*args)[0, 0], 1.0)
    assert np.isclose(kernels.knn_regress_numpy(*args)[0, 0], 1.0)


def _csr(rows, n_atoms):
    ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(r) for r in rows])
    idx = np.array([a for r in rows for a in r], dtype=np.int64)
    return ptr, idx


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(0, 40), st.booleans())
def test_relaxed_paths_agree(seed, n_atoms, n_act, use_max):
    rng = np.random.default_rng(seed)
    pre = [sorted(set(rng.integers(0, n_atoms, rng.integers(0, 3)).tolist())) for _ in range(n_act)]
    add = [sorted(set(rng.integers(0, n_atoms, rng.integers(1, 3)).tolist())) for _ in range(n_act)]
    true = rng.random(n_atoms) < 0.3
    args = (true, *_csr(pre, n_atoms), *_csr(add, n_atoms), use_max)
    assert np.array_equal(kernels.relaxed_costs_numba(*args), kernels.relaxed_costs_numpy(*args))


def test_relaxed_chain_values():
    # a0 -> a1 -> a2, plus a2 needs both a0 and a1 via a second action
    true = np.array([True, False, False, False])
    pre = [[0], [1], [0, 1]]
    add = [[1], [2], [3]]
    args = (true, *_csr(pre, 4), *_csr(add, 4))
    for fn in (kernels.relaxed_costs_numba, kernels.relaxed_costs_numpy):
        assert fn(*args, False).tolist() == [0.0, 1.0, 2.0, 2.0]
        assert fn(*args, True).tolist() == [0.0, 1.0, 2.0, 2.0]
    pre = [[0, 1], [1], [1, 2]]
    args = (np.array([True, False, False, False]), *_csr(pre, 4), *_csr(add, 4))
    assert np.all(np.isinf(kernels.relaxed_costs(*args)[1:]))


def test_env_flag_selects_numpy():
    code = "from biplan import _accel; print(_accel.backend_name())"
    env = dict(os.environ, BIPLAN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["BIPLAN_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_numpy_backend_gives_same_plan():
    code = (
        "from biplan.world import generate_problem; from biplan.dynamics import OraclePredictor;"
        "from biplan.planning import continuous_search;"
        "p = generate_problem(2, 2, seed=3); print(continuous_search(p.init, p.goal, OraclePredictor()).plan)"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, BIPLAN_DISABLE_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout)
    assert outs[0] == outs[1]
