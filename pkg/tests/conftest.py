"""Shared gradient-check scenarios used by unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from protoseg import autodiff as ad


def _weighted(tape, var, weights):
    """Scalar-valued readout; `weights` is a wrapped input so its gradient
    is exercised too."""
    return ad.vsum(ad.mul(var, weights))


# (name, make_inputs(rng) -> list of arrays, fn(tape, *vars) -> scalar Var)
GRADCHECK_CASES = [
    (
        "add",
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, a, b, w: _weighted(t, ad.add(a, b), w),
    ),
    (
        "add_broadcast",
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(3, 4))],
        lambda t, a, b, w: _weighted(t, ad.add(a, b), w),
    ),
    (
        "mul",
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, a, b, w: _weighted(t, ad.mul(a, b), w),
    ),
    (
        "scale",
        lambda rng: [rng.normal(size=(4, 2)), rng.normal(size=(4, 2))],
        lambda t, a, w: _weighted(t, ad.scale(a, 1.7), w),
    ),
    (
        "matmul",
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(3, 2))],
        lambda t, a, b, w: _weighted(t, ad.matmul(a, b), w),
    ),
    (
        "matmul_vec",
        lambda rng: [rng.normal(size=4), rng.normal(size=(4, 2)), rng.normal(size=2)],
        lambda t, a, b, w: _weighted(t, ad.matmul(a, b), w),
    ),
    (
        "axis0_sum",
        lambda rng: [rng.normal(size=(5, 3)), rng.normal(size=3)],
        lambda t, a, w: _weighted(t, ad.axis0_sum(a), w),
    ),
    (
        "relu",
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, a, w: _weighted(t, ad.relu(a), w),
    ),
    (
        "log",
        lambda rng: [rng.uniform(0.5, 2.0, size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, a, w: _weighted(t, ad.log(a), w),
    ),
    (
        "clamp",
        lambda rng: [rng.uniform(-2.0, 2.0, size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, a, w: _weighted(t, ad.clamp(a, -1.0, 1.0), w),
    ),
    (
        "absval",
        lambda rng: [rng.uniform(-2.0, 2.0, size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, a, w: _weighted(t, ad.absval(a), w),
    ),
    (
        "softmax",
        lambda rng: [rng.normal(size=5), rng.normal(size=5)],
        lambda t, a, w: _weighted(t, ad.softmax(a), w),
    ),
    (
        "time_diff",
        lambda rng: [rng.normal(size=(6, 3)), rng.normal(size=(5, 3))],
        lambda t, a, w: _weighted(t, ad.time_diff(a), w),
    ),
    (
        "pairwise_distance",
        lambda rng: [rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=(4, 2))],
        lambda t, f, p, w: _weighted(t, ad.pairwise_distance(f, p), w),
    ),
    (
        "pairwise_distance_squared",
        lambda rng: [rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=(4, 2))],
        lambda t, f, p, w: _weighted(t, ad.pairwise_distance(f, p, squared=True), w),
    ),
    (
        "minmax_invert_rows",
        lambda rng: [rng.uniform(0.0, 3.0, size=(4, 5)), rng.normal(size=(4, 5))],
        lambda t, a, w: _weighted(t, ad.minmax_invert_rows(a), w),
    ),
    (
        "row_normalize",
        lambda rng: [rng.uniform(0.1, 1.0, size=(4, 5)), rng.normal(size=(4, 5))],
        lambda t, a, w: _weighted(t, ad.row_normalize(a), w),
    ),
    (
        "affinity_chain",
        lambda rng: [rng.normal(size=(4, 3)), rng.normal(size=(3, 3)), rng.normal(size=(4, 3))],
        lambda t, f, p, w: _weighted(
            t, ad.row_normalize(ad.minmax_invert_rows(ad.pairwise_distance(f, p))), w
        ),
    ),
]


def run_gradcheck_case(name: str, seeds) -> float:
    """Worst finite-difference error for one registered case over seeds."""
    by_name = {case[0]: case for case in GRADCHECK_CASES}
    _, make_inputs, fn = by_name[name]
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        inputs = make_inputs(rng)
        worst = max(worst, ad.finite_diff_check(fn, inputs))
    return worst
