"""Smoke test for the bayes_droc extension module.

Build and install with `pip install --no-build-isolation ./crates/py`, then
run `python python/smoke_test.py` or `pytest python/`.
"""

import math
import random

import bayes_droc as bd


def test_worked_example():
    lower, upper, h = [0.1, 0.2, 0.3], [0.5, 0.6, 0.7], [1.0, 2.0, 3.0]
    value, pmf = bd.worst_case(lower, upper, h)
    assert abs(value - 2.6) < 1e-12
    assert pmf == [0.1, 0.2, 0.7]
    assert abs(bd.mean_cvar(lower, upper, [0.2, 0.3, 0.5], h) - 2.6) < 1e-12


def test_base_stock():
    kappa, s_star = bd.base_stock()
    assert abs(kappa - (10 - 0.05) / 12) < 1e-15
    assert abs(s_star + 10 * math.log(1 - kappa)) < 1e-12


def test_credible_box_and_solve():
    pmf = bd.demand_pmf(bins=10)
    assert abs(sum(pmf) - 1) < 1e-12
    rng = random.Random(0)
    obs = rng.choices(range(10), weights=pmf, k=50)
    center, lower, upper = bd.credible_box(obs, bins=10)
    assert all(lo <= c <= up for c, lo, up in zip(center, lower, upper))

    sol = bd.solve(obs, bins=10, grid_points=101)
    assert sol.converged
    assert len(sol.grid) == len(sol.values) == len(sol.actions) == 101
    grid, values, _ = bd.oracle(center, grid_points=101)
    assert grid == sol.grid
    # the box contains its center, and the envelope is within eps of the robust value
    assert all(r >= v - 0.5 - 1e-3 for r, v in zip(sol.values, values))


def test_errors():
    for call in (lambda: bd.credible_box([12], bins=10), lambda: bd.worst_case([0.9], [0.1], [1.0])):
        try:
            call()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok {name}")
