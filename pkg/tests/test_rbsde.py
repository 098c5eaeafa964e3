"""Backward lattice solver: exact oracle, reflection structure, orderings."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from isaacs.forwardsim import build_lattice
from isaacs.model import CoefficientSet, ControlGrid, ProblemSpec
from isaacs.pde import SpaceTimeGrid
from isaacs.problems import builtin
from isaacs.rbsde import (
    PenalizationSchedule,
    apriori_estimate_check,
    backward_semigroup,
    comparison_check,
    solve_backward,
)

CONTROLS = (0.0, 0.0)


def _ramp_spec():
    """Deterministic oracle: no dynamics, driver -1, floor at -0.1.

    Backward from zero the unreflected solution is -(T - t); the floor stops
    it at -0.1, so Y(0) = -0.1 exactly, the lower reflection collects the
    whole shortfall (0.9 over the barrier window) and everything else stays
    zero.  With b = sigma = 0 the lattice chain is the identity and the whole
    recursion can be repeated with plain floats next to the solver.
    """
    co = CoefficientSet(
        b=lambda t, x, u, v: 0.0 * np.asarray(x, dtype=float),
        sigma=lambda t, x, u, v: 0.0 * np.asarray(x, dtype=float),
        driver=lambda t, x, y, z, u, v: -1.0 + 0.0 * np.asarray(x, dtype=float),
        terminal=lambda x: 0.0 * np.asarray(x, dtype=float),
        lower=lambda t, x: np.full_like(np.asarray(x, dtype=float), -0.1),
        upper=lambda t, x: np.full_like(np.asarray(x, dtype=float), 1.0),
        lipschitz=0.0,
        driver_lipschitz=0.0,
    )
    return ProblemSpec(
        horizon=1.0,
        coefficients=co,
        controls_i=ControlGrid("u", (0.0,)),
        controls_ii=ControlGrid("v", (0.0,)),
    )


def _ramp_lattice(nt=100):
    return build_lattice(_ramp_spec(), 0.0, SpaceTimeGrid(-1.0, 1.0, 5, nt, 1.0))


def _float_ramp_recursion(nt):
    """The same backward recursion in scalar arithmetic, step by step."""
    dt = 1.0 / nt
    y = 0.0
    levels = [y]
    pushes = []
    for _ in range(nt):
        y_tilde = y + dt * -1.0
        push = max(-0.1 - y_tilde, 0.0)
        y = max(y_tilde, -0.1)
        levels.append(y)
        pushes.append(push)
    return levels[::-1], pushes[::-1]


def test_ramp_oracle_value_and_reflection():
    spec, lattice = _ramp_spec(), _ramp_lattice()
    sol = solve_backward(spec, lattice, CONTROLS, mode="two_barrier")
    levels, pushes = _float_ramp_recursion(100)

    assert float(sol.y[0][sol.root_index]) == -0.1
    for j in (0, 3, 42, 99, 100):
        assert np.all(sol.y[j] == levels[j])
    # all pushes happen at the lower barrier and sum to 0.9
    assert abs(float(sol.k_plus_mean[-1]) - 0.9) < 1e-12
    assert abs(float(sol.k_plus_mean[-1]) - sum(pushes)) < 1e-12
    assert np.all(sol.k_minus_mean == 0.0)
    assert all(np.all(dk == 0.0) for dk in sol.dk_minus)
    assert all(np.all(z == 0.0) for z in sol.z)
    assert sol.flatness_lower == 0.0
    assert sol.flatness_upper == 0.0
    assert sol.exclusion_max == 0.0


def test_cumulative_reflection_means_are_monotone_from_zero():
    sol = solve_backward(_ramp_spec(), _ramp_lattice(), CONTROLS, mode="two_barrier")
    assert sol.k_plus_mean[0] == 0.0 and sol.k_minus_mean[0] == 0.0
    assert np.all(np.diff(sol.k_plus_mean) >= 0.0)
    assert np.all(np.diff(sol.k_minus_mean) >= 0.0)


def test_zero_penalty_equals_plain_bitwise():
    spec, lattice = _ramp_spec(), _ramp_lattice()
    plain = solve_backward(spec, lattice, CONTROLS, mode="plain")
    pen = solve_backward(spec, lattice, CONTROLS, mode="penalized", penalty=(0.0, 0.0))
    assert all(np.array_equal(a, b) for a, b in zip(plain.y, pen.y))
    assert float(plain.y[0][plain.root_index]) == pytest.approx(-1.0, abs=1e-12)
    assert all(np.all(dk == 0.0) for dk in plain.dk_plus)


def _dynkin_lattice():
    bp = builtin("dynkin_heat")
    grid = SpaceTimeGrid(-9.0, 9.0, 101, 100, 1.0)
    return bp.spec, build_lattice(bp.spec, 0.0, grid)


def test_two_barrier_solution_stays_sandwiched():
    spec, lattice = _dynkin_lattice()
    sol = solve_backward(spec, lattice, CONTROLS, mode="two_barrier")
    co = spec.coefficients
    for j in range(len(sol.y)):
        x = lattice.node_values(j)
        t = float(lattice.times[j])
        assert np.all(sol.y[j] >= np.asarray(co.lower(t, x), dtype=float))
        assert np.all(sol.y[j] <= np.asarray(co.upper(t, x), dtype=float))


def test_reflection_increments_are_flat_and_mutually_exclusive():
    # the clamp construction makes the complementarity products exact zeros,
    # not merely small: a raised node sits bitwise on the obstacle
    spec, lattice = _dynkin_lattice()
    sol = solve_backward(spec, lattice, CONTROLS, mode="two_barrier")
    co = spec.coefficients
    assert sum(float(np.sum(dk)) for dk in sol.dk_plus) > 0.0
    assert sum(float(np.sum(dk)) for dk in sol.dk_minus) > 0.0
    for j in range(len(sol.y) - 1):
        x = lattice.node_values(j)
        t = float(lattice.times[j])
        lo = np.asarray(co.lower(t, x), dtype=float)
        up = np.asarray(co.upper(t, x), dtype=float)
        assert np.all(sol.dk_plus[j] * sol.dk_minus[j] == 0.0)
        assert np.all((sol.y[j] - lo) * sol.dk_plus[j] == 0.0)
        assert np.all((up - sol.y[j]) * sol.dk_minus[j] == 0.0)
    assert sol.exclusion_max == 0.0
    assert sol.flatness_lower == 0.0 and sol.flatness_upper == 0.0


def test_occupation_law_stays_a_probability_vector():
    spec, lattice = _dynkin_lattice()
    sol = solve_backward(spec, lattice, CONTROLS, mode="two_barrier")
    for w in sol.occupation:
        assert np.all(w >= 0.0)
        assert abs(float(np.sum(w)) - 1.0) < 1e-12


def test_one_barrier_approximations_squeeze_the_reflected_solution():
    spec, lattice = _dynkin_lattice()
    ref = solve_backward(spec, lattice, CONTROLS, mode="two_barrier")
    tol = 1e-9
    prev_above = prev_below = None
    for m in (4.0, 16.0, 64.0):
        above = solve_backward(
            spec, lattice, CONTROLS, mode="one_barrier_lower", penalty=m
        )
        below = solve_backward(
            spec, lattice, CONTROLS, mode="one_barrier_upper", penalty=m
        )
        for j in range(len(ref.y)):
            assert np.all(above.y[j] >= ref.y[j] - tol)
            assert np.all(below.y[j] <= ref.y[j] + tol)
            if prev_above is not None:
                assert np.all(above.y[j] <= prev_above.y[j] + tol)
                assert np.all(below.y[j] >= prev_below.y[j] - tol)
        prev_above, prev_below = above, below
    gap = max(
        float(np.max(a - b)) for a, b in zip(prev_above.y, prev_below.y)
    )
    assert gap < 0.12


def test_recomposition_through_an_intermediate_step_is_exact():
    spec, lattice = _dynkin_lattice()
    full = solve_backward(spec, lattice, CONTROLS, mode="two_barrier")
    head = backward_semigroup(spec, lattice, CONTROLS, 0, 50, full.y[50])
    assert np.array_equal(head, full.y[0])


def test_solution_is_a_function_of_time_and_state_only():
    # restarting on a fresh lattice at t = 1/2 reproduces the tail of the
    # full solve bitwise wherever the node sets overlap; dyadic dt keeps
    # every time level exactly representable so the arithmetic is identical
    bp = builtin("dynkin_heat")
    grid = SpaceTimeGrid(-9.0, 9.0, 101, 128, 1.0)
    big = build_lattice(bp.spec, 0.0, grid)
    sub = build_lattice(bp.spec, 0.5, grid)
    sol_big = solve_backward(bp.spec, big, CONTROLS, mode="two_barrier")
    sol_sub = solve_backward(bp.spec, sub, CONTROLS, mode="two_barrier")
    assert sub.n_steps == 64
    for j in (0, 32, 64):
        inner = sol_big.y[64 + j][64 : 64 + sub.counts[j]]
        assert np.array_equal(inner, sol_sub.y[j])


def test_comparison_orders_solutions_and_reflections():
    spec, lattice = _dynkin_lattice()
    co = spec.coefficients
    bigger = dataclasses.replace(
        spec,
        coefficients=dataclasses.replace(
            co,
            terminal=lambda x, _f=co.terminal: np.asarray(_f(x), dtype=float) + 0.1,
            driver=lambda t, x, y, z, u, v, _f=co.driver: np.asarray(
                _f(t, x, y, z, u, v), dtype=float
            )
            + 0.1,
        ),
    )
    report = comparison_check(spec, bigger, lattice, CONTROLS, samples=32)
    assert report.conclusive and report.equal_barriers
    assert report.max_y_violation <= 1e-10
    assert report.max_k_plus_violation <= 1e-10
    assert report.max_k_minus_violation <= 1e-10
    assert report.passed


def test_comparison_with_widened_barriers_skips_reflection_orderings():
    spec, lattice = _dynkin_lattice()
    co = spec.coefficients
    wider = dataclasses.replace(
        spec,
        coefficients=dataclasses.replace(
            co,
            upper=lambda t, x, _f=co.upper: np.asarray(_f(t, x), dtype=float) + 0.2,
        ),
    )
    report = comparison_check(spec, wider, lattice, CONTROLS, samples=32)
    assert report.conclusive and not report.equal_barriers
    assert report.max_y_violation <= 1e-10
    assert report.max_k_plus_violation == -math.inf
    assert report.passed


def test_comparison_declines_unordered_data():
    spec, lattice = _dynkin_lattice()
    co = spec.coefficients
    smaller = dataclasses.replace(
        spec,
        coefficients=dataclasses.replace(
            co,
            terminal=lambda x, _f=co.terminal: np.asarray(_f(x), dtype=float) - 0.1,
        ),
    )
    report = comparison_check(spec, smaller, lattice, CONTROLS, samples=32)
    assert not report.conclusive
    assert not report.passed
    assert "terminal ordering fails" in report.hypothesis_detail
    assert math.isnan(report.max_y_violation)


def test_apriori_constants_are_stable_under_refinement():
    bp = builtin("dynkin_heat")
    grid = SpaceTimeGrid(-9.0, 9.0, 101, 100, 1.0)
    report = apriori_estimate_check(bp.spec, grid, CONTROLS)
    assert set(report.constants) == {"size", "state_lipschitz", "perturbation"}
    for name, value in report.constants.items():
        assert math.isfinite(value) and value > 0.0, name
    # halving dt would push sigma^2 dt / dx^2 past 1 here, so the checker
    # must fall back to the quartered step
    assert report.refinement == "dx/2, dt/4"
    assert report.passed, report.ratios


def test_penalization_schedule_validation():
    assert list(PenalizationSchedule((1.0, 2.0))) == [1.0, 2.0]
    assert len(PenalizationSchedule((3.0,))) == 1
    with pytest.raises(ValueError, match="empty"):
        PenalizationSchedule(())
    with pytest.raises(ValueError, match="strictly increasing"):
        PenalizationSchedule((1.0, 1.0))
    with pytest.raises(ValueError, match="strictly increasing"):
        PenalizationSchedule((0.0, 1.0))


def test_explicit_step_contraction_precondition():
    spec, lattice = _ramp_spec(), _ramp_lattice()
    with pytest.raises(ValueError, match="not contracting"):
        solve_backward(
            spec, lattice, CONTROLS, mode="penalized", penalty=(150.0, 0.0)
        )


def test_control_and_step_range_validation():
    spec, lattice = _ramp_spec(), _ramp_lattice()
    with pytest.raises(ValueError, match="not on grid"):
        solve_backward(spec, lattice, (0.5, 0.0))
    with pytest.raises(ValueError, match="per-step controls"):
        solve_backward(spec, lattice, [(0.0, 0.0)] * 3)
    with pytest.raises(ValueError, match="bad step range"):
        solve_backward(spec, lattice, CONTROLS, start_step=50, end_step=50)
    with pytest.raises(ValueError, match="unknown mode"):
        solve_backward(spec, lattice, CONTROLS, mode="sideways")


def test_terminal_override_is_validated():
    spec, lattice = _ramp_spec(), _ramp_lattice()
    n_end = lattice.counts[lattice.n_steps]
    with pytest.raises(ValueError, match="shape"):
        solve_backward(spec, lattice, CONTROLS, terminal=np.zeros(3))
    with pytest.raises(ValueError, match="below the lower obstacle"):
        solve_backward(spec, lattice, CONTROLS, terminal=np.full(n_end, -5.0))
    with pytest.raises(ValueError, match="exceed the upper obstacle"):
        solve_backward(spec, lattice, CONTROLS, terminal=np.full(n_end, 5.0))


def test_penalty_mode_argument_validation():
    spec, lattice = _ramp_spec(), _ramp_lattice()
    with pytest.raises(ValueError, match="takes no penalty"):
        solve_backward(spec, lattice, CONTROLS, mode="two_barrier", penalty=3.0)
    with pytest.raises(ValueError, match="nonnegative"):
        solve_backward(spec, lattice, CONTROLS, mode="one_barrier_lower", penalty=-1.0)
    with pytest.raises(ValueError, match="penalty pair"):
        solve_backward(spec, lattice, CONTROLS, mode="penalized", penalty=5.0)
