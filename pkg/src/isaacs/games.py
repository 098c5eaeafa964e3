"""Game values, dynamic programming and cross-solver consistency checks.

The lower value solves the double-obstacle equation with the max-min
Hamiltonian, the upper value with the min-max one.  The max-min never
exceeds the min-max, so the fields are ordered; when the two Hamiltonians
agree pointwise the fields coincide and the game has a value.  The checks
here measure exactly that, plus two structural identities of the backward
solvers: recomposing a solve at an intermediate time changes nothing, and
freezing the controls makes the finite-difference and lattice solvers
approximate the same linear problem.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import forwardsim, pde, rbsde
from .model import ControlGrid, isaacs_condition_check


@dataclasses.dataclass(frozen=True)
class GameVerdict:
    """Both value fields plus the evidence for or against a game value.

    `max_gap` is the worst |upper - lower| over all levels and nodes,
    `order_violation` the worst (lower - upper), positive only if the
    ordering failed.  `has_value` requires the sampled Isaacs gap to vanish
    and the fields to agree within `value_tol`, the first-order
    discretization wobble at the fields' own scale.
    """

    lower: pde.ValueField
    upper: pde.ValueField
    max_gap: float
    order_violation: float
    isaacs: object
    value_tol: float
    has_value: bool


def compute_values(spec, grid, cfl_margin=0.9, isaacs_samples=64, seed=0):
    """Solve both Hamiltonian reductions and compare them."""
    lower = pde.solve_isaacs_double_obstacle(
        spec, grid, "lower", cfl_margin=cfl_margin
    )
    upper = pde.solve_isaacs_double_obstacle(
        spec, grid, "upper", cfl_margin=cfl_margin
    )
    radius = max(abs(grid.x_min), abs(grid.x_max))
    isaacs = isaacs_condition_check(
        spec, samples=isaacs_samples, seed=seed, radius=radius
    )
    max_gap = float(np.max(np.abs(upper.values - lower.values)))
    order_violation = float(np.max(lower.values - upper.values))
    spread = max(
        float(np.max(lower.values) - np.min(lower.values)),
        float(np.max(upper.values) - np.min(upper.values)),
    )
    value_tol = 10.0 * (grid.dx + grid.dt) * max(1.0, spread)
    return GameVerdict(
        lower=lower,
        upper=upper,
        max_gap=max_gap,
        order_violation=order_violation,
        isaacs=isaacs,
        value_tol=value_tol,
        has_value=bool(isaacs.satisfied and max_gap <= value_tol),
    )


@dataclasses.dataclass(frozen=True)
class DPPReport:
    """Residual of recomposing a solve at an intermediate level."""

    kind: str
    split_time: float
    split_level: int
    max_residual: float
    tolerance: float
    passed: bool


def dpp_check(spec, grid, kind="lower", split=None, cfl_margin=0.9, tolerance=1e-12):
    """Freeze an intermediate level and re-solve the head of the interval.

    Solving on the whole interval, taking the level at the split time as
    terminal data, and solving again on the head must reproduce the original
    levels: the backward recursion repeats the same arithmetic on the same
    numbers, so the residual is exactly zero.
    """
    full = pde.solve_isaacs_double_obstacle(spec, grid, kind, cfl_margin=cfl_margin)
    if split is None:
        split_level = grid.nt // 2
        split = split_level * grid.dt
    else:
        split_level = grid.time_level(split)
    if not 0 < split_level < grid.nt:
        raise ValueError(f"split {split!r} must be strictly inside the horizon")
    head = pde.solve_isaacs_double_obstacle(
        spec,
        grid,
        kind,
        terminal=full.values[split_level],
        t_hi=split,
        cfl_margin=cfl_margin,
    )
    residual = float(np.max(np.abs(head.values - full.values[: split_level + 1])))
    return DPPReport(
        kind=kind,
        split_time=float(split),
        split_level=split_level,
        max_residual=residual,
        tolerance=tolerance,
        passed=residual <= tolerance,
    )


@dataclasses.dataclass(frozen=True)
class CrosscheckReport:
    """Agreement of the two solver families under frozen controls."""

    controls: tuple
    max_diff: float
    tolerance: float
    inner: tuple
    passed: bool


def fixed_control_crosscheck(spec, grid, controls, cfl_margin=0.9, tolerance=None):
    """Freeze one control pair and solve the resulting linear problem twice.

    With singleton control grids both reductions collapse, and the
    finite-difference march and the lattice recursion approximate the same
    reflected solution through different spatial schemes (upwind differences
    against exact-mean transitions).  Agreement is checked at the initial
    time on the inner half of the domain, out of reach of either boundary
    treatment at these horizons.  The default tolerance 5 (dx + dt) at the
    field's own scale matches the schemes' first-order disagreement.
    """
    u, v = controls
    frozen = dataclasses.replace(
        spec,
        controls_i=ControlGrid(spec.controls_i.label, (u,)),
        controls_ii=ControlGrid(spec.controls_ii.label, (v,)),
    )
    field = pde.solve_isaacs_double_obstacle(
        frozen, grid, "lower", cfl_margin=cfl_margin
    )
    lattice = forwardsim.build_lattice(frozen, 0.0, grid)
    sol = rbsde.solve_backward(frozen, lattice, (u, v), mode="two_barrier")
    y0 = sol.initial_values()
    w0 = field.initial()
    i0, i1 = grid.nx // 4, grid.nx - grid.nx // 4
    max_diff = float(np.max(np.abs(y0[i0:i1] - w0[i0:i1])))
    if tolerance is None:
        spread = float(np.max(w0) - np.min(w0))
        tolerance = 5.0 * (grid.dx + grid.dt) * max(1.0, spread)
    return CrosscheckReport(
        controls=(u, v),
        max_diff=max_diff,
        tolerance=tolerance,
        inner=(i0, i1),
        passed=max_diff <= tolerance,
    )
