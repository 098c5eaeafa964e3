"""Finite-difference solvers for double-obstacle Isaacs equations.

The terminal-value problem on [0, T] x [x_min, x_max] is

    -dW/dt - H(t, x, W, DW, D2W) = 0   between the obstacles,
    lower(t, x) <= W(t, x) <= upper(t, x),

with W(T, .) the terminal payoff and H either the lower Hamiltonian
(max over u of min over v) or the upper one (min over v of max over u).

The scheme marches backward with an explicit monotone step.  Spatial
derivatives use ghost nodes of zero curvature at both ends (W[-1] =
2 W[0] - W[1]), central second differences, upwind first differences
split on the sign of the drift, and a central slope for the z argument
of the driver:

    step(t, x) = W_next + dt * ( H reduction over the control grids
                                 - m * max(W_next - upper, 0)
                                 + n * max(lower - W_next, 0) )

followed by clamping to the obstacles that the variant keeps hard.  The
clamp makes each level satisfy its obstacle constraints exactly and the
discrete complementarity residual vanish identically, which is what
`viscosity_residual` measures.

Monotonicity of the explicit step requires roughly

    dt * ( max sigma^2 / dx^2 + max |b| / dx
           + mu * (1 + max |sigma| / dx) + penalties ) <= 1

with mu the (y, z)-Lipschitz constant of the driver.  Every solve tracks
that number level by level and refuses to run past `cfl_margin`.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .model import sigma_rows
from .rbsde import PenalizationSchedule


class CflError(ValueError):
    """The explicit step would not be monotone on this grid."""


@dataclasses.dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on [0, horizon] x [x_min, x_max].

    nx counts nodes (so dx = (x_max - x_min) / (nx - 1)), nt counts time
    steps (so there are nt + 1 levels and dt = horizon / nt).
    """

    x_min: float
    x_max: float
    nx: int
    nt: int
    horizon: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.nx < 3:
            raise ValueError("need at least 3 space nodes for the stencil")
        if self.nt < 1:
            raise ValueError("need at least one time step")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self):
        return self.horizon / self.nt

    def space_nodes(self):
        return np.linspace(self.x_min, self.x_max, self.nx)

    def time_nodes(self):
        return np.linspace(0.0, self.horizon, self.nt + 1)

    def time_level(self, t, tol=1e-9):
        """Index of the time level at t, which must sit on the grid."""
        j = int(round(t / self.dt))
        if not 0 <= j <= self.nt or abs(j * self.dt - t) > tol * max(1.0, self.horizon):
            raise ValueError(
                f"t={t!r} is not a grid time level (dt={self.dt!r}, nt={self.nt})"
            )
        return j


@dataclasses.dataclass(frozen=True)
class ValueField:
    """Backward solution levels on a space-time grid.

    values[j] approximates W(times[j], nodes); values[-1] is the terminal
    row.  `label` records the Hamiltonian reduction and variant, `penalty`
    the (upper, lower) penalty weights, `cfl_number` the worst stability
    number met while marching.
    """

    label: str
    times: np.ndarray
    nodes: np.ndarray
    values: np.ndarray
    cfl_number: float
    penalty: tuple = (0.0, 0.0)

    def initial(self):
        return self.values[0]

    def interpolate(self, t, x):
        """Bilinear interpolation, for plotting and spot checks."""
        tt = np.clip(t, self.times[0], self.times[-1])
        xx = np.clip(x, self.nodes[0], self.nodes[-1])
        dt = self.times[1] - self.times[0]
        dx = self.nodes[1] - self.nodes[0]
        jt = min(int((tt - self.times[0]) / dt), len(self.times) - 2)
        jx = min(int((xx - self.nodes[0]) / dx), len(self.nodes) - 2)
        at = (tt - self.times[jt]) / dt
        ax = (xx - self.nodes[jx]) / dx
        v = self.values
        return float(
            (1 - at) * ((1 - ax) * v[jt, jx] + ax * v[jt, jx + 1])
            + at * ((1 - ax) * v[jt + 1, jx] + ax * v[jt + 1, jx + 1])
        )


def _derivatives(w, dx):
    # ghost nodes with zero curvature: We[-1] = 2 W[0] - W[1]
    we = np.concatenate(([2.0 * w[0] - w[1]], w, [2.0 * w[-1] - w[-2]]))
    d2 = (we[:-2] - 2.0 * w + we[2:]) / (dx * dx)
    dplus = (we[2:] - w) / dx
    dminus = (w - we[:-2]) / dx
    dcentral = (we[2:] - we[:-2]) / (2.0 * dx)
    return d2, dplus, dminus, dcentral


def _hamiltonian_tables(spec, t, x, w_next, dx):
    """Integrand values for every control pair, plus stability maxima.

    Returns (tables of shape (nu, nv, nx), max sigma^2, max |b|, max |sigma|).
    """
    co = spec.coefficients
    d2, dplus, dminus, dcentral = _derivatives(w_next, dx)
    nu, nv = len(spec.controls_i), len(spec.controls_ii)
    tables = np.empty((nu, nv, x.shape[0]))
    max_s2 = 0.0
    max_b = 0.0
    max_smag = 0.0
    for iu, u in enumerate(spec.controls_i.points):
        for iv, v in enumerate(spec.controls_ii.points):
            b = np.broadcast_to(np.asarray(co.b(t, x, u, v), dtype=float), x.shape)
            rows = sigma_rows(co, t, x, u, v, spec.noise_dim)
            s2 = np.einsum("ij,ij->i", rows, rows)
            z = dcentral[:, None] * rows
            z_arg = z[:, 0] if spec.noise_dim == 1 else z
            fval = np.broadcast_to(
                np.asarray(co.driver(t, x, w_next, z_arg, u, v), dtype=float), x.shape
            )
            bp = np.maximum(b, 0.0)
            bm = np.minimum(b, 0.0)
            tables[iu, iv] = 0.5 * s2 * d2 + bp * dplus + bm * dminus + fval
            max_s2 = max(max_s2, float(np.max(s2)))
            max_b = max(max_b, float(np.max(np.abs(b))))
            max_smag = max(max_smag, float(np.max(np.abs(rows))))
    if not np.all(np.isfinite(tables)):
        raise ValueError(f"nonfinite Hamiltonian integrand at t={t}")
    return tables, max_s2, max_b, max_smag


def _reduce(tables, kind):
    if kind == "lower":
        return np.max(np.min(tables, axis=1), axis=0)
    if kind == "upper":
        return np.min(np.max(tables, axis=0), axis=0)
    raise ValueError(f"kind must be 'lower' or 'upper', got {kind!r}")


def cfl_number(spec, grid, penalty=0.0, time_samples=5):
    """Advisory worst-case stability number for the explicit step.

    Solvers re-measure this level by level; use this to size a grid before
    committing to a long march.
    """
    x = grid.space_nodes()
    worst = 0.0
    zeros = np.zeros_like(x)
    for t in np.linspace(0.0, grid.horizon, time_samples):
        _, max_s2, max_b, max_smag = _hamiltonian_tables(
            spec, float(t), x, zeros, grid.dx
        )
        mu = spec.coefficients.driver_lipschitz
        number = grid.dt * (
            max_s2 / grid.dx**2
            + max_b / grid.dx
            + mu * (1.0 + max_smag / grid.dx)
            + penalty
        )
        worst = max(worst, number)
    return worst


def _check_cfl(number, t, dt, cfl_margin):
    if number > cfl_margin:
        raise CflError(
            f"stability number {number:.4g} exceeds margin {cfl_margin} at"
            f" t={t:.6g}; largest admissible dt is {cfl_margin * dt / number:.6g}"
        )


def _obstacle_rows(co, t, x):
    lo = np.broadcast_to(np.asarray(co.lower(t, x), dtype=float), x.shape)
    up = np.broadcast_to(np.asarray(co.upper(t, x), dtype=float), x.shape)
    return lo, up


def _terminal_row(spec, grid, terminal, j_hi, clamp_lower, clamp_upper, tol=1e-9):
    x = grid.space_nodes()
    t_hi = j_hi * grid.dt
    if terminal is None:
        row = np.broadcast_to(
            np.asarray(spec.coefficients.terminal(x), dtype=float), x.shape
        ).astype(float)
    else:
        row = np.asarray(terminal, dtype=float).copy()
        if row.shape != x.shape:
            raise ValueError(
                f"terminal row has shape {row.shape}, grid has {x.shape}"
            )
    lo, up = _obstacle_rows(spec.coefficients, t_hi, x)
    if clamp_lower and np.any(row < lo - tol):
        raise ValueError(f"terminal row dips below the lower obstacle at t={t_hi:.6g}")
    if clamp_upper and np.any(row > up + tol):
        raise ValueError(f"terminal row exceeds the upper obstacle at t={t_hi:.6g}")
    return row


def _march(
    spec,
    grid,
    kind,
    clamp_lower,
    clamp_upper,
    pen_upper,
    pen_lower,
    terminal,
    t_hi,
    cfl_margin,
    label,
):
    if spec.state_dim != 1:
        raise ValueError("finite-difference solvers cover scalar state only")
    j_hi = grid.nt if t_hi is None else grid.time_level(t_hi)
    if j_hi == 0:
        raise ValueError("t_hi = 0 leaves nothing to solve")
    x = grid.space_nodes()
    dx, dt = grid.dx, grid.dt
    co = spec.coefficients
    mu = co.driver_lipschitz

    values = np.empty((j_hi + 1, grid.nx))
    values[j_hi] = _terminal_row(spec, grid, terminal, j_hi, clamp_lower, clamp_upper)
    worst = 0.0
    for j in range(j_hi - 1, -1, -1):
        t = j * dt
        w_next = values[j + 1]
        tables, max_s2, max_b, max_smag = _hamiltonian_tables(spec, t, x, w_next, dx)
        number = dt * (
            max_s2 / dx**2
            + max_b / dx
            + mu * (1.0 + max_smag / dx)
            + pen_upper
            + pen_lower
        )
        _check_cfl(number, t, dt, cfl_margin)
        worst = max(worst, number)
        h = _reduce(tables, kind)
        lo, up = _obstacle_rows(co, t, x)
        if pen_upper > 0.0:
            h = h - pen_upper * np.maximum(w_next - up, 0.0)
        if pen_lower > 0.0:
            h = h + pen_lower * np.maximum(lo - w_next, 0.0)
        row = w_next + dt * h
        if clamp_lower:
            row = np.maximum(row, lo)
        if clamp_upper:
            row = np.minimum(row, up)
        values[j] = row

    return ValueField(
        label=label,
        times=grid.time_nodes()[: j_hi + 1],
        nodes=x,
        values=values,
        cfl_number=worst,
        penalty=(pen_upper, pen_lower),
    )


def solve_isaacs_double_obstacle(
    spec, grid, kind="lower", terminal=None, t_hi=None, cfl_margin=0.9
):
    """Both obstacles hard; `kind` picks the Hamiltonian reduction.

    `terminal` overrides the payoff with values on the grid nodes, taken at
    time `t_hi` (a grid level, default the horizon); it must sit between the
    obstacles there.  Returns a ValueField over [0, t_hi].
    """
    return _march(
        spec,
        grid,
        kind,
        clamp_lower=True,
        clamp_upper=True,
        pen_upper=0.0,
        pen_lower=0.0,
        terminal=terminal,
        t_hi=t_hi,
        cfl_margin=cfl_margin,
        label=kind,
    )


PENALTY_KINDS = ("one_barrier_lower", "one_barrier_upper", "free")


def solve_isaacs_penalized(
    spec,
    grid,
    kind="lower",
    penalty_kind="free",
    penalty=(0.0, 0.0),
    terminal=None,
    t_hi=None,
    cfl_margin=0.9,
):
    """Penalized variants of the double-obstacle solve.

    one_barrier_lower keeps the lower obstacle hard and penalizes the upper
    one with weight m (approximates the two-obstacle field from above as m
    grows); one_barrier_upper is the mirror image (from below); free drops
    both clamps and takes a penalty pair (m, n) for (upper, lower).
    """
    if penalty_kind == "one_barrier_lower":
        m = float(penalty)
        if m < 0:
            raise ValueError("penalty must be nonnegative")
        pen_upper, pen_lower = m, 0.0
        clamp_lower, clamp_upper = True, False
    elif penalty_kind == "one_barrier_upper":
        m = float(penalty)
        if m < 0:
            raise ValueError("penalty must be nonnegative")
        pen_upper, pen_lower = 0.0, m
        clamp_lower, clamp_upper = False, True
    elif penalty_kind == "free":
        try:
            m, n = penalty
        except TypeError:
            raise ValueError("free penalization takes a (upper, lower) penalty pair")
        if m < 0 or n < 0:
            raise ValueError("penalties must be nonnegative")
        pen_upper, pen_lower = float(m), float(n)
        clamp_lower = clamp_upper = False
    else:
        raise ValueError(
            f"penalty_kind must be one of {PENALTY_KINDS}, got {penalty_kind!r}"
        )
    return _march(
        spec,
        grid,
        kind,
        clamp_lower=clamp_lower,
        clamp_upper=clamp_upper,
        pen_upper=pen_upper,
        pen_lower=pen_lower,
        terminal=terminal,
        t_hi=t_hi,
        cfl_margin=cfl_margin,
        label=f"{kind}_{penalty_kind}",
    )


@dataclasses.dataclass(frozen=True)
class ConvergenceReport:
    """Outcome of a penalization sweep against the two-obstacle field.

    For each level m the sweep solves the approximation from above (lower
    obstacle hard, upper penalized) and from below (mirror image).  All
    violations are worst-case over nodes, levels and sweep stages; a healthy
    sweep has them at roundoff while the two-sided gap shrinks.
    """

    kind: str
    levels: tuple
    gap_above: tuple
    gap_below: tuple
    two_sided_gap: tuple
    monotone_violation_above: float
    monotone_violation_below: float
    sandwich_violation: float
    diagonal_violation: float
    reference: ValueField
    final_above: ValueField
    final_below: ValueField

    @property
    def gap_ratio(self):
        first, last = self.two_sided_gap[0], self.two_sided_gap[-1]
        if first == 0.0:
            return 0.0 if last == 0.0 else math.inf
        return last / first


def run_penalization_sweep(spec, grid, schedule, kind="lower", cfl_margin=0.9):
    """March the penalized approximations through a schedule of weights.

    Checks, level by level: the approximation from above decreases, the one
    from below increases, both stay on the correct side of the two-obstacle
    field, and the two-sided gap between them never widens.
    """
    if not isinstance(schedule, PenalizationSchedule):
        schedule = PenalizationSchedule(tuple(schedule))
    reference = solve_isaacs_double_obstacle(spec, grid, kind, cfl_margin=cfl_margin)
    gap_above = []
    gap_below = []
    two_sided = []
    mono_above = -math.inf
    mono_below = -math.inf
    sandwich = -math.inf
    diagonal = -math.inf
    prev_above = prev_below = None
    above = below = None
    for m in schedule:
        above = solve_isaacs_penalized(
            spec, grid, kind, "one_barrier_lower", m, cfl_margin=cfl_margin
        )
        below = solve_isaacs_penalized(
            spec, grid, kind, "one_barrier_upper", m, cfl_margin=cfl_margin
        )
        gap_above.append(float(np.max(np.abs(above.values - reference.values))))
        gap_below.append(float(np.max(np.abs(below.values - reference.values))))
        two_sided.append(float(np.max(above.values - below.values)))
        sandwich = max(
            sandwich,
            float(np.max(reference.values - above.values)),
            float(np.max(below.values - reference.values)),
        )
        if prev_above is not None:
            mono_above = max(mono_above, float(np.max(above.values - prev_above)))
            mono_below = max(mono_below, float(np.max(prev_below - below.values)))
            diagonal = max(diagonal, two_sided[-1] - two_sided[-2])
        prev_above = above.values
        prev_below = below.values
    return ConvergenceReport(
        kind=kind,
        levels=tuple(schedule.levels),
        gap_above=tuple(gap_above),
        gap_below=tuple(gap_below),
        two_sided_gap=tuple(two_sided),
        monotone_violation_above=mono_above,
        monotone_violation_below=mono_below,
        sandwich_violation=sandwich,
        diagonal_violation=diagonal,
        reference=reference,
        final_above=above,
        final_below=below,
    )


@dataclasses.dataclass(frozen=True)
class ResidualReport:
    """Worst discrete complementarity residual of a double-obstacle field."""

    max_residual: float
    time_index: int
    node_index: int
    tolerance: float
    passed: bool


def viscosity_residual(spec, field, kind=None, tolerance=None):
    """Measure how well a field satisfies the discrete double-obstacle
    equation in complementarity form.

    At every interior level the residual is

        max( min( -(W_next - W)/dt - H(t, W_next), W - lower ), W - upper )

    which vanishes identically for fields produced by the two-obstacle
    solver and grows like (perturbation / dt) for anything else.  `kind`
    defaults to the field's label.  The default tolerance 1e-9 / dt admits
    accumulated roundoff but flags any real perturbation.
    """
    kind = kind or field.label
    if kind not in ("lower", "upper"):
        raise ValueError(
            "residual check covers the two-obstacle fields; got label"
            f" {field.label!r}"
        )
    dt = float(field.times[1] - field.times[0])
    dx = float(field.nodes[1] - field.nodes[0])
    if tolerance is None:
        tolerance = 1e-9 / dt
    x = field.nodes
    worst = -1.0
    where = (0, 0)
    for j in range(len(field.times) - 1):
        t = float(field.times[j])
        w = field.values[j]
        w_next = field.values[j + 1]
        tables, _, _, _ = _hamiltonian_tables(spec, t, x, w_next, dx)
        h = _reduce(tables, kind)
        lo, up = _obstacle_rows(spec.coefficients, t, x)
        resid = np.maximum(np.minimum(-(w_next - w) / dt - h, w - lo), w - up)
        k = int(np.argmax(np.abs(resid)))
        if abs(float(resid[k])) > worst:
            worst = abs(float(resid[k]))
            where = (j, k)
    return ResidualReport(
        max_residual=worst,
        time_index=where[0],
        node_index=where[1],
        tolerance=tolerance,
        passed=worst <= tolerance,
    )
