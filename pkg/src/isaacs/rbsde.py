"""Backward solvers on the lattice: reflected, penalized and plain flavors.

One explicit backward step from level j+1 to level j at a node x reads

    ey  = E[Y_{j+1}]                      (lattice expectation)
    z   = slope * sigma,  slope = Cov(Y_{j+1}, X_{j+1}) / Var(X_{j+1})
    yt  = ey + dt * ( f(t_j, x, ey, z, u, v)
                      - m * max(ey - upper(t_j, x), 0)      [upper penalty]
                      + n * max(lower(t_j, x) - ey, 0) )    [lower penalty]

followed by the mode's projection:

    plain              no penalty, no projection
    penalized          penalties (m, n), no projection
    one_barrier_lower  upper penalty m, then Y = max(yt, lower)
    one_barrier_upper  lower penalty m, then Y = min(yt, upper)
    two_barrier        no penalty, Y = min(max(yt, lower), upper)

Projection residuals are the reflection increments,

    dK+ = max(lower - yt, 0),   dK- = max(yt - upper, 0),

so dK+ > 0 forces Y = lower exactly and dK- > 0 forces Y = upper exactly.
That makes the discrete Skorokhod conditions identities rather than
approximations: dK+ * dK- = 0 (the obstacles are strictly separated) and
(Y - lower) * dK+ = (upper - Y) * dK- = 0, both node by node and in the
occupation-weighted sums reported on the solution.

Stability of the explicit step requires dt * (driver_lipschitz + max(m, n))
< 1; the solver refuses to run outside that region.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .model import sigma_rows

MODES = ("plain", "penalized", "one_barrier_lower", "one_barrier_upper", "two_barrier")


@dataclasses.dataclass(frozen=True)
class PenalizationSchedule:
    """Strictly increasing positive penalty levels."""

    levels: tuple

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ValueError("empty penalty schedule")
        prev = 0.0
        for m in self.levels:
            if not (m > prev and math.isfinite(m)):
                raise ValueError(
                    f"penalty levels must be strictly increasing and positive,"
                    f" got {self.levels}"
                )
            prev = m

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


@dataclasses.dataclass(frozen=True)
class RBSDESolution:
    """Backward solution on lattice steps start_step .. end_step.

    Lists are indexed relative to start_step; entry j lives on the node set
    of lattice step start_step + j.  dk_plus[j] / dk_minus[j] are the
    reflection increments spent on [t_j, t_{j+1}] as functions of the step-j
    node; the cumulative reflection along a path is their sum along that
    path and is not a function of the current node, so the solution carries
    it in expectation: k_plus_mean[j] = E[K+ at t_j] under the occupation
    law of the chain started at the root node, zero at start_step and
    nondecreasing.  occupation[j] is that forward law; the flatness sums and
    the complementarity maximum are occupation-weighted.
    """

    mode: str
    penalty: tuple
    controls: tuple
    start_step: int
    end_step: int
    times: np.ndarray
    y: list
    z: list
    dk_plus: list
    dk_minus: list
    k_plus_mean: np.ndarray
    k_minus_mean: np.ndarray
    occupation: list
    root_index: int
    flatness_lower: float
    flatness_upper: float
    exclusion_max: float

    def initial_values(self):
        return self.y[0]

    def step_values(self, step):
        return self.y[step - self.start_step]


def _resolve_controls(spec, controls, n_steps):
    """Normalize controls to per-step (iu, iv) index pairs."""

    def index_pair(pair):
        u, v = pair
        try:
            iu = spec.controls_i.points.index(u)
        except ValueError:
            raise ValueError(f"control {u!r} is not on grid {spec.controls_i.label!r}")
        try:
            iv = spec.controls_ii.points.index(v)
        except ValueError:
            raise ValueError(f"control {v!r} is not on grid {spec.controls_ii.label!r}")
        return iu, iv

    if (
        isinstance(controls, tuple)
        and len(controls) == 2
        and not isinstance(controls[0], (list, np.ndarray))
        and not (isinstance(controls[0], tuple) and isinstance(controls[0][0], tuple))
    ):
        return (index_pair(controls),) * n_steps
    seq = tuple(index_pair(p) for p in controls)
    if len(seq) != n_steps:
        raise ValueError(
            f"per-step controls have length {len(seq)}, lattice has {n_steps} steps"
        )
    return seq


def _normalize_penalty(mode, penalty):
    """Return (upper penalty m, lower penalty n) for the given mode."""
    if mode == "plain" or mode == "two_barrier":
        if penalty not in (None, 0, 0.0, (0.0, 0.0)):
            raise ValueError(f"mode {mode!r} takes no penalty, got {penalty!r}")
        return 0.0, 0.0
    if mode == "one_barrier_lower":
        m = float(penalty if penalty is not None else 0.0)
        if m < 0:
            raise ValueError("penalty must be nonnegative")
        return m, 0.0
    if mode == "one_barrier_upper":
        m = float(penalty if penalty is not None else 0.0)
        if m < 0:
            raise ValueError("penalty must be nonnegative")
        return 0.0, m
    if mode == "penalized":
        try:
            m, n = penalty
        except TypeError:
            raise ValueError("penalized mode takes a (m, n) penalty pair")
        if m < 0 or n < 0:
            raise ValueError("penalties must be nonnegative")
        return float(m), float(n)
    raise ValueError(f"unknown mode {mode!r}; choose one of {MODES}")


def _expectation(y_next, center, probs):
    return (
        probs[:, 0] * y_next[center - 1]
        + probs[:, 1] * y_next[center]
        + probs[:, 2] * y_next[center + 1]
    )


def solve_backward(
    spec,
    lattice,
    controls,
    mode="two_barrier",
    penalty=None,
    terminal=None,
    start_step=0,
    end_step=None,
    root_index=None,
    sandwich_tol=1e-9,
):
    """Run the explicit backward recursion described in the module docstring.

    `controls` is a fixed (u, v) pair or a per-step sequence of pairs.
    `terminal` overrides the terminal payoff with given values on the node
    set of `end_step`; in barrier modes it must already sit inside the
    obstacles there.  Returns an RBSDESolution.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose one of {MODES}")
    pen_upper, pen_lower = _normalize_penalty(mode, penalty)
    n_total = lattice.n_steps
    if end_step is None:
        end_step = n_total
    if not 0 <= start_step < end_step <= n_total:
        raise ValueError(
            f"bad step range [{start_step}, {end_step}] for a {n_total}-step lattice"
        )
    dt = float(lattice.times[1] - lattice.times[0])
    co = spec.coefficients
    mu = co.driver_lipschitz
    slope_budget = dt * (mu + max(pen_upper, pen_lower))
    if slope_budget >= 1.0:
        raise ValueError(
            f"explicit step not contracting: dt*(driver_lipschitz + penalty)"
            f" = {slope_budget:.6g} >= 1; need dt < "
            f"{1.0 / (mu + max(pen_upper, pen_lower)):.6g}"
        )

    pairs = _resolve_controls(spec, controls, n_total)
    x_end = lattice.node_values(end_step)
    t_end = float(lattice.times[end_step])
    if terminal is None:
        y_cur = np.asarray(co.terminal(x_end), dtype=float) + np.zeros_like(x_end)
    else:
        y_cur = np.asarray(terminal, dtype=float).copy()
        if y_cur.shape != x_end.shape:
            raise ValueError(
                f"terminal values have shape {y_cur.shape}, node set has {x_end.shape}"
            )
        if mode in ("one_barrier_lower", "one_barrier_upper", "two_barrier"):
            lo_end = np.asarray(co.lower(t_end, x_end), dtype=float)
            up_end = np.asarray(co.upper(t_end, x_end), dtype=float)
            if mode != "one_barrier_upper" and np.any(y_cur < lo_end - sandwich_tol):
                raise ValueError("terminal values dip below the lower obstacle")
            if mode != "one_barrier_lower" and np.any(y_cur > up_end + sandwich_tol):
                raise ValueError("terminal values exceed the upper obstacle")

    n_levels = end_step - start_step + 1
    y_list = [None] * n_levels
    z_list = [None] * n_levels
    dkp_list = [None] * n_levels
    dkm_list = [None] * n_levels
    y_list[-1] = y_cur
    z_list[-1] = np.zeros(y_cur.shape + ((spec.noise_dim,) if spec.noise_dim > 1 else ()))
    dkp_list[-1] = np.zeros_like(y_cur)
    dkm_list[-1] = np.zeros_like(y_cur)

    clamp_lower = mode in ("one_barrier_lower", "two_barrier")
    clamp_upper = mode in ("one_barrier_upper", "two_barrier")
    upoints, vpoints = lattice.control_points

    for j in range(end_step - 1, start_step - 1, -1):
        iu, iv = pairs[j]
        u, v = upoints[iu], vpoints[iv]
        t = float(lattice.times[j])
        x = lattice.node_values(j)
        x_next = lattice.node_values(j + 1)
        center, probs = lattice.transition(j, iu, iv)

        ey = _expectation(y_cur, center, probs)
        targets = np.stack([x_next[center - 1], x_next[center], x_next[center + 1]], axis=1)
        mean_x = np.einsum("ik,ik->i", probs, targets)
        var_x = np.einsum("ik,ik->i", probs, (targets - mean_x[:, None]) ** 2)
        cov = np.einsum(
            "ik,ik->i",
            probs,
            np.stack([y_cur[center - 1], y_cur[center], y_cur[center + 1]], axis=1)
            * (targets - mean_x[:, None]),
        )
        slope = np.where(var_x > 0.0, cov / np.where(var_x > 0.0, var_x, 1.0), 0.0)
        rows = sigma_rows(co, t, x, u, v, spec.noise_dim)
        z = rows * slope[:, None]
        z_arg = z[:, 0] if spec.noise_dim == 1 else z

        fval = np.broadcast_to(
            np.asarray(co.driver(t, x, ey, z_arg, u, v), dtype=float), x.shape
        )
        drive = fval
        lo = np.broadcast_to(np.asarray(co.lower(t, x), dtype=float), x.shape)
        up = np.broadcast_to(np.asarray(co.upper(t, x), dtype=float), x.shape)
        if pen_upper > 0.0:
            drive = drive - pen_upper * np.maximum(ey - up, 0.0)
        if pen_lower > 0.0:
            drive = drive + pen_lower * np.maximum(lo - ey, 0.0)

        y_tilde = ey + dt * drive
        dkp = np.maximum(lo - y_tilde, 0.0) if clamp_lower else np.zeros_like(y_tilde)
        dkm = np.maximum(y_tilde - up, 0.0) if clamp_upper else np.zeros_like(y_tilde)
        y_new = y_tilde
        if clamp_lower:
            y_new = np.maximum(y_new, lo)
        if clamp_upper:
            y_new = np.minimum(y_new, up)

        k = j - start_step
        y_list[k] = y_new
        z_list[k] = z_arg if spec.noise_dim == 1 else z
        dkp_list[k] = dkp
        dkm_list[k] = dkm
        y_cur = y_new

    # forward occupation from the root, mean cumulative reflection, flatness
    counts = [lattice.counts[s] for s in range(start_step, end_step + 1)]
    if root_index is None:
        root_index = counts[0] // 2
    occ = [np.zeros(c) for c in counts]
    occ[0][root_index] = 1.0
    kp_mean = np.zeros(n_levels)
    km_mean = np.zeros(n_levels)
    flat_lo = 0.0
    flat_up = 0.0
    excl = 0.0
    for j in range(start_step, end_step):
        k = j - start_step
        iu, iv = pairs[j]
        center, probs = lattice.transition(j, iu, iv)
        w = occ[k]
        nxt = occ[k + 1]
        for off, col in ((-1, 0), (0, 1), (1, 2)):
            np.add.at(nxt, center + off, w * probs[:, col])
        kp_mean[k + 1] = kp_mean[k] + float(np.sum(w * dkp_list[k]))
        km_mean[k + 1] = km_mean[k] + float(np.sum(w * dkm_list[k]))
        x = lattice.node_values(j)
        t = float(lattice.times[j])
        lo = np.broadcast_to(np.asarray(co.lower(t, x), dtype=float), x.shape)
        up = np.broadcast_to(np.asarray(co.upper(t, x), dtype=float), x.shape)
        flat_lo += float(np.sum(w * (y_list[k] - lo) * dkp_list[k]))
        flat_up += float(np.sum(w * (up - y_list[k]) * dkm_list[k]))
        excl = max(excl, float(np.max(dkp_list[k] * dkm_list[k])))

    return RBSDESolution(
        mode=mode,
        penalty=(pen_upper, pen_lower),
        controls=pairs[start_step:end_step],
        start_step=start_step,
        end_step=end_step,
        times=lattice.times[start_step : end_step + 1],
        y=y_list,
        z=z_list,
        dk_plus=dkp_list,
        dk_minus=dkm_list,
        k_plus_mean=kp_mean,
        k_minus_mean=km_mean,
        occupation=occ,
        root_index=root_index,
        flatness_lower=flat_lo,
        flatness_upper=flat_up,
        exclusion_max=excl,
    )


def backward_semigroup(spec, lattice, controls, start_step, end_step, values):
    """Evolve terminal `values` at end_step back to start_step.

    `values` must already sit between the obstacles at end_step; this is the
    one-slab evolution whose concatenation property the dynamic programming
    checks exercise.  Returns the array of values on the start_step nodes.
    """
    sol = solve_backward(
        spec,
        lattice,
        controls,
        mode="two_barrier",
        terminal=values,
        start_step=start_step,
        end_step=end_step,
    )
    return sol.y[0]


@dataclasses.dataclass(frozen=True)
class ComparisonReport:
    """Result of an ordered-data comparison between two problems.

    `conclusive` is False when the sampled ordering hypotheses failed, in
    which case no conclusion is drawn.  Violations are signed maxima; a
    negative or tiny value means the corresponding ordering held.
    """

    conclusive: bool
    hypothesis_detail: str
    equal_barriers: bool
    max_y_violation: float
    max_k_plus_violation: float
    max_k_minus_violation: float
    tolerance: float
    passed: bool


def comparison_check(
    spec_a,
    spec_b,
    lattice,
    controls,
    mode="two_barrier",
    penalty=None,
    samples=64,
    seed=0,
    radius=3.0,
    tolerance=1e-10,
):
    """Check Y^a <= Y^b given ordered data (terminal and driver).

    The ordering hypotheses (terminal_a <= terminal_b, driver_a <= driver_b,
    matching dynamics and ordered obstacles) are sampled first; if they fail
    the report is inconclusive.  With equal obstacles and a two-barrier
    solve the reflection orderings dK-^a <= dK-^b and dK+^a >= dK+^b are
    checked on every step increment as well: the smaller solution is pushed
    down less at the upper obstacle and up more at the lower one.
    """
    rng = np.random.default_rng(seed)
    ca, cb = spec_a.coefficients, spec_b.coefficients
    pairs = list(spec_a.control_pairs())
    slack = 1e-12
    detail = "ok"
    conclusive = True
    equal_barriers = True
    for k in range(samples):
        t = rng.uniform(0.0, spec_a.horizon)
        x = rng.uniform(-radius, radius)
        y = rng.uniform(-radius, radius)
        z = rng.uniform(-radius, radius)
        u, v = pairs[k % len(pairs)]
        if float(ca.terminal(x)) > float(cb.terminal(x)) + slack:
            conclusive, detail = False, f"terminal ordering fails at x={x:.6g}"
            break
        if float(ca.driver(t, x, y, z, u, v)) > float(cb.driver(t, x, y, z, u, v)) + slack:
            conclusive, detail = False, f"driver ordering fails at (t,x)=({t:.4g},{x:.4g})"
            break
        if abs(float(ca.b(t, x, u, v)) - float(cb.b(t, x, u, v))) > slack or np.max(
            np.abs(np.asarray(ca.sigma(t, x, u, v)) - np.asarray(cb.sigma(t, x, u, v)))
        ) > slack:
            conclusive, detail = False, "dynamics differ; solutions share one lattice"
            break
        dlo = float(ca.lower(t, x)) - float(cb.lower(t, x))
        dup = float(ca.upper(t, x)) - float(cb.upper(t, x))
        if dlo > slack or dup > slack:
            conclusive, detail = False, f"obstacle ordering fails at (t,x)=({t:.4g},{x:.4g})"
            break
        if abs(dlo) > slack or abs(dup) > slack:
            equal_barriers = False

    if not conclusive:
        return ComparisonReport(
            conclusive=False,
            hypothesis_detail=detail,
            equal_barriers=False,
            max_y_violation=math.nan,
            max_k_plus_violation=math.nan,
            max_k_minus_violation=math.nan,
            tolerance=tolerance,
            passed=False,
        )

    sol_a = solve_backward(spec_a, lattice, controls, mode=mode, penalty=penalty)
    sol_b = solve_backward(spec_b, lattice, controls, mode=mode, penalty=penalty)
    y_viol = max(
        float(np.max(ya - yb)) for ya, yb in zip(sol_a.y, sol_b.y)
    )
    if equal_barriers and mode == "two_barrier":
        # checked on the per-step increments, which implies the ordering of
        # the cumulative reflection along every path
        km_viol = max(
            float(np.max(da - db)) for da, db in zip(sol_a.dk_minus, sol_b.dk_minus)
        )
        kp_viol = max(
            float(np.max(db - da)) for da, db in zip(sol_a.dk_plus, sol_b.dk_plus)
        )
    else:
        km_viol = -math.inf
        kp_viol = -math.inf
    return ComparisonReport(
        conclusive=True,
        hypothesis_detail="ok",
        equal_barriers=equal_barriers,
        max_y_violation=y_viol,
        max_k_plus_violation=kp_viol,
        max_k_minus_violation=km_viol,
        tolerance=tolerance,
        passed=(y_viol <= tolerance and kp_viol <= tolerance and km_viol <= tolerance),
    )


@dataclasses.dataclass(frozen=True)
class EstimateReport:
    """Implied constants of the a priori bounds, base grid vs refined grid.

    `constants` maps inequality names to LHS/RHS quotients on the base
    lattice, `refined` the same on the refined one, `ratios` their
    refined/base ratios.  Passing means every ratio stays within
    [1/stability_factor, stability_factor]: the quotients behave like
    constants rather than like diverging discretization artifacts.
    """

    constants: dict
    refined: dict
    ratios: dict
    refinement: str
    stability_factor: float
    passed: bool


def _estimate_quantities(spec, lattice, controls, perturbation):
    co = spec.coefficients
    n_steps = lattice.n_steps
    pairs = _resolve_controls(spec, controls, n_steps)
    dt = float(lattice.times[1] - lattice.times[0])
    root = lattice.counts[0] // 2

    sol = solve_backward(spec, lattice, controls, mode="two_barrier")

    def nodes(j):
        return lattice.node_values(j)

    def lower_at(j):
        return np.broadcast_to(
            np.asarray(co.lower(float(lattice.times[j]), nodes(j)), float), nodes(j).shape
        )

    def upper_at(j):
        return np.broadcast_to(
            np.asarray(co.upper(float(lattice.times[j]), nodes(j)), float), nodes(j).shape
        )

    def snell(level_fn):
        cur = level_fn(n_steps)
        for j in range(n_steps - 1, -1, -1):
            center, probs = lattice.transition(j, pairs[j][0], pairs[j][1])
            cur = np.maximum(level_fn(j), _expectation(cur, center, probs))
        return float(cur[root])

    # size bound: Snell(|Y|^2) against terminal, driver-at-zero and obstacles
    lhs_size = snell(lambda j: sol.y[j] ** 2)
    cur = np.asarray(co.terminal(nodes(n_steps)), float) ** 2 + np.zeros(
        lattice.counts[n_steps]
    )
    for j in range(n_steps - 1, -1, -1):
        center, probs = lattice.transition(j, pairs[j][0], pairs[j][1])
        cur = _expectation(cur, center, probs)
    term_sq = float(cur[root])

    def f0_at(j):
        x = nodes(j)
        t = float(lattice.times[j])
        u, v = (
            lattice.control_points[0][pairs[j][0]],
            lattice.control_points[1][pairs[j][1]],
        )
        return np.abs(np.broadcast_to(np.asarray(co.driver(t, x, 0.0, 0.0, u, v), float), x.shape))

    # first and second moments of the path sum S_j = sum_{r>=j} |f0| dt
    s_mean = [None] * (n_steps + 1)
    s_sq = [None] * (n_steps + 1)
    s_mean[n_steps] = np.zeros(lattice.counts[n_steps])
    s_sq[n_steps] = np.zeros(lattice.counts[n_steps])
    for j in range(n_steps - 1, -1, -1):
        center, probs = lattice.transition(j, pairs[j][0], pairs[j][1])
        em = _expectation(s_mean[j + 1], center, probs)
        eq = _expectation(s_sq[j + 1], center, probs)
        g = f0_at(j) * dt
        s_mean[j] = g + em
        s_sq[j] = g * g + 2.0 * g * em + eq
    drive_sq = float(s_sq[0][root])
    snell_lo = snell(lambda j: lower_at(j) ** 2)
    snell_up = snell(lambda j: upper_at(j) ** 2)
    rhs_size = term_sq + drive_sq + snell_lo + snell_up
    const_size = lhs_size / rhs_size if rhs_size > 0 else math.inf

    # initial-state stability: difference quotient of Y at the start level
    y0 = sol.y[0]
    quot = float(np.max(np.abs(np.diff(y0)))) / lattice.dx
    const_state = quot / max(co.lipschitz, 1e-30)

    # data-perturbation bound: shift terminal and driver by eps
    eps = perturbation
    co_b = dataclasses.replace(
        spec.coefficients,
        terminal=lambda x, _f=co.terminal: np.asarray(_f(x), float) + eps,
        driver=lambda t, x, y, z, u, v, _f=co.driver: np.asarray(
            _f(t, x, y, z, u, v), float
        )
        + eps,
        upper=lambda t, x, _f=co.upper: np.asarray(_f(t, x), float) + eps,
    )
    spec_b = dataclasses.replace(spec, coefficients=co_b)
    sol_b = solve_backward(spec_b, lattice, controls, mode="two_barrier")

    lhs_dy = snell(lambda j: (sol.y[j] - sol_b.y[j]) ** 2)
    dz_sq = [None] * (n_steps + 1)
    dz_sq[n_steps] = np.zeros(lattice.counts[n_steps])
    for j in range(n_steps - 1, -1, -1):
        center, probs = lattice.transition(j, pairs[j][0], pairs[j][1])
        dz = np.asarray(sol.z[j], float) - np.asarray(sol_b.z[j], float)
        step = (dz * dz if dz.ndim == 1 else np.sum(dz * dz, axis=1)) * dt
        dz_sq[j] = step + _expectation(dz_sq[j + 1], center, probs)
    lhs_dz = float(dz_sq[0][root])

    dn_mean = [None] * (n_steps + 1)
    dn_sq = [None] * (n_steps + 1)
    dn_mean[n_steps] = np.zeros(lattice.counts[n_steps])
    dn_sq[n_steps] = np.zeros(lattice.counts[n_steps])
    for j in range(n_steps - 1, -1, -1):
        center, probs = lattice.transition(j, pairs[j][0], pairs[j][1])
        em = _expectation(dn_mean[j + 1], center, probs)
        eq = _expectation(dn_sq[j + 1], center, probs)
        delta = (
            sol.dk_plus[j] - sol.dk_minus[j] - sol_b.dk_plus[j] + sol_b.dk_minus[j]
        )
        dn_mean[j] = delta + em
        dn_sq[j] = delta * delta + 2.0 * delta * em + eq
    lhs_dk = float(dn_sq[0][root])

    # the shifted upper obstacle enters through its square root times bounded
    # moments, hence the first-order eps term
    rhs_diff = eps * eps + (spec.horizon * eps) ** 2 + eps
    const_diff = (lhs_dy + lhs_dz + lhs_dk) / rhs_diff

    return {
        "size": const_size,
        "state_lipschitz": const_state,
        "perturbation": const_diff,
    }


@dataclasses.dataclass(frozen=True)
class _GridShim:
    x_min: float
    x_max: float
    nx: int
    nt: int
    dx: float
    dt: float
    horizon: float


def apriori_estimate_check(
    spec,
    grid,
    controls,
    perturbation=0.1,
    stability_factor=2.0,
):
    """Measure the implied constants of the a priori bounds and re-measure
    them on a refined grid.

    Three quotients are formed at the root node: the size bound (running
    square of Y against terminal, driver-at-zero and obstacle data), the
    initial-state Lipschitz quotient of Y against the declared state
    constant, and the data-perturbation bound (joint Y / Z / reflection
    difference against the size of the perturbation).  Running suprema are
    realized as Snell envelopes on the lattice, which the same inequalities
    dominate.  The check passes when refining the grid moves each quotient
    by at most `stability_factor` either way.

    Refinement halves dx; dt is halved when the lattice still admits
    nonnegative probabilities at the finer spacing and quartered otherwise
    (the report records which).
    """
    from . import forwardsim

    base = forwardsim.build_lattice(spec, 0.0, grid)
    constants = _estimate_quantities(spec, base, controls, perturbation)

    def shim(factor_x, factor_t):
        nx = (grid.nx - 1) * factor_x + 1
        nt = grid.nt * factor_t
        return _GridShim(
            x_min=grid.x_min,
            x_max=grid.x_max,
            nx=nx,
            nt=nt,
            dx=(grid.x_max - grid.x_min) / (nx - 1),
            dt=grid.horizon / nt,
            horizon=grid.horizon,
        )

    try:
        fine_grid = shim(2, 2)
        fine = forwardsim.build_lattice(spec, 0.0, fine_grid)
        refinement = "dx/2, dt/2"
    except Exception:
        fine_grid = shim(2, 4)
        fine = forwardsim.build_lattice(spec, 0.0, fine_grid)
        refinement = "dx/2, dt/4"
    refined = _estimate_quantities(spec, fine, controls, perturbation)

    ratios = {}
    stable = True
    for name, val in constants.items():
        ref = refined[name]
        if val == 0.0 and ref == 0.0:
            ratios[name] = 1.0
            continue
        if val <= 0.0 or not math.isfinite(val) or not math.isfinite(ref):
            ratios[name] = math.inf
            stable = False
            continue
        r = ref / val
        ratios[name] = r
        if not (1.0 / stability_factor <= r <= stability_factor):
            stable = False

    return EstimateReport(
        constants=constants,
        refined=refined,
        ratios=ratios,
        refinement=refinement,
        stability_factor=stability_factor,
        passed=stable,
    )
