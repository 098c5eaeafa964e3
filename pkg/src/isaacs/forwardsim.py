"""Forward dynamics: Monte Carlo paths and the recombining trinomial lattice.

Paths use explicit Euler steps

    X_{k+1} = X_k + b(t_k, X_k, u, v) dt + sigma(t_k, X_k, u, v) dW_k

with one counter-based Philox stream per path, keyed (seed, path index).
Path p therefore sees the same noise regardless of how many paths are
requested or how the work is scheduled, which is what makes reruns and
pairwise perturbation studies bit-reproducible.

The lattice (scalar state only) discretizes the same dynamics on the spatial
nodes of a grid.  One step from node x targets the three nodes around
x + round(b dt / dx) dx with probabilities chosen so that the step mean is
exactly x + b dt and the step variance exactly sigma^2 dt:

    nu = b dt / dx,  shift = round(nu),  r = nu - shift
    q  = sigma^2 dt / dx^2 + r^2
    p_up = (q + r) / 2,  p_down = (q - r) / 2,  p_stay = 1 - q

All three probabilities must be nonnegative; q <= 1 caps the time step the
usual way, and q >= |r| fails exactly when the diffusion is too weak to
bridge an off-node drift target (for sigma = 0 the drift must land on a
node).  Node sets widen by the stencil reach every step so that every stored
transition row is a genuine probability vector; no boundary absorption is
ever applied.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

_U64 = (1 << 64) - 1


class LatticeError(ValueError):
    """Lattice transition probabilities cannot be made nonnegative."""


@dataclasses.dataclass(frozen=True)
class ForwardTrajectoryBatch:
    """Euler paths: `states[p, k]` is path p at `times[k]` (scalar state),
    or `states[p, k, :]` for vector state."""

    times: np.ndarray
    states: np.ndarray
    seed: int
    state_dim: int

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def terminal(self):
        return self.states[:, -1]


def _path_increments(seed, n_paths, n_steps, noise_dim, dt):
    out = np.empty((n_paths, n_steps, noise_dim))
    root = math.sqrt(dt)
    for p in range(n_paths):
        bits = np.random.Philox(key=np.array([seed & _U64, p], dtype=np.uint64))
        gen = np.random.Generator(bits)
        out[p] = gen.standard_normal((n_steps, noise_dim)) * root
    return out


def _control_value(control, grid, t, states):
    if control is None:
        return grid.points[0]
    if callable(control):
        return control(t, states)
    return control


def simulate_paths(
    spec,
    t0,
    x0,
    n_paths,
    n_steps,
    seed,
    control_i=None,
    control_ii=None,
):
    """Simulate Euler paths of the controlled state on [t0, horizon].

    Controls may be fixed grid points or callables (t, states) -> point
    applied uniformly across paths; they default to the first point of each
    grid.  For state_dim == 1 the coefficient callables receive the whole
    (n_paths,) state array and must broadcast; for larger state_dim they
    receive (n_paths, state_dim) and must return matching (..., state_dim)
    drifts and (..., state_dim, noise_dim) diffusions.
    """
    if not (0.0 <= t0 < spec.horizon):
        raise ValueError(f"t0 = {t0} outside [0, {spec.horizon})")
    if n_steps < 1 or n_paths < 1:
        raise ValueError("need at least one path and one step")
    n, d = spec.state_dim, spec.noise_dim
    dt = (spec.horizon - t0) / n_steps
    times = t0 + dt * np.arange(n_steps + 1)

    states = np.empty((n_paths, n_steps + 1, n))
    x0 = np.asarray(x0, dtype=float)
    states[:, 0, :] = x0.reshape(1, -1) if x0.ndim <= 1 else x0

    dw = _path_increments(seed, n_paths, n_steps, d, dt)
    co = spec.coefficients
    for k in range(n_steps):
        t = float(times[k])
        x = states[:, k, :]
        x_arg = x[:, 0] if n == 1 else x
        u = _control_value(control_i, spec.controls_i, t, x_arg)
        v = _control_value(control_ii, spec.controls_ii, t, x_arg)
        b = np.asarray(co.b(t, x_arg, u, v), dtype=float)
        if n == 1:
            drift = np.broadcast_to(b.reshape(-1, 1) if b.ndim else b, (n_paths, 1))
        else:
            drift = np.broadcast_to(b, (n_paths, n))
        rows = _sigma_rows(co.sigma(t, x_arg, u, v), n_paths, n, d)
        states[:, k + 1, :] = x + drift * dt + np.einsum("pnd,pd->pn", rows, dw[:, k, :])
    if not np.all(np.isfinite(states)):
        raise FloatingPointError("nonfinite state encountered during simulation")
    out = states[:, :, 0] if n == 1 else states
    return ForwardTrajectoryBatch(times=times, states=out, seed=seed, state_dim=n)


def _sigma_rows(raw, n_paths, n, d):
    """Normalize a sigma callable's output to shape (n_paths, n, d)."""
    raw = np.asarray(raw, dtype=float)
    if n == 1:
        if raw.ndim == 0:
            return np.broadcast_to(raw.reshape(1, 1, 1), (n_paths, 1, d))
        if raw.ndim == 1 and raw.shape[0] == n_paths:
            if d != 1:
                raise ValueError(
                    f"sigma returned shape {raw.shape} but noise_dim = {d}"
                )
            return raw.reshape(n_paths, 1, 1)
        if raw.ndim == 1 and raw.shape[0] == d:
            return np.broadcast_to(raw.reshape(1, 1, d), (n_paths, 1, d))
        if raw.ndim == 2 and raw.shape == (n_paths, d):
            return raw.reshape(n_paths, 1, d)
        raise ValueError(f"cannot interpret sigma shape {raw.shape}")
    if raw.shape == (n, d):
        return np.broadcast_to(raw.reshape(1, n, d), (n_paths, n, d))
    if raw.shape == (n_paths, n, d):
        return raw
    raise ValueError(f"cannot interpret sigma shape {raw.shape}")


@dataclasses.dataclass(frozen=True)
class RecombiningLattice:
    """Trinomial lattice over the time levels of a grid (scalar state).

    Step j runs from times[j] to times[j+1].  Node values at step j are
    origin + (first_index[j] + arange(counts[j])) * dx; step 0 coincides
    with the spatial nodes of the grid the lattice was built from, and the
    node set widens with j so every transition row stays a probability
    vector.  transitions[j][(iu, iv)] is a pair (center, probs): row i of
    probs is the (down, stay, up) distribution over next-step local indices
    center[i] - 1, center[i], center[i] + 1.
    """

    times: np.ndarray
    dx: float
    origin: float
    first_index: tuple
    counts: tuple
    transitions: tuple
    control_points: tuple
    mean_error: float
    var_error: float

    @property
    def n_steps(self):
        return len(self.times) - 1

    def node_values(self, step):
        lo = self.first_index[step]
        return self.origin + self.dx * (lo + np.arange(self.counts[step]))

    def transition(self, step, iu, iv):
        return self.transitions[step][(iu, iv)]

    def dense_transition(self, step, iu, iv):
        center, probs = self.transitions[step][(iu, iv)]
        mat = np.zeros((self.counts[step], self.counts[step + 1]))
        rows = np.arange(self.counts[step])
        for off, col in ((-1, 0), (0, 1), (1, 2)):
            mat[rows, center + off] = probs[:, col]
        return mat


def build_lattice(spec, t0, grid, consistency_tol=1e-10):
    """Build the moment-matched trinomial lattice for `spec` on `grid`.

    `grid` supplies x_min, dx, dt, nx, nt and the horizon (any object with
    those attributes works).  t0 must sit on a time level.  Raises
    LatticeError when some transition probability would be below -1e-12,
    reporting the worst (node, u, v) and, when shrinking the step helps,
    the largest admissible dt.
    """
    if spec.state_dim != 1:
        raise ValueError(
            "the lattice implementation covers scalar state only;"
            " higher-dimensional problems need a product construction"
        )
    dt, dx = grid.dt, grid.dx
    s0 = int(round(t0 / dt))
    if abs(s0 * dt - t0) > 1e-9 * max(1.0, abs(t0)) or not 0 <= s0 < grid.nt:
        raise ValueError(f"t0 = {t0} is not a time level of the grid")
    n_steps = grid.nt - s0
    times = t0 + dt * np.arange(n_steps + 1)

    co = spec.coefficients
    pairs = [
        (iu, iv, u, v)
        for iu, u in enumerate(spec.controls_i.points)
        for iv, v in enumerate(spec.controls_ii.points)
    ]

    first_index = [0]
    counts = [grid.nx]
    transitions = []
    worst_mean = 0.0
    worst_var = 0.0

    for j in range(n_steps):
        t = float(times[j])
        lo = first_index[j]
        count = counts[j]
        x = grid.x_min + dx * (lo + np.arange(count))
        step_rows = {}
        reach = 1
        for iu, iv, u, v in pairs:
            b = np.broadcast_to(np.asarray(co.b(t, x, u, v), dtype=float), x.shape)
            s2 = _scalar_sigma_sq(co.sigma(t, x, u, v), x.shape, spec.noise_dim)
            nu = b * (dt / dx)
            shift = np.rint(nu).astype(np.int64)
            resid = nu - shift
            q = s2 * dt / (dx * dx) + resid ** 2
            p_up = 0.5 * (q + resid)
            p_down = 0.5 * (q - resid)
            p_stay = 1.0 - p_up - p_down
            probs = np.stack([p_down, p_stay, p_up], axis=1)
            low = float(probs.min())
            if low < -1e-12:
                i = int(np.unravel_index(np.argmin(probs), probs.shape)[0])
                hints = []
                if q[i] > 1.0:
                    dt_max = (1.0 - resid[i] ** 2) * dx * dx / s2[i]
                    hints.append(f"largest admissible dt is {dt_max:.6g}")
                if q[i] < abs(resid[i]):
                    if s2[i] == 0.0:
                        hints.append(
                            "sigma vanishes here, so b*dt/dx must be an integer"
                        )
                    else:
                        hints.append(
                            f"need sigma^2*dt/dx^2 >= {abs(resid[i]) * (1 - abs(resid[i])):.6g}"
                        )
                raise LatticeError(
                    f"negative transition probability {low:.3e} at node"
                    f" x={x[i]:.6g}, t={t:.6g}, controls ({u!r}, {v!r})"
                    + "".join("; " + h for h in hints)
                )
            np.clip(probs, 0.0, 1.0, out=probs)
            probs[:, 1] = 1.0 - probs[:, 0] - probs[:, 2]

            # exact local consistency, checked not assumed
            targets = x[:, None] + dx * (shift[:, None] + np.array([-1.0, 0.0, 1.0]))
            mean = np.einsum("ik,ik->i", probs, targets)
            var = np.einsum("ik,ik->i", probs, (targets - mean[:, None]) ** 2)
            worst_mean = max(worst_mean, float(np.max(np.abs(mean - (x + b * dt)))))
            worst_var = max(worst_var, float(np.max(np.abs(var - s2 * dt))))

            step_rows[(iu, iv)] = (shift, probs)
            reach = max(reach, int(np.max(np.abs(shift))) + 1)

        next_lo = lo - reach
        first_index.append(next_lo)
        counts.append(count + 2 * reach)
        # convert stored shifts to local center indices in the next step
        for key, (shift, probs) in step_rows.items():
            center = (lo + np.arange(count) + shift) - next_lo
            step_rows[key] = (center.astype(np.int64), probs)
        transitions.append(step_rows)

    if worst_mean > consistency_tol or worst_var > consistency_tol:
        raise LatticeError(
            f"moment matching degraded: mean error {worst_mean:.3e},"
            f" variance error {worst_var:.3e} exceed {consistency_tol:.1e}"
        )

    return RecombiningLattice(
        times=times,
        dx=dx,
        origin=grid.x_min,
        first_index=tuple(first_index),
        counts=tuple(counts),
        transitions=tuple(transitions),
        control_points=(spec.controls_i.points, spec.controls_ii.points),
        mean_error=worst_mean,
        var_error=worst_var,
    )


def _scalar_sigma_sq(raw, shape, noise_dim):
    """Squared diffusion magnitude per node for scalar state."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 0:
        if noise_dim != 1:
            raise ValueError(
                f"sigma returned a scalar but noise_dim = {noise_dim};"
                " return the full row instead"
            )
        return np.broadcast_to(raw ** 2, shape).copy()
    if raw.ndim == 1 and raw.shape == shape:
        if noise_dim != 1:
            raise ValueError(
                f"sigma returned shape {raw.shape} but noise_dim = {noise_dim}"
            )
        return raw ** 2
    if raw.ndim == 1 and raw.shape[0] == noise_dim:
        return np.broadcast_to(np.sum(np.square(raw)), shape).copy()
    if raw.ndim == 2 and raw.shape == shape + (noise_dim,):
        return np.sum(np.square(raw), axis=1)
    raise ValueError(f"cannot interpret sigma shape {raw.shape}")


@dataclasses.dataclass(frozen=True)
class ForwardEstimateReport:
    """Stability of paths under initial-state perturbation, shared noise.

    sup_ratios[i] = E[sup_k |X - X'|^2] / delta_i^2 and terminal_ratios the
    same at the final time, for offsets delta_i.  For Lipschitz dynamics the
    sup ratio is bounded and trend-free in delta (it includes k = 0, so it
    is >= 1 and equals 1 for contracting flows); `slope` is the fitted
    log-log trend, near 0 when the square-distance scaling holds.
    """

    offsets: np.ndarray
    sup_ratios: np.ndarray
    terminal_ratios: np.ndarray
    slope: float
    slope_tolerance: float
    passed: bool


def check_forward_estimates(
    spec,
    t0=0.0,
    base_state=0.0,
    offsets=(1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1),
    n_paths=2000,
    n_steps=64,
    seed=0,
    control_i=None,
    control_ii=None,
    slope_tolerance=0.2,
):
    """Perturb the initial state and measure E[sup |dX|^2] / |dx0|^2.

    Both members of each pair share the same per-path noise (same seed), so
    the ratio isolates the flow's Lipschitz dependence on the start point.
    Passes when ratios are finite and their log-log slope against the offset
    is within slope_tolerance of 0.
    """
    offsets = np.asarray(offsets, dtype=float)
    sup_ratios = np.empty_like(offsets)
    term_ratios = np.empty_like(offsets)
    for i, delta in enumerate(offsets):
        a = simulate_paths(
            spec, t0, base_state, n_paths, n_steps, seed, control_i, control_ii
        )
        shifted = (
            base_state + delta
            if spec.state_dim == 1
            else np.asarray(base_state, dtype=float) + np.eye(spec.state_dim)[0] * delta
        )
        b = simulate_paths(
            spec, t0, shifted, n_paths, n_steps, seed, control_i, control_ii
        )
        diff = a.states - b.states
        if spec.state_dim > 1:
            dist = np.sqrt(np.sum(np.square(diff), axis=2))
        else:
            dist = np.abs(diff)
        sup_ratios[i] = float(np.mean(np.max(dist, axis=1) ** 2)) / delta ** 2
        term_ratios[i] = float(np.mean(dist[:, -1] ** 2)) / delta ** 2
    finite = bool(np.all(np.isfinite(sup_ratios)) and np.all(sup_ratios > 0))
    if finite:
        slope = float(np.polyfit(np.log(offsets), np.log(sup_ratios), 1)[0])
    else:
        slope = math.inf
    return ForwardEstimateReport(
        offsets=offsets,
        sup_ratios=sup_ratios,
        terminal_ratios=term_ratios,
        slope=slope,
        slope_tolerance=slope_tolerance,
        passed=finite and abs(slope) <= slope_tolerance,
    )
