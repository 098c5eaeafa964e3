"""Problem data for two-player zero-sum differential games with obstacles.

A problem couples controlled state dynamics

    dX_s = b(s, X_s, u_s, v_s) ds + sigma(s, X_s, u_s, v_s) dB_s

with a running driver f(s, x, y, z, u, v), a terminal payoff phi(x) and two
obstacles lower(t, x) < upper(t, x) that pin the value between them.  Player I
picks u from a finite grid and maximizes, player II picks v and minimizes.

The two Hamiltonians evaluated here are the pointwise

    H_lower(t,x,y,q,X) = max_u min_v { 1/2 tr(sigma sigma^T X) + q.b + f(t,x,y,q.sigma,u,v) }
    H_upper(t,x,y,q,X) = min_v max_u { same integrand }

H_lower <= H_upper always; equality of the two tables is what makes the game
have a value, and `isaacs_condition_check` measures the gap by sampling.

Conventions used across the package:

  * coefficient callables take (t, x, u, v), the driver takes (t, x, y, z, u, v)
  * for state_dim == 1 the x (and z when noise_dim == 1) arguments are scalars
    or numpy arrays and the callables must broadcast elementwise;
    for state_dim > 1 they receive vectors of shape (state_dim,)
  * `lipschitz` bounds the x-Lipschitz constant of every coefficient,
    `driver_lipschitz` bounds the (y, z)-Lipschitz constant of the driver
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, NamedTuple

import numpy as np


class CoefficientError(ValueError):
    """A coefficient callable returned a nonfinite value."""


@dataclasses.dataclass(frozen=True)
class ControlGrid:
    """Finite set of control points for one player."""

    label: str
    points: tuple

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError(f"control grid {self.label!r} is empty")
        for p in self.points:
            vals = p if isinstance(p, tuple) else (p,)
            if not all(math.isfinite(float(c)) for c in vals):
                raise ValueError(
                    f"control grid {self.label!r} has nonfinite point {p!r}"
                )

    def __len__(self):
        return len(self.points)


@dataclasses.dataclass(frozen=True)
class CoefficientSet:
    """All problem coefficients plus their declared Lipschitz constants."""

    b: Callable
    sigma: Callable
    driver: Callable
    terminal: Callable
    lower: Callable
    upper: Callable
    lipschitz: float
    driver_lipschitz: float

    def __post_init__(self):
        if self.lipschitz < 0 or self.driver_lipschitz < 0:
            raise ValueError("Lipschitz constants must be nonnegative")


@dataclasses.dataclass(frozen=True)
class ProblemSpec:
    """A complete game: dynamics, driver, terminal payoff, obstacles, controls."""

    horizon: float
    coefficients: CoefficientSet
    controls_i: ControlGrid
    controls_ii: ControlGrid
    state_dim: int = 1
    noise_dim: int = 1

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.state_dim < 1 or self.noise_dim < 1:
            raise ValueError("state_dim and noise_dim must be >= 1")

    def control_pairs(self):
        for u in self.controls_i.points:
            for v in self.controls_ii.points:
                yield u, v


@dataclasses.dataclass(frozen=True)
class HamiltonianInput:
    """Point at which a Hamiltonian is evaluated.

    The second-order argument is symmetrized on entry; `asymmetry` records
    the largest entry of (H - H^T)/2 that was discarded.
    """

    t: float
    x: np.ndarray
    y: float
    gradient: np.ndarray
    hessian: np.ndarray
    asymmetry: float = 0.0

    def __init__(self, t, x, y, gradient, hessian):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        gradient = np.atleast_1d(np.asarray(gradient, dtype=float))
        hessian = np.atleast_2d(np.asarray(hessian, dtype=float))
        if hessian.shape != (x.size, x.size) or gradient.shape != x.shape:
            raise ValueError(
                f"shape mismatch: x {x.shape}, gradient {gradient.shape},"
                f" hessian {hessian.shape}"
            )
        sym = 0.5 * (hessian + hessian.T)
        object.__setattr__(self, "t", float(t))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(y))
        object.__setattr__(self, "gradient", gradient)
        object.__setattr__(self, "hessian", sym)
        object.__setattr__(
            self, "asymmetry", float(np.max(np.abs(hessian - sym))) if x.size else 0.0
        )


class HamiltonianValue(NamedTuple):
    value: float
    u: object
    v: object


class Violation(NamedTuple):
    kind: str
    where: dict
    magnitude: float
    detail: str


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    passed: bool
    violations: tuple
    samples: int
    seed: int

    def summary(self):
        if self.passed:
            return f"ok ({self.samples} samples)"
        kinds = sorted({v.kind for v in self.violations})
        return f"{len(self.violations)} violation(s): {', '.join(kinds)}"


@dataclasses.dataclass(frozen=True)
class IsaacsReport:
    max_gap: float
    mean_gap: float
    samples: int
    tolerance: float
    satisfied: bool
    worst: HamiltonianInput | None


def _scalar_state(spec, x):
    # state_dim 1 callables are written elementwise, hand them plain floats
    return float(x[0]) if spec.state_dim == 1 else x


def _sigma_matrix(spec, t, x, u, v):
    raw = np.asarray(
        spec.coefficients.sigma(t, _scalar_state(spec, x), u, v), dtype=float
    )
    n, d = spec.state_dim, spec.noise_dim
    if raw.ndim == 0:
        if n == 1 and d == 1:
            return raw.reshape(1, 1)
        raise CoefficientError(
            f"sigma returned a scalar for state_dim={n}, noise_dim={d}"
        )
    if raw.shape == (n, d):
        return raw
    if raw.ndim == 1 and n == 1 and raw.size == d:
        return raw.reshape(1, d)
    raise CoefficientError(f"sigma shape {raw.shape} does not match ({n}, {d})")


def _drift_vector(spec, t, x, u, v):
    raw = np.asarray(spec.coefficients.b(t, _scalar_state(spec, x), u, v), dtype=float)
    if raw.ndim == 0:
        raw = raw.reshape(1)
    if raw.shape != (spec.state_dim,):
        raise CoefficientError(
            f"b shape {raw.shape} does not match ({spec.state_dim},)"
        )
    return raw


def sigma_rows(coefficients, t, x, u, v, noise_dim):
    """Evaluate sigma on an array of scalar states as (len(x), noise_dim) rows.

    Scalar-state coefficients are written elementwise and may come back as a
    scalar, a per-node array or full rows; this normalizes all three.  A 1-d
    result matching x in shape is read as per-node values (noise_dim 1 only).
    """
    x = np.asarray(x, dtype=float)
    raw = np.asarray(coefficients.sigma(t, x, u, v), dtype=float)
    if raw.ndim == 0:
        if noise_dim != 1:
            raise CoefficientError(
                f"sigma returned a scalar but noise_dim = {noise_dim};"
                f" return the full row instead"
            )
        return np.broadcast_to(raw.reshape(1), x.shape + (1,))
    if raw.ndim == 1 and raw.shape == x.shape:
        if noise_dim != 1:
            raise CoefficientError(
                f"sigma returned per-node scalars but noise_dim = {noise_dim}"
            )
        return raw.reshape(-1, 1)
    if raw.ndim == 1 and raw.shape == (noise_dim,):
        return np.broadcast_to(raw.reshape(1, -1), (x.shape[0], noise_dim))
    if raw.ndim == 2 and raw.shape == (x.shape[0], noise_dim):
        return raw
    raise CoefficientError(
        f"cannot interpret sigma shape {raw.shape} for {x.shape[0]} nodes"
        f" with noise_dim {noise_dim}"
    )


def _integrand(spec, point, u, v):
    sig = _sigma_matrix(spec, point.t, point.x, u, v)
    b = _drift_vector(spec, point.t, point.x, u, v)
    z = point.gradient @ sig
    z_arg = float(z[0]) if spec.noise_dim == 1 else z
    fval = spec.coefficients.driver(
        point.t, _scalar_state(spec, point.x), point.y, z_arg, u, v
    )
    val = (
        0.5 * float(np.trace(sig @ sig.T @ point.hessian))
        + float(point.gradient @ b)
        + float(fval)
    )
    if not math.isfinite(val):
        raise CoefficientError(
            f"nonfinite integrand at t={point.t}, x={point.x}, controls ({u!r}, {v!r})"
        )
    return val


def hamiltonian_lower(spec, point):
    """max over u of min over v of the Hamiltonian integrand.

    Returns (value, u, v) with the first optimizing pair in grid order,
    so repeated calls are deterministic.
    """
    best = None
    for u in spec.controls_i.points:
        inner = None
        for v in spec.controls_ii.points:
            val = _integrand(spec, point, u, v)
            if inner is None or val < inner[0]:
                inner = (val, v)
        if best is None or inner[0] > best.value:
            best = HamiltonianValue(inner[0], u, inner[1])
    return best


def hamiltonian_upper(spec, point):
    """min over v of max over u of the Hamiltonian integrand."""
    best = None
    for v in spec.controls_ii.points:
        inner = None
        for u in spec.controls_i.points:
            val = _integrand(spec, point, u, v)
            if inner is None or val > inner[0]:
                inner = (val, u)
        if best is None or inner[0] < best.value:
            best = HamiltonianValue(inner[0], inner[1], v)
    return best


def isaacs_condition_check(spec, samples=64, seed=0, radius=2.0, tolerance=1e-9):
    """Sample Hamiltonian inputs and measure sup (H_upper - H_lower).

    The gap is nonnegative up to roundoff by the minimax inequality; a gap
    within `tolerance` means the two Hamiltonian tables coincide on the
    sampled set and the game value computations may be expected to agree.
    """
    rng = np.random.default_rng(seed)
    n = spec.state_dim
    worst = None
    max_gap = -math.inf
    total = 0.0
    for _ in range(samples):
        a = rng.uniform(-1.0, 1.0, size=(n, n))
        point = HamiltonianInput(
            t=rng.uniform(0.0, spec.horizon),
            x=rng.uniform(-radius, radius, size=n),
            y=rng.uniform(-radius, radius),
            gradient=rng.uniform(-radius, radius, size=n),
            hessian=a + a.T,
        )
        gap = hamiltonian_upper(spec, point).value - hamiltonian_lower(spec, point).value
        total += gap
        if gap > max_gap:
            max_gap = gap
            worst = point
    return IsaacsReport(
        max_gap=max_gap,
        mean_gap=total / samples,
        samples=samples,
        tolerance=tolerance,
        satisfied=max_gap <= tolerance,
        worst=worst,
    )


def _norm(arr):
    return float(np.sqrt(np.sum(np.square(np.asarray(arr, dtype=float)))))


def validate_problem(spec, samples=200, seed=0, radius=3.0, tolerance=1e-8):
    """Spot-check the structural assumptions on random points.

    Checks, each recorded as a Violation on failure:
      * all coefficients finite on the sampled box
      * strict obstacle separation lower < upper
      * terminal sandwich lower(T, x) <= phi(x) <= upper(T, x)
      * x-Lipschitz quotients of b, sigma, phi, lower, upper, f within the
        declared `lipschitz` constant
      * (y, z)-Lipschitz quotient of the driver within `driver_lipschitz`
      * linear growth of (|b| + |sigma|) and of the scalar data against
        (1 + |x|), with the growth constant implied by the declared
        Lipschitz constant plus the sampled values at x = 0

    Sampling is seeded, so the report is deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    co = spec.coefficients
    n = spec.state_dim
    T = spec.horizon
    violations = []
    slack = tolerance

    def state(xvec):
        return float(xvec[0]) if n == 1 else xvec

    def record(kind, where, magnitude, detail):
        violations.append(Violation(kind, where, float(magnitude), detail))

    pairs = list(spec.control_pairs())
    zero = np.zeros(n)

    # growth baselines at the origin
    base_dyn = 0.0
    base_data = 0.0
    times = np.concatenate([rng.uniform(0.0, T, size=7), [0.0, T]])
    for t in times:
        for u, v in pairs:
            base_dyn = max(
                base_dyn,
                _norm(_drift_vector(spec, t, zero, u, v))
                + _norm(_sigma_matrix(spec, t, zero, u, v)),
            )
            base_data = max(base_data, abs(float(co.driver(t, state(zero), 0.0, 0.0, u, v))))
        base_data = max(
            base_data,
            abs(float(co.lower(t, state(zero)))),
            abs(float(co.upper(t, state(zero)))),
        )
    base_data = max(base_data, abs(float(co.terminal(state(zero)))))
    growth_dyn = co.lipschitz + base_dyn
    growth_data = co.lipschitz + base_data

    for k in range(samples):
        t = float(rng.uniform(0.0, T))
        xa = rng.uniform(-radius, radius, size=n)
        xb = rng.uniform(-radius, radius, size=n)
        u, v = pairs[k % len(pairs)]
        y = float(rng.uniform(-radius, radius))
        z = float(rng.uniform(-radius, radius)) if spec.noise_dim == 1 else rng.uniform(
            -radius, radius, size=spec.noise_dim
        )
        here = {"t": t, "x": state(xa), "u": u, "v": v}

        try:
            b_a = _drift_vector(spec, t, xa, u, v)
            b_b = _drift_vector(spec, t, xb, u, v)
            s_a = _sigma_matrix(spec, t, xa, u, v)
            s_b = _sigma_matrix(spec, t, xb, u, v)
            f_a = float(co.driver(t, state(xa), y, z, u, v))
            f_b = float(co.driver(t, state(xb), y, z, u, v))
            lo_a = float(co.lower(t, state(xa)))
            up_a = float(co.upper(t, state(xa)))
            phi_a = float(co.terminal(state(xa)))
            phi_b = float(co.terminal(state(xb)))
            lo_b = float(co.lower(t, state(xb)))
            up_b = float(co.upper(t, state(xb)))
        except CoefficientError as exc:
            record("nonfinite", here, math.inf, str(exc))
            continue

        finite_probe = [
            _norm(b_a), _norm(s_a), f_a, lo_a, up_a, phi_a, f_b, lo_b, up_b, phi_b,
        ]
        if not all(math.isfinite(val) for val in finite_probe):
            record("nonfinite", here, math.inf, "coefficient returned nan/inf")
            continue

        if up_a - lo_a <= 0.0:
            record(
                "obstacle_separation", here, lo_a - up_a,
                f"lower={lo_a} >= upper={up_a}",
            )

        phi_T = float(co.terminal(state(xa)))
        lo_T = float(co.lower(T, state(xa)))
        up_T = float(co.upper(T, state(xa)))
        if phi_T < lo_T - slack or phi_T > up_T + slack:
            record(
                "terminal_sandwich", here,
                max(lo_T - phi_T, phi_T - up_T),
                f"phi={phi_T} outside [{lo_T}, {up_T}] at horizon",
            )

        dist = _norm(xa - xb)
        if dist > 1e-12:
            budget = co.lipschitz * dist + slack * (1.0 + co.lipschitz)
            for name, gap in (
                ("b", _norm(b_a - b_b)),
                ("sigma", _norm(s_a - s_b)),
                ("driver", abs(f_a - f_b)),
                ("terminal", abs(phi_a - phi_b)),
                ("lower", abs(lo_a - lo_b)),
                ("upper", abs(up_a - up_b)),
            ):
                if gap > budget:
                    record(
                        f"lipschitz_{name}", here, gap / dist,
                        f"|d{name}|/|dx| = {gap / dist:.6g} exceeds"
                        f" declared {co.lipschitz}",
                    )

        y2 = float(rng.uniform(-radius, radius))
        if spec.noise_dim == 1:
            z2 = float(rng.uniform(-radius, radius))
            dz = abs(z - z2)
        else:
            z2 = rng.uniform(-radius, radius, size=spec.noise_dim)
            dz = _norm(z - z2)
        f_y2 = float(co.driver(t, state(xa), y2, z2, u, v))
        dyz = math.hypot(abs(y - y2), dz)
        if dyz > 1e-12:
            gap = abs(f_a - f_y2)
            if gap > co.driver_lipschitz * dyz + slack * (1.0 + co.driver_lipschitz):
                record(
                    "lipschitz_driver_yz", here, gap / dyz,
                    f"|df|/|d(y,z)| = {gap / dyz:.6g} exceeds declared"
                    f" {co.driver_lipschitz}",
                )

        scale = 1.0 + _norm(xa)
        dyn = _norm(b_a) + _norm(s_a)
        if dyn > growth_dyn * scale + slack * (1.0 + growth_dyn):
            record(
                "growth_dynamics", here, dyn / scale,
                f"(|b|+|sigma|)/(1+|x|) = {dyn / scale:.6g} exceeds {growth_dyn:.6g}",
            )
        z0 = 0.0 if spec.noise_dim == 1 else np.zeros(spec.noise_dim)
        f0 = abs(float(co.driver(t, state(xa), 0.0, z0, u, v)))
        data = max(f0, abs(phi_a), abs(lo_a), abs(up_a))
        if data > growth_data * scale + slack * (1.0 + growth_data):
            record(
                "growth_data", here, data / scale,
                f"data/(1+|x|) = {data / scale:.6g} exceeds {growth_data:.6g}",
            )

    return ValidationReport(
        passed=not violations,
        violations=tuple(violations),
        samples=samples,
        seed=seed,
    )
