"""Two games, one with a saddle point and one without.

When minimax equals maximin for the Hamiltonian at every sampled point, the
lower and upper fields coincide and the game has a value.  The bilinear
game breaks that on purpose: the order of optimisation moves the answer by
a fixed amount, and the two fields split apart by exactly that amount.
"""

import numpy as np

from isaacs.games import compute_values, dpp_check
from isaacs.model import isaacs_condition_check
from isaacs.problems import builtin

for name in ("separable_game", "bilinear_game"):
    bp = builtin(name)
    cond = isaacs_condition_check(bp.spec, samples=64, seed=0, radius=2.0)
    verdict = compute_values(bp.spec, bp.grid)
    print(f"{name}:")
    print(f"  saddle condition max gap {cond.max_gap:.3e} (satisfied: {cond.satisfied})")
    print(f"  field spread {verdict.max_gap:.3e} (has value: {verdict.has_value})")
    w0 = verdict.lower.initial()
    print(f"  lower value at x=0: {w0[len(w0) // 2]:+.6f}")

# Recomposing the lower field at an intermediate time reproduces it exactly.
bp = builtin("dynkin_heat")
report = dpp_check(bp.spec, bp.grid, "lower", split=0.5)
print(f"\nrecomposition residual at T/2: {report.max_residual:.1e}")
print(f"restart level {report.split_level} of {bp.grid.nt}")

# The two reductions bracket each other even without a saddle point.
bil = builtin("bilinear_game")
v = compute_values(bil.spec, bil.grid)
gap = v.upper.values - v.lower.values
print(f"\nbilinear upper minus lower: min {np.min(gap):+.3e}, max {np.max(gap):+.3e}")
