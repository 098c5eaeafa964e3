"""Watch the penalized approximations squeeze onto the reflected solution.

One-sided penalizations bracket the double-obstacle field: lower penalties
approach from above, upper penalties from below, and the bracket tightens
monotonically as the penalty grows.
"""

from isaacs.pde import run_penalization_sweep
from isaacs.problems import builtin

bp = builtin("dynkin_heat")
report = run_penalization_sweep(bp.spec, bp.grid, bp.schedule)

print("penalty   gap above   gap below   two-sided")
for m, ga, gb, ts in zip(
    report.levels, report.gap_above, report.gap_below, report.two_sided_gap
):
    print(f"{m:7g}   {ga:9.5f}   {gb:9.5f}   {ts:9.5f}")

print(f"\nmonotone from above to {report.monotone_violation_above:.1e}")
print(f"monotone from below to {report.monotone_violation_below:.1e}")
print(f"sandwich holds to {report.sandwich_violation:.1e}")
print(f"bracket shrinks by {1.0 - report.gap_ratio:.1%} over the schedule")
