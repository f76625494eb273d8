"""
Finite-difference verification of every layer primitive
=======================================================

The battery re-evaluates each op closure in float64 with central
differences and compares against the tape gradients.
"""

from eegvae.gradcheck import standard_battery

results = standard_battery(seed=0, tol_rel=1e-3)

worst = 0.0
for name, rep in results:
    flag = "ok " if rep.passed else "FAIL"
    print(f"{flag} {name:<28} worst_rel={rep.worst_rel:.3e} ({rep.n_checked} elements)")
    worst = max(worst, rep.worst_rel)

print(f"\n{sum(r.passed for _, r in results)}/{len(results)} ops passed, "
      f"worst relative error {worst:.3e}")
