# Phi_eps(z) = b + eps Gamma(z) + O(eps^2): the residual shrinks by ~4 when eps halves.
import numpy as np

from closedgeo import builtin_form, expansion_audit
from closedgeo.reduction import decay_table, random_param

rng = np.random.default_rng(0)
params = [random_param(2, rng) for _ in range(4)]
rows, slope = expansion_audit(builtin_form("odd_decay_aniso", 2), params, [0.04, 0.02, 0.01, 0.005], M=128)
for eps, res in rows:
    print(f"eps={eps:<6} max |Phi - b - eps G| = {res:.3e}")
print(f"log-log slope {slope:.3f}")

# far from the bump the correction and the energy gap vanish
print("\nr, |Phi - b|, ||w||")
for r, gap, wn in decay_table(builtin_form("gaussian_aniso", 2), params[0], [0, 1, 2, 3, 5], 0.02, 128):
    print(f"{r:4.1f}  {gap:.3e}  {wn:.3e}")
