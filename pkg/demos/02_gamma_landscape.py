# The reduced functional Gamma on the manifold of great circles, and its critical points.
# Output is plain text; pipe gamma rows into any plotting tool.
import numpy as np

from closedgeo import SearchConfig, builtin_form, find_gamma_critical_points
from closedgeo.reduction import gamma_slices

form = builtin_form("odd_decay_aniso", 2)
rows = gamma_slices(form, np.linspace(-4, 4, 17), n_pq=16)
print("r, min Gamma, max Gamma over sampled planes")
for r, lo, hi in rows:
    print(f"{r:5.1f}  {lo: .5f}  {hi: .5f}")

rep = find_gamma_critical_points(form, SearchConfig(starts=16))
print(f"\n{rep.predicted_count} nondegenerate critical circles")
for cp in rep.critical_points:
    plane = np.round(np.diag(cp.param.plane), 3)
    print(f"  r={cp.param.r: .6f} plane diag={plane} Gamma={cp.value: .6f} {cp.classification}")
