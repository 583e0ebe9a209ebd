# R x S^1 with a gaussian bump: dGamma/dr changes sign across the bump,
# so the 1-D degree is nonzero and a closed geodesic sits at the bump's center.
from closedgeo import MultiplicityConfig, SearchConfig, builtin_form, multiplicity_experiment
from closedgeo.analysis import degree_check_cylinder
from closedgeo.metric import Gaussian, PerturbationForm
import numpy as np

form = builtin_form("gaussian", 1)
for R in (0.5, 1.0, 2.0):
    d = degree_check_cylinder(form, R)
    print(f"R={R}: dGamma/dr(-R)={d.d_minus[0]: .4f} dGamma/dr(R)={d.d_plus[0]: .4f} degree={d.degree}")

off = degree_check_cylinder(PerturbationForm.single(Gaussian(2.0, 1.0), np.eye(3)), 1.0)
print(f"bump centred at 2, R=1: degree={off.degree} (no sign change inside [-1, 1])")

rep = multiplicity_experiment(form, 0.02, MultiplicityConfig(M=128, search=SearchConfig(starts=8)))
c = rep.orbits[0].representative
print(f"certified geodesic: E={c.energy:.6f} r={c.normal_form['r_mean']:.2e} residual={c.residual:.1e}")
