# Full pipeline on R x S^2: Gamma critical points -> w correction -> Newton -> O(2) dedup.
import time

from closedgeo import MultiplicityConfig, SearchConfig, builtin_form, multiplicity_experiment

t0 = time.perf_counter()
rep = multiplicity_experiment(builtin_form("odd_decay_aniso", 2), 0.02,
                              MultiplicityConfig(M=128, search=SearchConfig(starts=32)))
print(rep.summary())
for o in rep.orbits:
    c = o.representative
    print(f"  E={c.energy:.6f} residual={c.residual:.1e} r={c.normal_form['r_mean']: .4f} "
          f"kernel={c.spectrum.kernel_dim} morse={c.spectrum.morse_index} from {c.source['classification']}")
print(f"min pairwise align distance {rep.min_pairwise_distance:.3f}, {time.perf_counter() - t0:.1f}s")
