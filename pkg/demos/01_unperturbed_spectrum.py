# Great circles on R x S^N are critical loops of the unperturbed energy.
# Their Hessian has a kernel of dimension 2N (one r-translation, one phase,
# 2(N-1) rotations of the plane) and N-1 negative directions.
import math

import numpy as np

from closedgeo import CircleParam, PerturbationForm, great_circle, residual_norm, energy
from closedgeo.analysis import spectrum, nondegeneracy_check

M = 128
for N in (1, 2, 3):
    z = great_circle(CircleParam.standard(N), M)
    zero = PerturbationForm.zero(N)
    s = spectrum(z, zero, 0.0)
    print(f"N={N}  E={energy(z, zero, 0.0):.6f} (2 pi^2 = {2 * math.pi**2:.6f})  "
          f"|grad|={residual_norm(z, zero, 0.0):.1e}  kernel={s.kernel_dim}  "
          f"morse={s.morse_index}  gap={s.gap_ratio:.1e}")

# smallest few |eigenvalues| for N = 2: the kernel sits ~10 orders below the rest
s = spectrum(great_circle(CircleParam.standard(2), M), PerturbationForm.zero(2), 0.0)
print("smallest |lambda|:", np.sort(np.abs(s.eigenvalues))[:6])

# on the sphere factor alone only the phase survives for S^1
for N in (1, 2):
    res = nondegeneracy_check(great_circle(CircleParam.standard(N), M))
    print(f"S^{N} great circle: kernel {res.kernel_dim}, nondegenerate={res.nondegenerate}")
