"""Closed geodesics on R x S^N under small perturbations of the product metric."""
from .metric import (AmbientPoint, ConstraintViolation, PerturbationForm, TangentVector,
                     UnsupportedDerivative, builtin_form, check_h1, check_h2, check_h3,
                     eval_g0, eval_h)
from .loop import DiscreteLoop, LoopTangent, energy, gradient, hessian, o2_act, residual_norm
from .reduction import (CircleParam, DegeneracyError, DivergenceError, SearchConfig, compute_w,
                        expansion_audit, find_gamma_critical_points, gamma, gamma_grad,
                        great_circle, phi, tangent_basis)
from .analysis import (align, dedup, degree_check_cylinder, nondegeneracy_check, spectrum)
from .solver import (GeodesicCertificate, MultiplicityConfig, RefineOptions, continuation,
                     multiplicity_experiment, refine)

__version__ = "0.1.0"
