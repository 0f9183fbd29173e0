"""Transport-based mesh-free method: sharp discrepancy sequences, particle flows and pricing."""

from .backward import (FairValueSurface, TransitionMatrix, backward_solve, forward_value,
                       parse_payoff, sensitivity, transition_matrices, transition_matrix)
from .discrepancy import (DiscrepancyCertificate, EmpiricalMeasure, OptimizerOptions,
                          PointSequence, TransportedMeasure, UniformMeasure, baseline_sequence,
                          discrepancy, minimize_discrepancy)
from .errors import (ConfigError, DegenerateInputError, DomainError, InvalidArgumentError,
                     NumericalError, TmmError)
from .forward import ForwardOptions, ParticleFlow, moment, propagate
from .kernels import (GaussianKernel, RkhsElement, TensorMaternKernel, ZonalKernel, gram,
                      kernel_gradient, rkhs_norm, transported_kernel)
from .lattice import (Lattice, LatticeKernel, lattice_kernel, matern_spectral_profile,
                      sea_bound)
from .sde import SabrModel, SdeModel, drift_diffusion, euler_paths, monte_carlo_expectation
from .transport import TransportMap, erf_map, identity_map, inverse_cdf_map

__version__ = "0.1.0"
