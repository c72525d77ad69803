"""Data-driven steady-state gain estimation and online feedback optimization."""

from .errors import (DimensionError, GainInfeasibleError, IllConditionedWarning,
                     InfeasibleConstraintsError, MissingGroundTruthError, PersistencyError,
                     SignalFormatError, StabilityError, StructuralError)
from .lti_core import (DisturbanceProcess, LtiSystem, LyapunovCertificate, Trajectory,
                       equilibrium_state, random_system, simulate, solve_discrete_lyapunov,
                       structural_indices, transfer_closed_form)
from .hankel import build_hankel, block_row, is_persistently_exciting
from .estimation import (TransferEstimate, error_decomposition, estimate_G_constant_noise,
                         estimate_G_exact, estimate_G_minnorm)
from .feedback_opt import (ConvexSet, ControllerConfig, CostModel, QuadraticCost,
                           closed_loop_run, controller_step, gain_feasibility, projected_step)

__version__ = "0.1.0"
