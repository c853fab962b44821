"""Open Markov chains: exact simulation, cumulant analytics, m.g.f. cross-checks."""

from .backend import active_backend, available_backends
from .chain import (
    EscapeProfile,
    JumpMatrix,
    OpenChainModel,
    escape_profile,
    matrix_power,
    spectral_radius,
    validate_jump_matrix,
)
from .protocols import (
    Constant,
    IidProduct,
    IncomingProtocol,
    JointTable,
    MarkovModulated,
    ProtocolMoments,
    ProtocolSchedule,
    protocol_lag_covariance,
    three_state_example,
)
from .simulate import (
    SimulationRecord,
    StepOutcome,
    enumerate_one_vertex_stationary,
    multinomial_split,
    run,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "EscapeProfile",
    "JumpMatrix",
    "OpenChainModel",
    "escape_profile",
    "matrix_power",
    "spectral_radius",
    "validate_jump_matrix",
    "Constant",
    "IidProduct",
    "IncomingProtocol",
    "JointTable",
    "MarkovModulated",
    "ProtocolMoments",
    "ProtocolSchedule",
    "protocol_lag_covariance",
    "three_state_example",
    "SimulationRecord",
    "StepOutcome",
    "enumerate_one_vertex_stationary",
    "multinomial_split",
    "run",
    "step",
    "active_backend",
    "available_backends",
    "__version__",
]
