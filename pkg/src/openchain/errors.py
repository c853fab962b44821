"""Exception hierarchy for model validation, analytics, and estimation."""


class OpenChainError(Exception):
    """Base class for all library-specific errors."""


class NegativeEntry(OpenChainError):
    """A jump-matrix entry is negative."""


class RowSumExceedsOne(OpenChainError):
    """A jump-matrix row sums to more than one beyond the input slack."""


class SpectralRadiusNotSubunit(OpenChainError):
    """Spectral radius is not strictly below one (stochastic matrices included)."""


class NotIrreducible(OpenChainError):
    """The directed graph of positive entries is not strongly connected."""


class NotAperiodic(OpenChainError):
    """The directed graph of positive entries has period greater than one."""


class NoConvergence(OpenChainError):
    """Iterative solver failed to converge within its iteration cap."""


class SingularSystem(OpenChainError):
    """Linear solve failed; cannot happen for a validated jump matrix."""


class HiddenChainNotIrreducible(OpenChainError):
    """The hidden regime chain of a modulated protocol is not irreducible."""


class TruncationTooSmall(OpenChainError):
    """Truncated count space leaves more than the allowed tail mass."""


class ToleranceNotReached(OpenChainError):
    """Series summation hit its iteration cap before the tolerance was met."""


class ZeroVarianceState(OpenChainError):
    """A correlation was requested for a state with non-positive variance."""


class UnsupportedVariant(OpenChainError):
    """Protocol variant not supported by the requested operation."""


class NotContracting(OpenChainError):
    """Map iterates fail to decay; argument lies outside the contraction region."""


class StepTooLarge(OpenChainError):
    """Finite-difference extrapolation disagreement exceeds its tolerance."""


class SeriesTooShort(OpenChainError):
    """Simulation record too short for the requested statistics."""


class ShapeMismatch(OpenChainError):
    """Analytic and empirical inputs have incompatible shapes."""


class ConfigError(OpenChainError):
    """Experiment configuration document is malformed."""
