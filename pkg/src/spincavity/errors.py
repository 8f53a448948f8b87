"""Exception types shared across the package."""


class SpinCavityError(Exception):
    """Base class for all package errors."""


class SizingError(SpinCavityError):
    """Requested Hilbert-space size is invalid or exceeds the dimension cap."""


class ShapeError(SpinCavityError):
    """Operator or state shapes are inconsistent."""


class TruncationError(SpinCavityError):
    """Fock truncation too small for the requested state or dynamics."""


class DomainError(SpinCavityError):
    """Argument outside the mathematical domain of an operation."""


class ToleranceError(SpinCavityError):
    """An adaptive numerical scheme failed to reach the requested tolerance."""


class StiffnessError(SpinCavityError):
    """Deterministic integrator step size underflowed."""


class StepSizeError(SpinCavityError):
    """Stochastic step repeatedly produced an unphysical state."""


class PolarizationError(SpinCavityError):
    """Spin polarization too small for a well-defined squeezing parameter."""


class FactorizationError(SpinCavityError):
    """Dissipator coefficient matrix failed the rank-1 factorization check."""


class EnsembleError(SpinCavityError):
    """A trajectory inside an ensemble aborted."""


class ConfigError(SpinCavityError):
    """Scenario configuration is invalid."""
