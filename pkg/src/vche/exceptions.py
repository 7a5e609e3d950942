"""Exception types shared across the package."""


class VCHEError(Exception):
    """Base class for all package errors."""


class InvalidFieldError(VCHEError):
    """A field violates a structural invariant (Hermitian symmetry, shape, ...)."""


class GridMismatchError(VCHEError):
    """Fields on different grids were combined."""


class SingularOperatorError(VCHEError):
    """A spectral operator with a zero symbol was applied to the zero mode."""


class DivergenceError(VCHEError):
    """The time integration blew past the blow-up guard."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"forward solve diverged at step {step}")


class UnsupportedProxError(VCHEError):
    """No closed-form prox exists for this sparsity kind; use the fixed-point map."""


class UndefinedSubgradientError(VCHEError):
    """Subgradient construction requested with kappa = 0."""


class ConfigError(VCHEError):
    """A configuration file violates the schema."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"[{field}] {message}")
