"""Exception hierarchy shared by all protmeas modules."""


class ProtmeasError(Exception):
    """Base class for all package errors."""


class SizeError(ProtmeasError, ValueError):
    """A composite space would exceed the configured dense-matrix budget."""


class SpaceMismatchError(ProtmeasError, ValueError):
    """Operands live on incompatible Hilbert spaces."""


class NotHermitianError(ProtmeasError, ValueError):
    """An operation that requires a hermitian operator received a non-hermitian one."""


class NumericalError(ProtmeasError, ArithmeticError):
    """A numerical result failed an internal consistency check."""


class ProtectionTooWeakError(NumericalError):
    """A protective measurement deviated from <A> by more than the configured tolerance.

    The offending record is attached so callers can still report it.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class PreconditionError(ProtmeasError, ValueError):
    """Inputs violate a documented precondition (incompatible state/scheme, bad stride...)."""


class UnboundLabelError(ProtmeasError, KeyError):
    """A state, measurement or observable is not bound to a label in an ontological model."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ModelError(ProtmeasError, ValueError):
    """An ontological model is internally inconsistent."""
