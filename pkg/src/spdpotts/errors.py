"""Exception types shared across the package."""


class SpdPottsError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(SpdPottsError):
    """A matrix failed SPD validation (Cholesky pivot at or below tolerance)."""


class DimensionMismatch(SpdPottsError):
    """Matrix or field dimensions are incompatible."""


class InvalidDof(SpdPottsError):
    """A degrees-of-freedom value violates its lower bound."""


class InactiveSite(SpdPottsError):
    """A masked-out lattice site was addressed."""


class LatticeMismatch(SpdPottsError):
    """Two objects do not share the same lattice geometry."""


class EmptyData(SpdPottsError):
    """An operation received no active voxels."""


class EmptyTrace(SpdPottsError):
    """A trace contains no retained samples."""


class EmptyChain(SpdPottsError):
    """A chain is empty."""


class ChainTooShort(SpdPottsError):
    """A chain is too short for the requested diagnostic."""


class LengthMismatch(SpdPottsError):
    """Paired vectors differ in length."""
