"""Exception hierarchy shared by every module."""


class SwitchSpacesError(Exception):
    """Base class for all package errors."""


class ContractViolation(SwitchSpacesError, ValueError):
    """An argument broke a documented precondition (shape, range, arity)."""


class DomainError(SwitchSpacesError, ValueError):
    """A point or tangent vector lies outside the region where an operation is defined."""


class NumericFailure(SwitchSpacesError, FloatingPointError):
    """A NaN/Inf or a vanishing denominator was produced.

    ``op`` names the primitive or manifold operation that produced it.
    """

    def __init__(self, op, message=""):
        self.op = op
        super().__init__(f"{op}: {message}" if message else f"non-finite value produced by {op}")


class SignatureParseError(SwitchSpacesError, ValueError):
    """Malformed signature string; ``position`` is the 1-based token index."""

    def __init__(self, position, token, reason):
        self.position = position
        self.token = token
        super().__init__(f"token {position} ({token!r}): {reason}")
