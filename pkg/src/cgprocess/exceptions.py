class InvalidArgument(ValueError):
    """Raised when a caller passes parameters outside an operation's domain."""


class InvariantViolation(RuntimeError):
    """A run broke a hard invariant (conservation, anticlique, bankruptcy, tokens)."""


class ProtocolViolation(RuntimeError):
    """An estimator's precondition failed on observed data, e.g. two final winners."""
