"""Exception hierarchy shared by all mmpgo modules."""


class PGOError(Exception):
    """Base class for every error raised by mmpgo."""


class DimensionMismatch(PGOError, ValueError):
    pass


class DegenerateProjection(PGOError, ValueError):
    """The closest rotation to a matrix is not unique."""

    def __init__(self, message, pose=None):
        super().__init__(message)
        self.pose = pose


class InvalidPartition(PGOError, ValueError):
    pass


class InvalidParameter(PGOError, ValueError):
    pass


class InvalidGraph(PGOError, ValueError):
    pass


class NumericalFailure(PGOError, ArithmeticError):
    """Non-finite values appeared during an iterative solve.

    ``dump`` holds the offending iterate for post-mortem inspection and
    ``iteration`` the outer iteration index, when known.
    """

    def __init__(self, message, dump=None, iteration=None):
        super().__init__(message)
        self.dump = dump
        self.iteration = iteration


class SingularSubproblem(PGOError, ArithmeticError):
    pass


class ProtocolViolation(PGOError, RuntimeError):
    pass


class ParseError(PGOError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingReference(PGOError, LookupError):
    pass
