"""Exception hierarchy shared by every module of the package."""


class DciTrafficError(Exception):
    """Base class for all package errors."""


class OutOfRange(DciTrafficError, ValueError):
    pass


class MalformedLine(DciTrafficError, ValueError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}" if reason else f"line {line_no}")


class InvalidRnti(DciTrafficError, ValueError):
    pass


class InconsistentTbs(DciTrafficError, ValueError):
    pass


class InvalidModel(DciTrafficError, ValueError):
    pass


class TooManyUsers(DciTrafficError, ValueError):
    pass


class NoWatermarkFound(DciTrafficError):
    pass


class AmbiguousWatermark(DciTrafficError):
    pass


class DegenerateInput(DciTrafficError, ValueError):
    pass


class BadSimplex(DciTrafficError, ValueError):
    pass


class WindowTooShort(DciTrafficError, ValueError):
    pass


class Degenerate(DciTrafficError, ValueError):
    """Training data cannot support a class-balanced split."""


class EmptyReferenceSet(DciTrafficError, ValueError):
    pass


class SingularCovariance(DciTrafficError, ValueError):
    pass


class EmptyTestSet(DciTrafficError, ValueError):
    pass


class ArtifactMismatch(DciTrafficError):
    """A model, detector or dataset file does not match what it is used with."""
